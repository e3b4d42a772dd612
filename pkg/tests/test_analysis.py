import numpy as np
import pytest

from controlsets import expr as ex
from controlsets.analysis import (CrossSection, HomoclinicCase, Kind, accessibility_rank,
                                  ad_span_check, classify_homoclinic_case, classify_spectrum,
                                  continue_equilibrium, controllability_matrix, directed_hausdorff,
                                  find_equilibrium, find_limit_cycle, hausdorff, homoclinic_orbit,
                                  kalman_rank, lie_bracket, manifold_leg, melnikov,
                                  saddle_quantity, split_function)
from controlsets.dynamics import ControlAffineSystem, integrate
from controlsets.errors import (EmptyInput, NoConvergence, NoReturn, JacobianSingular,
                                NotTransverse)
from controlsets.scenarios import saddle3d_system, saddlefocus3d_system

# Melnikov integral of the Sandstede loop at alpha = 0, from scipy DOP853 (rtol 1e-13) on the
# augmented system (x, y, int div f, integrand) from (1, 0): forward to t = 11..12, backward
# to t = -7; the value is stable to 1e-10 over those horizons.
MELNIKOV_ORACLE = -0.6153630830


def curve_residual(P):
    return np.abs(P[:, 0] ** 2 * (1 - P[:, 0]) - P[:, 1] ** 2)


# -- equilibria --------------------------------------------------------------

def test_saddle_report(saddle0):
    np.testing.assert_allclose(saddle0.location, [0, 0], atol=1e-14)
    np.testing.assert_allclose(saddle0.eigenvalues, [1.0, -3.0], atol=1e-9)
    assert saddle0.kind == Kind.SADDLE2D
    assert saddle0.saddle_quantity == -2.0
    assert saddle0.saddle_quantity == float(np.real(saddle0.eigenvalues).sum())


def test_interior_focus(sandstede):
    rep = find_equilibrium(sandstede, 0.0, (0.6, 0.1))
    np.testing.assert_allclose(rep.location, [2 / 3, 1 / 9], atol=1e-10)
    assert rep.kind == Kind.UNSTABLE
    # trace of the Jacobian at (2/3, 1/9) is 1/3 and its determinant is positive
    assert np.all(np.abs(rep.eigenvalues.imag) > 0)
    np.testing.assert_allclose(rep.eigenvalues.real, [1 / 6, 1 / 6], atol=1e-9)
    assert rep.saddle_quantity is None


def test_spectrum_independent_of_seed(sandstede):
    a = find_equilibrium(sandstede, 0.0, (0.6, 0.1))
    b = find_equilibrium(sandstede, 0.0, (0.7, 0.12))
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, atol=1e-9)


def test_far_seed_is_never_a_false_equilibrium(sandstede):
    try:
        rep = find_equilibrium(sandstede, 0.0, (50.0, 50.0))
    except (NoConvergence, JacobianSingular):
        return
    assert rep.residual < 1e-12


def test_nonfinite_seed(sandstede):
    with pytest.raises(ValueError):
        find_equilibrium(sandstede, 0.0, (np.nan, 0.0))


def test_continuation(sandstede):
    alphas = np.round(np.arange(-0.02, 0.0701, 0.01), 10)
    reps = continue_equilibrium(sandstede, alphas, (0.0, 0.0))
    assert len(reps) == len(alphas)
    for r in reps:
        np.testing.assert_allclose(r.location, [0, 0], atol=1e-14)
        assert r.kind == Kind.SADDLE2D
    assert continue_equilibrium(sandstede, [], (0, 0)) == []
    one = continue_equilibrium(sandstede, [0.0], (0.1, -0.1))[0]
    ref = find_equilibrium(sandstede, 0.0, (0.1, -0.1))
    np.testing.assert_array_equal(one.location, ref.location)
    np.testing.assert_array_equal(one.eigenvalues, ref.eigenvalues)


def test_classify_spectrum():
    assert classify_spectrum([1, -3]) == Kind.SADDLE2D
    assert classify_spectrum([-1, -2]) == Kind.STABLE
    assert classify_spectrum([1 + 1j, 1 - 1j]) == Kind.UNSTABLE
    assert classify_spectrum([1e-10, -1]) == Kind.NONHYPERBOLIC
    assert classify_spectrum([1, -1 + 2j, -1 - 2j]) == Kind.SADDLE_FOCUS
    assert classify_spectrum([1, -2, -3]) == Kind.SADDLE3D


def test_saddle_quantity_definitions():
    assert saddle_quantity([1.0, -3.0]) == -2.0
    assert saddle_quantity([1.0, -2.0, -3.0]) == -1.0
    assert saddle_quantity([0.5, -1 + 2j, -1 - 2j]) == -0.5
    assert saddle_quantity([-1.0, -2.0]) is None


@pytest.mark.parametrize("eigs,case", [
    ([1, -2, -3], HomoclinicCase.SADDLE_SIGMA_NEG),
    ([2, -1, -3], HomoclinicCase.SADDLE_SIGMA_POS),
    ([0.5, -1 + 2j, -1 - 2j], HomoclinicCase.SADDLE_FOCUS_SIGMA_NEG),
    ([2, -1 + 1j, -1 - 1j], HomoclinicCase.SADDLE_FOCUS_SIGMA_POS),
    ([-1, -2, -3], HomoclinicCase.NOT_APPLICABLE),
    ([1, -3], HomoclinicCase.NOT_APPLICABLE),
])
def test_classify_homoclinic_case(eigs, case):
    assert classify_homoclinic_case(eigs) == case


def test_demo_systems_dispatch():
    s3 = find_equilibrium(saddle3d_system(), 0.0, (0.01, 0.01, 0.01))
    np.testing.assert_allclose(sorted(s3.eigenvalues.real), [-4, -3, 1], atol=1e-12)
    assert classify_homoclinic_case(s3) == HomoclinicCase.SADDLE_SIGMA_NEG
    sf = find_equilibrium(saddlefocus3d_system(), 0.0, (0.01, 0.01, 0.01))
    assert sf.kind == Kind.SADDLE_FOCUS
    assert sf.saddle_quantity == pytest.approx(-1.0, abs=1e-12)
    assert classify_homoclinic_case(sf) == HomoclinicCase.SADDLE_FOCUS_SIGMA_NEG


# -- brackets and ranks ------------------------------------------------------

def test_bracket_formula(sandstede):
    names = sandstede.state_names
    br = lie_bracket(sandstede.drift, sandstede.control_fields[0], names)
    rng = np.random.default_rng(5)
    for x, y in rng.uniform(-2, 2, size=(100, 2)):
        env = {"x": x, "y": y, "alpha": 0.0}
        val = [ex.evaluate(e, env) for e in br]
        np.testing.assert_allclose(val, [-2.0, 1.0 - 1.5 * x], rtol=0, atol=1e-12)
        det = np.linalg.det(np.array([[0.0, val[0]], [1.0, val[1]]]))
        assert det == pytest.approx(2.0, abs=1e-12)
    env0 = {"x": 0.0, "y": 0.0, "alpha": 0.0}
    assert [ex.evaluate(e, env0) for e in br] == [-2.0, 1.0]


def _fields():
    P = lambda s: tuple(ex.parse(t) for t in s)  # noqa: E731
    return [P(("-x+2*y+x^2", "2*x - y - 3*x^2 + 1.5*x*y")), P(("0", "1")),
            P(("sin(y)", "x*y")), P(("x^2", "exp(x) - y"))]


def _value(field, x, y):
    env = {"x": x, "y": y, "alpha": 0.0}
    return np.array([ex.evaluate(e, env) for e in field])


def test_bracket_antisymmetry_and_bilinearity():
    names = ("x", "y")
    F = _fields()
    rng = np.random.default_rng(6)
    pts = rng.uniform(-1, 1, size=(20, 2))
    for f in F:
        assert all(np.allclose(_value(lie_bracket(f, f, names), x, y), 0, atol=1e-12) for x, y in pts)
        for g in F:
            fg, gf = lie_bracket(f, g, names), lie_bracket(g, f, names)
            for h in F:
                gh = tuple(ex.add(a, b) for a, b in zip(g, h))
                lhs = lie_bracket(f, gh, names)
                rhs_ = lie_bracket(f, h, names)
                for x, y in pts[:5]:
                    np.testing.assert_allclose(_value(lhs, x, y),
                                               _value(fg, x, y) + _value(rhs_, x, y), atol=1e-10)
            for x, y in pts:
                np.testing.assert_allclose(_value(fg, x, y) + _value(gf, x, y), 0, atol=1e-10)


def test_accessibility_rank(sandstede):
    assert accessibility_rank(sandstede, 0.0, (0, 0)) == 2
    rng = np.random.default_rng(8)
    assert all(accessibility_rank(sandstede, 0.0, p) == 2 for p in rng.uniform(-1, 2, size=(50, 2)))
    with pytest.raises(ValueError):
        accessibility_rank(sandstede, 0.0, (0, 0), depth_cap=0)


def test_accessibility_degenerate_span():
    drift = ("-x+2*y+x^2", "2*x - y - 3*x^2 + 1.5*x*y")
    sys = ControlAffineSystem.from_strings(("x", "y"), drift, [drift], [-1], [1])
    assert accessibility_rank(sys, 0.0, (0.5, 0.2)) <= 1


def test_ad_span(sandstede):
    assert ad_span_check(sandstede, 0.0, (0.5, 0.5 * np.sqrt(0.5)))
    assert ad_span_check(sandstede, 0.0, (0.0, 0.0))
    flat = ControlAffineSystem.from_strings(("x", "y"), ("1", "0"), [("0", "0")], [-1], [1])
    assert not ad_span_check(flat, 0.0, (0.3, 0.3))


def test_kalman(sandstede, saddle0):
    np.testing.assert_array_equal(controllability_matrix(sandstede, 0.0, saddle0), [[0, 2], [1, -1]])
    assert kalman_rank(sandstede, 0.0, saddle0) == 2
    zero_b = ControlAffineSystem.from_strings(("x", "y"), ("-x", "-2*y"), [("0", "0")], [-1], [1])
    eq = find_equilibrium(zero_b, 0.0, (0.1, 0.1))
    assert kalman_rank(zero_b, 0.0, eq) == 0
    diag = ControlAffineSystem.from_strings(("x", "y"), ("-x", "-2*y"), [("1", "0")], [-1], [1])
    assert kalman_rank(diag, 0.0, find_equilibrium(diag, 0.0, (0.1, 0.1))) == 1


# -- manifolds, Melnikov, split function -------------------------------------

@pytest.mark.parametrize("which", ["unstable", "stable"])
def test_manifold_legs_follow_the_curve(sandstede, saddle0, window, which):
    leg = manifold_leg(sandstede, 0.0, saddle0, which, window=window)
    dense = leg.at(np.linspace(0, leg.duration, 4000))
    assert np.max(curve_residual(dense)) < 1e-5
    assert np.max(dense[:, 0]) == pytest.approx(1.0, abs=1e-4)
    assert np.linalg.norm(leg.states[0] - saddle0.location) == pytest.approx(1e-5, rel=1e-9)


def test_manifold_leg_rejects_bad_eps(sandstede, saddle0):
    with pytest.raises(ValueError):
        manifold_leg(sandstede, 0.0, saddle0, "unstable", eps=0.0)


def test_loop_samples(loop0):
    P = loop0.samples(200)
    assert P.shape == (200, 2)
    assert np.max(curve_residual(P)) < 1e-5
    np.testing.assert_allclose(loop0.anchor, [1.0, 0.0], atol=1e-6)


def test_melnikov_matches_oracle(sandstede, loop0):
    value = melnikov(sandstede, loop0, dt=0.005)
    assert value == pytest.approx(MELNIKOV_ORACLE, rel=5e-5)
    assert abs(melnikov(sandstede, loop0, dt=0.01) / value - 1) < 0.01


def test_melnikov_second_order_convergence(sandstede, loop0):
    m1, m2, m3 = (melnikov(sandstede, loop0, dt=h) for h in (0.02, 0.01, 0.005))
    ratio = (m1 - m2) / (m2 - m3)
    assert 3.5 < ratio < 4.5
    assert m3 + (m3 - m2) / 3 == pytest.approx(MELNIKOV_ORACLE, abs=1e-7)


def test_melnikov_vanishes_without_parameter(window):
    sys = ControlAffineSystem.from_strings(
        ("x", "y"), ("-x+2*y+x^2", "2*x - y - 3*x^2 + 1.5*x*y"), [("0", "1")], [-1], [1])
    sad = find_equilibrium(sys, 0.0, (0.1, -0.1))
    hom = homoclinic_orbit(sys, 0.0, sad, window, anchor=(1, 0))
    assert abs(melnikov(sys, hom)) < 1e-12


def test_melnikov_planar_only():
    sys = saddle3d_system()
    with pytest.raises(ValueError):
        melnikov(sys, None)


def test_split_function_signs(sandstede, section, window):
    kw = dict(saddle_seed=(0, 0), window=window)
    assert abs(split_function(sandstede, 0.0, section, **kw)) < 1e-4
    assert split_function(sandstede, 0.03, section, **kw) > 0
    assert split_function(sandstede, -0.017241, section, **kw) < 0
    # regression values for this section (xi_u - xi_s along the curve gradient)
    assert split_function(sandstede, 0.01, section, **kw) == pytest.approx(0.0113016005, abs=1e-8)


def test_section_checks(sandstede):
    with pytest.raises(ValueError):
        CrossSection((0, 0), (1, 0), normal=(1, 1))
    with pytest.raises(ValueError):
        CrossSection((0, 0), (1, 0), halfwidth=0.0)
    with pytest.raises(NotTransverse):
        CrossSection((0.0, 0.0), (1.0, 0.0)).flow_sign(sandstede, 0.0)


# -- limit cycles ------------------------------------------------------------

def _cycle(sys, alpha, section, window):
    _, det = split_function(sys, alpha, section, saddle_seed=(0, 0), window=window, details=True)
    return find_limit_cycle(sys, alpha, section, det["crossing_u"], window=window)


@pytest.fixture(scope="module")
def cycles(sandstede, section, window):
    return {a: _cycle(sandstede, a, section, window) for a in (0.01, 0.03, 0.07)}


def test_cycles_are_stable_and_closed(cycles):
    for a, c in cycles.items():
        assert c.stable
        assert np.all(np.abs(c.floquet_multipliers) < 1)
        assert np.prod(c.floquet_multipliers).real > 0
        assert np.linalg.norm(c.points[0] - c.points[-1]) < 1e-6
    assert cycles[0.01].period > cycles[0.03].period > cycles[0.07].period


def test_cycle_attracts(sandstede, cycles):
    for a, c in cycles.items():
        dense = c.samples.sample(1e-4)
        x = c.points[0] + 1e-3 * np.array([1.0, 0.3]) / np.hypot(1.0, 0.3)
        end = integrate(sandstede, a, x, T=5 * c.period).end
        assert np.min(np.linalg.norm(dense - end, axis=1)) < 1e-3


def test_cycle_approaches_loop(cycles, curve):
    ref = np.vstack([curve(4000), [[0.0, 0.0]]])
    d = [hausdorff(cycles[a].samples.sample(1e-3), ref) for a in (0.01, 0.03, 0.07)]
    assert d[0] < d[1] < d[2]


def test_no_cycle_below_connection(sandstede, section, window):
    with pytest.raises((NoReturn, NoConvergence)):
        _cycle(sandstede, -0.017241, section, window)


# -- Hausdorff ---------------------------------------------------------------

def test_hausdorff_hand_cases():
    a = np.array([[0.0, 0.0], [1.0, 2.0]])
    assert hausdorff(a, a) == 0.0
    assert hausdorff([[0, 0]], [[3, 4]]) == 5.0
    assert hausdorff([[0, 0], [1, 0]], [[0, 0]]) == 1.0
    assert directed_hausdorff([[0, 0]], [[0, 0], [1, 0]]) == 0.0
    with pytest.raises(EmptyInput):
        hausdorff([], [[0, 0]])
