import numpy as np
import pytest
from scipy import ndimage

from controlsets.dynamics import ControlAffineSystem, integrate
from controlsets.errors import (EmptyControlSet, EmptySeeds, GridMismatch, NoControls,
                                TubeExceeded)
from controlsets.reachset import (CellSet, Grid, chain_transitive_cells, classify_invariance,
                                  control_set, expand, periodic_orbit_certificate, reach_fixpoint,
                                  seed_cells, transition_graph)

FOCUS = (2 / 3, 1 / 9)


@pytest.fixture(scope="module")
def stable_node():
    return ControlAffineSystem.from_strings(("x", "y"), ("-x", "-y"), [("1", "0")], [-1], [1])


@pytest.fixture(scope="module")
def small_grid():
    return Grid((-1, -1), (1, 1), (20, 20))


@pytest.fixture(scope="module")
def d0(sandstede, grid150):
    return control_set(sandstede, 0.0, 0.01, grid150, (1.0, 0.0))


@pytest.fixture(scope="module")
def d2(sandstede, grid150):
    return control_set(sandstede, 0.0, 0.01, grid150, FOCUS, mode="reversed_only")


# -- grid and cell sets ------------------------------------------------------

def test_boundary_points_go_to_lower_cell():
    g = Grid((0, 0), (1, 1), (2, 2))
    idx, inside = g.locate([[0.5, 0.5], [0.0, 0.0], [1.0, 1.0], [0.25, 0.75], [1.01, 0.5]])
    assert idx[:4].tolist() == [[0, 0], [0, 0], [1, 1], [0, 1]]
    assert inside.tolist() == [True, True, True, True, False]


def test_index_box_bijection():
    g = Grid((-1, 0, 2), (1, 3, 4), (4, 3, 5))
    flat = np.arange(g.size)
    back, inside = g.flat_index(g.centers(flat))
    np.testing.assert_array_equal(back, flat)
    assert inside.all()


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid((0, 0), (0, 1), (2, 2))
    with pytest.raises(ValueError):
        Grid((0, 0), (1, 1), (0, 2))


def test_representatives():
    g = Grid((0, 0), (1, 1), (2, 2))
    R = g.representatives(0)
    assert R.shape == (1, 5, 2)
    np.testing.assert_allclose(R[0, 0], [0.25, 0.25])
    np.testing.assert_allclose(sorted(R[0, 1:, 0]), [0.025, 0.025, 0.475, 0.475])


def test_set_algebra_and_csv():
    g = Grid((0, 0), (1, 1), (2, 2))
    a, b = g.from_flat([0, 3]), g.from_flat([3, 1])
    assert (a | b).flat().tolist() == [0, 1, 3]
    assert (a & b).flat().tolist() == [3]
    assert (a - b).flat().tolist() == [0]
    assert (a & b) <= a
    assert 3 in a and 1 not in a
    assert (a | b).to_csv() == "0,0,0.25,0.25\n0,1,0.25,0.75\n1,1,0.75,0.75\n"
    assert CellSet.from_csv(g, (a | b).to_csv()) == a | b
    assert g.empty().to_csv() == ""
    other = Grid((0, 0), (1, 1), (3, 3))
    with pytest.raises(GridMismatch):
        a | other.empty()
    with pytest.raises(GridMismatch):
        CellSet(g, np.zeros((3, 3)))


def test_dilation_is_8_connected():
    g = Grid((0, 0), (1, 1), (5, 5))
    c = g.from_flat([g.cell_of((0.5, 0.5))]).dilate(1)
    assert len(c) == 9


# -- expand ------------------------------------------------------------------

def test_attracting_equilibrium_keeps_its_cell(stable_node, small_grid):
    c = expand(stable_node, 0.0, 0.1, small_grid, [(0.0, 0.0)], controls=[[0.0]])
    assert c.flat().tolist() == [small_grid.cell_of((0.0, 0.0))]


def test_expand_errors(sandstede, grid150):
    with pytest.raises(EmptySeeds):
        expand(sandstede, 0.0, 0.01, grid150, [])
    with pytest.raises(NoControls):
        expand(sandstede, 0.0, 0.01, grid150, [(1, 0)], controls=[])
    with pytest.raises(ValueError):
        expand(sandstede, 0.0, 0.01, grid150, [(1, 0)], controls=[[0.5]])
    with pytest.raises(ValueError):
        expand(sandstede, 0.0, 0.01, grid150, [(5, 0)])
    with pytest.raises(ValueError):
        expand(sandstede, 0.0, 0.01, grid150, [(1, 0)], step_T=0.0)


def test_seed_cells_unique(grid150):
    s = seed_cells(grid150, [(1, 0), (1, 0), (0.5, 0.1)])
    assert len(s) == 2


def test_reachable_set_covers_loop(sandstede, grid150, curve):
    c = expand(sandstede, 0.0, 0.01, grid150, [(1.0, 0.0)])
    assert c.contains_points(curve(200)).mean() >= 0.99
    back = expand(sandstede, 0.0, 0.01, grid150, [(1.0, 0.0)], reversed=True)
    assert c & back


def test_reachset_of_uncontrolled_flow_follows_the_trajectory(sandstede, grid150):
    info = reach_fixpoint(sandstede, 0.0, 0.01, grid150, seed_cells(grid150, [(1.0, 0.0)]),
                          controls=[[0.0]])
    tr = integrate(sandstede, 0.0, (1.0, 0.0), T=8.0, tol=1e-10)
    assert info.cells.contains_points(tr.sample(0.002)).all()


def test_schedule_independence(sandstede):
    g = Grid((-0.2, -0.6), (1.2, 0.6), (60, 60))
    a = expand(sandstede, 0.0, 0.01, g, [(1.0, 0.0)], order="ascending")
    b = expand(sandstede, 0.0, 0.01, g, [(1.0, 0.0)], order="descending")
    c = expand(sandstede, 0.0, 0.01, g, [(1.0, 0.0)], order="shuffle", rng=3)
    d = expand(sandstede, 0.0, 0.01, g, [(1.0, 0.0)], chunk=97)
    assert a == b == c == d


def test_more_controls_never_shrink(sandstede):
    g = Grid((-0.2, -0.6), (1.2, 0.6), (60, 60))
    base = expand(sandstede, 0.0, 0.01, g, [(1.0, 0.0)])
    more = expand(sandstede, 0.0, 0.01, g, [(1.0, 0.0)], controls=[[-0.01], [0], [0.01], [0.004]])
    assert base <= more


def test_three_dimensional_expand():
    sys = ControlAffineSystem.from_strings(("x", "y", "z"), ("-x", "-y", "-z"), [("1", "0", "0")],
                                           [-1], [1])
    g = Grid((-1, -1, -1), (1, 1, 1), (10, 10, 10))
    c = expand(sys, 0.0, 0.5, g, [(0.05, 0.05, 0.05)], refine=2)
    # the reachable set of a stable node under |u| <= 0.5 stays in |x| <= 0.5 along the control axis
    assert c.contains_point((0.05, 0.05, 0.05))
    assert np.all(np.abs(c.centers()[:, 0]) < 0.5 + 0.1)
    assert np.all(np.abs(c.centers()[:, 1:]) < 0.2)


@pytest.mark.slow
def test_duality_on_random_pairs(sandstede, grid150, d0, d2):
    inner0 = CellSet(grid150, ndimage.binary_erosion(d0.cells.bitmap, np.ones((3, 3))))
    inner2 = CellSet(grid150, ndimage.binary_erosion(d2.cells.bitmap, np.ones((3, 3))))
    rng = np.random.default_rng(0)
    a = inner0.centers()[rng.choice(len(inner0), 7, replace=False)]
    b = inner2.centers()[rng.choice(len(inner2), 3, replace=False)]
    pairs = [(a[k], a[k + 1]) for k in range(4)] + [(a[4], b[0]), (b[1], a[5]), (b[2], a[6])]
    answers = []
    for p, q in pairs:
        fw = expand(sandstede, 0.0, 0.01, grid150, [p]).contains_point(q)
        bw = expand(sandstede, 0.0, 0.01, grid150, [q], reversed=True).contains_point(p)
        assert fw == bw
        answers.append(fw)
    assert answers[:4] == [True] * 4
    assert answers[4] is False and answers[5] is True


# -- control sets ------------------------------------------------------------

def test_d0_and_d2_at_connection(d0, d2, grid150, curve):
    assert d0.kind == "variant"
    assert d0.cells.contains_points(curve(200)).mean() >= 0.99
    assert d0.cells.contains_point((0.0, 0.0))
    assert d2.cells.contains_point(FOCUS)
    assert not (d0.cells & d2.cells)
    lo, hi = d2.isolating_box()
    assert np.all(lo <= FOCUS) and np.all(np.array(FOCUS) <= hi)


def test_distinct_control_sets_do_not_meet(sandstede, grid150):
    # the loop cannot be steered back to the repelling focus
    with pytest.raises(EmptyControlSet):
        control_set(sandstede, 0.0, 0.01, grid150, (1.0, 0.0), FOCUS)


def test_overlapping_control_sets_agree(sandstede, grid150, d0):
    other = control_set(sandstede, 0.0, 0.01, grid150, (0.5, -0.5 * np.sqrt(0.5)))
    assert d0.cells & other.cells
    # equal up to the one-cell leakage of the discretization
    assert d0.cells <= other.cells.dilate(1)
    assert other.cells <= d0.cells.dilate(1)


def test_invariance_of_attractor(stable_node, small_grid):
    cs = control_set(stable_node, 0.0, 0.01, small_grid, (0.0, 0.0))
    assert classify_invariance(stable_node, 0.0, 0.01, small_grid, cs).kind == "invariant"
    assert classify_invariance(stable_node, 0.0, 0.01, small_grid, cs, seeding="cells").kind == "invariant"


def test_saddle_set_is_variant(small_grid):
    saddle = ControlAffineSystem.from_strings(("x", "y"), ("x", "-y"), [("0", "1")], [-1], [1])
    cs = control_set(saddle, 0.0, 0.05, small_grid, (0.0, 0.0))
    out = classify_invariance(saddle, 0.0, 0.05, small_grid, cs)
    assert out.kind == "variant"
    assert out.details["invariance"]["outside_cells"] > 0 or out.details["invariance"]["escaped"]


def test_control_set_result_validation(small_grid):
    from controlsets.reachset import ControlSetResult
    with pytest.raises(EmptyControlSet):
        ControlSetResult(small_grid.empty(), "variant", "point", (0, 0), 0.0, 0.1)
    with pytest.raises(ValueError):
        ControlSetResult(small_grid.from_flat([0]), "nope", "point", (0, 0), 0.0, 0.1)


# -- chain transitive cells --------------------------------------------------

def test_linear_chain_set_is_the_origin(stable_node, small_grid):
    comps = chain_transitive_cells(stable_node, 0.0, small_grid)
    assert len(comps) == 1
    origin = small_grid.from_flat([small_grid.cell_of((0.0, 0.0))])
    assert origin <= comps[0]
    assert comps[0] <= origin.dilate(2)


def test_transition_graph_shape(stable_node, small_grid):
    A, g = transition_graph(stable_node, 0.0, small_grid, refine=2)
    assert A.shape == (1600, 1600)
    assert g.shape == (40, 40)
    with pytest.raises(ValueError):
        transition_graph(stable_node, 0.0, small_grid, step_T=-1.0)


def test_chain_set_at_connection(sandstede, grid150, curve):
    comps = chain_transitive_cells(sandstede, 0.0, grid150)
    main = comps[0]
    cells = grid150.from_points(curve(200))
    assert len(main & cells) >= 0.95 * len(cells)
    assert main.contains_point((0.0, 0.0))
    assert any(c.contains_point(FOCUS) for c in comps[1:])


@pytest.mark.xfail(strict=True, reason="at this resolution the cycle and the saddle chain together; "
                                       "see the decisions ledger")
def test_chain_sets_separate_cycle_and_saddle(sandstede, grid150, section, window):
    from controlsets.analysis import find_limit_cycle, split_function
    _, det = split_function(sandstede, 0.03, section, saddle_seed=(0, 0), window=window, details=True)
    cyc = find_limit_cycle(sandstede, 0.03, section, det["crossing_u"], window=window)
    comps = chain_transitive_cells(sandstede, 0.03, grid150)
    with_saddle = [k for k, c in enumerate(comps) if c.contains_point((0.0, 0.0))]
    with_cycle = [k for k, c in enumerate(comps) if c.contains_points(cyc.points).mean() >= 0.95]
    assert with_saddle and with_cycle and set(with_saddle).isdisjoint(with_cycle)


# -- certificate -------------------------------------------------------------

def test_certificate_at_connection(sandstede, grid150, d0, curve):
    ref = curve(2000)
    cert = periodic_orbit_certificate(sandstede, 0.0, 0.01, grid150, d0, (1.0, 0.0), 0.05,
                                      reference=ref, saddle=(0.0, 0.0))
    assert cert.closure < 1e-6
    assert cert.hausdorff < 0.05
    assert cert.control.check_range(sandstede, 0.01)
    # independent replay of the returned control
    tr = integrate(sandstede, 0.0, (1.0, 0.0), cert.control, T=cert.period, tol=1e-11)
    assert np.linalg.norm(tr.end - np.array([1.0, 0.0])) < 1e-6
    assert d0.cells.dilate(1).contains_points(tr.sample(0.002)).all()


def test_certificate_rejects_tiny_tube(sandstede, grid150, d0, curve):
    with pytest.raises(TubeExceeded):
        periodic_orbit_certificate(sandstede, 0.0, 0.01, grid150, d0, (1.0, 0.0), 1e-9,
                                   reference=curve(2000), saddle=(0.0, 0.0))


def test_certificate_preconditions(sandstede, grid150, d0, curve):
    kw = dict(reference=curve(200), saddle=(0.0, 0.0))
    with pytest.raises(ValueError):
        periodic_orbit_certificate(sandstede, 0.0, 0.01, grid150, d0, FOCUS, 0.05, **kw)
    with pytest.raises(ValueError):
        periodic_orbit_certificate(sandstede, 0.0, 0.01, grid150, d0, (1.0, 0.0), 0.0, **kw)
    with pytest.raises(ValueError):
        periodic_orbit_certificate(sandstede, 0.0, 0.01, grid150, d0, (1.0, 0.0), 0.05)
