"""Command-line front end: configuration, dispatch and raster emitters."""

from .config import RunConfig, config_from_text, default_config, dump_config, load_config
from .main import main
from .raster import emit_raster, pgm_text, svg_text

__all__ = ["RunConfig", "config_from_text", "default_config", "dump_config", "emit_raster",
           "load_config", "main", "pgm_text", "svg_text"]
