"""Graph-to-text generation with online back-parsing, in plain numpy."""

from .amr import AmrGraph, RawExample, parse_penman, render_penman, shortest_label_path
from .config import RunConfig, desk_config
from .data import Vocabs, build_vocabs, prepare, prepare_all
from .network import BackParser

__version__ = "0.1.0"

__all__ = [
    "AmrGraph",
    "BackParser",
    "RawExample",
    "RunConfig",
    "Vocabs",
    "build_vocabs",
    "desk_config",
    "parse_penman",
    "prepare",
    "prepare_all",
    "render_penman",
    "shortest_label_path",
]
