"""Figure renderer for the gmmatch engine's file outputs."""

from .figures import DEFAULT_HIGHLIGHTS, KINDS, FigureRequest, render
from .io import (
    Minimum,
    SchemaError,
    Surface,
    find_local_minima,
    global_minima,
    means_from_theta,
    read_eval_csv,
    read_surface_csv,
    read_trajectory,
)

__all__ = [
    "DEFAULT_HIGHLIGHTS",
    "KINDS",
    "FigureRequest",
    "render",
    "Minimum",
    "SchemaError",
    "Surface",
    "find_local_minima",
    "global_minima",
    "means_from_theta",
    "read_eval_csv",
    "read_surface_csv",
    "read_trajectory",
]
