from .core import Curve, FigureError, FigureSpec, least_squares_slope, \
    render, two_point_slope
from .presets import ALL_PRESETS, build_preset

__all__ = ["Curve", "FigureError", "FigureSpec", "render", "build_preset",
           "ALL_PRESETS", "least_squares_slope", "two_point_slope"]
