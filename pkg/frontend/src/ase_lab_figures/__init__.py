"""Figure rendering for ase-lab experiment CSVs."""

from .render import FigureSpec, RenderError, render

__all__ = ["FigureSpec", "RenderError", "render"]
