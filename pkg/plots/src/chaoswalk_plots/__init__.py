"""Figures from chaoswalk data artifacts.

Reads the CSV/JSON files the simulation CLI writes and produces the
scaling plots a reader would want: log-log encounter counts with the
fitted exponent, semi-log large-deviation tails, CF-error decay,
quenched-concentration decay, invariant-density bars.  This package
only consumes artifacts; it never runs the simulator.
"""

from chaoswalk_plots.render import PlotDataError, PlotSpec, recompute_fit, render

__all__ = ["PlotDataError", "PlotSpec", "recompute_fit", "render"]
