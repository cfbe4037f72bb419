"""Keller-Segel chemotaxis with nonlocal logistic growth in the plane.

Closed forms live in :mod:`nlks.oracle`, the radial and planar solvers in
:mod:`nlks.radialmass` and :mod:`nlks.planefield`, diagnostics in
:mod:`nlks.gauges` and the scenario tooling in :mod:`nlks.bench`.
"""

__version__ = "0.1.0"
