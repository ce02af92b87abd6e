"""Hierarchical connected-vehicle on-ramp merging stack.

Upper level: mixed-integer merging-sequence optimization over
order-preserving interleavings. Lower level: serial distributed
longitudinal MPC on the virtual platoon plus a lateral path-tracking MPC,
with string-stability and initial-feasible-set analysis tools and a
reproducible scenario harness.
"""

__version__ = "0.1.0"
