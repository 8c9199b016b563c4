"""Autonomous microscale data mining for neural hyperelastic surrogates.

The package couples a macroscopic finite element solver, driven by a
physics-constrained neural material model in invariant space, to a microscale
response oracle.  States the surrogate has not seen are detected in the macro
solution, evaluated by the oracle, and fed back into training until the
simulation no longer leaves the sampled region.
"""

__version__ = "0.1.0"
