"""Variational integrators for forced Lagrangian systems.

The heavy lifting lives in the compiled extension; this package re-exports
its public surface.
"""

from ._core import (  # noqa: F401
    Benchmark,
    FviError,
    __version__,
    convergence,
    damped_linear,
    discrete_forces,
    doubled_lagrangian,
    energy,
    forced_acceleration,
    generalized_potential,
    legendre,
    reference,
    simulate,
    van_der_pol,
)
