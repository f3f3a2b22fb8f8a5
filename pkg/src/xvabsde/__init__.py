"""Pricing under bilateral default risk with asymmetric funding, repo and collateral rates.

Modules:

- ``model``: market, contract and numerics configuration.
- ``paths``: asset paths, default times and defaultable bond prices.
- ``drivers``: driver functions and hedge ratios.
- ``bsde``: regression Monte Carlo and ODE solvers for the pricing equations.
- ``pde``: finite-difference solver for one asset.
- ``xva``: zeroth-order price decomposition and practitioner XVA terms.
- ``analysis``: no-arbitrage margins, ordering, spread sweeps, replication.
- ``cli``: command-line front end.
"""

__version__ = "0.1.0"

from .errors import ConfigError, ConsistencyError, DomainError, NumericError, UnsupportedConfiguration, XvaError
from .kernels import BACKEND

__all__ = [
    "__version__",
    "BACKEND",
    "ConfigError",
    "ConsistencyError",
    "DomainError",
    "NumericError",
    "UnsupportedConfiguration",
    "XvaError",
]
