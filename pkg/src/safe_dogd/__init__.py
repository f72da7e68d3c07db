"""Safe distributed online optimization over unknown linear constraints.

Agents explore around a known safe action, estimate the constraint matrix
with decentralized least squares, and then run distributed projected online
gradient descent on robust (confidence-ball tightened) safe sets.
"""

__version__ = "0.1.0"

from .errors import SafeDOGDError  # noqa: E402

__all__ = ["SafeDOGDError", "__version__"]
