"""Privacy-preserving item-based top-N recommendation.

Exact Jaccard item similarity, MinHash signature estimation, a simulated
anonymous random-walk collection protocol, client-side top-N scoring and an
evaluation harness tying them together.
"""

from pprec.kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
