"""Standard normal tail helpers built on the stdlib."""

import math
from statistics import NormalDist

import numpy as np

_STD = NormalDist()
_SQRT2 = math.sqrt(2.0)


def norm_sf(x: float) -> float:
    """Upper tail 1 - Phi(x), accurate far into either tail."""
    return 0.5 * math.erfc(x / _SQRT2)


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def norm_ppf(p: float) -> float:
    return _STD.inv_cdf(p)


norm_sf_array = np.vectorize(norm_sf, otypes=[float])
