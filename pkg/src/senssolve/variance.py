"""Conservative standard errors from a hat-matrix regression across strata."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import MatchedDesign
from .errors import LeverageOne, RankDeficientQ, TooFewStrata

LEVERAGE_GUARD = 1e-10


@dataclass(frozen=True)
class DesignMatrixQ:
    """A B x p matrix that is fixed across treatment assignments.

    The orthonormal basis of its column space and the leverages are
    computed once, on first use.
    """

    entries: np.ndarray
    _basis: np.ndarray = field(init=False, repr=False, compare=False)
    _leverage: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        q = np.asarray(self.entries, dtype=float)
        if q.ndim == 1:
            q = q[:, None]
        object.__setattr__(self, "entries", q)
        B, p = q.shape
        if B <= p:
            raise TooFewStrata(f"need more strata than columns (B={B}, p={p})")
        basis, r = np.linalg.qr(q)
        diag = np.abs(np.diag(r))
        if diag.min() <= 1e-12 * max(diag.max(), 1e-300):
            raise RankDeficientQ("Q does not have full column rank")
        leverage = np.sum(basis * basis, axis=1)
        if np.any(leverage >= 1.0 - LEVERAGE_GUARD):
            raise LeverageOne("a stratum has leverage one under Q")
        object.__setattr__(self, "_basis", basis)
        object.__setattr__(self, "_leverage", leverage)

    @property
    def B(self) -> int:
        return self.entries.shape[0]

    @property
    def leverage(self) -> np.ndarray:
        return self._leverage

    def residual(self, y: np.ndarray) -> np.ndarray:
        """``(I - H_Q) y``; ``y`` may be (B,) or (m, B) with one vector per row."""
        y = np.asarray(y, dtype=float)
        return y - (y @ self._basis) @ self._basis.T


def default_q(design: MatchedDesign) -> DesignMatrixQ:
    """Single column with entries ``B n_i / N``."""
    return DesignMatrixQ(design_weights(design.sizes))


def design_weights(sizes) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    return len(sizes) * sizes / sizes.sum()


def se_q_squared(per_stratum_values, q_matrix: DesignMatrixQ) -> np.ndarray | float:
    """Squared standard error for a sum of per-stratum terms.

    ``per_stratum_values`` holds the terms of the statistic, e.g.
    ``(n_i/N) D_i``; a 2-D array is treated as one set of terms per row.
    """
    v = np.asarray(per_stratum_values, dtype=float)
    B = q_matrix.B
    if v.shape[-1] != B:
        raise ValueError(f"expected {B} per-stratum values, got {v.shape[-1]}")
    y = B * v / np.sqrt(1.0 - q_matrix.leverage)
    resid = q_matrix.residual(y)
    return np.sum(resid * resid, axis=-1) / B**2


def se_q(per_stratum_values, q_matrix: DesignMatrixQ) -> float:
    """Conservative standard error; its square's expectation dominates the true variance."""
    return float(np.sqrt(se_q_squared(per_stratum_values, q_matrix)))
