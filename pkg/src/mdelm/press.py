"""Closed-form leave-one-out (PRESS) residuals for a ridge output layer.

For hidden outputs ``H`` (n x D), targets ``T`` (n x C) and ridge ``lam``,
the hat matrix is ``HAT = H (H'H + lam I)^-1 H'``. The residual of sample
``i`` under a model retrained without it is ``R_i / (1 - h_ii)`` where
``R = T - HAT T``. This is exact for ridge regression without an intercept.

Since ``HAT`` does not depend on ``T``, replacing target rows only needs
the matching hat columns, so a label flip is evaluated in O(n C) time.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Sequence

import numpy as np
from scipy import linalg

from . import _kernels
from .errors import NearInterpolationError, ValidationError

DENSE_HAT_LIMIT = 4000
LEVERAGE_GUARD = 1e-10


class _HatColumns:
    """Columns of the hat matrix computed on demand, with an LRU cache."""

    def __init__(self, H, gram_inverse, maxsize=4096):
        self._H = H
        self._A = gram_inverse
        self._cache = OrderedDict()
        self._maxsize = maxsize

    def __getitem__(self, i):
        i = int(i)
        col = self._cache.get(i)
        if col is None:
            col = self._H @ (self._A @ self._H[i])
            self._cache[i] = col
            if len(self._cache) > self._maxsize:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(i)
        return col

    def rows(self, idx):
        return np.stack([self[i] for i in idx])


class PressState:
    """PRESS residuals for one (H, lam) pair and a mutable target matrix.

    Attributes
    ----------
    gram_inverse : (D, D) array
    hat_diag : (n,) array of leverages ``h_ii``
    hat : (n, n) array or None
        Dense hat matrix, kept when ``n <= DENSE_HAT_LIMIT``.
    targets : (n, C) array
    residuals : (n, C) array, ``T - HAT T``
    loo_error : float
        Mean over samples and columns of the squared PRESS residuals.
    """

    def __init__(self, H, T, lam, dense_hat=None):
        H = np.ascontiguousarray(H, dtype=float)
        T = np.array(T, dtype=float)
        if lam <= 0:
            raise ValidationError("lambda must be positive")
        if H.ndim != 2 or T.ndim != 2 or H.shape[0] != T.shape[0]:
            raise ValidationError("H and T must be 2-d with the same row count")
        n = H.shape[0]
        if n < 2:
            raise ValidationError("PRESS needs at least two samples")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(T))):
            raise ValidationError("non-finite values in H or T")

        G = H.T @ H
        G[np.diag_indices_from(G)] += lam
        L = linalg.cholesky(G, lower=True)
        M = linalg.solve_triangular(L, H.T, lower=True)  # HAT = M'M
        self.lam = float(lam)
        self.gram_inverse = linalg.cho_solve((L, True), np.eye(G.shape[0]))
        self.hat_diag = np.einsum("ij,ij->j", M, M)
        if dense_hat is None:
            dense_hat = n <= DENSE_HAT_LIMIT
        if dense_hat:
            self.hat = M.T @ M
            self._columns = None
        else:
            self.hat = None
            self._columns = _HatColumns(H, self.gram_inverse)

        gap = 1.0 - self.hat_diag
        if np.any(gap < LEVERAGE_GUARD):
            worst = int(np.argmin(gap))
            raise NearInterpolationError(
                f"leverage of sample {worst} is {self.hat_diag[worst]!r}; "
                "PRESS residuals are unstable (increase lambda)"
            )
        self.inv_gap = 1.0 / gap
        self.targets = T
        fitted = self.hat @ T if dense_hat else H @ (self.gram_inverse @ (H.T @ T))
        self.residuals = T - fitted
        self.loo_error = float(np.mean(self.press_residuals() ** 2))

    @property
    def n_samples(self) -> int:
        return self.targets.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.targets.shape[1]

    def press_residuals(self) -> np.ndarray:
        return self.residuals * self.inv_gap[:, None]

    def hat_rows(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if self.hat is not None:
            return np.ascontiguousarray(self.hat[idx])
        return self._columns.rows(idx)

    def _check(self, flips):
        n, C = self.targets.shape
        idx = np.array([int(i) for i, _ in flips], dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexError(f"sample index out of range [0, {n})")
        if len(set(idx.tolist())) != idx.size:
            raise ValidationError("a sample appears twice in one flip set")
        new = np.array([np.asarray(t, dtype=float) for _, t in flips]).reshape(idx.size, C)
        return idx, new, new - self.targets[idx]

    def delta_sse(self, flips: Sequence[tuple[int, np.ndarray]]) -> float:
        """Change of the PRESS sum of squares if the given target rows are replaced."""
        idx, _, delta = self._check(flips)
        if not np.any(delta):
            return 0.0
        return _kernels.flip_delta_sse(
            self.press_residuals(), self.inv_gap, self.hat_rows(idx), idx, delta
        )

    def loo_error_after_flip(self, i, new_target_row=None, flips=None) -> float:
        """LOO error with row ``i`` (or every row in ``flips``) replaced.

        Pure query; the state is not modified.
        """
        if flips is None:
            flips = [(i, new_target_row)]
        change = self.delta_sse(flips)
        return self.loo_error + change / self.targets.size

    def commit_flip(self, flips: Sequence[tuple[int, np.ndarray]]) -> "PressState":
        """Apply target replacements in place and return ``self``."""
        idx, new, delta = self._check(flips)
        if not np.any(delta):
            return self
        new_error = self.loo_error_after_flip(None, flips=flips)
        dR = -(self.hat_rows(idx).T @ delta)
        dR[idx] += delta
        self.residuals += dR
        self.targets[idx] = new
        self.loo_error = new_error
        return self


def build_press(H, T, lam, dense_hat=None) -> PressState:
    return PressState(H, T, lam, dense_hat=dense_hat)


def loo_error_after_flip(state: PressState, i: int, new_target_row) -> float:
    return state.loo_error_after_flip(i, new_target_row)


def commit_flip(state: PressState, flips) -> PressState:
    return state.commit_flip(flips)
