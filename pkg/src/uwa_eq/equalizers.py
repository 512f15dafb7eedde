"""Classical block equalizers for the linear model Y = H S + Z.

All functions work on one complex block: Y is a length-B observation,
H the B x B channel block.  ``sliding_equalize`` applies a block method
independently to each diagonal block of the full N x N channel matrix
and joins the results, which is cheap but discards off-block energy.
"""

from __future__ import annotations

import numpy as np

from .channel import FreqChannelMatrix, SlidingPlan, extract_blocks, join_vector, split_vector
from .signal import QPSK, Constellation

__all__ = [
    "SingularChannelError",
    "CONDITION_LIMIT",
    "ML_MAX_BLOCK",
    "zf",
    "mmse",
    "dfe",
    "ml_bruteforce",
    "sliding_equalize",
    "METHODS",
]

CONDITION_LIMIT = 1e12
ML_MAX_BLOCK = 8


class SingularChannelError(ValueError):
    """Channel block too ill-conditioned to invert."""

    def __init__(self, message: str, block_index: int | None = None):
        super().__init__(message)
        self.block_index = block_index


def _check_block(y: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.complex128)
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"H must be square, got {h.shape}")
    if y.shape != (h.shape[0],):
        raise ValueError(f"Y shape {y.shape} does not match H {h.shape}")
    return y, h


def zf(y, h) -> np.ndarray:
    """Zero-forcing: solve H S = Y exactly.

    Raises SingularChannelError when cond(H) exceeds CONDITION_LIMIT.
    """
    y, h = _check_block(y, h)
    cond = np.linalg.cond(h)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularChannelError(f"channel block condition number {cond:.3e} "
                                   f"exceeds {CONDITION_LIMIT:.0e}")
    return np.linalg.solve(h, y)


def mmse(y, h, noise_var: float) -> np.ndarray:
    """Linear MMSE for unit-energy symbols: (H^H H + noise_var I)^-1 H^H Y.

    noise_var is the per-subcarrier complex noise variance.  noise_var = 0
    degenerates to the zero-forcing pseudo-inverse.
    """
    y, h = _check_block(y, h)
    if noise_var < 0:
        raise ValueError(f"noise_var must be non-negative, got {noise_var}")
    hh = h.conj().T
    gram = hh @ h
    if noise_var > 0:
        gram = gram + noise_var * np.eye(h.shape[0])
    return np.linalg.solve(gram, hh @ y)


def dfe(y, h, noise_var: float, constellation: Constellation = QPSK) -> np.ndarray:
    """Decision-feedback (ordered successive interference cancellation).

    Symbols are detected in descending order of the column norms of H.
    Each detection applies the MMSE filter restricted to the still
    undetected columns, hard-slices the chosen symbol, and subtracts its
    contribution from Y.  Returns the sliced (constellation) values.
    """
    y, h = _check_block(y, h)
    if noise_var < 0:
        raise ValueError(f"noise_var must be non-negative, got {noise_var}")
    b = h.shape[0]
    order = np.argsort(-np.linalg.norm(h, axis=0), kind="stable")
    undetected = list(order)
    residual = y.copy()
    out = np.zeros(b, dtype=np.complex128)
    for j in order:
        cols = np.array(undetected)
        hu = h[:, cols]
        huh = hu.conj().T
        gram = huh @ hu
        if noise_var > 0:
            gram = gram + noise_var * np.eye(cols.size)
        est = np.linalg.solve(gram, huh @ residual)
        pos = undetected.index(j)
        point = constellation.points[constellation.nearest_index(est[pos])]
        out[j] = point
        residual = residual - h[:, j] * point
        undetected.pop(pos)
    return out


def ml_bruteforce(y, h, constellation: Constellation = QPSK) -> np.ndarray:
    """Exhaustive maximum-likelihood search over all symbol vectors.

    Enumerates the |A|^B candidates in lexicographic index order and
    returns the one minimising ||Y - H S||; exact ties keep the first
    (lexicographically smallest) candidate.  Guarded to B <= ML_MAX_BLOCK.
    """
    y, h = _check_block(y, h)
    b = h.shape[0]
    if b > ML_MAX_BLOCK:
        raise ValueError(f"block size {b} exceeds the brute-force limit {ML_MAX_BLOCK}")
    a = constellation.size
    grids = np.meshgrid(*([np.arange(a)] * b), indexing="ij")
    idx = np.stack([g.reshape(-1) for g in grids], axis=1)  # (a**b, b), lexicographic
    cands = constellation.points[idx]
    resid = cands @ h.T - y[None, :]
    cost = np.einsum("ij,ij->i", resid, resid.conj()).real
    return cands[int(np.argmin(cost))].copy()


METHODS = {
    "zf": zf,
    "mmse": mmse,
    "dfe": dfe,
    "ml": ml_bruteforce,
}


def sliding_equalize(y, h, plan: SlidingPlan, method, method_params: dict | None = None) -> np.ndarray:
    """Apply a block equalizer to each diagonal block of H and join results.

    method may be a callable (y_block, h_block, **params) -> estimate or
    one of the METHODS names.  Per-block SingularChannelError is re-raised
    with the offending block index attached.
    """
    if isinstance(method, str):
        try:
            fn = METHODS[method]
        except KeyError:
            raise ValueError(f"unknown method {method!r}, expected one of {sorted(METHODS)}")
    else:
        fn = method
    params = dict(method_params or {})
    if isinstance(h, FreqChannelMatrix) and h.n != plan.n:
        raise ValueError(f"channel matrix size {h.n} does not match plan n={plan.n}")
    blocks_h = extract_blocks(h, plan)
    blocks_y = split_vector(np.asarray(y, dtype=np.complex128), plan)
    parts = []
    for j, (yb, hb) in enumerate(zip(blocks_y, blocks_h)):
        try:
            parts.append(fn(yb, hb, **params))
        except SingularChannelError as exc:
            raise SingularChannelError(f"block {j}: {exc}", block_index=j) from exc
    return join_vector(parts, plan)
