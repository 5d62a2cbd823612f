"""BFGS numerical kernels.

Dense rank-two updates (direct and inverse form) act as oracles and drive the
dense baselines.  The two-loop recursion and the compact representation are the
production paths: they work off a :class:`~lgbfgs.pairs.PairStore` and never
materialize a d x d matrix.  Folding the inverse update over a store in storage
order from ``h0_scale * I`` defines the implicit operator every equivalence
test refers back to.
"""

from __future__ import annotations

import numpy as np

from .errors import CurvatureError
from .pairs import PairStore


def _curvature(s: np.ndarray, r: np.ndarray) -> float:
    c = float(s @ r)
    if c <= 0.0:
        raise CurvatureError(f"curvature s'r = {c:.3e} is not positive")
    return c


def dense_bfgs_update(B: np.ndarray, s: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Rank-two secant update of a dense Hessian approximation.

    B+ = B + r r'/(r's) - B s s' B/(s'Bs); keeps symmetry and positive
    definiteness whenever s'r > 0.
    """
    c = _curvature(s, r)
    bs = B @ s
    sbs = float(s @ bs)
    if sbs <= 0.0:
        raise CurvatureError(f"s'Bs = {sbs:.3e} <= 0: input lost positive definiteness")
    out = B + np.outer(r, r) / c - np.outer(bs, bs) / sbs
    return 0.5 * (out + out.T)


def dense_inv_bfgs_update(H: np.ndarray, s: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Inverse-form rank-two update: H+ = V'HV + ss'/(s'r), V = I - rs'/(s'r)."""
    c = _curvature(s, r)
    v = np.eye(H.shape[0]) - np.outer(r, s) / c
    out = v.T @ H @ v + np.outer(s, s) / c
    return 0.5 * (out + out.T)


def dense_H_from_pairs(store: PairStore) -> np.ndarray:
    """Fold the inverse update over the store from h0_scale * I (test oracle)."""
    H = store.h0_scale * np.eye(store.dim)
    for p in store.pairs:
        H = dense_inv_bfgs_update(H, p.s_dense(), p.r)
    return H


def dense_B_from_pairs(store: PairStore) -> np.ndarray:
    """Fold the direct update over the store from (1/h0_scale) * I."""
    B = (1.0 / store.h0_scale) * np.eye(store.dim)
    for p in store.pairs:
        B = dense_bfgs_update(B, p.s_dense(), p.r)
    return B


def apply_inverse_hessian(store: PairStore, v: np.ndarray) -> np.ndarray:
    """Two-loop recursion: the implicit inverse operator applied to v, O(size*d)."""
    q = np.asarray(v, dtype=float).copy()
    if q.shape != (store.dim,):
        raise ValueError(f"vector has shape {q.shape}, expected ({store.dim},)")
    pairs = store.pairs
    alphas = np.empty(len(pairs))
    rhos = np.empty(len(pairs))
    for k in range(len(pairs) - 1, -1, -1):
        p = pairs[k]
        cur = p.curvature
        if cur <= 0.0:
            raise CurvatureError(f"stored pair {k} has curvature {cur:.3e} <= 0")
        rhos[k] = 1.0 / cur
        alphas[k] = rhos[k] * q[p.basis_index]
        q -= alphas[k] * p.r
    q *= store.h0_scale
    for k, p in enumerate(pairs):
        beta = rhos[k] * float(p.r @ q)
        q[p.basis_index] += alphas[k] - beta
    return q


def two_loop_direction(store: PairStore, g: np.ndarray) -> np.ndarray:
    """Quasi-Newton descent direction -(implicit inverse) @ g."""
    return -apply_inverse_hessian(store, g)


def _compact_middle(store: PairStore) -> tuple[np.ndarray, np.ndarray]:
    """Middle matrix of B = B0 - [B0 S, R] M^-1 [B0 S, R]' and the row-slice R[idx, :].

    With basis variations and distinct indices, S'B0S = (1/h0) I and the
    strictly-lower / diagonal parts of S'R come straight from R's rows at the
    stored indices.
    """
    m = store.size
    R = np.column_stack([p.r for p in store.pairs])
    sr = R[store.indices, :]
    lower = np.tril(sr, k=-1)
    diag = np.diag(np.diag(sr))
    middle = np.block(
        [
            [np.eye(m) / store.h0_scale, lower],
            [lower.T, -diag],
        ]
    )
    return middle, sr


def _compact_rhs(store: PairStore, indices) -> np.ndarray:
    """Stack [B0 S, R]' e_i column-wise for the requested basis indices."""
    m = store.size
    R = np.column_stack([p.r for p in store.pairs])
    stored = np.array(store.indices)
    W = np.zeros((2 * m, len(indices)))
    for col, i in enumerate(indices):
        W[:m, col] = (stored == i) / store.h0_scale
        W[m:, col] = R[i, :]
    return W


def compact_B_column(store: PairStore, i: int) -> np.ndarray:
    """Column B e_i of the implicit direct operator via the compact representation."""
    i = int(i)
    if not 0 <= i < store.dim:
        raise IndexError(f"basis index {i} out of range [0, {store.dim})")
    col = np.zeros(store.dim)
    col[i] = 1.0 / store.h0_scale
    if store.size == 0:
        return col
    middle, _ = _compact_middle(store)
    w = _compact_rhs(store, [i])[:, 0]
    try:
        z = np.linalg.solve(middle, w)
    except np.linalg.LinAlgError as exc:
        raise CurvatureError(f"singular compact middle matrix: {exc}") from exc
    m = store.size
    R = np.column_stack([p.r for p in store.pairs])
    col[store.indices] -= z[:m] / store.h0_scale
    col -= R @ z[m:]
    return col


def compact_B_diag(store: PairStore, indices) -> np.ndarray:
    """Diagonal entries e_i' B e_i for a batch of indices; one factorization."""
    indices = [int(i) for i in indices]
    for i in indices:
        if not 0 <= i < store.dim:
            raise IndexError(f"basis index {i} out of range [0, {store.dim})")
    base = np.full(len(indices), 1.0 / store.h0_scale)
    if store.size == 0:
        return base
    middle, _ = _compact_middle(store)
    W = _compact_rhs(store, indices)
    try:
        Z = np.linalg.solve(middle, W)
    except np.linalg.LinAlgError as exc:
        raise CurvatureError(f"singular compact middle matrix: {exc}") from exc
    return base - np.sum(W * Z, axis=0)
