"""Iteration drivers producing uniform traces.

Methods: gradient descent, classic limited-memory BFGS (difference pairs,
FIFO eviction), dense BFGS, dense greedy BFGS (full-basis selection with
optional correction scaling), and the limited-memory greedy method combining
basis selection, correction scaling, and pair aggregation.

Every run is strictly sequential, owns its state, and is deterministic for a
given configuration; traces carry one record per visited iterate.  A
divergence guard stops any run whose objective value grows for too many
consecutive iterations or turns non-finite.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import aggregation, diagnostics, greedy, kernels
from .correction import CorrectionConfig, apply_scaling, scale_factor, weighted_step_norm
from .errors import CurvatureError
from .greedy import SubsetPolicy, greedy_pair, subset_indices
from .objectives import Objective
from .pairs import CaseTag, CurvaturePair, PairStore

GD = "gd"
LBFGS = "lbfgs"
BFGS_DENSE = "bfgs_dense"
GREEDY_BFGS = "greedy_bfgs"
LG_BFGS = "lg_bfgs"
METHODS = (GD, LBFGS, BFGS_DENSE, GREEDY_BFGS, LG_BFGS)


@dataclass(frozen=True)
class SolverConfig:
    """Run parameters shared by all methods.

    ``alpha=None`` resolves to the method default: 1 for quasi-Newton methods,
    1/L for gradient descent.  ``h0_scale=None`` resolves to 1/L (seed
    operator L*I).  ``lbfgs_scaling`` picks the seed for the classic
    limited-memory baseline: the fixed 1/L or the newest-pair rescaling.
    """

    method: str = LG_BFGS
    alpha: float | None = None
    tau: int = 10
    max_iters: int = 100
    grad_tol: float = 1e-12
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    subset_policy: SubsetPolicy = field(default_factory=SubsetPolicy)
    warm_start_k0: int = 0
    h0_scale: float | None = None
    lbfgs_scaling: str = "fixed"
    record_dense_diags: bool = False
    aggregation_tol: float = 1e-8
    divergence_patience: int = 20

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.warm_start_k0 < 0:
            raise ValueError(f"warm_start_k0 must be >= 0, got {self.warm_start_k0}")
        if self.lbfgs_scaling not in ("fixed", "latest_pair"):
            raise ValueError(f"unknown lbfgs_scaling {self.lbfgs_scaling!r}")


@dataclass
class IterationRecord:
    """One trace row: state at iterate t plus the pair event of the step taken."""

    t: int
    f_value: float
    grad_norm: float
    pair_count: int
    wall_time_s: float
    lambda_f: float | None = None
    sigma: float | None = None
    beta_tau: float | None = None
    case_tag: str | None = None


@dataclass
class Trace:
    """Full run output: per-iterate records plus the final state."""

    method: str
    tau: int
    records: list[IterationRecord]
    stop_reason: str
    x_final: np.ndarray

    @property
    def final_grad_norm(self) -> float:
        return self.records[-1].grad_norm


@dataclass
class StepSnapshot:
    """Observer payload for one limited-memory greedy step (dense-replay hooks)."""

    t: int
    x: np.ndarray
    x_next: np.ndarray
    psi: float
    candidates: list[int]
    store_before: PairStore
    store_after: PairStore


def _alpha(cfg: SolverConfig, obj: Objective) -> float:
    if cfg.alpha is not None:
        return cfg.alpha
    return 1.0 / obj.info.lipschitz_L if cfg.method == GD else 1.0


def _h0(cfg: SolverConfig, obj: Objective) -> float:
    return cfg.h0_scale if cfg.h0_scale is not None else 1.0 / obj.info.lipschitz_L


class _RunLog:
    """Record bookkeeping, stopping rules, and the divergence guard."""

    def __init__(self, cfg: SolverConfig):
        self.cfg = cfg
        self.records: list[IterationRecord] = []
        self.start = time.perf_counter()
        self.f_prev = np.inf
        self.increases = 0
        self.stop_reason: str | None = None

    def check_state(self, x: np.ndarray, f: float, g: np.ndarray) -> bool:
        """Update the guard; True when the run must stop as diverged."""
        if not (np.isfinite(f) and np.all(np.isfinite(g)) and np.all(np.isfinite(x))):
            self.stop_reason = "diverged"
            return True
        if f > self.f_prev:
            self.increases += 1
            if self.increases >= self.cfg.divergence_patience:
                self.stop_reason = "diverged"
                return True
        else:
            self.increases = 0
        self.f_prev = f
        return False

    def add(self, t: int, f: float, gnorm: float, pair_count: int, **extra) -> IterationRecord:
        rec = IterationRecord(
            t=t,
            f_value=float(f),
            grad_norm=float(gnorm),
            pair_count=pair_count,
            wall_time_s=time.perf_counter() - self.start,
            **extra,
        )
        self.records.append(rec)
        return rec


def _maybe_start(obj: Objective, x0, cfg: SolverConfig) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if cfg.warm_start_k0 > 0:
        return warm_start(obj, x0, cfg.warm_start_k0, h0_scale=cfg.h0_scale)
    return x0


def run_lg_bfgs(
    obj: Objective,
    x0,
    cfg: SolverConfig,
    observer: Optional[Callable[[StepSnapshot], None]] = None,
) -> Trace:
    """Limited-memory greedy run: two-loop step, correction scaling, greedy
    pair selection over the policy subset, and C1/C2/C3 retention."""
    if cfg.method != LG_BFGS:
        raise ValueError(f"config method is {cfg.method!r}, expected {LG_BFGS!r}")
    if cfg.subset_policy.mode == greedy.FIXED_PREFIX and cfg.tau > obj.info.dim:
        raise ValueError("fixed_prefix policy requires tau <= dim")
    x = _maybe_start(obj, x0, cfg)
    alpha = _alpha(cfg, obj)
    store = PairStore(dim=obj.info.dim, tau=min(cfg.tau, obj.info.dim),
                      h0_scale=_h0(cfg, obj))
    cm = obj.info.self_concordant_CM
    log = _RunLog(cfg)
    want_diags = cfg.record_dense_diags

    for t in range(cfg.max_iters + 1):
        f, g = obj.value_grad(x)
        gnorm = float(np.linalg.norm(g))
        diags = {}
        if want_diags:
            diags["lambda_f"] = diagnostics.newton_decrement(obj, x)
            diags["sigma"] = diagnostics.trace_metric(
                obj, x, kernels.dense_B_from_pairs(store)
            )
        if log.check_state(x, f, g):
            log.add(t, f, gnorm, store.size, **diags)
            break
        if gnorm <= cfg.grad_tol or t == cfg.max_iters:
            log.add(t, f, gnorm, store.size, **diags)
            log.stop_reason = "grad_tol" if gnorm <= cfg.grad_tol else "max_iters"
            break

        store_before = store.snapshot() if (observer or want_diags) else None
        direction = kernels.two_loop_direction(store, g)
        x_next = x + alpha * direction
        phi = weighted_step_norm(obj, x, x_next)
        psi = scale_factor(phi, cfg.correction, cm, t)
        apply_scaling(store, psi)
        candidates = subset_indices(cfg.subset_policy, store, obj.info.dim)
        index, r = greedy_pair(obj, x_next, store, candidates)
        if want_diags:
            err = psi * kernels.dense_B_from_pairs(store_before) - obj.hess_matrix(x_next)
            _, diags["beta_tau"] = diagnostics.relative_condition_numbers(
                err, candidates, degenerate="inf"
            )
        tag = store.classify(index)
        new_pair = CurvaturePair(index, r)
        if tag.kind == "C1":
            store.insert_c1(new_pair)
        elif tag.kind == "C2":
            store.replace_c2(new_pair)
        else:
            aggregation.aggregate_c3(store, tag.j, new_pair, tol=cfg.aggregation_tol)
        if observer is not None:
            observer(
                StepSnapshot(
                    t=t,
                    x=x.copy(),
                    x_next=x_next.copy(),
                    psi=psi,
                    candidates=list(candidates),
                    store_before=store_before,
                    store_after=store.snapshot(),
                )
            )
        log.add(t, f, gnorm, store.size, case_tag=tag.kind, **diags)
        x = x_next
    return Trace(LG_BFGS, store.tau, log.records, log.stop_reason, x)


def lg_bfgs_step(
    obj: Objective, x: np.ndarray, store: PairStore, cfg: SolverConfig, t: int = 0
) -> tuple[np.ndarray, CaseTag, IterationRecord]:
    """One limited-memory greedy step, mutating ``store``; returns the new
    iterate, the retention case applied, and a record of the departed state."""
    x = np.asarray(x, dtype=float)
    f, g = obj.value_grad(x)
    start = time.perf_counter()
    alpha = _alpha(cfg, obj)
    direction = kernels.two_loop_direction(store, g)
    x_next = x + alpha * direction
    phi = weighted_step_norm(obj, x, x_next)
    psi = scale_factor(phi, cfg.correction, obj.info.self_concordant_CM, t)
    apply_scaling(store, psi)
    candidates = subset_indices(cfg.subset_policy, store, obj.info.dim)
    index, r = greedy_pair(obj, x_next, store, candidates)
    tag = store.classify(index)
    new_pair = CurvaturePair(index, r)
    if tag.kind == "C1":
        store.insert_c1(new_pair)
    elif tag.kind == "C2":
        store.replace_c2(new_pair)
    else:
        aggregation.aggregate_c3(store, tag.j, new_pair, tol=cfg.aggregation_tol)
    record = IterationRecord(
        t=t,
        f_value=float(f),
        grad_norm=float(np.linalg.norm(g)),
        pair_count=store.size,
        wall_time_s=time.perf_counter() - start,
        case_tag=tag.kind,
    )
    return x_next, tag, record


def _greedy_bfgs_impl(obj: Objective, x0, cfg: SolverConfig) -> Trace:
    """Dense greedy baseline: full-basis selection, optional correction."""
    x = _maybe_start(obj, x0, cfg)
    d = obj.info.dim
    alpha = _alpha(cfg, obj)
    B = np.eye(d) / _h0(cfg, obj)
    cm = obj.info.self_concordant_CM
    log = _RunLog(cfg)
    full_basis = list(range(d))
    for t in range(cfg.max_iters + 1):
        f, g = obj.value_grad(x)
        gnorm = float(np.linalg.norm(g))
        diags = {}
        if cfg.record_dense_diags:
            diags["lambda_f"] = diagnostics.newton_decrement(obj, x)
            diags["sigma"] = diagnostics.trace_metric(obj, x, B)
        if log.check_state(x, f, g):
            log.add(t, f, gnorm, 0, **diags)
            break
        if gnorm <= cfg.grad_tol or t == cfg.max_iters:
            log.add(t, f, gnorm, 0, **diags)
            log.stop_reason = "grad_tol" if gnorm <= cfg.grad_tol else "max_iters"
            break
        try:
            direction = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(B), g)
        except scipy.linalg.LinAlgError as exc:
            raise CurvatureError(f"dense approximation lost definiteness: {exc}") from exc
        x_next = x + alpha * direction
        phi = weighted_step_norm(obj, x, x_next)
        psi = scale_factor(phi, cfg.correction, cm, t)
        B_hat = psi * B
        numer = np.diag(B_hat)
        denom = obj.hess_diag(x_next, full_basis)
        index = int(np.argmax(numer / denom))
        r = obj.hess_column(x_next, index)
        if cfg.record_dense_diags:
            _, diags["beta_tau"] = diagnostics.relative_condition_numbers(
                B_hat - obj.hess_matrix(x_next), full_basis, degenerate="inf"
            )
        s = np.zeros(d)
        s[index] = 1.0
        B = kernels.dense_bfgs_update(B_hat, s, r)
        log.add(t, f, gnorm, 0, **diags)
        x = x_next
    return Trace(GREEDY_BFGS, cfg.tau, log.records, log.stop_reason, x)


def _gd_impl(obj: Objective, x0, cfg: SolverConfig) -> Trace:
    x = _maybe_start(obj, x0, cfg)
    alpha = _alpha(cfg, obj)
    log = _RunLog(cfg)
    for t in range(cfg.max_iters + 1):
        f, g = obj.value_grad(x)
        gnorm = float(np.linalg.norm(g))
        diags = {}
        if cfg.record_dense_diags:
            diags["lambda_f"] = diagnostics.newton_decrement(obj, x)
        if log.check_state(x, f, g):
            log.add(t, f, gnorm, 0, **diags)
            break
        if gnorm <= cfg.grad_tol or t == cfg.max_iters:
            log.add(t, f, gnorm, 0, **diags)
            log.stop_reason = "grad_tol" if gnorm <= cfg.grad_tol else "max_iters"
            break
        log.add(t, f, gnorm, 0, **diags)
        x = x - alpha * g
    return Trace(GD, cfg.tau, log.records, log.stop_reason, x)


def _two_loop_dense(pairs, h0: float, g: np.ndarray) -> np.ndarray:
    """Two-loop recursion over dense difference pairs (classic baseline)."""
    q = g.copy()
    alphas = []
    for s, r in reversed(pairs):
        rho = 1.0 / float(s @ r)
        a = rho * float(s @ q)
        q -= a * r
        alphas.append((a, rho))
    q *= h0
    for (s, r), (a, rho) in zip(pairs, reversed(alphas)):
        b = rho * float(r @ q)
        q += (a - b) * s
    return q


def _lbfgs_impl(obj: Objective, x0, cfg: SolverConfig) -> Trace:
    x = _maybe_start(obj, x0, cfg)
    alpha = _alpha(cfg, obj)
    base_h0 = _h0(cfg, obj)
    pairs: deque = deque(maxlen=cfg.tau)
    log = _RunLog(cfg)
    f, g = obj.value_grad(x)
    for t in range(cfg.max_iters + 1):
        gnorm = float(np.linalg.norm(g))
        diags = {}
        if cfg.record_dense_diags:
            diags["lambda_f"] = diagnostics.newton_decrement(obj, x)
        if log.check_state(x, f, g):
            log.add(t, f, gnorm, len(pairs), **diags)
            break
        if gnorm <= cfg.grad_tol or t == cfg.max_iters:
            log.add(t, f, gnorm, len(pairs), **diags)
            log.stop_reason = "grad_tol" if gnorm <= cfg.grad_tol else "max_iters"
            break
        h0 = base_h0
        if cfg.lbfgs_scaling == "latest_pair" and pairs:
            s_last, r_last = pairs[-1]
            h0 = float(s_last @ r_last) / float(r_last @ r_last)
        direction = -_two_loop_dense(list(pairs), h0, g)
        x_next = x + alpha * direction
        f_next, g_next = obj.value_grad(x_next)
        s = x_next - x
        r = g_next - g
        if float(s @ r) > 0.0:
            pairs.append((s, r))
        log.add(t, f, gnorm, len(pairs), **diags)
        x, f, g = x_next, f_next, g_next
    return Trace(LBFGS, cfg.tau, log.records, log.stop_reason, x)


def _bfgs_dense_impl(obj: Objective, x0, cfg: SolverConfig) -> Trace:
    x = _maybe_start(obj, x0, cfg)
    alpha = _alpha(cfg, obj)
    H = _h0(cfg, obj) * np.eye(obj.info.dim)
    log = _RunLog(cfg)
    f, g = obj.value_grad(x)
    for t in range(cfg.max_iters + 1):
        gnorm = float(np.linalg.norm(g))
        diags = {}
        if cfg.record_dense_diags:
            diags["lambda_f"] = diagnostics.newton_decrement(obj, x)
        if log.check_state(x, f, g):
            log.add(t, f, gnorm, 0, **diags)
            break
        if gnorm <= cfg.grad_tol or t == cfg.max_iters:
            log.add(t, f, gnorm, 0, **diags)
            log.stop_reason = "grad_tol" if gnorm <= cfg.grad_tol else "max_iters"
            break
        x_next = x - alpha * (H @ g)
        f_next, g_next = obj.value_grad(x_next)
        s = x_next - x
        r = g_next - g
        if float(s @ r) > 0.0:
            H = kernels.dense_inv_bfgs_update(H, s, r)
        log.add(t, f, gnorm, 0, **diags)
        x, f, g = x_next, f_next, g_next
    return Trace(BFGS_DENSE, cfg.tau, log.records, log.stop_reason, x)


_BASELINES = {
    GD: _gd_impl,
    LBFGS: _lbfgs_impl,
    BFGS_DENSE: _bfgs_dense_impl,
    GREEDY_BFGS: _greedy_bfgs_impl,
}


def run_baseline(obj: Objective, x0, cfg: SolverConfig) -> Trace:
    """Run one of the non-aggregating methods (gd, lbfgs, bfgs_dense, greedy_bfgs)."""
    if cfg.method not in _BASELINES:
        raise ValueError(f"{cfg.method!r} is not a baseline method")
    return _BASELINES[cfg.method](obj, x0, cfg)


def run(obj: Objective, x0, cfg: SolverConfig, observer=None) -> Trace:
    """Run any configured method from x0."""
    if cfg.method == LG_BFGS:
        return run_lg_bfgs(obj, x0, cfg, observer=observer)
    return run_baseline(obj, x0, cfg)


def warm_start(obj: Objective, x0, k0: int, alpha: float = 1.0,
               h0_scale: float | None = None) -> np.ndarray:
    """Iterate the dense greedy baseline k0 times from x0 and return the result."""
    if k0 < 0:
        raise ValueError(f"k0 must be >= 0, got {k0}")
    x0 = np.asarray(x0, dtype=float)
    if k0 == 0:
        return x0.copy()
    cfg = SolverConfig(
        method=GREEDY_BFGS,
        alpha=alpha,
        max_iters=k0,
        grad_tol=0.0,
        h0_scale=h0_scale,
        correction=CorrectionConfig(mode="off"),
    )
    return _greedy_bfgs_impl(obj, x0, cfg).x_final
