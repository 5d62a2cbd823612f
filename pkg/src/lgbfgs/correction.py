"""Curvature-dominance correction by rescaling the stored history.

Scaling the seed operator down by psi and every stored gradient variation up
by psi multiplies the implicit direct operator by psi, which is how the
dominance condition on the Hessian approximation is enforced without ever
forming it.  psi = 1 + CM * phi where phi is the curvature-weighted step
length; the ``delta`` variant adds a geometrically decaying slack term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectives import Objective
from .pairs import CurvaturePair, PairStore

OFF = "off"
BASIC = "basic"
DELTA = "delta"


@dataclass(frozen=True)
class CorrectionConfig:
    """Scaling mode: off (psi = 1), basic (1 + CM*phi), delta (+ decay^t * delta0)."""

    mode: str = OFF
    delta0: float = 0.1
    decay: float = 0.5

    def __post_init__(self):
        if self.mode not in (OFF, BASIC, DELTA):
            raise ValueError(f"unknown correction mode {self.mode!r}")
        if self.mode == DELTA:
            if not self.delta0 > 0:
                raise ValueError(f"delta0 must be positive, got {self.delta0}")
            if not 0.0 < self.decay < 1.0:
                raise ValueError(f"decay must lie in (0, 1), got {self.decay}")


def weighted_step_norm(obj: Objective, x: np.ndarray, x_next: np.ndarray) -> float:
    """Step length weighted by the Hessian at the departure point."""
    return obj.weighted_norm(x, np.asarray(x_next, dtype=float) - np.asarray(x, dtype=float))


def scale_factor(phi: float, cfg: CorrectionConfig, cm: float, t: int) -> float:
    """Correction scale psi for iteration t given the weighted step length phi."""
    if phi < 0:
        raise ValueError(f"phi must be nonnegative, got {phi}")
    if cfg.mode == OFF:
        return 1.0
    psi = 1.0 + cm * phi
    if cfg.mode == DELTA:
        psi += cfg.decay**t * cfg.delta0
    return psi


def apply_scaling(store: PairStore, psi: float) -> None:
    """Rescale the store in place: h0_scale /= psi, every stored r *= psi.

    Indices and order are untouched; the implicit direct operator built from
    the scaled store equals psi times the unscaled one.
    """
    if psi < 1.0:
        raise ValueError(f"psi must be >= 1, got {psi}")
    if psi == 1.0:
        return
    store.h0_scale /= psi
    store.pairs[:] = [
        CurvaturePair(p.basis_index, psi * p.r) for p in store.pairs
    ]
