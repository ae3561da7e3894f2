"""Instance-adaptive entropy weight from predictive variance.

Each modality branch is scored by the variance of its max class logit under
feature dropout (Monte Carlo) or under an ensemble of freshly drawn heads.
The per-sample weight is

    lam(x) = lam_min + softplus(min(mean_m var_m(x), v_max))

so it is bounded in (lam_min, lam_min + softplus(v_max)]; v_max is calibrated
once as the largest mean branch variance observed on a validation batch.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import MultimodalBatch
from .tensor import softplus

__all__ = [
    "LambdaConfig",
    "mc_variance",
    "ensemble_variance",
    "branch_variance",
    "lambda_of",
    "calibrate_vmax",
    "lambda_upper",
    "with_vmax",
]


@dataclass(frozen=True)
class LambdaConfig:
    lam_min: float = 0.01
    v_max: float | None = None  # set by calibrate_vmax before use
    draws: int = 20
    rate: float = 0.1
    source: str = "mc"  # "mc" or "ensemble"
    ensemble_size: int = 5

    def __post_init__(self):
        if self.lam_min <= 0.0:
            raise ValueError("lam_min must be positive")
        if not 0.0 <= self.rate < 1.0:
            raise ValueError("rate must be in [0, 1)")
        if self.draws < 2 or self.ensemble_size < 2:
            raise ValueError("variance needs at least two draws")
        if self.source not in ("mc", "ensemble"):
            raise ValueError(f"unknown variance source {self.source!r}")
        if self.v_max is not None and self.v_max < 0.0:
            raise ValueError("v_max must be nonnegative")


def mc_variance(model, batch: MultimodalBatch, rng: np.random.Generator,
                draws: int = 20, rate: float = 0.1) -> np.ndarray:
    """Per-sample, per-branch variance (ddof=1) of the max class logit when
    the branch input is hit with inverted dropout. Shape [n, modalities]."""
    if draws < 2:
        raise ValueError("variance needs at least two draws")
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must be in [0, 1)")
    n = batch.n
    var = np.zeros((n, batch.num_modalities))
    head_w = model.head_w.data
    head_b = model.head_b.data
    for m in range(batch.num_modalities):
        h = batch.features[m]
        vw = model.proj[m].data @ head_w  # combined [d_m, classes]
        ys = np.empty((draws, n))
        for k in range(draws):
            if rate > 0.0:
                keep = (rng.random(h.shape) >= rate).astype(np.float64)
                hk = h * keep / (1.0 - rate)
            else:
                hk = h
            ys[k] = (hk @ vw + head_b).max(axis=1)
        var[:, m] = ys.var(axis=0, ddof=1)
    return var


def ensemble_variance(model, batch: MultimodalBatch, rng: np.random.Generator,
                      size: int = 5) -> np.ndarray:
    """Same statistic with head weights resampled instead of dropout."""
    if size < 2:
        raise ValueError("variance needs at least two ensemble members")
    d_z, classes = model.head_w.shape
    bound = 1.0 / np.sqrt(d_z)
    heads = [rng.uniform(-bound, bound, size=(d_z, classes)) for _ in range(size)]
    n = batch.n
    var = np.zeros((n, batch.num_modalities))
    for m in range(batch.num_modalities):
        base = batch.features[m] @ model.proj[m].data  # [n, d_z]
        ys = np.stack([(base @ w).max(axis=1) for w in heads])
        var[:, m] = ys.var(axis=0, ddof=1)
    return var


def branch_variance(model, batch: MultimodalBatch, cfg: LambdaConfig,
                    rng: np.random.Generator) -> np.ndarray:
    if cfg.source == "mc":
        return mc_variance(model, batch, rng, draws=cfg.draws, rate=cfg.rate)
    return ensemble_variance(model, batch, rng, size=cfg.ensemble_size)


def lambda_of(model, batch: MultimodalBatch, cfg: LambdaConfig,
              rng: np.random.Generator) -> np.ndarray:
    """Per-sample entropy weight, capped at v_max before the softplus."""
    vbar = branch_variance(model, batch, cfg, rng).mean(axis=1)
    if cfg.v_max is not None:
        vbar = np.minimum(vbar, cfg.v_max)
    return cfg.lam_min + softplus(vbar)


def calibrate_vmax(model, batch: MultimodalBatch, cfg: LambdaConfig,
                   rng: np.random.Generator) -> float:
    """Largest uncapped mean branch variance on the given batch."""
    return float(branch_variance(model, batch, cfg, rng).mean(axis=1).max())


def with_vmax(cfg: LambdaConfig, v_max: float) -> LambdaConfig:
    return replace(cfg, v_max=float(v_max))


def lambda_upper(cfg: LambdaConfig) -> float:
    """Supremum of lambda_of under this config (attained at the cap)."""
    if cfg.v_max is None:
        raise ValueError("v_max not calibrated")
    return cfg.lam_min + float(softplus(cfg.v_max))
