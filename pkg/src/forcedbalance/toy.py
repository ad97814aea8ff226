"""Adversarial paired example.

``m`` pairs of subjects; both members of pair ``i`` (1-indexed) share the
observed value ``delta * (i - (m + 1) / 2)`` and carry unobserved values
``+a`` and ``-a``. Matching the pairs balances ``x`` perfectly but leaves the
unobserved component maximally imbalanced.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np

from .core import DesignError
from .designs import enumerate_balanced, enumerate_pair_flips

MAX_TOY_PAIRS = 12
_CHUNK = 1 << 15


@dataclass(frozen=True)
class ToyConfig:
    m: int
    a: float
    delta: float

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise DesignError("m must be an integer >= 2")
        if not self.a > 0:
            raise DesignError("a must be positive")
        if self.delta < 0:
            raise DesignError("delta must be nonnegative")

    @classmethod
    def from_eta(cls, m: int, a: float, eta: float) -> "ToyConfig":
        return cls(m=m, a=a, delta=a * math.sqrt(12.0) * eta / math.sqrt(m * m - 1))

    @property
    def n(self) -> int:
        return 2 * self.m


@dataclass(frozen=True)
class ToyTable:
    """Mean observed imbalance, mean unobserved imbalance and estimator MSE per design."""

    crfb_observed: float
    crfb_unobserved: float
    crfb_mse: float
    matching_observed: float
    matching_unobserved: float
    matching_mse: float

    def as_tuple(self) -> tuple[float, ...]:
        return astuple(self)

    def rows(self) -> list[tuple[str, float, float, float]]:
        v = self.as_tuple()
        return [("random (CRFB)", *v[:3]), ("restricted (matching)", *v[3:])]


def toy_build(cfg: ToyConfig):
    """Return ``(X, z, pairs)``; subjects ``2i`` and ``2i+1`` form pair ``i``."""
    m = cfg.m
    levels = cfg.delta * (np.arange(1, m + 1) - (m + 1) / 2.0)
    x = np.repeat(levels, 2)
    z = np.tile([cfg.a, -cfg.a], m)
    pairs = tuple((2 * i, 2 * i + 1) for i in range(m))
    return x[:, None], z, pairs


def toy_eta(cfg: ToyConfig, check: bool = True) -> float:
    """Ratio of the observed to the unobserved covariate's standard deviation."""
    eta = cfg.delta * math.sqrt(cfg.m ** 2 - 1) / (cfg.a * math.sqrt(12.0))
    if check:
        X, z, _ = toy_build(cfg)
        direct = float(np.std(X[:, 0]) / np.std(z))
        if not math.isclose(eta, direct, rel_tol=1e-12, abs_tol=1e-15):
            raise AssertionError(f"eta {eta} disagrees with direct ratio {direct}")
    return eta


def toy_table1(cfg: ToyConfig) -> ToyTable:
    """Closed-form metrics for CRFB and within-pair matching."""
    a2, m = cfg.a ** 2, cfg.m
    eta2 = toy_eta(cfg, check=False) ** 2
    return ToyTable(
        crfb_observed=4 * a2 * eta2 / (2 * m - 1),
        crfb_unobserved=4 * a2 / (2 * m - 1),
        crfb_mse=a2 * (eta2 + 1) / (2 * m - 1),
        matching_observed=0.0,
        matching_unobserved=4 * a2 / m,
        matching_mse=a2 / m,
    )


def _exhaustive(W: np.ndarray, x: np.ndarray, z: np.ndarray, beta_T: float):
    n = x.shape[0]
    m = n // 2
    obs = unobs = mse = 0.0
    for start in range(0, W.shape[0], _CHUNK):
        w = W[start:start + _CHUNK].astype(float)
        treated = w > 0
        # group means taken directly rather than through w^T x
        dx = np.where(treated, x, 0).sum(1) / m - np.where(~treated, x, 0).sum(1) / m
        dz = np.where(treated, z, 0).sum(1) / m - np.where(~treated, z, 0).sum(1) / m
        y = beta_T * w + x + z
        est = (np.where(treated, y, 0).sum(1) / m - np.where(~treated, y, 0).sum(1) / m) / 2
        obs += float(np.sum(dx ** 2))
        unobs += float(np.sum(dz ** 2))
        mse += float(np.sum((est - beta_T) ** 2))
    k = W.shape[0]
    return obs / k, unobs / k, mse / k


def toy_enumerate_check(cfg: ToyConfig, beta_T: float = 1.0) -> ToyTable:
    """Exhaustive oracle for :func:`toy_table1` over every CRFB and matched allocation.

    The estimator MSE is recomputed at ``beta_T + 1`` and must not change.
    """
    if cfg.m > MAX_TOY_PAIRS:
        raise DesignError(f"m={cfg.m} exceeds the enumeration cap of {MAX_TOY_PAIRS} pairs")
    X, z, pairs = toy_build(cfg)
    x = X[:, 0]
    n = cfg.n
    W_crfb = enumerate_balanced(n, max_n=2 * MAX_TOY_PAIRS)
    W_match = enumerate_pair_flips(pairs, n)
    crfb = _exhaustive(W_crfb, x, z, beta_T)
    matched = _exhaustive(W_match, x, z, beta_T)
    for W, first in ((W_crfb, crfb), (W_match, matched)):
        again = _exhaustive(W, x, z, beta_T + 1.0)
        if not math.isclose(again[2], first[2], rel_tol=1e-10, abs_tol=1e-12):
            raise AssertionError("estimator MSE depends on beta_T")
    return ToyTable(*crfb, *matched)
