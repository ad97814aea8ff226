"""Simulation study: MSE distributions of CRFB, PB and PM over unobserved-covariate draws.

One ``x`` is drawn per scenario and held fixed. For each of ``n_z_draws``
Gaussian ``z`` vectors (shared by all designs), each design's conditional MSE
is estimated: CRFB and PM by averaging ``(beta_hat - beta_T)^2`` over
``n_w_draws`` sampled allocations, PB over its two allocations ``{w*, -w*}``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import CRFB, PB, PM, DesignDistribution, DesignError
from .criteria import MCResult, mse_draws, summarize
from .designs import (
    DEFAULT_MAX_ENUMERATION_N,
    SearchConfig,
    brute_force_optimal,
    greedy_optimize,
    imbalance,
    match_pairs,
)
from .rng import stream

__all__ = [
    "ScenarioConfig",
    "ScenarioResult",
    "presets",
    "preset",
    "run_scenario",
    "density_export",
]

log = logging.getLogger(__name__)

IDENTITY = "IDENTITY"
ZERO = "ZERO"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    n: int = 20
    beta_T: float = 1.0
    f_mode: str = IDENTITY
    sigma_z: float = 1.5
    n_z_draws: int = 2000
    n_w_draws: int = 300
    q: float = 0.95
    seed: int = 0
    designs: tuple[str, ...] = (CRFB, PB, PM)
    pb_solver: str = "brute"
    greedy_restarts: int = 20000
    imbalance_ceiling: float | None = None
    exact: bool = False

    def __post_init__(self):
        if self.n < 2 or self.n % 2:
            raise DesignError(f"n must be even and >= 2, got {self.n}")
        if self.n_z_draws < 1:
            raise DesignError("n_z_draws must be >= 1")
        if self.n_w_draws < 2:
            raise DesignError("n_w_draws must be >= 2")
        if not 0.0 < self.q < 1.0:
            raise DesignError("q must lie in (0, 1)")
        if self.f_mode not in (IDENTITY, ZERO):
            raise DesignError(f"f_mode must be IDENTITY or ZERO, got {self.f_mode!r}")
        if self.pb_solver not in ("brute", "greedy"):
            raise DesignError(f"pb_solver must be 'brute' or 'greedy', got {self.pb_solver!r}")
        if self.pb_solver == "brute" and self.n > DEFAULT_MAX_ENUMERATION_N:
            raise DesignError(f"brute-force PB is capped at n={DEFAULT_MAX_ENUMERATION_N}")
        bad = [d for d in self.designs if d not in (CRFB, PB, PM)]
        if bad:
            raise DesignError(f"unknown designs {bad}")
        object.__setattr__(self, "designs", tuple(self.designs))

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        if "designs" in data:
            data["designs"] = tuple(data["designs"])
        return cls(**data)


_PRESETS = {
    "baseline": ScenarioConfig(name="baseline"),
    "null_f": ScenarioConfig(name="null_f", f_mode=ZERO),
    "strong_x": ScenarioConfig(name="strong_x", sigma_z=0.01),
    "large_n": ScenarioConfig(name="large_n", n=200, pb_solver="greedy",
                              greedy_restarts=20000, imbalance_ceiling=1e-14),
}


def presets() -> list[ScenarioConfig]:
    return list(_PRESETS.values())


def preset(name: str, **overrides) -> ScenarioConfig:
    try:
        cfg = _PRESETS[name.lower()]
    except KeyError:
        raise DesignError(f"unknown preset {name!r}; choose from {', '.join(_PRESETS)}") from None
    return replace(cfg, **overrides) if overrides else cfg


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    x: np.ndarray
    w_star: np.ndarray | None
    w_star_imbalance: float | None
    w_star_sq_mean_diff: float | None
    samples: dict[str, np.ndarray]
    summaries: dict[str, dict]
    warnings: list[str] = field(default_factory=list)

    def mc(self, design: str) -> MCResult:
        return summarize(self.samples[design], self.config.q)

    def to_dict(self) -> dict:
        return {
            "preset": self.config.name,
            "config": asdict(self.config),
            "x": self.x.tolist(),
            "w_star": None if self.w_star is None else self.w_star.astype(int).tolist(),
            "w_star_imbalance": self.w_star_imbalance,
            "w_star_sq_mean_diff": self.w_star_sq_mean_diff,
            "summaries": self.summaries,
            "samples": {k: v.tolist() for k, v in self.samples.items()},
            "warnings": self.warnings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioResult":
        w_star = d.get("w_star")
        return cls(
            config=ScenarioConfig.from_dict(d["config"]),
            x=np.asarray(d["x"], dtype=float),
            w_star=None if w_star is None else np.asarray(w_star, dtype=np.int8),
            w_star_imbalance=d.get("w_star_imbalance"),
            w_star_sq_mean_diff=d.get("w_star_sq_mean_diff"),
            samples={k: np.asarray(v, dtype=float) for k, v in d["samples"].items()},
            summaries=d["summaries"],
            warnings=list(d.get("warnings", [])),
        )

    def to_json(self) -> str:
        # repr round-trips floats, so equal results give byte-identical JSON
        return json.dumps(self.to_dict(), sort_keys=True)

    def summary_table(self) -> str:
        lines = [f"{'design':<6} {'mean':>12} {'q' + format(self.config.q, 'g'):>12} "
                 f"{'max':>12} {'realized_c':>11}"]
        for d, s in self.summaries.items():
            lines.append(f"{d:<6} {s['mean']:12.6g} {s['quantile']:12.6g} {s['max']:12.6g} "
                         f"{s['realized_c']:11.4f}")
        return "\n".join(lines)


def _sq_mean_diff(x: np.ndarray, w: np.ndarray) -> float:
    treated = w > 0
    return float((x[treated].mean() - x[~treated].mean()) ** 2)


def run_scenario(cfg: ScenarioConfig, threads: int | None = None) -> ScenarioResult:
    """Run one scenario; the result is a deterministic function of ``cfg``."""
    threads = max(1, threads or os.cpu_count() or 1)
    n = cfg.n
    x = stream(cfg.seed, "x").standard_normal(n)
    X = x[:, None]
    f = x.copy() if cfg.f_mode == IDENTITY else np.zeros(n)
    warnings: list[str] = []

    search = SearchConfig(restarts=cfg.greedy_restarts, seed=cfg.seed, threads=threads)
    w_star = imb = sq = None
    designs = {}
    for kind in cfg.designs:
        if kind == PB:
            if cfg.pb_solver == "brute":
                w_star = brute_force_optimal(X)
            else:
                w_star = greedy_optimize(X, search)
            imb = imbalance(X, w_star)
            sq = _sq_mean_diff(x, w_star)
            log.info("w* squared mean difference %.3g", sq)
            if cfg.imbalance_ceiling is not None and sq > cfg.imbalance_ceiling:
                warnings.append(f"w* squared mean difference {sq:.3g} exceeds ceiling "
                                f"{cfg.imbalance_ceiling:.3g}")
            designs[PB] = DesignDistribution.explicit(np.stack([w_star, -w_star]), kind=PB)
        elif kind == PM:
            designs[PM] = DesignDistribution(kind=PM, n=n, pairs=match_pairs(X))
        else:
            designs[CRFB] = DesignDistribution(kind=CRFB, n=n)

    samples, summaries = {}, {}
    for kind, design in designs.items():
        values = mse_draws(f, design, cfg.sigma_z ** 2, cfg.n_z_draws, cfg.n_w_draws,
                           cfg.seed, exact=cfg.exact, beta_T=cfg.beta_T, threads=threads)
        res = summarize(values, cfg.q)
        warnings.extend(f"{kind}: {w}" for w in res.warnings)
        samples[kind] = values
        summaries[kind] = res.summary()
    return ScenarioResult(config=cfg, x=x, w_star=w_star, w_star_imbalance=imb,
                          w_star_sq_mean_diff=sq, samples=samples, summaries=summaries,
                          warnings=warnings)


def density_export(result: ScenarioResult, bins: int = 60) -> list[dict]:
    """Histogram rows ``(design, bin_left, bin_right, density, mean, quantile)``.

    Bin edges are shared across designs and span the pooled 0.5th to 99.5th
    percentiles; values outside are clamped into the edge bins.
    """
    if bins < 10:
        raise DesignError("bins must be >= 10")
    pooled = np.concatenate(list(result.samples.values()))
    lo, hi = np.quantile(pooled, [0.005, 0.995])
    if not hi > lo:
        lo, hi = float(pooled.min()), float(pooled.max())
    if not hi > lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    width = np.diff(edges)
    rows = []
    for kind, values in result.samples.items():
        counts, _ = np.histogram(np.clip(values, lo, hi), bins=edges)
        density = counts / (counts.sum() * width)
        s = result.summaries[kind]
        for k in range(bins):
            rows.append({"design": kind, "bin_left": float(edges[k]),
                         "bin_right": float(edges[k + 1]), "density": float(density[k]),
                         "mean": s["mean"], "quantile": s["quantile"]})
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\r\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()
