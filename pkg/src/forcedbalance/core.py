"""Domain types and allocation covariance matrices.

An allocation ``w`` is a length-``n`` vector of +1 (treatment) and -1
(control) entries with ``sum(w) == 0``. A design is a distribution over such
vectors, and every criterion in this package depends on the design only
through ``Sigma_w = E[w w^T]``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DesignError",
    "CRFB",
    "PB",
    "PM",
    "EXPLICIT",
    "DESIGN_KINDS",
    "MAX_CLOSED_FORM_N",
    "check_covariates",
    "check_allocation",
    "check_pairs",
    "DesignDistribution",
    "ValidationReport",
    "AllocationCovariance",
    "ResponseSpec",
    "CriterionReport",
    "validate_design",
    "sigma_exact",
    "sigma_crfb_closed",
    "sigma_pb",
    "sigma_pm",
]

CRFB = "CRFB"
PB = "PB"
PM = "PM"
EXPLICIT = "EXPLICIT"
DESIGN_KINDS = (CRFB, PB, PM, EXPLICIT)

MAX_CLOSED_FORM_N = 4096

# invariant tolerances
PROB_TOL = 1e-12
SYM_TOL = 1e-10
PSD_TOL = -1e-8
BALANCE_TOL = 1e-8


class DesignError(ValueError):
    """Raised when an allocation, design or covariance breaks an invariant."""


def _check_n(n: int) -> int:
    if int(n) != n or n < 2 or n % 2:
        raise DesignError(f"n must be an even integer >= 2, got {n}")
    return int(n)


def check_covariates(X) -> np.ndarray:
    """Return ``X`` as a finite float array of shape (n, p) with even n.

    A 1-d input is treated as a single covariate.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] < 1:
        raise DesignError(f"covariates must be an n x p matrix, got shape {X.shape}")
    _check_n(X.shape[0])
    if not np.all(np.isfinite(X)):
        raise DesignError("covariates contain non-finite entries")
    return X


def check_allocation(w, n: int | None = None) -> np.ndarray:
    """Return ``w`` as an int8 +/-1 vector, enforcing forced balance."""
    w = np.asarray(w)
    if w.ndim != 1:
        raise DesignError("an allocation must be one-dimensional")
    if n is not None and w.shape[0] != n:
        raise DesignError(f"allocation has length {w.shape[0]}, expected {n}")
    if not np.all((w == 1) | (w == -1)):
        raise DesignError("allocation entries must be +1 or -1")
    _check_n(w.shape[0])
    if int(np.sum(w)) != 0:
        raise DesignError("allocation is not forced-balanced (sum(w) != 0)")
    return w.astype(np.int8)


def check_pairs(pairs: Iterable[Sequence[int]], n: int) -> tuple[tuple[int, int], ...]:
    """Normalize pairs to sorted ``(i, j)`` tuples with i < j and check they partition 0..n-1."""
    n = _check_n(n)
    out = []
    seen = np.zeros(n, dtype=bool)
    for pair in pairs:
        if len(pair) != 2:
            raise DesignError(f"pair {pair!r} does not have two members")
        i, j = sorted(int(k) for k in pair)
        if i == j or i < 0 or j >= n:
            raise DesignError(f"invalid pair ({i}, {j}) for n={n}")
        if seen[i] or seen[j]:
            raise DesignError(f"pair ({i}, {j}) overlaps an earlier pair")
        seen[i] = seen[j] = True
        out.append((i, j))
    if not seen.all():
        missing = np.flatnonzero(~seen).tolist()
        raise DesignError(f"pairs do not cover subjects {missing}")
    return tuple(out)


# Low-level samplers. ``designs`` wraps these with the public API.

def _draw_crfb(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    keys = rng.random((size, n))
    ranks = np.argsort(keys, axis=1, kind="stable")
    w = np.full((size, n), -1, dtype=np.int8)
    np.put_along_axis(w, ranks[:, : n // 2], 1, axis=1)
    return w


def _draw_pm(rng: np.random.Generator, pairs: Sequence[tuple[int, int]], n: int,
             size: int) -> np.ndarray:
    first = np.array([p[0] for p in pairs])
    second = np.array([p[1] for p in pairs])
    signs = np.where(rng.random((size, len(pairs))) < 0.5, 1, -1).astype(np.int8)
    w = np.empty((size, n), dtype=np.int8)
    w[:, first] = signs
    w[:, second] = -signs
    return w


@dataclass(frozen=True, eq=False)
class DesignDistribution:
    """A distribution over allocations.

    Explicit designs carry ``support`` (k x n, +/-1) and ``probs``. CRFB and PM
    designs too large to enumerate carry no support and are sampled directly,
    with their covariance available in closed form.
    """

    kind: str
    n: int
    support: np.ndarray | None = None
    probs: np.ndarray | None = None
    pairs: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if self.kind not in DESIGN_KINDS:
            raise DesignError(f"unknown design kind {self.kind!r}")
        if self.support is None:
            if self.kind == PM and self.pairs is None:
                raise DesignError("an implicit PM design needs its pairs")
            if self.kind not in (CRFB, PM):
                raise DesignError(f"{self.kind} designs need an explicit support")

    @classmethod
    def explicit(cls, allocations, probs=None, kind: str = EXPLICIT, pairs=None):
        """Build a design from a list of allocations (uniform weights by default)."""
        support = np.asarray(allocations)
        if support.ndim != 2 or support.shape[0] == 0:
            raise DesignError("support must be a nonempty k x n array")
        if probs is None:
            probs = np.full(support.shape[0], 1.0 / support.shape[0])
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (support.shape[0],):
            raise DesignError("probs must have one weight per allocation")
        return cls(kind=kind, n=support.shape[1], support=support.astype(np.int8),
                   probs=probs, pairs=pairs)

    @property
    def is_explicit(self) -> bool:
        return self.support is not None

    def sample(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        """Draw ``size`` allocations as a (size, n) int8 array."""
        # uniform CRFB and PM are sampled directly even when their support is stored
        if self.kind == CRFB:
            return _draw_crfb(rng, self.n, size)
        if self.kind == PM and self.pairs is not None:
            return _draw_pm(rng, self.pairs, self.n, size)
        idx = rng.choice(self.support.shape[0], size=size, p=self.probs)
        return self.support[idx]

    def sigma(self) -> "AllocationCovariance":
        """Covariance of the design, from the support when explicit."""
        if self.support is not None:
            return sigma_exact(self)
        if self.kind == CRFB:
            return sigma_crfb_closed(self.n)
        return sigma_pm(self.pairs, self.n)

    def to_dict(self) -> dict:
        if self.support is None:
            raise DesignError("only explicit designs serialize their support")
        return {
            "kind": self.kind,
            "allocations": self.support.astype(int).tolist(),
            "probs": self.probs.tolist(),
        }


@dataclass(frozen=True)
class ValidationReport:
    mirror: bool
    forced_balance: bool
    normalization: bool
    distinct: bool

    @property
    def ok(self) -> bool:
        return self.mirror and self.forced_balance and self.normalization and self.distinct

    def failures(self) -> list[str]:
        return [name for name, passed in asdict(self).items() if not passed]


def validate_design(d: DesignDistribution, n: int) -> ValidationReport:
    """Check mirror property, forced balance, normalization and distinctness.

    Raises DesignError on a structural mismatch with ``n``; otherwise reports
    pass/fail per invariant.
    """
    if d.n != n:
        raise DesignError(f"design is over n={d.n} subjects, expected {n}")
    if d.support is None:
        # implicit CRFB / PM samplers satisfy every invariant by construction
        return ValidationReport(True, True, True, True)
    support, probs = d.support, d.probs
    if support.ndim != 2 or support.shape[1] != n:
        raise DesignError(f"support rows have length {support.shape[-1]}, expected {n}")
    if support.shape[0] == 0:
        raise DesignError("design has empty support")

    entries_ok = bool(np.all((support == 1) | (support == -1)))
    balance = entries_ok and bool(np.all(support.sum(axis=1) == 0))
    normalization = bool(np.all(probs >= 0)) and abs(float(probs.sum()) - 1.0) <= PROB_TOL

    weights = {}
    distinct = True
    for row, p in zip(support, probs):
        key = row.astype(np.int8).tobytes()
        if key in weights:
            distinct = False
        weights[key] = weights.get(key, 0.0) + float(p)
    mirror = True
    for row in support:
        key = row.astype(np.int8).tobytes()
        mkey = (-row).astype(np.int8).tobytes()
        if mkey not in weights or abs(weights[mkey] - weights[key]) > PROB_TOL:
            mirror = False
            break
    return ValidationReport(mirror, balance, normalization, distinct)


@dataclass(frozen=True, eq=False)
class AllocationCovariance:
    """The n x n matrix ``Sigma_w = E[w w^T]`` with its invariants checked."""

    matrix: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", m)
        m.setflags(write=False)
        if self.check:
            self.validate()

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def validate(self) -> None:
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DesignError(f"Sigma_w must be square, got shape {m.shape}")
        n = m.shape[0]
        if not np.all(np.isfinite(m)):
            raise DesignError("Sigma_w has non-finite entries")
        asym = float(np.max(np.abs(m - m.T)))
        if asym > SYM_TOL:
            raise DesignError(f"Sigma_w is not symmetric (max asymmetry {asym:.3g})")
        if not np.allclose(np.diag(m), 1.0, rtol=0, atol=SYM_TOL):
            raise DesignError("Sigma_w must have a unit diagonal")
        lam_min = float(self.eigenvalues[0])
        if lam_min < PSD_TOL:
            raise DesignError(f"Sigma_w is not PSD (min eigenvalue {lam_min:.3g})")
        row_sums = float(np.max(np.abs(m.sum(axis=1))))
        if row_sums > BALANCE_TOL:
            raise DesignError(
                f"Sigma_w 1_n != 0 (max |row sum| {row_sums:.3g}); design is not forced-balance")
        if abs(float(np.trace(m)) - n) > SYM_TOL * n:
            raise DesignError("trace of Sigma_w must equal n")

    @cached_property
    def _eigh(self) -> tuple[np.ndarray, np.ndarray]:
        sym = 0.5 * (self.matrix + self.matrix.T)
        return np.linalg.eigh(sym)

    @property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues in ascending order."""
        return self._eigh[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._eigh[1]

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def frobenius_sq(self) -> float:
        return float(np.sum(self.matrix * self.matrix))

    def quad(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ self.matrix @ v)

    def to_dict(self) -> dict:
        return {"n": self.n, "data": self.matrix.tolist()}


@dataclass(frozen=True, eq=False)
class ResponseSpec:
    """Response model ``y = beta_T w + f + z`` with the noise moments used by the criteria.

    ``kappa_z`` is the excess fourth moment ``E[z^4] - 3 sigma_z^4`` and
    ``gamma_z`` the third moment ``E[z^3]``; both vanish for Gaussian noise.
    """

    f: np.ndarray
    sigma2_z: float
    beta_T: float = 1.0
    gamma_z: float = 0.0
    kappa_z: float = 0.0

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        if f.ndim != 1 or not np.all(np.isfinite(f)):
            raise DesignError("f must be a finite vector")
        object.__setattr__(self, "f", f)
        if self.sigma2_z < 0:
            raise DesignError("sigma2_z must be nonnegative")
        if self.kappa_z < -2.0 * self.sigma2_z ** 2 - 1e-15:
            raise DesignError("kappa_z below -2 sigma_z^4 is not a feasible fourth moment")

    @classmethod
    def gaussian(cls, f, sigma_z: float, beta_T: float = 1.0) -> "ResponseSpec":
        return cls(f=f, sigma2_z=float(sigma_z) ** 2, beta_T=beta_T)


@dataclass
class CriterionReport:
    """Per-design criterion values; see ``criteria.tail_Q``."""

    B1: float
    B2: float
    R: float
    lambda_max: float
    mean_mse: float
    var_mse: float
    Q: float
    c_used: float
    mc_quantile: float | None = None
    design: str | None = None
    n: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def sigma_exact(d: DesignDistribution) -> AllocationCovariance:
    """``sum_k p_k w_k w_k^T`` over an explicit, valid design."""
    if d.support is None:
        raise DesignError("sigma_exact needs an explicit support")
    report = validate_design(d, d.n)
    if not report.ok:
        raise DesignError(f"invalid design: fails {', '.join(report.failures())}")
    W = d.support.astype(float)
    return AllocationCovariance((W * d.probs[:, None]).T @ W)


def sigma_crfb_closed(n: int) -> AllocationCovariance:
    """Complete randomization with forced balance: ``n/(n-1) I - 1/(n-1) J``."""
    n = _check_n(n)
    if n > MAX_CLOSED_FORM_N:
        raise DesignError(f"n={n} exceeds the dense closed-form cap {MAX_CLOSED_FORM_N}")
    m = np.full((n, n), -1.0 / (n - 1))
    np.fill_diagonal(m, 1.0)
    return AllocationCovariance(m)


def sigma_pb(w_star) -> AllocationCovariance:
    """Perfect balance ``{w*, -w*}``: the rank-one ``w* w*^T``."""
    w = check_allocation(w_star).astype(float)
    if w.shape[0] > MAX_CLOSED_FORM_N:
        raise DesignError(f"n={w.shape[0]} exceeds the dense closed-form cap {MAX_CLOSED_FORM_N}")
    return AllocationCovariance(np.outer(w, w))


def sigma_pm(pairs, n: int | None = None) -> AllocationCovariance:
    """Pairwise matching: unit diagonal and -1 between the members of each pair."""
    pairs = list(pairs)
    if n is None:
        n = 2 * len(pairs)
    pairs = check_pairs(pairs, n)
    if n > MAX_CLOSED_FORM_N:
        raise DesignError(f"n={n} exceeds the dense closed-form cap {MAX_CLOSED_FORM_N}")
    m = np.eye(n)
    for i, j in pairs:
        m[i, j] = m[j, i] = -1.0
    return AllocationCovariance(m)
