"""Allocation generators: enumeration, CRFB and pairwise-matching samplers,
and the brute-force and greedy searches for the perfect-balance allocation.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    CRFB,
    PB,
    PM,
    DesignDistribution,
    DesignError,
    _draw_crfb,
    _draw_pm,
    check_allocation,
    check_covariates,
    check_pairs,
)
from .rng import stream

__all__ = [
    "DEFAULT_MAX_ENUMERATION_N",
    "SearchConfig",
    "SingularCovarianceWarning",
    "enumerate_balanced",
    "enumerate_pair_flips",
    "sample_crfb",
    "match_pairs",
    "sample_pm",
    "whiten",
    "imbalance",
    "brute_force_optimal",
    "greedy_optimize",
    "build_design",
]

log = logging.getLogger(__name__)

DEFAULT_MAX_ENUMERATION_N = 24
MAX_EXPLICIT_PAIRS = 20
_CHUNK = 1 << 16


class SingularCovarianceWarning(UserWarning):
    """The covariate sample covariance is singular; a pseudo-inverse was used."""


@dataclass(frozen=True)
class SearchConfig:
    restarts: int = 1
    seed: int = 0
    max_enumeration_n: int = DEFAULT_MAX_ENUMERATION_N
    threads: int | None = None

    def __post_init__(self):
        if self.restarts < 1:
            raise DesignError("restarts must be >= 1")
        if not 2 <= self.max_enumeration_n <= DEFAULT_MAX_ENUMERATION_N:
            raise DesignError(
                f"max_enumeration_n must lie in [2, {DEFAULT_MAX_ENUMERATION_N}]")


def enumerate_balanced(n: int, max_n: int = DEFAULT_MAX_ENUMERATION_N) -> np.ndarray:
    """All ``C(n, n/2)`` balanced allocations in lexicographic order (-1 < +1).

    Returns an int8 array of shape (C(n, n/2), n).
    """
    if int(n) != n or n < 2 or n % 2:
        raise DesignError(f"n must be an even integer >= 2, got {n}")
    if n > max_n:
        raise DesignError(
            f"n={n} exceeds the enumeration cap of {max_n}; use greedy_optimize instead")
    m = n // 2
    count = math.comb(n, m)
    # lexicographic order of the control positions is lexicographic order of w
    controls = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(n), m)),
        dtype=np.int16, count=count * m).reshape(count, m)
    W = np.ones((count, n), dtype=np.int8)
    np.put_along_axis(W, controls.astype(np.intp), -1, axis=1)
    return W


def enumerate_pair_flips(pairs, n: int | None = None) -> np.ndarray:
    """The ``2^m`` within-pair sign flips of a pairing, as an int8 array."""
    pairs = list(pairs)
    n = 2 * len(pairs) if n is None else n
    pairs = check_pairs(pairs, n)
    if len(pairs) > MAX_EXPLICIT_PAIRS:
        raise DesignError(f"{len(pairs)} pairs exceed the explicit cap of {MAX_EXPLICIT_PAIRS}")
    signs = np.array(list(itertools.product((-1, 1), repeat=len(pairs))), dtype=np.int8)
    first = [p[0] for p in pairs]
    second = [p[1] for p in pairs]
    W = np.empty((signs.shape[0], n), dtype=np.int8)
    W[:, first] = signs
    W[:, second] = -signs
    return W


def sample_crfb(n: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform draw(s) over balanced allocations: a random n/2-subset gets +1."""
    if int(n) != n or n < 2 or n % 2:
        raise DesignError(f"n must be an even integer >= 2, got {n}")
    w = _draw_crfb(rng, int(n), 1 if size is None else size)
    return w[0] if size is None else w


def sample_pm(pairs, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Independent fair coin per pair decides which member is treated."""
    pairs = list(pairs)
    n = 2 * len(pairs)
    pairs = check_pairs(pairs, n)
    w = _draw_pm(rng, pairs, n, 1 if size is None else size)
    return w[0] if size is None else w


def whiten(X) -> tuple[np.ndarray, bool]:
    """Map covariates so Euclidean distance equals Mahalanobis distance.

    Uses the sample covariance (ddof=1) of ``X``. Singular values below
    ``1e-10 * s_max`` are dropped (pseudo-inverse) and the second return
    value flags that case.
    """
    X = check_covariates(X)
    S = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    vals, vecs = np.linalg.eigh(S)
    top = vals.max() if vals.size else 0.0
    keep = vals > 1e-10 * top if top > 0 else np.zeros_like(vals, dtype=bool)
    singular = not keep.all()
    inv_sqrt = np.zeros_like(vals)
    inv_sqrt[keep] = 1.0 / np.sqrt(vals[keep])
    return X @ (vecs * inv_sqrt), singular


def _warn_singular():
    warnings.warn("covariate sample covariance is singular; using pseudo-inverse",
                  SingularCovarianceWarning, stacklevel=3)


def imbalance(X, w) -> float:
    """Mahalanobis distance between the treatment and control covariate means.

    For one covariate this is ``|xbar_T - xbar_C| / sd(x)``.
    """
    X = check_covariates(X)
    w = check_allocation(w, X.shape[0])
    Z, singular = whiten(X)
    if singular:
        _warn_singular()
    m = X.shape[0] // 2
    return float(np.linalg.norm(w.astype(float) @ Z)) / m


def match_pairs(X) -> tuple[tuple[int, int], ...]:
    """Pair subjects with similar covariates.

    One covariate: stable sort (ties by subject index) and pair neighbours.
    Several covariates: repeatedly pair the closest unmatched subjects under
    Mahalanobis distance, ties broken by ``(i, j)``.
    """
    X = check_covariates(X)
    n = X.shape[0]
    if X.shape[1] == 1:
        order = np.argsort(X[:, 0], kind="stable")
        pairs = [tuple(sorted((int(order[k]), int(order[k + 1])))) for k in range(0, n, 2)]
        return check_pairs(pairs, n)

    Z, singular = whiten(X)
    if singular:
        _warn_singular()
    iu, ju = np.triu_indices(n, k=1)
    dist = np.sum((Z[iu] - Z[ju]) ** 2, axis=1)
    order = np.lexsort((ju, iu, dist))
    used = np.zeros(n, dtype=bool)
    pairs = []
    for k in order:
        i, j = int(iu[k]), int(ju[k])
        if used[i] or used[j]:
            continue
        used[i] = used[j] = True
        pairs.append((i, j))
        if len(pairs) == n // 2:
            break
    return check_pairs(pairs, n)


def _objectives(W: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Squared norm of ``sum_i w_i z_i`` for each row of W, chunked."""
    out = np.empty(W.shape[0])
    for start in range(0, W.shape[0], _CHUNK):
        D = W[start:start + _CHUNK].astype(float) @ Z
        out[start:start + _CHUNK] = np.einsum("ij,ij->i", D, D)
    return out


def brute_force_optimal(X, max_n: int = DEFAULT_MAX_ENUMERATION_N) -> np.ndarray:
    """Exhaustively find the balanced allocation of minimum imbalance.

    Ties go to the lexicographically smallest allocation.
    """
    X = check_covariates(X)
    n = X.shape[0]
    if n > max_n:
        raise DesignError(
            f"n={n} exceeds the enumeration cap of {max_n}; use greedy_optimize instead")
    Z, singular = whiten(X)
    if singular:
        _warn_singular()
    W = enumerate_balanced(n, max_n)
    return W[int(np.argmin(_objectives(W, Z)))].copy()


def _descend(Z: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Steepest-descent pair switching from ``w``.

    Each step makes the single treatment/control swap that most reduces
    ``||sum_i w_i z_i||^2``; stops when no swap improves it. Returns the local
    optimum and the starting and final objectives.
    """
    w = w.copy()
    n = w.shape[0]

    def objective(w):
        D = w.astype(float) @ Z
        return D, float(D @ D)

    D, start = objective(w)
    current = start
    for _ in range(n * n):
        t = np.flatnonzero(w == 1)
        c = np.flatnonzero(w == -1)
        # swapping treated i with control j moves D by 2 (z_j - z_i)
        cand = D[None, None, :] + 2.0 * (Z[c][None, :, :] - Z[t][:, None, :])
        obj = np.einsum("ijk,ijk->ij", cand, cand)
        k = int(np.argmin(obj))
        if not obj.flat[k] < current:
            break
        i, j = divmod(k, c.shape[0])
        w[t[i]], w[c[j]] = -1, 1
        D, current = objective(w)
    return w, start, current


def _restart_block(Z, seed, restarts):
    out = []
    n = Z.shape[0]
    for r in restarts:
        w0 = _draw_crfb(stream(seed, "greedy", r), n, 1)[0]
        w, start, end = _descend(Z, w0)
        out.append((end, tuple(int(v) for v in w), start))
    return out


def greedy_optimize(X, config: SearchConfig = SearchConfig(), return_trace: bool = False):
    """Best local optimum of greedy pair switching over ``config.restarts`` random starts.

    Restart ``r`` starts from a CRFB draw on stream ``(seed, "greedy", r)``, so
    the answer does not depend on ``config.threads``. With ``return_trace``
    also returns a list of ``(start_objective, end_objective)`` per restart.
    """
    X = check_covariates(X)
    Z, singular = whiten(X)
    if singular:
        _warn_singular()
    threads = max(1, config.threads or 1)
    ids = list(range(config.restarts))
    blocks = [ids[k::threads] for k in range(threads)]
    if threads == 1:
        results = [_restart_block(Z, config.seed, blocks[0])]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda b: _restart_block(Z, config.seed, b), blocks))
    # reassemble in restart order before the deterministic reduction
    flat = [None] * config.restarts
    for block, res in zip(blocks, results):
        for r, item in zip(block, res):
            flat[r] = item
    best = min(flat, key=lambda item: (item[0], item[1]))
    w = np.array(best[1], dtype=np.int8)
    if return_trace:
        return w, [(start, end) for end, _, start in flat]
    return w


def build_design(kind: str, X, config: SearchConfig = SearchConfig(),
                 pb_solver: str | None = None) -> DesignDistribution:
    """Build a CRFB, PB or PM design for covariates ``X``.

    ``pb_solver`` is ``"brute"`` or ``"greedy"``; by default brute force is
    used whenever ``n`` is within the enumeration cap.
    """
    X = check_covariates(X)
    n = X.shape[0]
    cap = config.max_enumeration_n
    if kind == CRFB:
        if n <= cap:
            return DesignDistribution.explicit(enumerate_balanced(n, cap), kind=CRFB)
        return DesignDistribution(kind=CRFB, n=n)
    if kind == PB:
        solver = pb_solver or ("brute" if n <= cap else "greedy")
        if solver == "brute":
            w_star = brute_force_optimal(X, cap)
        elif solver == "greedy":
            w_star = greedy_optimize(X, config)
        else:
            raise DesignError(f"unknown PB solver {solver!r}")
        return DesignDistribution.explicit(np.stack([w_star, -w_star]), kind=PB)
    if kind == PM:
        pairs = match_pairs(X)
        if len(pairs) <= MAX_EXPLICIT_PAIRS:
            return DesignDistribution.explicit(enumerate_pair_flips(pairs, n), kind=PM,
                                               pairs=pairs)
        return DesignDistribution(kind=PM, n=n, pairs=pairs)
    raise DesignError(f"unknown design kind {kind!r}; expected CRFB, PB or PM")
