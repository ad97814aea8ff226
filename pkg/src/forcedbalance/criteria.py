"""MSE criteria for a design, given through its allocation covariance.

For ``y = beta_T w + f + z`` and the mean-difference estimator
``beta_hat = w^T y / n``, conditional on the unobserved ``z``::

    MSE(z) = (f + z)^T Sigma_w (f + z) / n^2

Averaging over iid ``z`` with variance ``sigma_z^2`` gives the mean
criterion, and its spread over ``z`` the tail criterion
``Q = mean + c * sd``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BALANCE_TOL,
    PB,
    AllocationCovariance,
    CriterionReport,
    DesignDistribution,
    DesignError,
    ResponseSpec,
)
from .rng import stream

__all__ = [
    "beta_hat",
    "conditional_mse",
    "mean_mse",
    "skewness_term",
    "var_mse",
    "c_constant",
    "tail_Q",
    "EfronResult",
    "efron_worst_case",
    "MCResult",
    "mse_draws",
    "summarize",
    "mc_mse_quantile",
    "NormalMixtureRep",
    "normal_mixture",
]

EIG_GROUP_RTOL = 1e-8
MIN_Z_DRAWS = 100


def _as_sigma(sigma) -> AllocationCovariance:
    return sigma if isinstance(sigma, AllocationCovariance) else AllocationCovariance(sigma)


def _vec(v, n: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise DesignError(f"{name} has shape {v.shape}, expected ({n},)")
    return v


def beta_hat(w, y):
    """Mean-difference estimate ``w^T y / n``; a 2-d ``w`` gives one estimate per row."""
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    if w.shape[-1] != y.shape[-1]:
        raise DesignError(f"allocation length {w.shape[-1]} != response length {y.shape[-1]}")
    return w @ y / y.shape[-1]


def conditional_mse(f, z, sigma) -> float:
    sigma = _as_sigma(sigma)
    n = sigma.n
    v = _vec(f, n, "f") + _vec(z, n, "z")
    return max(sigma.quad(v), 0.0) / n ** 2


def mean_mse(f, sigma2_z: float, sigma) -> float:
    """Expected MSE over homoskedastic ``z``: ``f^T S f / n^2 + sigma_z^2 / n``."""
    if sigma2_z < 0:
        raise DesignError("sigma2_z must be nonnegative")
    sigma = _as_sigma(sigma)
    n = sigma.n
    return sigma.quad(_vec(f, n, "f")) / n ** 2 + sigma2_z / n


def skewness_term(f, gamma_z: float, sigma) -> float:
    """``gamma_z * 1^T Sigma_w f``, which vanishes for forced-balance designs."""
    sigma = _as_sigma(sigma)
    f = _vec(f, sigma.n, "f")
    return float(gamma_z * (sigma.matrix.sum(axis=0) @ f))


def var_mse(f, sigma2_z: float, sigma, kappa_z: float = 0.0, gamma_z: float = 0.0) -> float:
    """Variance of the conditional MSE over ``z``.

    ``(n kappa_z + 2 sigma_z^4 ||S||_F^2 + 4 sigma_z^2 f^T S^2 f) / n^4``. The
    third-moment term is evaluated and must be numerically zero.
    """
    sigma = _as_sigma(sigma)
    n = sigma.n
    f = _vec(f, n, "f")
    ResponseSpec(f=f, sigma2_z=sigma2_z, gamma_z=gamma_z, kappa_z=kappa_z)
    if float(np.max(np.abs(sigma.matrix.sum(axis=1)))) > BALANCE_TOL:
        raise DesignError("Sigma_w 1_n != 0: variance formula needs a forced-balance design")
    skew = skewness_term(f, gamma_z, sigma)
    if abs(skew) > BALANCE_TOL * max(1.0, abs(gamma_z) * float(np.abs(f).sum())):
        raise DesignError(f"third-moment term {skew:.3g} is not zero")
    Sf = sigma.matrix @ f
    total = n * kappa_z + 2.0 * sigma2_z ** 2 * sigma.frobenius_sq + 4.0 * sigma2_z * (Sf @ Sf)
    return max(float(total), 0.0) / n ** 4


def c_constant(mode: str, q: float | None = None) -> float:
    """Standard-error multiplier: ``"chebyshev"`` gives ``1/sqrt(1-q)``, ``"gaussian"`` gives 2."""
    mode = mode.lower()
    if mode == "gaussian":
        return 2.0
    if mode == "chebyshev":
        if q is None or not 0.0 < q < 1.0:
            raise DesignError(f"Chebyshev constant needs 0 < q < 1, got {q}")
        return 1.0 / math.sqrt(1.0 - q)
    raise DesignError(f"unknown c mode {mode!r}")


def tail_Q(response: ResponseSpec, sigma, c: float) -> CriterionReport:
    """Tail criterion ``Q = mean_mse + c * sqrt(var_mse)`` and its design-dependent terms."""
    sigma = _as_sigma(sigma)
    n = sigma.n
    f = _vec(response.f, n, "f")
    Sf = sigma.matrix @ f
    mean = mean_mse(f, response.sigma2_z, sigma)
    var = var_mse(f, response.sigma2_z, sigma, response.kappa_z, response.gamma_z)
    return CriterionReport(
        B1=max(float(f @ Sf), 0.0),
        B2=float(Sf @ Sf),
        R=sigma.frobenius_sq,
        lambda_max=max(sigma.lambda_max, 0.0),
        mean_mse=mean,
        var_mse=var,
        Q=mean + c * math.sqrt(var),
        c_used=float(c),
        n=n,
    )


@dataclass
class EfronResult:
    z_adv: np.ndarray
    bound: float
    realized_norm2: float
    v_max: np.ndarray
    alpha: float
    lambda_max: float
    degenerate: bool


def efron_worst_case(f, sigma) -> EfronResult:
    """Adversarial unobserved component for the worst-case criterion.

    With ``alpha = ||f||^2 / (1 + 2 ||f||)`` and ``v_max`` the top unit
    eigenvector (oriented so ``v_max . f >= 0``), ``z_adv = alpha v_max - f``
    so that ``f + z_adv`` lies on the top eigenvector and the bound
    ``lambda_max ||f + z||^2 / n^2`` is attained. When the top eigenspace is
    degenerate, ``v_max`` is the normalized projection of ``f`` onto it and
    ``degenerate`` is set.
    """
    sigma = _as_sigma(sigma)
    n = sigma.n
    f = _vec(f, n, "f")
    fnorm = float(np.linalg.norm(f))
    if fnorm == 0.0:
        raise DesignError("efron_worst_case needs f != 0")
    vals, vecs = sigma.eigenvalues, sigma.eigenvectors
    lam = float(vals[-1])
    top = vals >= lam - EIG_GROUP_RTOL * max(abs(lam), 1.0)
    degenerate = int(top.sum()) > 1
    if degenerate:
        basis = vecs[:, top]
        proj = basis @ (basis.T @ f)
        pnorm = float(np.linalg.norm(proj))
        v = proj / pnorm if pnorm > 1e-12 * fnorm else basis[:, -1].copy()
    else:
        v = vecs[:, -1].copy()
    if v @ f < 0:
        v = -v
    alpha = fnorm ** 2 / (1.0 + 2.0 * fnorm)
    z_adv = alpha * v - f
    bound = lam * float(np.sum((f + z_adv) ** 2)) / n ** 2
    attained = conditional_mse(f, z_adv, sigma)
    if abs(attained - bound) > 1e-10 * max(1.0, bound):
        raise AssertionError(f"adversarial z misses the bound: {attained} vs {bound}")
    return EfronResult(z_adv=z_adv, bound=bound, realized_norm2=float(z_adv @ z_adv),
                       v_max=v, alpha=alpha, lambda_max=lam, degenerate=degenerate)


@dataclass
class MCResult:
    quantile: float
    mean: float
    max: float
    realized_c: float
    q: float
    values: np.ndarray = field(repr=False)
    warnings: list[str] = field(default_factory=list)

    @property
    def se_mean(self) -> float:
        return float(np.std(self.values, ddof=1) / math.sqrt(self.values.size))

    def summary(self) -> dict:
        return {"mean": self.mean, "quantile": self.quantile, "max": self.max,
                "realized_c": self.realized_c, "q": self.q, "se_mean": self.se_mean,
                "n_z": int(self.values.size)}


def _z_draw(seed: int, i: int, n: int, sigma_z: float) -> np.ndarray:
    return sigma_z * stream(seed, "z", i).standard_normal(n)


def _mse_block(idx, f, design, sigma_z, n_w, seed, beta_T, sigma_matrix):
    n = f.shape[0]
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        z = _z_draw(seed, i, n, sigma_z)
        if sigma_matrix is not None:
            v = f + z
            out[k] = max(float(v @ sigma_matrix @ v), 0.0) / n ** 2
            continue
        if design.kind == PB:
            W, weights = design.support, design.probs
        else:
            W = design.sample(stream(seed, "w", i, design.kind), n_w)
            weights = None
        W = W.astype(float)
        y = beta_T * W + (f + z)[None, :]
        err = np.einsum("ij,ij->i", W, y) / n - beta_T
        out[k] = float(np.average(err ** 2, weights=weights))
    return out


def mse_draws(f, design: DesignDistribution, sigma2_z: float, n_z: int, n_w: int, seed: int,
              exact: bool = False, beta_T: float = 1.0, threads: int = 1) -> np.ndarray:
    """Per-z conditional MSE for draws ``z_i ~ N(0, sigma_z^2 I)``, ``i < n_z``.

    Draw ``i`` uses stream ``(seed, "z", i)``, shared by every design. With
    ``exact`` the MSE comes from ``Sigma_w``; otherwise it is the average of
    ``(beta_hat - beta_T)^2`` over ``n_w`` allocations drawn on stream
    ``(seed, "w", i, kind)``, except PB, which averages over ``{w*, -w*}``.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (design.n,):
        raise DesignError(f"f has shape {f.shape}, expected ({design.n},)")
    if sigma2_z < 0:
        raise DesignError("sigma2_z must be nonnegative")
    if n_z < 1 or (not exact and n_w < 1):
        raise DesignError("need n_z >= 1 and n_w >= 1")
    sigma_matrix = design.sigma().matrix if exact else None
    sigma_z = math.sqrt(sigma2_z)
    threads = max(1, threads or 1)
    ids = list(range(n_z))
    if threads == 1:
        return _mse_block(ids, f, design, sigma_z, n_w, seed, beta_T, sigma_matrix)
    size = -(-n_z // threads)
    blocks = [ids[k:k + size] for k in range(0, n_z, size)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(lambda b: _mse_block(b, f, design, sigma_z, n_w, seed, beta_T,
                                              sigma_matrix), blocks)
        return np.concatenate(list(parts))


def summarize(values: np.ndarray, q: float) -> MCResult:
    """Type-7 q-quantile, mean, max and realized ``c = (quantile - mean) / sd``."""
    if not 0.0 < q < 1.0:
        raise DesignError(f"q must lie in (0, 1), got {q}")
    values = np.asarray(values, dtype=float)
    quant = float(np.quantile(values, q, method="linear"))
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
    realized_c = (quant - mean) / sd if sd > 0 else float("nan")
    notes = []
    if values.size < MIN_Z_DRAWS:
        notes.append(f"only {values.size} z draws (< {MIN_Z_DRAWS}); quantile is unreliable")
    return MCResult(quantile=quant, mean=mean, max=float(values.max()), realized_c=realized_c,
                    q=q, values=values, warnings=notes)


def mc_mse_quantile(f, design: DesignDistribution, sigma2_z: float, q: float, n_z: int,
                    n_w: int, seed: int, exact: bool = True, beta_T: float = 1.0,
                    threads: int = 1) -> MCResult:
    """Monte Carlo distribution of the conditional MSE over Gaussian ``z``."""
    if not 0.0 < q < 1.0:
        raise DesignError(f"q must lie in (0, 1), got {q}")
    values = mse_draws(f, design, sigma2_z, n_z, n_w, seed, exact=exact, beta_T=beta_T,
                       threads=threads)
    return summarize(values, q)


@dataclass
class NormalMixtureRep:
    """``(f + z)^T Sigma_w (f + z)`` for Gaussian z as a sum of scaled noncentral chi-squares.

    Group ``k`` contributes ``sigma2_z * eigenvalues[k] * chi2(df[k], nonc[k])``
    with ``nonc[k] = ||P_k f||^2 / sigma2_z`` (numpy's convention: the sum of
    squared means of the unit-variance normals).
    """

    eigenvalues: np.ndarray
    multiplicities: np.ndarray
    projections: np.ndarray
    sigma2_z: float

    @property
    def scales(self) -> np.ndarray:
        return self.sigma2_z * self.eigenvalues

    @property
    def noncentralities(self) -> np.ndarray:
        if self.sigma2_z == 0:
            return np.full_like(self.projections, np.inf)
        return self.projections / self.sigma2_z

    def mean(self) -> float:
        lam = self.eigenvalues
        return float(np.sum(self.sigma2_z * lam * self.multiplicities + lam * self.projections))

    def var(self) -> float:
        lam = self.eigenvalues
        return float(np.sum(2 * self.sigma2_z ** 2 * lam ** 2 * self.multiplicities
                            + 4 * self.sigma2_z * lam ** 2 * self.projections))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.zeros(size)
        for lam, df, proj in zip(self.eigenvalues, self.multiplicities, self.projections):
            if lam <= 0:
                continue
            if self.sigma2_z == 0:
                out += lam * proj
            else:
                out += self.sigma2_z * lam * rng.noncentral_chisquare(
                    df, proj / self.sigma2_z, size)
        return out


def normal_mixture(f, sigma2_z: float, sigma) -> NormalMixtureRep:
    """Group the eigenvalues of ``Sigma_w`` and project ``f`` onto each eigenspace."""
    sigma = _as_sigma(sigma)
    n = sigma.n
    f = _vec(f, n, "f")
    if sigma2_z < 0:
        raise DesignError("sigma2_z must be nonnegative")
    vals = sigma.eigenvalues[::-1]
    vecs = sigma.eigenvectors[:, ::-1]
    scale = max(float(vals[0]), 1.0)
    vals = np.where(np.abs(vals) <= 1e-10 * scale, 0.0, vals)
    if vals.min() < 0:
        raise DesignError("Sigma_w has a negative eigenvalue")
    coeff = vecs.T @ f
    groups, start = [], 0
    for k in range(1, n + 1):
        if k == n or vals[start] - vals[k] > EIG_GROUP_RTOL * scale:
            groups.append((start, k))
            start = k
    eig = np.array([vals[a:b].mean() for a, b in groups])
    mult = np.array([b - a for a, b in groups])
    proj = np.array([float(np.sum(coeff[a:b] ** 2)) for a, b in groups])
    return NormalMixtureRep(eigenvalues=eig, multiplicities=mult, projections=proj,
                            sigma2_z=float(sigma2_z))
