"""Bayesian model averaging for the linear regression model.

Slopes carry a Zellner g-prior, the intercept and error variance flat priors.
Per-model quantities come in closed form from the centered OLS fit:

    log BF(M : null) = (n-1-k)/2 log(1+g) - (n-1)/2 log(1 + g(1 - R2))
    E[beta | M]      = g/(1+g) * beta_ols
    Var[beta | M]    = g/(1+g) * s2 * (X'X)^-1,
                       s2 = TSS (1 - g/(1+g) R2) / (n - 3)

``s2`` is the posterior expectation of the error variance (the Student-t
posterior of the slopes has n-1 degrees of freedom). When the error variance
is known (``variance=...``) the known-variance forms are used instead:

    log BF = -k/2 log(1+g) + g/(1+g) * y'Py / (2 variance)
    Var[beta | M] = g/(1+g) * variance * (X'X)^-1
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .config import PriorConfig, SamplerConfig
from .models import (
    DEFAULT_ENUMERATION_CAP,
    InclusionMask,
    check_enumeration_cap,
    code_to_string,
    codes_to_matrix,
    is_rank_deficient,
)

CHUNK = 4096


class RankDeficientError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LinearDesign:
    """Single-stage regression data: outcome plus K selectable columns."""

    y: np.ndarray
    columns: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        cols = np.asarray(self.columns, dtype=float)
        if cols.ndim == 1:
            cols = cols[:, None]
        if cols.shape[0] != y.shape[0]:
            raise ValueError("columns and y must have the same number of rows")
        names = tuple(self.names) or tuple(f"x{i + 1}" for i in range(cols.shape[1]))
        if len(names) != cols.shape[1]:
            raise ValueError("one name per column required")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def K(self) -> int:
        return self.columns.shape[1]

    def permuted(self, order: Sequence[int]) -> LinearDesign:
        order = list(order)
        return LinearDesign(self.y, self.columns[:, order], tuple(self.names[i] for i in order))


@dataclass(frozen=True)
class ModelRecord:
    mask: InclusionMask
    log_marginal_likelihood: float
    pmp: float


@dataclass
class ModelTable:
    """Every enumerated model, kept as arrays; iterate for ModelRecords."""

    K: int
    codes: np.ndarray
    log_ml: np.ndarray
    pmp: np.ndarray

    def __len__(self) -> int:
        return len(self.codes)

    def __iter__(self) -> Iterator[ModelRecord]:
        for c, l, p in zip(self.codes, self.log_ml, self.pmp):
            yield ModelRecord(InclusionMask.from_code(int(c), self.K), float(l), float(p))

    def inclusion(self) -> np.ndarray:
        return codes_to_matrix(self.codes, self.K)


@dataclass
class PosteriorSummary:
    names: tuple[str, ...]
    pip: np.ndarray
    post_mean: np.ndarray
    post_sd: np.ndarray
    n_models: int
    top_models: list[tuple[str, float]] = field(default_factory=list)
    n_obs: int = 0
    method: str = ""

    def __len__(self) -> int:
        return len(self.names)

    def rows(self) -> list[tuple[str, float, float, float]]:
        return [
            (name, float(p), float(m), float(s))
            for name, p, m, s in zip(self.names, self.pip, self.post_mean, self.post_sd)
        ]

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame(
            {"pip": self.pip, "post_mean": self.post_mean, "post_sd": self.post_sd},
            index=list(self.names),
        )


@dataclass
class Mc3Chain:
    K: int
    codes: np.ndarray
    log_ml: np.ndarray
    burn_in: int
    accepted: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / max(len(self.codes), 1)

    def masks(self, start: int = 0) -> Iterator[InclusionMask]:
        for c in self.codes[start:]:
            yield InclusionMask.from_code(int(c), self.K)

    def lines(self) -> Iterator[str]:
        for c, l in zip(self.codes, self.log_ml):
            yield f"{code_to_string(int(c), self.K)} {float(l)!r}"


class _Gram:
    """Centered sufficient statistics shared by every model fit on one design."""

    def __init__(self, y: np.ndarray, columns: np.ndarray, g: float, variance: float | None):
        self.n = y.shape[0]
        self.K = columns.shape[1]
        self.yc = y - y.mean()
        self.Xc = columns - columns.mean(axis=0)
        self.XtX = self.Xc.T @ self.Xc
        self.Xty = self.Xc.T @ self.yc
        self.tss = float(self.yc @ self.yc)
        self.g = g
        self.shrink = g / (1.0 + g)
        self.variance = variance

    def fit(self, idx: Sequence[int], full_cov: bool = False):
        """(log BF vs null, posterior mean, posterior variances or covariance).

        Returns (-inf, None, None) for rank-deficient models.
        """
        k = len(idx)
        n, g = self.n, self.g
        if n < k + 2:
            raise ValueError(f"need n >= k + 2 observations (n={n}, k={k})")
        if k == 0:
            empty = np.zeros((0, 0)) if full_cov else np.zeros(0)
            return 0.0, np.zeros(0), empty
        idx = list(idx)
        if is_rank_deficient(self.Xc[:, idx]):
            return -math.inf, None, None
        G = self.XtX[np.ix_(idx, idx)]
        b = self.Xty[idx]
        Ginv = np.linalg.inv(G)
        beta_ols = Ginv @ b
        explained = float(b @ beta_ols)
        if self.variance is None:
            if self.tss <= 0:
                raise ValueError("outcome is constant; R^2 undefined")
            r2 = min(explained / self.tss, 1.0)
            log_bf = 0.5 * (n - 1 - k) * math.log1p(g) - 0.5 * (n - 1) * math.log1p(g * (1.0 - r2))
            s2 = self.tss * (1.0 - self.shrink * r2) / (n - 3) if n > 3 else math.nan
        else:
            log_bf = -0.5 * k * math.log1p(g) + self.shrink * explained / (2.0 * self.variance)
            s2 = self.variance
        mean = self.shrink * beta_ols
        cov = self.shrink * s2 * Ginv
        return log_bf, mean, (cov if full_cov else np.diag(cov).copy())


def _as_design(design) -> LinearDesign:
    if isinstance(design, LinearDesign):
        return design
    if hasattr(design, "single_stage"):
        return design.single_stage()
    y, cols = design
    return LinearDesign(y, cols)


def _single(y, columns) -> LinearDesign:
    y = np.asarray(y, dtype=float).reshape(-1)
    cols = np.asarray(columns, dtype=float)
    if cols.size == 0:
        cols = np.zeros((y.shape[0], 0))
    return LinearDesign(y, cols.reshape(y.shape[0], -1))


def log_marginal_likelihood(
    y, columns, prior: PriorConfig = PriorConfig(), variance: float | None = None
) -> float:
    """Log Bayes factor of the selected columns against the intercept-only model."""
    d = _single(y, columns)
    gram = _Gram(d.y, d.columns, prior.resolve(d.n), variance)
    return gram.fit(range(d.K))[0]


def conditional_posterior_coefficients(
    y, columns, prior: PriorConfig = PriorConfig(), variance: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean vector and covariance of the slopes within one model."""
    d = _single(y, columns)
    gram = _Gram(d.y, d.columns, prior.resolve(d.n), variance)
    log_bf, mean, cov = gram.fit(range(d.K), full_cov=True)
    if mean is None:
        raise RankDeficientError("selected columns are rank deficient")
    return mean, cov


def acceptance_probability(log_ratio: float) -> float:
    """Metropolis acceptance for a symmetric proposal under a uniform model prior."""
    if log_ratio >= 0:
        return 1.0
    return math.exp(log_ratio)


def _chunk_sums(gram: _Gram, codes: range):
    K = gram.K
    log_ml = np.empty(len(codes))
    means = np.zeros((len(codes), K))
    second = np.zeros((len(codes), K))
    incl = codes_to_matrix(np.arange(codes.start, codes.stop, dtype=np.int64), K)
    for r, code in enumerate(codes):
        idx = np.flatnonzero(incl[r])
        l, m, v = gram.fit(idx)
        log_ml[r] = l
        if m is not None:
            means[r, idx] = m
            second[r, idx] = v + m * m
    top = float(log_ml.max())
    w = np.exp(log_ml - top)
    return top, log_ml, w.sum(), w @ incl, w @ means, w @ second


def exact_bma(
    design,
    prior: PriorConfig = PriorConfig(),
    *,
    variance: float | None = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
    workers: int = 1,
    top: int = 10,
) -> tuple[ModelTable, PosteriorSummary]:
    """Posterior summaries by full enumeration of the 2^K model space.

    Partial sums are formed over fixed-size blocks of models and merged in
    block order, so the result does not depend on ``workers``.
    """
    d = _as_design(design)
    check_enumeration_cap(d.K, cap)
    gram = _Gram(d.y, d.columns, prior.resolve(d.n), variance)
    total = 1 << d.K
    blocks = [range(s, min(s + CHUNK, total)) for s in range(0, total, CHUNK)]
    if workers > 1 and len(blocks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _chunk_sums(gram, b), blocks))
    else:
        parts = [_chunk_sums(gram, b) for b in blocks]

    top_l = max(p[0] for p in parts)
    if not math.isfinite(top_l):
        raise RankDeficientError("every model is rank deficient")
    s_w = 0.0
    s_incl = np.zeros(d.K)
    s_mean = np.zeros(d.K)
    s_second = np.zeros(d.K)
    for t, _, w, wi, wm, ws in parts:
        scale = math.exp(t - top_l) if math.isfinite(t) else 0.0
        s_w += w * scale
        s_incl += wi * scale
        s_mean += wm * scale
        s_second += ws * scale
    log_ml = np.concatenate([p[1] for p in parts])
    n_bad = int(np.sum(~np.isfinite(log_ml)))
    if n_bad:
        warnings.warn(f"{n_bad} rank-deficient models excluded (log marginal likelihood -inf)")
    pmp = np.exp(log_ml - top_l) / s_w
    pip = s_incl / s_w
    mean = s_mean / s_w
    var = np.maximum(s_second / s_w - mean**2, 0.0)
    codes = np.arange(total, dtype=np.int64)
    order = np.argsort(-pmp, kind="stable")[:top]
    summary = PosteriorSummary(
        names=d.names,
        pip=np.clip(pip, 0.0, 1.0),
        post_mean=mean,
        post_sd=np.sqrt(var),
        n_models=total,
        top_models=[(code_to_string(int(codes[i]), d.K), float(pmp[i])) for i in order],
        n_obs=d.n,
        method="bma-exact",
    )
    return ModelTable(d.K, codes, log_ml, pmp), summary


def mc3_sample(
    design,
    prior: PriorConfig | None = None,
    config: SamplerConfig = SamplerConfig(),
    *,
    variance: float | None = None,
    top: int = 10,
) -> tuple[Mc3Chain, PosteriorSummary]:
    """Metropolis sampler over model space with single-flip proposals.

    Starts from the empty model. PIPs are post-burn-in visit frequencies;
    coefficient moments average the per-model analytic moments with those
    frequencies as weights.
    """
    d = _as_design(design)
    prior = prior if prior is not None else config.prior
    K = d.K
    if K < 1:
        raise ValueError("MC3 needs at least one selectable column")
    if K > 62:
        raise ValueError("mask codes are 64-bit; K <= 62 supported")
    gram = _Gram(d.y, d.columns, prior.resolve(d.n), variance)
    rng = np.random.default_rng(config.seed)
    n_iter = config.iterations
    flips = rng.integers(K, size=n_iter)
    log_u = np.log(rng.random(n_iter))

    cache: dict[int, float] = {}
    incl_cache: dict[int, np.ndarray] = {}

    def lml(code: int) -> float:
        v = cache.get(code)
        if v is None:
            idx = [i for i in range(K) if (code >> (K - 1 - i)) & 1]
            v = gram.fit(idx)[0]
            cache[code] = v
        return v

    codes = np.empty(n_iter, dtype=np.int64)
    trace = np.empty(n_iter)
    current = 0
    cur_l = lml(current)
    accepted = 0
    for t in range(n_iter):
        prop = current ^ (1 << (K - 1 - int(flips[t])))
        prop_l = lml(prop)
        if log_u[t] < prop_l - cur_l:
            current, cur_l = prop, prop_l
            accepted += 1
        codes[t] = current
        trace[t] = cur_l

    chain = Mc3Chain(K, codes, trace, config.burn_in, accepted)
    kept = codes[config.burn_in:]
    uniq, counts = np.unique(kept, return_counts=True)
    weights = counts / counts.sum()
    incl = codes_to_matrix(uniq, K)
    mean = np.zeros(K)
    second = np.zeros(K)
    for w, row in zip(weights, incl):
        idx = np.flatnonzero(row)
        _, m, v = gram.fit(idx)
        mean[idx] += w * m
        second[idx] += w * (v + m * m)
    pip = weights @ incl
    order = np.argsort(-counts, kind="stable")[:top]
    summary = PosteriorSummary(
        names=d.names,
        pip=pip,
        post_mean=mean,
        post_sd=np.sqrt(np.maximum(second - mean**2, 0.0)),
        n_models=len(uniq),
        top_models=[(code_to_string(int(uniq[i]), K), float(weights[i])) for i in order],
        n_obs=d.n,
        method="bma-mc3",
    )
    return chain, summary


def model_frequencies(codes: np.ndarray) -> dict[int, float]:
    uniq, counts = np.unique(np.asarray(codes), return_counts=True)
    total = counts.sum()
    return {int(c): n / total for c, n in zip(uniq, counts)}


def total_variation(p: dict[int, float], q: dict[int, float]) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)
