"""Ground-truth data generators and independent reference computations.

``brute_force_pips`` deliberately shares no likelihood code with the BMA
engine: it evaluates every model's marginal likelihood from the n x n
marginal covariance of the centered outcome, I + g P_X, using a QR
projection, slogdet and a linear solve.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np
import pandas as pd

from .bma import LinearDesign, PosteriorSummary
from .config import PriorConfig
from .models import InclusionMask, code_to_string, is_rank_deficient
from .pipeline import DesignMatrices, VariableSpec, load_roster

BRUTE_FORCE_CAP = 15


class SyntheticConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Endogeneity:
    p: int = 1
    sigma: np.ndarray | None = None  # (p+1) x (p+1), order (eps, eta_1..eta_p)
    instrument_strength: float = 0.9  # target corr(Z_j, X_j)


@dataclass(frozen=True)
class SyntheticConfig:
    n: int
    K: int
    true_mask: tuple[bool, ...]
    true_coefficients: tuple[float, ...]
    noise_sd: float = 1.0
    endogeneity: Endogeneity | None = None
    seed: int = 0
    intercept: float = 0.0

    def __post_init__(self):
        mask = self.true_mask.bits if isinstance(self.true_mask, InclusionMask) else self.true_mask
        object.__setattr__(self, "true_mask", tuple(bool(b) for b in mask))
        object.__setattr__(self, "true_coefficients", tuple(float(c) for c in self.true_coefficients))
        width = self.K + (self.endogeneity.p if self.endogeneity else 0)
        if len(self.true_mask) != width:
            raise SyntheticConfigError(f"true_mask must have {width} entries")
        if len(self.true_coefficients) != sum(self.true_mask):
            raise SyntheticConfigError("one true coefficient per included column required")
        if not self.noise_sd > 0:
            raise SyntheticConfigError("noise_sd must be positive")

    def beta(self) -> np.ndarray:
        b = np.zeros(len(self.true_mask))
        b[np.array(self.true_mask, dtype=bool)] = self.true_coefficients
        return b


def generate_linear(config: SyntheticConfig) -> LinearDesign:
    """y = intercept + columns @ beta + N(0, noise_sd^2), columns i.i.d. N(0, 1)."""
    if config.endogeneity is not None:
        raise SyntheticConfigError("use generate_endogenous for configs with an endogeneity block")
    rng = np.random.default_rng(config.seed)
    cols = rng.standard_normal((config.n, config.K))
    y = config.intercept + cols @ config.beta() + config.noise_sd * rng.standard_normal(config.n)
    return LinearDesign(y, cols, tuple(f"x{i + 1}" for i in range(config.K)))


def endogenous_sigma(p: int = 1, s11: float = 1.0, s22: float = 1.0, s12: float = 0.0) -> np.ndarray:
    """Error covariance with a common eps-eta covariance and independent etas."""
    sig = np.diag([s11] + [s22] * p).astype(float)
    sig[0, 1:] = s12
    sig[1:, 0] = s12
    return sig


def generate_endogenous(config: SyntheticConfig, first_stage_w: np.ndarray | None = None) -> DesignMatrices:
    """Two-equation system with correlated errors.

    ``true_mask``/``true_coefficients`` run over [X W] (p endogenous columns
    first, then K exogenous ones). Instruments are N(0, 1) and enter
    X_j = delta_j Z_j + W tau_j + eta_j with delta_j chosen so that
    corr(Z_j, X_j) equals ``instrument_strength``.
    """
    end = config.endogeneity
    if end is None:
        raise SyntheticConfigError("config has no endogeneity block")
    p, q, n = end.p, config.K, config.n
    sigma = endogenous_sigma(p) if end.sigma is None else np.asarray(end.sigma, dtype=float)
    if sigma.shape != (p + 1, p + 1):
        raise SyntheticConfigError(f"sigma must be {(p + 1, p + 1)}")
    if not np.allclose(sigma, sigma.T) or np.linalg.eigvalsh(sigma).min() <= 0:
        raise SyntheticConfigError("sigma must be symmetric positive definite")
    rho = end.instrument_strength
    if not 0 < rho < 1:
        raise SyntheticConfigError(f"instrument_strength {rho} unreachable; must lie in (0, 1)")
    tau = np.zeros((q, p)) if first_stage_w is None else np.asarray(first_stage_w, dtype=float).reshape(q, p)
    rng = np.random.default_rng(config.seed)
    W = rng.standard_normal((n, q))
    Z = rng.standard_normal((n, p))
    errors = rng.multivariate_normal(np.zeros(p + 1), sigma, size=n, method="cholesky")
    eps, eta = errors[:, 0], errors[:, 1:]
    # var(X_j) = delta^2 + |tau_j|^2 + sigma_jj, so corr(Z_j, X_j) = rho
    other = (tau**2).sum(axis=0) + np.diag(sigma)[1:]
    delta = rho * np.sqrt(other) / math.sqrt(1 - rho**2)
    X = Z * delta + W @ tau + eta
    beta = config.beta()
    y = config.intercept + np.hstack([X, W]) @ beta + eps
    return DesignMatrices(
        countries=tuple(f"c{i:05d}" for i in range(n)),
        y=y, X=X, W=W, Z=Z,
        endogenous_names=tuple(f"x{j + 1}" for j in range(p)),
        exogenous_names=tuple(f"w{j + 1}" for j in range(q)),
        instrument_names=tuple(f"z{j + 1}" for j in range(p)),
    )


def endogeneity_benchmark(seed: int, n: int = 300, beta: float = 1.0, s12: float = 0.7,
                          s11: float = 2.0, s22: float = 0.5, strength: float = 0.9,
                          noise_regressors: int = 5) -> SyntheticConfig:
    """One endogenous regressor with true slope ``beta`` plus pure-noise controls.

    Defaults give corr(eps, eta) = s12 / sqrt(s11 s22) = 0.7 and an OLS
    inflation of s12 (1 - strength^2) / s22 ~ 0.27.
    """
    return SyntheticConfig(
        n=n, K=noise_regressors,
        true_mask=(True,) + (False,) * noise_regressors,
        true_coefficients=(beta,),
        noise_sd=1.0,
        endogeneity=Endogeneity(p=1, sigma=endogenous_sigma(1, s11, s22, s12),
                                instrument_strength=strength),
        seed=seed,
    )


# --- independent oracles -------------------------------------------------------


def _oracle_model(yc: np.ndarray, Xc: np.ndarray, g: float):
    n = len(yc)
    k = Xc.shape[1]
    if k == 0:
        return -0.5 * (n - 1) * math.log(float(yc @ yc)), np.zeros(0), np.zeros(0)
    Q, R = np.linalg.qr(Xc)
    V = np.eye(n) + g * (Q @ Q.T)
    _, logdet = np.linalg.slogdet(V)
    quad = float(yc @ np.linalg.solve(V, yc))
    log_ml = -0.5 * logdet - 0.5 * (n - 1) * math.log(quad)
    shrink = g / (1.0 + g)
    beta_ols = np.linalg.lstsq(Xc, yc, rcond=None)[0]
    Rinv = np.linalg.inv(R)
    s2 = quad / (n - 3)
    var = shrink * s2 * np.sum(Rinv**2, axis=1)
    return log_ml, shrink * beta_ols, var


def brute_force_pips(y, columns, prior: PriorConfig = PriorConfig(), names: Sequence[str] = ()) -> PosteriorSummary:
    """Posterior inclusion probabilities and moments by direct evaluation."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(columns, dtype=float)
    n, K = X.shape
    if K > BRUTE_FORCE_CAP:
        raise SyntheticConfigError(f"brute force limited to K <= {BRUTE_FORCE_CAP}")
    g = prior.resolve(n)
    yc = y - y.mean()
    Xc = X - X.mean(axis=0)
    logs, means, vars_, masks = [], [], [], []
    for bits in itertools.product((0, 1), repeat=K):
        sel = [i for i, b in enumerate(bits) if b]
        m, v = np.zeros(K), np.zeros(K)
        if sel and is_rank_deficient(X[:, sel]):
            logs.append(-math.inf)
        else:
            l, mm, vv = _oracle_model(yc, Xc[:, sel], g)
            logs.append(l)
            m[sel], v[sel] = mm, vv
        means.append(m)
        vars_.append(v)
        masks.append(bits)
    logs = np.array(logs)
    w = np.exp(logs - logs.max())
    pmp = w / w.sum()
    masks = np.array(masks, dtype=float)
    means, vars_ = np.array(means), np.array(vars_)
    pip = pmp @ masks
    mean = pmp @ means
    var = pmp @ (vars_ + means**2) - mean**2
    order = np.argsort(-pmp, kind="stable")[:10]
    return PosteriorSummary(
        names=tuple(names) or tuple(f"x{i + 1}" for i in range(K)),
        pip=pip, post_mean=mean, post_sd=np.sqrt(np.maximum(var, 0.0)),
        n_models=1 << K,
        top_models=[(code_to_string(int(i), K), float(pmp[i])) for i in order],
        n_obs=n, method="brute-force",
    )


def reference_fits(y, X, W, Z) -> tuple[np.ndarray, np.ndarray]:
    """OLS of y on [1 X W] and two-stage least squares instrumenting X with Z.

    Both coefficient vectors are ordered (intercept, X..., W...).
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    X = np.asarray(X, dtype=float).reshape(n, -1)
    W = np.asarray(W, dtype=float).reshape(n, -1)
    Z = np.asarray(Z, dtype=float).reshape(n, -1)
    one = np.ones((n, 1))
    reg = np.hstack([one, X, W])
    inst = np.hstack([one, Z, W])
    for name, mat in (("regressors", reg), ("instruments", inst)):
        if np.linalg.matrix_rank(mat) < mat.shape[1]:
            raise np.linalg.LinAlgError(f"{name} do not have full column rank")
    if Z.shape[1] < X.shape[1]:
        raise np.linalg.LinAlgError("fewer instruments than endogenous regressors")
    ols = np.linalg.lstsq(reg, y, rcond=None)[0]
    X_hat = inst @ np.linalg.lstsq(inst, X, rcond=None)[0]
    tsls = np.linalg.lstsq(np.hstack([one, X_hat, W]), y, rcond=None)[0]
    return ols, tsls


def design_to_panel(design: DesignMatrices, year: int = 2005, lag_year: int = 1995) -> tuple[pd.DataFrame, list[VariableSpec]]:
    """Long-format panel and roster reproducing ``design`` through the pipeline.

    Each cross-section value is written as a single annual observation;
    instruments sit in a lag-window year.
    """
    specs = [VariableSpec(design.outcome_name, "outcome", (year, year))]
    specs += [VariableSpec(v, "endogenous", (year, year)) for v in design.endogenous_names]
    specs += [VariableSpec(v, "exogenous", (year, year)) for v in design.exogenous_names]
    specs += [VariableSpec(z, "instrument", (lag_year, lag_year), target=x)
              for x, z in zip(design.endogenous_names, design.instrument_names)]
    rows = []
    blocks = [([design.outcome_name], design.y[:, None], year),
              (design.endogenous_names, design.X, year),
              (design.exogenous_names, design.W, year),
              (design.instrument_names, design.Z, lag_year)]
    for names, values, yr in blocks:
        for j, name in enumerate(names):
            for c, v in zip(design.countries, values[:, j]):
                rows.append((c, yr, name, float(v)))
    frame = pd.DataFrame(rows, columns=["country", "year", "variable", "value"])
    return frame, specs


# --- synthetic democracy panel ---------------------------------------------------------


def roster_path():
    return resources.files("ivbma") / "data" / "democracy_roster.yaml"


def democracy_roster() -> list[VariableSpec]:
    with resources.as_file(roster_path()) as path:
        return load_roster(path)


# (mean, sd, lo, hi) of the 2001-2010 cross-section on the natural scale
_LEVELS = {
    "democracy": (19.1, 11.2, 0.0, 44.3),
    "gdp_pc": (3.69, 0.67, 2.35, 4.94),  # log10 level; data written in dollars
    "urbanization": (57.0, 22.0, 9.5, 100.0),
    "secondary_education": (6.4, 0.95, 4.0, 9.0),
    "primary_education": (5.6, 0.93, 3.0, 8.0),
    "infant_mortality": (28.8, 27.2, 2.4, 107.8),
    "agricultural_employment": (28.8, 24.6, 0.9, 92.0),
    "fdi": (4.5, 4.4, -4.6, 25.8),
    "life_expectancy": (69.4, 9.6, 45.1, 82.2),
    "gini": (38.5, 8.7, 22.7, 64.8),
    "economic_globalization": (56.6, 15.8, 22.8, 97.9),
    "social_globalization": (54.0, 22.0, 11.8, 95.8),
    "natural_resources": (6.1, 7.8, 0.0, 33.0),
    "fuel_exports": (14.4, 23.2, 0.0, 97.4),
    "population": (7.14, 0.66, 5.7, 9.12),  # log10 level
    "youth_population": (32.5, 4.0, 23.8, 42.6),
    "fertility_rate": (2.8, 1.6, 1.18, 7.6),
    "female_labor_force": (57.9, 16.2, 14.1, 87.2),
    "state_fragility": (7.8, 6.1, 0.0, 20.1),
    "arable_land": (16.9, 14.0, 0.33, 61.4),
    "latitude": (0.32, 0.2, 0.01, 0.71),
    "ethnic_fractionalization": (0.43, 0.26, 0.0, 0.93),
    "language_fractionalization": (0.38, 0.29, 0.0, 0.92),
    "religious_fractionalization": (0.44, 0.24, 0.0, 0.86),
    "herfindahl": (0.57, 0.24, 0.18, 0.98),
    "muslim_population": (0.18, 0.3, 0.0, 0.99),
}
_LOGGED = {"gdp_pc", "population"}
_REGIONS = ("north_america", "latin_america", "sub_saharan_africa", "east_asia_pacific",
            "mena", "europe_central_asia", "south_asia")
_REGION_SHARES = (0.02, 0.17, 0.23, 0.12, 0.07, 0.34, 0.05)
_DUMMY_SHARES = {
    "colony_uk": 0.26, "colony_fr": 0.14, "colony_sp": 0.14,
    "language_eng": 0.26, "language_fr": 0.15, "language_sp": 0.15,
    "british_legal": 0.27, "french_legal": 0.42, "socialist_legal": 0.23,
    "military_leader": 0.18,
}


@dataclass
class DemocracyFixture:
    panel: pd.DataFrame
    specs: list[VariableSpec]
    countries: tuple[str, ...]
    oecd: tuple[str, ...]
    incomplete: tuple[str, ...] = field(default_factory=tuple)

    @property
    def non_oecd(self) -> tuple[str, ...]:
        return tuple(c for c in self.countries if c not in set(self.oecd))


def democracy_panel(seed: int = 0, n_complete: int = 111, n_incomplete: int = 3,
                     n_oecd: int = 31) -> DemocracyFixture:
    """Synthetic annual panel (1991-2010) on the full 43-variable roster.

    Levels roughly follow the published summary statistics; lagged series
    are strongly but imperfectly correlated with the 2001-2010 levels.
    ``n_incomplete`` extra countries lose one series entirely and are
    dropped during assembly. Values are synthetic; nothing here reproduces
    real country data.
    """
    rng = np.random.default_rng(seed)
    specs = democracy_roster()
    n = n_complete + n_incomplete
    countries = tuple(f"C{i:03d}" for i in range(n))
    years = np.arange(1991, 2011)
    series = sorted({s.series for s in specs})
    latent = rng.standard_normal(n)  # development factor shared by many series
    region = rng.choice(len(_REGIONS), size=n, p=np.array(_REGION_SHARES) / sum(_REGION_SHARES))
    signs = {"infant_mortality": -1, "agricultural_employment": -1, "fertility_rate": -1,
             "youth_population": -1, "state_fragility": -1, "gini": -1}
    level = {}
    for name in series:
        if name in _LEVELS:
            mean, sd, lo, hi = _LEVELS[name]
            load = 0.8 * signs.get(name, 1) if name not in ("latitude", "arable_land") else 0.3
            z = load * latent + math.sqrt(1 - load**2) * rng.standard_normal(n)
            level[name] = np.clip(mean + sd * z, lo, hi)
    dummies = {r: (region == i).astype(float) for i, r in enumerate(_REGIONS)}
    for name, share in _DUMMY_SHARES.items():
        dummies[name] = (rng.random(n) < share).astype(float)
    # outcome: a few genuine drivers plus noise
    dev = (level["gdp_pc"] - 3.69) / 0.67
    y_level = (19.1 + 6.0 * dev + 0.15 * (level["arable_land"] - 16.9)
               - 0.5 * (level["youth_population"] - 32.5) - 8.0 * level["muslim_population"]
               + 4.0 * rng.standard_normal(n))
    level["democracy"] = np.clip(y_level, 0.0, 44.3)

    rows = []
    time_varying = set(_LEVELS) - {"latitude", "ethnic_fractionalization", "language_fractionalization",
                                   "religious_fractionalization", "herfindahl", "muslim_population"}
    for name in series:
        for i, c in enumerate(countries):
            if name in dummies:
                vals = np.full(len(years), dummies[name][i])
                if name == "military_leader":
                    vals = (rng.random(len(years)) < 0.1 + 0.8 * dummies[name][i]).astype(float)
            else:
                base = level[name][i]
                _, sd, lo, hi = _LEVELS[name]
                if name in time_varying:
                    drift = 0.15 * sd * rng.standard_normal()
                    shock = 0.05 * sd * rng.standard_normal(len(years))
                    vals = base + drift * (years - 2005.5) / 10.0 + shock
                    vals = np.clip(vals, lo, hi)
                else:
                    vals = np.full(len(years), base)
                if name in _LOGGED:
                    vals = 10.0 ** vals
            for yr, v in zip(years, vals):
                if name in time_varying and rng.random() < 0.05:
                    continue  # uneven coverage inside the windows
                rows.append((c, int(yr), name, float(v)))
    frame = pd.DataFrame(rows, columns=["country", "year", "variable", "value"])
    incomplete = countries[n_complete:]
    drop_vars = ("gini", "fdi", "female_labor_force")
    for k, c in enumerate(incomplete):
        var = drop_vars[k % len(drop_vars)]
        frame = frame[~((frame["country"] == c) & (frame["variable"] == var) & (frame["year"] >= 2001))]
    frame = frame.sort_values(["country", "variable", "year"], kind="stable").reset_index(drop=True)
    complete = countries[:n_complete]
    oecd = tuple(sorted(rng.choice(complete, size=n_oecd, replace=False)))
    return DemocracyFixture(frame, specs, countries, oecd, tuple(incomplete))
