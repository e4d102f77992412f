"""Instrumental-variable BMA: MC3-within-Gibbs over both stages.

System (one first-stage equation per endogenous column)::

    y   = a0 + X beta + W gamma + eps
    X_j = a_j + [Z W] delta_j + eta_j,        (eps, eta) ~ N(0, Sigma)

Each Gibbs iteration runs the outcome equation move, then each first-stage
equation move in column order, then redraws Sigma. An equation move

1. conditions its error on the other residuals under Sigma, giving an
   adjusted response with known conditional variance ``omega``;
2. proposes a single-flip neighbour of its mask and accepts it with
   probability min(1, CBF), where the CBF is the ratio of known-variance
   g-prior marginal likelihoods (uniform model prior, symmetric proposal);
3. redraws its slopes and intercept from their conditional posterior.

Sigma is drawn from inverse-Wishart(nu0 + n, S0 + R'R) with R = [eps | eta].

Internally every data column is centered and scaled to unit variance, and each
residual is stored as a coefficient vector over the basis
``[1, y, X, W, Z]``; all moves then run on the basis Gram matrix, so the cost
per iteration does not depend on n. Results are reported on the natural scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .bma import PosteriorSummary
from .config import PriorConfig, SamplerConfig
from .models import InclusionMask, code_to_string
from .pipeline import DesignMatrices

RANK_TOL = 1e-10

OK, SIGMA_NOT_PD, COND_VARIANCE = 0, 1, 2


class StateCorruptionError(RuntimeError):
    pass


# --- small dense linear algebra (numba) -------------------------------------


@njit(cache=True)
def _chol(A, k, L):
    """Lower Cholesky factor of A[:k, :k] into L; False if not positive definite."""
    for i in range(k):
        for j in range(i + 1):
            s = A[i, j]
            for m in range(j):
                s -= L[i, m] * L[j, m]
            if i == j:
                if not s > 0.0:
                    return False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
        for j in range(i + 1, k):
            L[i, j] = 0.0
    return True


@njit(cache=True)
def _tri_inv(L, k, out):
    for i in range(k):
        out[i, i] = 1.0 / L[i, i]
        for j in range(i):
            s = 0.0
            for m in range(j, i):
                s -= L[i, m] * out[m, j]
            out[i, j] = s / L[i, i]
        for j in range(i + 1, k):
            out[i, j] = 0.0


@njit(cache=True)
def _spd_inverse(A, out):
    """Inverse of a symmetric positive-definite matrix; False if not PD."""
    k = A.shape[0]
    L = np.empty((k, k))
    if not _chol(A, k, L):
        return False
    Li = np.empty((k, k))
    _tri_inv(L, k, Li)
    for i in range(k):
        for j in range(i + 1):
            s = 0.0
            for m in range(i, k):
                s += Li[m, i] * Li[m, j]
            out[i, j] = s
            out[j, i] = s
    return True


@njit(cache=True)
def _draw_iw(nu, S, rng, out):
    """Sigma ~ inverse-Wishart(nu, S) by the Bartlett decomposition.

    With S = U U' and A the Bartlett factor (A_ii^2 ~ chi2(nu - i),
    A_ij ~ N(0, 1) below the diagonal), Sigma = (U A^-T)(U A^-T)'.
    """
    m = S.shape[0]
    U = np.empty((m, m))
    if not _chol(S, m, U):
        return False
    A = np.zeros((m, m))
    for i in range(m):
        A[i, i] = math.sqrt(2.0 * rng.standard_gamma(0.5 * (nu - i)))
        for j in range(i):
            A[i, j] = rng.standard_normal()
    Ai = np.empty((m, m))
    _tri_inv(A, m, Ai)
    # B = U Ai'; both factors are lower triangular
    B = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            s = 0.0
            for l in range(min(i, j) + 1):
                s += U[i, l] * Ai[j, l]
            B[i, j] = s
    for i in range(m):
        for j in range(i + 1):
            s = 0.0
            for l in range(m):
                s += B[i, l] * B[j, l]
            out[i, j] = s
            out[j, i] = s
    return True


# --- one equation move -------------------------------------------------------


@njit(cache=True)
def _refresh(e, idx, ksize, Gpool, Ginv, Linv):
    """Recompute Ginv = G_S^-1 and Linv = chol(G_S)^-1 for the current mask."""
    k = ksize[e]
    if k == 0:
        return True
    Gs = np.empty((k, k))
    for a in range(k):
        for b in range(k):
            Gs[a, b] = Gpool[e, idx[e, a], idx[e, b]]
    L = np.empty((k, k))
    if not _chol(Gs, k, L):
        return False
    Li = np.empty((k, k))
    _tri_inv(L, k, Li)
    for a in range(k):
        for b in range(k):
            Linv[e, a, b] = Li[a, b]
    for a in range(k):
        for b in range(a + 1):
            s = 0.0
            for m in range(a, k):
                s += Li[m, a] * Li[m, b]
            Ginv[e, a, b] = s
            Ginv[e, b, a] = s
    return True


@njit(cache=True)
def _adjusted_response(e, P, Rc, resp, t):
    """Basis coefficients of the response of equation e conditioned on the
    other residuals; returns the conditional variance 1 / P[e, e]."""
    d, E = Rc.shape
    for c in range(d):
        t[c] = 0.0
    t[resp[e]] = 1.0
    pee = P[e, e]
    for k in range(E):
        if k != e:
            w = P[e, k] / pee
            for c in range(d):
                t[c] += w * Rc[c, k]
    return 1.0 / pee


@njit(cache=True)
def _log_cbf(e, j, b, incl, idx, ksize, Gpool, Ginv, shrink, lg, omega):
    """Log conditional Bayes factor of flipping column j of equation e."""
    k = ksize[e]
    if incl[e, j]:
        r = -1
        for a in range(k):
            if idx[e, a] == j:
                r = a
        ur = 0.0
        for a in range(k):
            ur += Ginv[e, r, a] * b[idx[e, a]]
        gain = ur * ur / Ginv[e, r, r]
        return 0.5 * lg - shrink * gain / (2.0 * omega)
    gjj = Gpool[e, j, j]
    s = gjj
    proj = b[j]
    for a in range(k):
        av = 0.0
        for c in range(k):
            av += Ginv[e, a, c] * Gpool[e, idx[e, c], j]
        s -= Gpool[e, idx[e, a], j] * av
        proj -= av * b[idx[e, a]]
    if not s > RANK_TOL * gjj:
        return -np.inf
    return -0.5 * lg + shrink * proj * proj / (s * 2.0 * omega)


@njit(cache=True)
def _move(e, forced_j, P, Rc, M, Mpool, Gpool, pools, resp, incl, idx, ksize, Ginv, Linv,
          coef, mu, free, nfree, shrink, lg, n, rng, rb_mean, rb_var):
    """Flip proposal, CBF accept/reject, coefficient redraw for equation e.

    ``forced_j >= 0`` pins the proposed column (used by tests); otherwise it is
    drawn uniformly from the free columns. Returns (accepted, omega).
    """
    d = M.shape[0]
    K = Gpool.shape[1]
    t = np.empty(d)
    omega = _adjusted_response(e, P, Rc, resp, t)
    b = Mpool[e] @ t
    accepted = False
    if forced_j >= 0 or nfree[e] > 0:
        if forced_j >= 0:
            j = forced_j
            u = rng.random()
        else:
            j = free[e, rng.integers(0, nfree[e])]
            u = rng.random()
        lcbf = _log_cbf(e, j, b, incl, idx, ksize, Gpool, Ginv, shrink, lg, omega)
        if math.log(u) < lcbf:
            accepted = True
            incl[e, j] = not incl[e, j]
            k = 0
            for c in range(K):
                if incl[e, c]:
                    idx[e, k] = c
                    k += 1
            ksize[e] = k
            _refresh(e, idx, ksize, Gpool, Ginv, Linv)
    # conditional posterior of slopes and intercept
    k = ksize[e]
    for c in range(K):
        coef[e, c] = 0.0
        rb_mean[c] = 0.0
        rb_var[c] = 0.0
    sd = math.sqrt(shrink * omega)
    z = np.empty(k)
    for a in range(k):
        z[a] = rng.standard_normal()
    for a in range(k):
        m = 0.0
        for c in range(k):
            m += Ginv[e, a, c] * b[idx[e, c]]
        m *= shrink
        noise = 0.0
        for c in range(a, k):
            noise += Linv[e, c, a] * z[c]
        col = idx[e, a]
        coef[e, col] = m + sd * noise
        rb_mean[col] = m
        rb_var[col] = shrink * omega * Ginv[e, a, a]
    mu[e] = t[0] + math.sqrt(omega / n) * rng.standard_normal()
    # residual of equation e as basis coefficients
    for c in range(d):
        Rc[c, e] = 0.0
    Rc[resp[e], e] = 1.0
    Rc[0, e] = -mu[e]
    for a in range(k):
        col = idx[e, a]
        Rc[pools[e, col], e] -= coef[e, col]
    return accepted, omega


@njit(cache=True)
def _residual_cross(Rc, M, S0, out):
    MR = M @ Rc
    E = Rc.shape[1]
    for a in range(E):
        for c in range(E):
            s = 0.0
            for r in range(Rc.shape[0]):
                s += Rc[r, a] * MR[r, c]
            out[a, c] = S0[a, c] + s
    for a in range(E):
        for c in range(a):
            v = 0.5 * (out[a, c] + out[c, a])
            out[a, c] = v
            out[c, a] = v


@njit(cache=True)
def _run(n_iter, burn_in, thin, fix_sigma, update_first, nu0, S0, Sigma, P, Rc, M, Mpool,
         Gpool, pools, resp, incl, idx, ksize, Ginv, Linv, coef, mu, free, nfree, shrink, lg,
         n, rng, scale, resp_sd, pip_acc, mean_acc, sq_acc, sigma_acc, draws, first_draws,
         sigma_draws, codes, track_codes, accept_count):
    E, K = incl.shape
    rb_mean = np.empty(K)
    rb_var = np.empty(K)
    S = np.empty((E, E))
    for it in range(n_iter):
        keep = it >= burn_in
        for e in range(E):
            if e > 0 and not update_first:
                continue
            acc, omega = _move(e, -1, P, Rc, M, Mpool, Gpool, pools, resp, incl, idx, ksize,
                               Ginv, Linv, coef, mu, free, nfree, shrink, lg, n, rng,
                               rb_mean, rb_var)
            if not omega > 0.0:
                return COND_VARIANCE, it
            if acc:
                accept_count[e] += 1
            if keep:
                for c in range(K):
                    f = scale[e, c]
                    if incl[e, c]:
                        pip_acc[e, c] += 1.0
                    mean_acc[e, c] += rb_mean[c] * f
                    sq_acc[e, c] += (rb_var[c] + rb_mean[c] * rb_mean[c]) * f * f
        if not fix_sigma:
            _residual_cross(Rc, M, S0, S)
            if not _draw_iw(nu0 + n, S, rng, Sigma):
                return SIGMA_NOT_PD, it
            if not _spd_inverse(Sigma, P):
                return SIGMA_NOT_PD, it
        if keep:
            pos = it - burn_in
            # lower triangle mirrored so stored draws are exactly symmetric
            for a in range(E):
                for c in range(a + 1):
                    v = Sigma[a, c] * (resp_sd[a] * resp_sd[c])
                    sigma_acc[a, c] += v
                    if c < a:
                        sigma_acc[c, a] += v
            if track_codes:
                code = 0
                for c in range(K):
                    code = code * 2 + (1 if incl[0, c] else 0)
                codes[pos] = code
            if (pos + 1) % thin == 0:
                r = (pos + 1) // thin - 1
                for c in range(K):
                    draws[r, c] = coef[0, c] * scale[0, c]
                for e in range(1, E):
                    for c in range(K):
                        first_draws[r, e - 1, c] = coef[e, c] * scale[e, c]
                for a in range(E):
                    for c in range(a + 1):
                        v = Sigma[a, c] * (resp_sd[a] * resp_sd[c])
                        sigma_draws[r, a, c] = v
                        sigma_draws[r, c, a] = v
    return OK, n_iter


# --- Python-level system and state ------------------------------------------


class IvSystem:
    """Standardized basis, Gram matrix and column pools for one design."""

    def __init__(self, design: DesignMatrices, prior: PriorConfig = PriorConfig(),
                 forced_in=(), forced_out=()):
        if design.p < 1:
            raise ValueError("IVBMA needs at least one endogenous variable (p >= 1)")
        self.design = design
        self.prior = prior
        n, p, q = design.n, design.p, design.q
        self.n, self.p, self.q = n, p, q
        self.E = p + 1
        self.K = p + q
        raw = np.column_stack([design.y, design.X, design.W, design.Z])
        self.center = raw.mean(axis=0)
        sd = raw.std(axis=0)
        self.sd = np.where(sd > 0, sd, 1.0)
        F = np.column_stack([np.ones(n), (raw - self.center) / self.sd])
        self.F = F
        self.d = F.shape[1]
        self.M = F.T @ F
        # basis indices: 0 ones, 1 y, 2.. X, then W, then Z
        x_idx = np.arange(2, 2 + p)
        w_idx = np.arange(2 + p, 2 + p + q)
        z_idx = np.arange(2 + p + q, 2 + 2 * p + q)
        pools = [np.concatenate([x_idx, w_idx])]
        pools += [np.concatenate([z_idx, w_idx]) for _ in range(p)]
        self.pools = np.array(pools, dtype=np.int64)
        self.resp = np.arange(1, 2 + p, dtype=np.int64)
        self.Mpool = np.ascontiguousarray(np.stack([self.M[pl, :] for pl in self.pools]))
        self.Gpool = np.ascontiguousarray(np.stack([self.M[np.ix_(pl, pl)] for pl in self.pools]))
        self.g = prior.resolve(n)
        self.shrink = self.g / (1.0 + self.g)
        self.lg = math.log1p(self.g)
        # natural-scale factor of each pool slope: sd(response) / sd(column)
        basis_sd = np.concatenate([[1.0], self.sd])
        self.resp_sd = basis_sd[self.resp]
        self.scale = self.resp_sd[:, None] / basis_sd[self.pools]
        self.outcome_names = design.regressor_names
        self.first_names = design.first_stage_names
        forced_in = {self._outcome_index(v) for v in forced_in}
        forced_out = {self._outcome_index(v) for v in forced_out}
        if forced_in & forced_out:
            raise ValueError("a column cannot be both forced in and forced out")
        self.forced_in, self.forced_out = forced_in, forced_out
        free = np.zeros((self.E, self.K), dtype=np.int64)
        nfree = np.zeros(self.E, dtype=np.int64)
        for e in range(self.E):
            cols = [c for c in range(self.K) if e > 0 or (c not in forced_in and c not in forced_out)]
            free[e, : len(cols)] = cols
            nfree[e] = len(cols)
        self.free, self.nfree = free, nfree

    def _outcome_index(self, v) -> int:
        if isinstance(v, str):
            return self.design.regressor_names.index(v)
        return int(v)

    def to_internal(self, sigma: np.ndarray) -> np.ndarray:
        return sigma / np.outer(self.resp_sd, self.resp_sd)

    def to_natural(self, sigma: np.ndarray) -> np.ndarray:
        return sigma * np.outer(self.resp_sd, self.resp_sd)


@dataclass
class GibbsState:
    """Full sampler state in the system's internal (standardized) coordinates.

    Row 0 of the per-equation arrays is the outcome equation, row j the
    first-stage equation of endogenous column j - 1. Natural-scale views are
    exposed as properties.
    """

    system: IvSystem
    incl: np.ndarray
    idx: np.ndarray
    ksize: np.ndarray
    Ginv: np.ndarray
    Linv: np.ndarray
    coef: np.ndarray
    mu: np.ndarray
    Rc: np.ndarray
    sigma_internal: np.ndarray
    precision: np.ndarray

    def copy(self) -> GibbsState:
        return replace(self, **{
            f: getattr(self, f).copy()
            for f in ("incl", "idx", "ksize", "Ginv", "Linv", "coef", "mu", "Rc",
                      "sigma_internal", "precision")
        })

    @property
    def outcome_mask(self) -> InclusionMask:
        return InclusionMask(tuple(bool(b) for b in self.incl[0]))

    @property
    def first_stage_masks(self) -> list[InclusionMask]:
        return [InclusionMask(tuple(bool(b) for b in row)) for row in self.incl[1:]]

    def _natural_coefficients(self, e: int) -> tuple[float, np.ndarray]:
        s = self.system
        slopes = self.coef[e] * s.scale[e]
        basis_center = np.concatenate([[0.0], s.center])
        # mu is the intercept on centered, scaled columns
        intercept = s.resp_sd[e] * self.mu[e] + basis_center[s.resp[e]]
        intercept -= float(slopes @ basis_center[s.pools[e]])
        return intercept, slopes

    @property
    def outcome_coefficients(self) -> tuple[float, np.ndarray]:
        """(intercept, slopes over [X W]) on the natural scale."""
        return self._natural_coefficients(0)

    @property
    def first_stage_coefficients(self) -> list[tuple[float, np.ndarray]]:
        return [self._natural_coefficients(e) for e in range(1, self.system.E)]

    @property
    def sigma(self) -> np.ndarray:
        return self.system.to_natural(self.sigma_internal)

    @property
    def residuals(self) -> tuple[np.ndarray, np.ndarray]:
        """(eps, eta) on the natural scale."""
        s = self.system
        R = (s.F @ self.Rc) * s.resp_sd
        return R[:, 0], R[:, 1:]


def _fresh_state(system: IvSystem) -> GibbsState:
    E, K, d = system.E, system.K, system.d
    z = np.zeros
    return GibbsState(
        system=system,
        incl=z((E, K), dtype=np.bool_),
        idx=z((E, K), dtype=np.int64),
        ksize=z(E, dtype=np.int64),
        Ginv=z((E, K, K)),
        Linv=z((E, K, K)),
        coef=z((E, K)),
        mu=z(E),
        Rc=z((d, E)),
        sigma_internal=np.eye(E),
        precision=np.eye(E),
    )


def _set_mask(state: GibbsState, e: int, cols) -> None:
    s = state.system
    state.incl[e] = False
    for c in cols:
        state.incl[e, c] = True
    on = np.flatnonzero(state.incl[e])
    state.idx[e, : len(on)] = on
    state.ksize[e] = len(on)
    if not _refresh(e, state.idx, state.ksize, s.Gpool, state.Ginv, state.Linv):
        raise np.linalg.LinAlgError(f"initial mask of equation {e} is rank deficient")


def _set_point_estimates(state: GibbsState) -> None:
    """Coefficients at the conditional posterior mean ignoring error correlation."""
    s = state.system
    for e in range(s.E):
        k = state.ksize[e]
        idx = state.idx[e, :k]
        b = s.Mpool[e][:, s.resp[e]]
        m = s.shrink * state.Ginv[e, :k, :k] @ b[idx]
        state.coef[e] = 0.0
        state.coef[e, idx] = m
        state.mu[e] = 0.0
        state.Rc[:, e] = 0.0
        state.Rc[s.resp[e], e] = 1.0
        state.Rc[s.pools[e, idx], e] -= m


def init_state(design: DesignMatrices | IvSystem, prior: PriorConfig = PriorConfig(),
               sigma: np.ndarray | None = None, nu0: float | None = None) -> GibbsState:
    """Starting state: empty outcome model (plus forced-in columns), each
    first-stage equation holding its own instrument; Sigma at the
    inverse-Wishart posterior mean given those fits unless supplied."""
    system = design if isinstance(design, IvSystem) else IvSystem(design, prior)
    state = _fresh_state(system)
    _set_mask(state, 0, sorted(system.forced_in))
    for j in range(system.p):
        try:
            _set_mask(state, j + 1, [j])
        except np.linalg.LinAlgError:
            _set_mask(state, j + 1, [])
    _set_point_estimates(state)
    if sigma is None:
        E = system.E
        nu0 = default_nu0(system.p) if nu0 is None else nu0
        S = np.eye(E) + state.Rc.T @ system.M @ state.Rc
        sig = S / (nu0 + system.n - E - 1)
    else:
        sig = system.to_internal(np.asarray(sigma, dtype=float))
    set_sigma(state, sig, internal=True)
    return state


def set_sigma(state: GibbsState, sigma: np.ndarray, internal: bool = False) -> None:
    sig = np.asarray(sigma, dtype=float)
    if not internal:
        sig = state.system.to_internal(sig)
    check_sigma(sig)
    state.sigma_internal = np.ascontiguousarray(sig)
    state.precision = np.linalg.inv(sig)


def default_nu0(p: int) -> float:
    return p + 3.0


def check_sigma(sigma: np.ndarray, tol: float = 1e-10) -> None:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise StateCorruptionError("Sigma must be square")
    scale = max(float(np.max(np.abs(sigma))), 1.0)
    if np.max(np.abs(sigma - sigma.T)) > tol * scale:
        raise StateCorruptionError("Sigma is not symmetric")
    if not np.all(np.linalg.eigvalsh(sigma) > 0):
        raise StateCorruptionError("Sigma is not positive definite")


def conditional_weights(sigma: np.ndarray, e: int = 0) -> tuple[np.ndarray, float]:
    """Regression weights of error e on the other errors, and its conditional variance."""
    sigma = np.asarray(sigma, dtype=float)
    check_sigma(sigma)
    rest = [k for k in range(sigma.shape[0]) if k != e]
    s_rr = sigma[np.ix_(rest, rest)]
    s_re = sigma[rest, e]
    w = np.linalg.solve(s_rr, s_re) if rest else np.zeros(0)
    var = float(sigma[e, e] - s_re @ w)
    if not var > 0:
        raise StateCorruptionError("conditional variance is not positive")
    return w, var


def condition_outcome(y, eta, sigma) -> tuple[np.ndarray, float]:
    """Outcome adjusted for the first-stage errors: y - eta Sigma22^-1 Sigma21."""
    eta = np.asarray(eta, dtype=float)
    y = np.asarray(y, dtype=float)
    if eta.ndim == 1:
        eta = eta[:, None]
    w, var = conditional_weights(sigma, 0)
    return y - eta @ w, var


def _step(state: GibbsState, e: int, rng: np.random.Generator, forced_j: int = -1):
    s = state.system
    new = state.copy()
    rb_mean = np.zeros(s.K)
    rb_var = np.zeros(s.K)
    accepted, omega = _move(e, forced_j, new.precision, new.Rc, s.M, s.Mpool, s.Gpool, s.pools,
                            s.resp, new.incl, new.idx, new.ksize, new.Ginv, new.Linv, new.coef,
                            new.mu, s.free, s.nfree, s.shrink, s.lg, float(s.n), rng,
                            rb_mean, rb_var)
    if not omega > 0:
        raise StateCorruptionError("conditional variance is not positive")
    return new, bool(accepted)


def cbf_move_outcome(state: GibbsState, rng: np.random.Generator) -> GibbsState:
    """One MC3 move plus coefficient redraw for the outcome equation."""
    return _step(state, 0, rng)[0]


def cbf_move_first_stage(state: GibbsState, j: int, rng: np.random.Generator) -> GibbsState:
    """Same as :func:`cbf_move_outcome` for first-stage equation ``j`` (0-based)."""
    if not 0 <= j < state.system.p:
        raise IndexError(f"endogenous index {j} out of range 0..{state.system.p - 1}")
    return _step(state, j + 1, rng)[0]


def propose_at(state: GibbsState, equation: int, column: int, rng: np.random.Generator):
    """Move with the flipped column fixed; returns (new state, accepted)."""
    return _step(state, equation, rng, forced_j=column)


def proposal_log_cbf(state: GibbsState, equation: int, column: int) -> float:
    """Log CBF of flipping ``column`` in ``equation`` (0 = outcome)."""
    s = state.system
    t = np.empty(s.d)
    omega = _adjusted_response(equation, state.precision, state.Rc, s.resp, t)
    b = s.Mpool[equation] @ t
    return float(_log_cbf(equation, column, b, state.incl, state.idx, state.ksize, s.Gpool,
                          state.Ginv, s.shrink, s.lg, omega))


def draw_sigma(residuals, nu0: float, S0, rng: np.random.Generator) -> np.ndarray:
    """Sigma ~ inverse-Wishart(nu0 + n, S0 + R'R) for an n x (p+1) residual matrix."""
    R = np.asarray(residuals, dtype=float)
    S0 = np.atleast_2d(np.asarray(S0, dtype=float))
    m = S0.shape[0]
    R = R.reshape(-1, m)
    S = S0 + R.T @ R
    S = 0.5 * (S + S.T)
    out = np.empty((m, m))
    if not _draw_iw(float(nu0 + R.shape[0]), np.ascontiguousarray(S), rng, out):
        raise StateCorruptionError("inverse-Wishart scale is not positive definite")
    return out


# --- full sampler --------------------------------------------------------------


@dataclass
class IvbmaDraws:
    second_stage: np.ndarray  # (R, p+q) over [X W]
    first_stage: np.ndarray  # (R, p, p+q) over [Z W]
    sigma: np.ndarray  # (R, p+1, p+1)
    iterations: np.ndarray  # iteration number of each retained draw
    chain: int = 0

    def __len__(self) -> int:
        return len(self.iterations)


@dataclass
class IvbmaResult:
    second_stage: PosteriorSummary
    first_stage: list[PosteriorSummary]
    draws: IvbmaDraws
    sigma_summary: np.ndarray
    acceptance: np.ndarray
    thinning: int
    config: SamplerConfig
    endogenous_names: tuple[str, ...] = ()
    outcome_codes: np.ndarray | None = field(default=None, repr=False)


def _summaries(system, config, pip_acc, mean_acc, sq_acc, codes, track, top=10):
    kept = config.iterations - config.burn_in
    out = []
    for e in range(system.E):
        pip = pip_acc[e] / kept
        mean = mean_acc[e] / kept
        var = np.maximum(sq_acc[e] / kept - mean**2, 0.0)
        names = system.outcome_names if e == 0 else system.first_names
        top_models, n_models = [], 0
        if e == 0 and track:
            uniq, counts = np.unique(codes, return_counts=True)
            n_models = len(uniq)
            order = np.argsort(-counts, kind="stable")[:top]
            top_models = [(code_to_string(int(uniq[i]), system.K), counts[i] / kept) for i in order]
        out.append(PosteriorSummary(
            names=tuple(names), pip=pip, post_mean=mean, post_sd=np.sqrt(var),
            n_models=n_models, top_models=top_models, n_obs=system.n,
            method="ivbma" if e == 0 else f"ivbma-first-stage:{system.design.endogenous_names[e - 1]}",
        ))
    return out


def run_ivbma(
    design: DesignMatrices,
    prior: PriorConfig | None = None,
    config: SamplerConfig = SamplerConfig(),
    *,
    sigma: np.ndarray | None = None,
    fix_sigma: bool = False,
    update_first_stage: bool = True,
    forced_in=(),
    forced_out=(),
    nu0: float | None = None,
    chain: int = 0,
) -> IvbmaResult:
    """MC3-within-Gibbs over the outcome and first-stage model spaces.

    ``sigma`` sets the starting Sigma (natural scale); with ``fix_sigma`` it
    is held fixed. ``update_first_stage=False`` freezes the first-stage masks
    and coefficients at their starting values.
    """
    prior = prior if prior is not None else config.prior
    system = IvSystem(design, prior, forced_in=forced_in, forced_out=forced_out)
    if fix_sigma and sigma is None:
        raise ValueError("fix_sigma requires sigma")
    nu0 = default_nu0(system.p) if nu0 is None else float(nu0)
    state = init_state(system, prior, sigma=sigma, nu0=nu0)
    rng = np.random.default_rng(config.seed)

    E, K = system.E, system.K
    thin = config.effective_thinning
    R = config.retained
    kept = config.iterations - config.burn_in
    track = K <= 62
    pip_acc = np.zeros((E, K))
    mean_acc = np.zeros((E, K))
    sq_acc = np.zeros((E, K))
    sigma_acc = np.zeros((E, E))
    draws = np.zeros((R, K))
    first_draws = np.zeros((R, system.p, K))
    sigma_draws = np.zeros((R, E, E))
    codes = np.zeros(kept if track else 0, dtype=np.int64)
    accept = np.zeros(E, dtype=np.int64)

    status, it = _run(
        config.iterations, config.burn_in, thin, fix_sigma, update_first_stage, nu0, np.eye(E),
        state.sigma_internal, state.precision, state.Rc, system.M, system.Mpool, system.Gpool,
        system.pools, system.resp, state.incl, state.idx, state.ksize, state.Ginv, state.Linv,
        state.coef, state.mu, system.free, system.nfree, system.shrink, system.lg,
        float(system.n), rng, system.scale, system.resp_sd, pip_acc, mean_acc, sq_acc,
        sigma_acc, draws, first_draws, sigma_draws, codes, track, accept,
    )
    if status == SIGMA_NOT_PD:
        raise StateCorruptionError(f"iteration {it}: Sigma draw is not positive definite")
    if status == COND_VARIANCE:
        raise StateCorruptionError(f"iteration {it}: conditional variance is not positive")

    summaries = _summaries(system, config, pip_acc, mean_acc, sq_acc, codes, track)
    iters = config.burn_in + thin * np.arange(1, R + 1) - 1
    moves = np.full(E, config.iterations, dtype=float)
    if not update_first_stage:
        moves[1:] = np.inf
    return IvbmaResult(
        second_stage=summaries[0],
        first_stage=summaries[1:],
        draws=IvbmaDraws(draws, first_draws, sigma_draws, iters, chain),
        sigma_summary=sigma_acc / kept,
        acceptance=accept / moves,
        thinning=thin,
        config=config,
        endogenous_names=design.endogenous_names,
        outcome_codes=codes if track else None,
    )
