"""Mixture approximation of posterior draws, ELIR effective sample size and EHSS."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import betaln, digamma, logsumexp, zeta

from .data import Endpoint
from .errors import AllDrawsExcluded, ConvergenceWarning, EmFailure, MissingSigmaRef, NegativeCurvature

EM_MAX_ITER = 500
EM_TOL = 1e-8
MIN_DRAWS = 1000
# Components lighter than this are dropped: on finite draws the beta/normal
# mixture likelihood is unbounded near spikes sitting on clumps of draws.
MIN_WEIGHT = 2e-3
# Likewise components narrower than this fraction of the overall SD.
MIN_SD_FRACTION = 0.05


@dataclass
class MixtureApprox:
    """Finite beta or normal mixture.

    ``params`` rows are (a, b) for beta components and (mean, variance) for
    normal components.
    """

    family: str
    weights: np.ndarray
    params: np.ndarray
    fit_loglik: float = float("nan")
    em_traces: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.params = np.atleast_2d(np.asarray(self.params, dtype=float))
        if self.family not in ("beta", "normal"):
            raise ValueError(f"unknown mixture family {self.family!r}")
        if self.params.shape != (self.weights.size, 2):
            raise ValueError("params must have one (p1, p2) row per weight")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(self.params[:, 1] <= 0) or (self.family == "beta" and np.any(self.params[:, 0] <= 0)):
            raise ValueError(f"invalid {self.family} component parameters")

    @property
    def components(self) -> list[tuple[float, tuple[float, float]]]:
        return [(float(w), (float(p[0]), float(p[1]))) for w, p in zip(self.weights, self.params)]

    @property
    def k(self) -> int:
        return self.weights.size

    def component_logpdf(self, x: np.ndarray) -> np.ndarray:
        """(n, k) matrix of log w_j + log f_j(x)."""
        x = np.asarray(x, dtype=float)[:, None]
        p1, p2 = self.params[:, 0], self.params[:, 1]
        if self.family == "beta":
            lp = (p1 - 1) * np.log(x) + (p2 - 1) * np.log1p(-x) - betaln(p1, p2)
        else:
            lp = -0.5 * (np.log(2 * np.pi * p2) + (x - p1) ** 2 / p2)
        return lp + np.log(self.weights)

    def logpdf(self, x) -> np.ndarray:
        return logsumexp(self.component_logpdf(np.atleast_1d(x)), axis=1)

    def mean(self) -> float:
        if self.family == "beta":
            m = self.params[:, 0] / self.params.sum(axis=1)
        else:
            m = self.params[:, 0]
        return float(self.weights @ m)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(self.k, size=size, p=self.weights)
        p1, p2 = self.params[comp, 0], self.params[comp, 1]
        if self.family == "beta":
            return rng.beta(p1, p2)
        return rng.normal(p1, np.sqrt(p2))


# ---------------------------------------------------------------------------
# EM


def _beta_mle(s1: float, s2: float, a: float, b: float) -> tuple[float, float]:
    """Maximise (a-1) s1 + (b-1) s2 - log B(a, b) by damped Newton from (a, b).

    The objective is concave in (a, b), so the maximiser is unique and every
    accepted step increases it.
    """

    def obj(a, b):
        return (a - 1) * s1 + (b - 1) * s2 - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))

    cur = obj(a, b)
    for _ in range(100):
        psi = digamma(np.array([a, b, a + b]))
        tri = zeta(2.0, np.array([a, b, a + b]))
        g1 = s1 - psi[0] + psi[2]
        g2 = s2 - psi[1] + psi[2]
        h11, h22, h12 = tri[2] - tri[0], tri[2] - tri[1], tri[2]
        det = h11 * h22 - h12 * h12
        if not det > 0:
            break
        d1 = -(h22 * g1 - h12 * g2) / det
        d2 = -(h11 * g2 - h12 * g1) / det
        t = 1.0
        while True:
            na, nb = a + t * d1, b + t * d2
            if na > 0 and nb > 0:
                new = obj(na, nb)
                if new >= cur:
                    break
            t *= 0.5
            if t < 1e-12:
                return a, b
        a, b = na, nb
        if new - cur <= 1e-14 * max(1.0, abs(cur)):
            break
        cur = new
    return a, b


def _moments_to_beta(m: float, v: float) -> tuple[float, float]:
    m = min(max(m, 1e-6), 1 - 1e-6)
    v = min(max(v, 1e-12), m * (1 - m) * 0.999)
    s = m * (1 - m) / v - 1
    return max(m * s, 1e-3), max((1 - m) * s, 1e-3)


def _initial_params(x: np.ndarray, family: str, k: int, rng: Optional[np.random.Generator]):
    """Hard-partition start: deterministic quantile bins, or random centres."""
    n = x.size
    if rng is None:
        order = np.argsort(x, kind="stable")
        labels = np.empty(n, dtype=int)
        labels[order] = np.minimum(np.arange(n) * k // n, k - 1)
    else:
        centres = np.sort(rng.choice(x, size=k, replace=False))
        labels = np.abs(x[:, None] - centres[None, :]).argmin(axis=1)
    weights = np.empty(k)
    params = np.empty((k, 2))
    overall_var = x.var()
    for j in range(k):
        xj = x[labels == j]
        if xj.size < 2:
            xj = x
        weights[j] = max(xj.size / n, 1e-3)
        m, v = xj.mean(), max(xj.var(), 4 * MIN_SD_FRACTION**2 * overall_var)
        params[j] = _moments_to_beta(m, v) if family == "beta" else (m, v)
    return weights / weights.sum(), params


def _features(x: np.ndarray, family: str) -> np.ndarray:
    """(3, n) sufficient statistics; component log densities are linear in them."""
    if family == "beta":
        return np.vstack([np.log(x), np.log1p(-x), np.ones_like(x)])
    return np.vstack([x * x, x, np.ones_like(x)])


def _coefficients(family: str, params: np.ndarray) -> np.ndarray:
    p1, p2 = params[:, 0], params[:, 1]
    if family == "beta":
        return np.column_stack([p1 - 1, p2 - 1, -betaln(p1, p2)])
    return np.column_stack([-0.5 / p2, p1 / p2, -0.5 * (p1 * p1 / p2 + np.log(2 * np.pi * p2))])


def _component_var(family: str, params: np.ndarray) -> np.ndarray:
    if family == "beta":
        a, b = params[:, 0], params[:, 1]
        s = a + b
        return a * b / (s * s * (s + 1.0))
    return params[:, 1]


class _Prune(Exception):
    """A component's weight fell below MIN_WEIGHT; EM restarts without it."""

    def __init__(self, keep, weights, params):
        super().__init__()
        self.keep = keep
        self.weights = weights
        self.params = params


class _EmMap:
    """One EM update on packed parameters, returning the log-likelihood at the input.

    Packed vector: log weights (unnormalised), then per component either
    (log a, log b) or (mean, log variance).
    """

    def __init__(self, feats: np.ndarray, family: str, k: int, var_floor: float):
        self.feats = feats
        self.family = family
        self.k = k
        self.var_floor = var_floor
        self.n = feats.shape[1]
        self.evaluations = 0

    def pack(self, weights, params) -> np.ndarray:
        p = params.copy()
        if self.family == "beta":
            p = np.log(p)
        else:
            p[:, 1] = np.log(p[:, 1])
        return np.concatenate([np.log(weights), p.ravel()])

    def unpack(self, theta):
        k = self.k
        lw = theta[:k] - theta[:k].max()
        w = np.exp(lw)
        w /= w.sum()
        p = theta[k:].reshape(k, 2).copy()
        if self.family == "beta":
            p = np.exp(p)
        else:
            p[:, 1] = np.exp(p[:, 1])
        return w, p

    def __call__(self, theta):
        self.evaluations += 1
        weights, params = self.unpack(theta)
        if not (np.all(np.isfinite(params)) and np.all(weights > 0)):
            return None, -np.inf
        lp = _coefficients(self.family, params) @ self.feats  # (k, n)
        lp += np.log(weights)[:, None]
        top = lp[0].copy()
        for j in range(1, self.k):
            np.maximum(top, lp[j], out=top)
        lp -= top
        np.exp(lp, out=lp)
        total = lp[0].copy()
        for j in range(1, self.k):
            total += lp[j]
        ll = float(top.sum() + np.log(total).sum())
        if not np.isfinite(ll):
            return None, -np.inf
        lp /= total
        stats = lp @ self.feats.T  # (k, 3): sum r*f1, sum r*f2, sum r
        nk = stats[:, 2]
        keep = (nk >= MIN_WEIGHT * self.n) & (_component_var(self.family, params) >= self.var_floor)
        if not keep.all():
            raise _Prune(keep, weights, params)
        new_params = np.empty_like(params)
        for j in range(self.k):
            if self.family == "beta":
                new_params[j] = _beta_mle(stats[j, 0] / nk[j], stats[j, 1] / nk[j], *params[j])
            else:
                m = stats[j, 1] / nk[j]
                v = stats[j, 0] / nk[j] - m * m
                new_params[j] = (m, max(v, 1e-300))
        return self.pack(nk / self.n, new_params), ll


def _em_run(em: _EmMap, theta0: np.ndarray):
    """EM accelerated by SQUAREM extrapolation with a monotone safeguard.

    Every accepted point is the image of an EM map, so the recorded
    log-likelihood sequence never decreases. Returns (theta, trace, converged).
    """
    trace: list[float] = []
    try:
        return _squarem(em, theta0, trace)
    except _Prune as prune:
        prune.trace = trace
        raise


def _squarem(em: _EmMap, theta0: np.ndarray, trace: list[float]):
    theta = theta0
    prev = -np.inf
    while em.evaluations < EM_MAX_ITER:
        theta1, ll0 = em(theta)
        if theta1 is None:
            return theta, np.asarray(trace), False
        trace.append(ll0)
        if ll0 - prev <= EM_TOL * max(abs(ll0), em.n):
            return theta, np.asarray(trace), True
        prev = ll0
        theta2, ll1 = em(theta1)
        if theta2 is None:
            return theta1, np.asarray(trace), False
        r = theta1 - theta
        v = theta2 - 2 * theta1 + theta
        vn = np.linalg.norm(v)
        if vn == 0.0:
            theta = theta2
            continue
        alpha = min(-np.linalg.norm(r) / vn, -1.0)
        while True:
            cand = theta - 2 * alpha * r + alpha * alpha * v
            if alpha == -1.0:
                theta = theta2
                break
            try:
                new, ll_cand = em(cand)
            except _Prune:
                new = None
            if new is not None and ll_cand >= ll1:
                theta = new
                break
            alpha = (alpha - 1.0) / 2.0
            if alpha > -1.01:
                alpha = -1.0
    return theta, np.asarray(trace), False


def _fit_one(feats, family, weights, params, var_floor, traces):
    """One restart: EM, dropping vanishing components and continuing on the rest.

    Each uninterrupted EM segment's log-likelihood trace is appended to
    ``traces``; the evaluation budget is shared across segments.
    """
    used = 0
    while True:
        em = _EmMap(feats, family, weights.size, var_floor)
        em.evaluations = used
        try:
            theta, trace, converged = _em_run(em, em.pack(weights, params))
        except _Prune as prune:
            if prune.trace:
                traces.append(np.asarray(prune.trace))
            used = em.evaluations
            if used >= EM_MAX_ITER or not prune.keep.any():
                return weights, params, False
            weights = prune.weights[prune.keep] / prune.weights[prune.keep].sum()
            params = prune.params[prune.keep]
            continue
        if trace.size:
            traces.append(trace)
        w, p = em.unpack(theta)
        return w, p, converged


def fit_mixture_em(draws: Sequence[float], family: str, k: int = 3, restarts: int = 20,
                   seed: int = 0) -> MixtureApprox:
    """Fit a ``k``-component beta or normal mixture to draws by EM.

    Restart 0 starts from a quantile partition of the draws; the others from
    random centres. The best converged restart wins, ties going to the lower
    restart index.
    """
    x = np.asarray(draws, dtype=float).ravel()
    if family not in ("beta", "normal"):
        raise ValueError(f"unknown mixture family {family!r}")
    if x.size < MIN_DRAWS:
        raise EmFailure(f"need at least {MIN_DRAWS} draws for mixture fitting, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise EmFailure("draws contain non-finite values")
    if family == "beta" and (x.min() <= 0.0 or x.max() >= 1.0):
        raise EmFailure("beta mixture draws must lie strictly inside (0, 1)")
    if x.var() <= 0.0 or np.unique(x).size < 2:
        raise EmFailure("draws have zero variance (degenerate); cannot fit a mixture")
    k = min(k, np.unique(x).size)

    centre = float(x.mean()) if family == "normal" else 0.0
    feats = _features(x - centre, family)
    var_floor = (MIN_SD_FRACTION**2) * x.var()
    rng = np.random.default_rng(seed)
    best = None
    traces: list[np.ndarray] = []
    # A redundant component leaves EM crawling along a flat ridge; when no
    # restart converges at order k, the next lower order is tried.
    for order in range(k, 0, -1):
        for r in range(max(1, restarts)):
            w0, p0 = _initial_params(x, family, order, None if r == 0 else rng)
            w, p, converged = _fit_one(feats, family, w0, p0, var_floor, traces)
            if not converged:
                continue
            ll = float(traces[-1][-1])
            if best is None or ll > best[2]:
                best = (w, p, ll)
        if best is not None:
            if order < k:
                warnings.warn(f"no EM restart converged with {k} components; using {order}",
                              ConvergenceWarning, stacklevel=2)
            break
    if best is None:
        raise EmFailure(f"no EM restart converged within {EM_MAX_ITER} iterations")
    w, p, ll = best
    if family == "normal":
        p = p.copy()
        p[:, 0] += centre
    return MixtureApprox(family, w / w.sum(), p, ll, traces)


# ---------------------------------------------------------------------------
# ELIR


@dataclass(frozen=True)
class EssResult:
    ess_post: float
    ehss: float
    n_cc: int
    sigma_ref: Optional[float] = None
    n_draws_used: int = 0
    n_excluded: int = 0
    n_negative: int = 0

    @property
    def negative(self) -> bool:
        return self.ehss < 0


def information_ratio(approx: MixtureApprox, theta: np.ndarray, endpoint: Endpoint | str,
                      sigma_ref: Optional[float] = None) -> np.ndarray:
    """Per-draw ratio of mixture curvature to unit Fisher information.

    Binary mixtures are differentiated on the log-odds scale, where the unit
    information of a Bernoulli observation is p(1 - p) and a single
    Beta(a, b) component gives exactly a + b at every point.
    """
    endpoint = Endpoint(endpoint)
    theta = np.asarray(theta, dtype=float)
    resp = approx.component_logpdf(theta)
    resp = np.exp(resp - logsumexp(resp, axis=1, keepdims=True))
    p1, p2 = approx.params[:, 0], approx.params[:, 1]
    if endpoint is Endpoint.BINARY:
        if approx.family != "beta":
            raise ValueError("binary ELIR needs a beta mixture")
        t = theta[:, None]
        score = p1 - (p1 + p2) * t
        mean_score = (resp * score).sum(axis=1)
        var_score = (resp * score ** 2).sum(axis=1) - mean_score ** 2
        unit = theta * (1.0 - theta)
        return (resp * (p1 + p2)).sum(axis=1) - var_score / unit
    if approx.family != "normal":
        raise ValueError("continuous ELIR needs a normal mixture")
    if sigma_ref is None or not sigma_ref > 0:
        raise MissingSigmaRef("sigma_ref must be given and positive for a continuous endpoint")
    score = -(theta[:, None] - p1) / p2
    mean_score = (resp * score).sum(axis=1)
    var_score = (resp * score ** 2).sum(axis=1) - mean_score ** 2
    curvature = (resp / p2).sum(axis=1) - var_score
    return curvature * sigma_ref ** 2


def elir_ess(approx: MixtureApprox, draws: Sequence[float], endpoint: Endpoint | str,
             sigma_ref: Optional[float] = None, return_counts: bool = False):
    """Expected local-information-ratio ESS of the distribution behind ``draws``.

    The ratio is averaged over every finite draw. Draws where the mixture has
    negative curvature (between or beside modes) stay in the average, since
    dropping them biases the expectation upward; their number is reported
    through a NegativeCurvature warning. Non-finite ratios are excluded.
    """
    ratio = information_ratio(approx, np.asarray(draws, dtype=float).ravel(), endpoint, sigma_ref)
    keep = np.isfinite(ratio)
    n_excluded = int(ratio.size - keep.sum())
    if not keep.any():
        raise AllDrawsExcluded("every draw gave an undefined information ratio")
    n_negative = int((ratio[keep] < 0.0).sum())
    if n_negative:
        warnings.warn(f"{n_negative} of {ratio.size} draws had negative curvature",
                      NegativeCurvature, stacklevel=2)
    ess = float(ratio[keep].mean())
    if return_counts:
        return ess, int(keep.sum()), n_excluded, n_negative
    return ess


def ehss(ess_post: float, n_cc: int) -> float:
    """Effective historical sample size: posterior ESS minus the current-control size.

    May be negative; callers flag rather than truncate it.
    """
    if n_cc < 1:
        raise ValueError("n_cc must be >= 1")
    return ess_post - n_cc


def posterior_ess(draws: Sequence[float], endpoint: Endpoint | str, n_cc: int,
                  sigma_ref: Optional[float] = None, k: int = 3, restarts: int = 20,
                  seed: int = 0) -> tuple[EssResult, MixtureApprox]:
    """Mixture-fit pooled draws, then compute ELIR ESS and EHSS."""
    endpoint = Endpoint(endpoint)
    if endpoint is Endpoint.CONTINUOUS and (sigma_ref is None or not sigma_ref > 0):
        raise MissingSigmaRef("sigma_ref must be given and positive for a continuous endpoint")
    family = "beta" if endpoint is Endpoint.BINARY else "normal"
    approx = fit_mixture_em(draws, family, k, restarts, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NegativeCurvature)
        ess, used, excluded, negative = elir_ess(approx, draws, endpoint, sigma_ref, return_counts=True)
    return EssResult(ess, ehss(ess, n_cc), n_cc,
                     sigma_ref if endpoint is Endpoint.CONTINUOUS else None, used, excluded, negative), approx
