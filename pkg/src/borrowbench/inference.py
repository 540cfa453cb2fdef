"""MCMC building blocks: seeded chains, adaptive random-walk Metropolis, slice
sampling, multi-chain execution and convergence diagnostics.

Random numbers come from numpy's PCG64 bit generator. Chain ``i`` of a run
with master seed ``s`` is seeded by ``SeedSequence(s).spawn(n_chains)[i]``, so
draws depend only on (seed, chain index) and never on how many workers run
the chains.
"""

from __future__ import annotations

import math
import os
import pickle
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateChain, DegenerateInit, NonFiniteTarget, TooFewDraws

TARGET_ACCEPT = 0.44
THREADS_ENV = "BORROWBENCH_THREADS"
RNG_ALGORITHM = "numpy.random.PCG64 via SeedSequence.spawn"


@dataclass(frozen=True)
class ChainSpec:
    n_chains: int = 4
    n_warmup: int = 5000
    n_keep: int = 10000
    seed: int = 1
    thin: int = 1

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.n_keep < 100:
            raise ValueError("n_keep must be >= 100")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_warmup < 0:
            raise ValueError("n_warmup must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def n_total(self) -> int:
        return self.n_chains * self.n_keep


@dataclass
class ChainOutput:
    draws: np.ndarray  # (chain, iteration, parameter)
    acceptance_rates: np.ndarray
    param_names: list[str]
    extras: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.param_names):
            raise ValueError("draws must be (chain, iteration, parameter) matching param_names")

    def param(self, name: str) -> np.ndarray:
        return self.draws[:, :, self.param_names.index(name)]

    def pooled(self, name: str) -> np.ndarray:
        return self.param(name).reshape(-1)


def chain_seeds(seed: int, n_chains: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(int(seed)).spawn(n_chains)


def make_rng(seed_seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_seq))


def max_workers() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _picklable(obj: Any) -> bool:
    try:
        pickle.dumps(obj)
    except Exception:
        return False
    return True


def run_chains(chain_fn: Callable[..., Any], spec: ChainSpec, *args: Any) -> list[Any]:
    """Run ``chain_fn(seed_seq, spec, *args)`` once per chain, in chain order.

    Chains run in worker processes when more than one worker is allowed and
    the job can be pickled; otherwise sequentially. Results are identical
    either way.
    """
    seeds = chain_seeds(spec.seed, spec.n_chains)
    workers = min(max_workers(), spec.n_chains)
    if workers > 1 and _picklable((chain_fn, spec, args)):
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(chain_fn, s, spec, *args) for s in seeds]
            return [f.result() for f in futures]
    return [chain_fn(s, spec, *args) for s in seeds]


class AdaptiveRW:
    """Univariate Gaussian random-walk Metropolis step.

    The log proposal scale follows a Robbins-Monro recursion toward 0.44
    acceptance while ``adapt`` is true and is left untouched otherwise.
    """

    __slots__ = ("log_scale", "t", "accepted", "proposed", "target")

    def __init__(self, scale: float = 1.0, target: float = TARGET_ACCEPT):
        self.log_scale = math.log(scale)
        self.t = 0
        self.accepted = 0
        self.proposed = 0
        self.target = target

    @property
    def scale(self) -> float:
        return math.exp(self.log_scale)

    def reset_counts(self) -> None:
        self.accepted = 0
        self.proposed = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")

    def step(self, rng: np.random.Generator, x: float, logp: float,
             log_target: Callable[[float], float], adapt: bool) -> tuple[float, float]:
        prop = x + math.exp(self.log_scale) * rng.standard_normal()
        logp_prop = log_target(prop)
        accept = logp_prop - logp >= 0.0 or math.log(rng.random()) < logp_prop - logp
        self.proposed += 1
        if accept:
            self.accepted += 1
            x, logp = prop, logp_prop
        if adapt:
            self.t += 1
            rate = 1.0 if accept else 0.0
            self.log_scale += (rate - self.target) / (self.t ** 0.6)
            self.log_scale = min(max(self.log_scale, -30.0), 30.0)
        return x, logp


class SliceStepper:
    """Univariate slice sampling with stepping out and shrinkage.

    The initial bracket width is tuned from the observed jump sizes during
    warmup and frozen afterwards.
    """

    __slots__ = ("width", "t", "lower", "upper", "max_steps")

    def __init__(self, width: float = 1.0, lower: float = -math.inf, upper: float = math.inf,
                 max_steps: int = 50):
        self.width = width
        self.t = 0
        self.lower = lower
        self.upper = upper
        self.max_steps = max_steps

    def step(self, rng: np.random.Generator, x: float, logp: float,
             log_target: Callable[[float], float], adapt: bool) -> tuple[float, float]:
        lower, upper = self.lower, self.upper
        level = logp + math.log(rng.random())
        w = self.width
        left = x - w * rng.random()
        right = left + w
        j = int(self.max_steps * rng.random())
        k = self.max_steps - 1 - j
        if left < lower:
            left = lower
        if right > upper:
            right = upper
        while j > 0 and left > lower and log_target(left) > level:
            left -= w
            if left < lower:
                left = lower
            j -= 1
        while k > 0 and right < upper and log_target(right) > level:
            right += w
            if right > upper:
                right = upper
            k -= 1
        for _ in range(200):
            prop = left + (right - left) * rng.random()
            logp_prop = log_target(prop) if lower < prop < upper else -math.inf
            if logp_prop > level:
                break
            if prop < x:
                left = prop
            else:
                right = prop
        else:
            prop, logp_prop = x, logp
        if adapt:
            self.t += 1
            jump = abs(prop - x)
            if jump > 0:
                self.width += (2.0 * jump - self.width) / min(self.t, 100)
                self.width = min(max(self.width, 1e-8), 1e8)
        return prop, logp_prop


def _check_init(log_target: Callable[[float], float], init: float) -> float:
    if not math.isfinite(init):
        raise DegenerateInit(f"initial value must be finite, got {init}")
    logp = log_target(init)
    if not math.isfinite(logp):
        raise NonFiniteTarget(f"log target is not finite at init={init}")
    return logp


def _rw_chain(seed_seq, spec: ChainSpec, log_target, init: float, scale: float) -> dict:
    rng = make_rng(seed_seq)
    x = init
    logp = log_target(x)
    kernel = AdaptiveRW(scale)
    for _ in range(spec.n_warmup):
        x, logp = kernel.step(rng, x, logp, log_target, adapt=True)
    scale_end_warmup = kernel.scale
    kernel.reset_counts()
    out = np.empty(spec.n_keep)
    for i in range(spec.n_keep):
        for _ in range(spec.thin):
            x, logp = kernel.step(rng, x, logp, log_target, adapt=False)
        out[i] = x
    return {"draws": out, "accept": kernel.acceptance_rate,
            "scale_end_warmup": scale_end_warmup, "scale_final": kernel.scale}


def adaptive_rw_metropolis(log_target: Callable[[float], float], init: float,
                           spec: ChainSpec = ChainSpec(), scale: float = 1.0) -> ChainOutput:
    """Sample a univariate log density with adaptive random-walk Metropolis."""
    _check_init(log_target, init)
    chains = run_chains(_rw_chain, spec, log_target, float(init), scale)
    draws = np.stack([c["draws"] for c in chains])[:, :, None]
    return ChainOutput(
        draws=draws,
        acceptance_rates=np.array([np.mean([c["accept"] for c in chains])]),
        param_names=["x"],
        extras={"scale_end_warmup": [c["scale_end_warmup"] for c in chains],
                "scale_final": [c["scale_final"] for c in chains]},
    )


def _slice_chain(seed_seq, spec: ChainSpec, log_target, init: float, bounds) -> dict:
    rng = make_rng(seed_seq)
    lower, upper = bounds
    stepper = SliceStepper(1.0, lower, upper)
    x, logp = init, log_target(init)
    for _ in range(spec.n_warmup):
        x, logp = stepper.step(rng, x, logp, log_target, adapt=True)
    out = np.empty(spec.n_keep)
    for i in range(spec.n_keep):
        for _ in range(spec.thin):
            x, logp = stepper.step(rng, x, logp, log_target, adapt=False)
        out[i] = x
    return {"draws": out}


def slice_sample_univariate(log_target: Callable[[float], float], init: float,
                            bounds: Optional[tuple[float, float]] = None,
                            spec: ChainSpec = ChainSpec()) -> ChainOutput:
    """Sample a univariate log density by slice sampling, optionally on an open interval."""
    lower, upper = bounds if bounds is not None else (-math.inf, math.inf)
    if not lower < init < upper:
        raise DegenerateInit(f"init={init} lies outside bounds ({lower}, {upper})")
    _check_init(log_target, init)

    def bounded(x: float) -> float:
        return log_target(x) if lower < x < upper else -math.inf

    chains = run_chains(_slice_chain, spec, bounded if bounds is not None else log_target,
                        float(init), (lower, upper))
    draws = np.stack([c["draws"] for c in chains])[:, :, None]
    return ChainOutput(draws=draws, acceptance_rates=np.array([1.0]), param_names=["x"])


# ---------------------------------------------------------------------------
# diagnostics


def _as_chains(draws: Any) -> np.ndarray:
    arr = np.asarray(draws, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("draws must be a 1-d sequence or (chain, iteration) array")
    return arr


def rhat(draws: Any) -> float:
    """Split-chain potential scale reduction factor.

    Returns NaN when every chain is constant (the ratio is undefined).
    """
    x = _as_chains(draws)
    m, n = x.shape
    if m < 2 or n < 100:
        raise TooFewDraws(f"rhat needs >= 2 chains of >= 100 draws, got {m} x {n}")
    half = n // 2
    split = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    chain_means = split.mean(axis=1)
    within = split.var(axis=1, ddof=1).mean()
    between = half * chain_means.var(ddof=1)
    if within <= 0.0:
        return float("nan")
    var_plus = (half - 1) / half * within + between / half
    return float(math.sqrt(var_plus / within))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = 1 << (2 * n - 1).bit_length()
    centered = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[..., :n]
    return acov / n


def chain_ess(draws: Any) -> float:
    """Monte Carlo effective sample size (Geyer initial monotone sequence).

    Accepts one chain or a (chain, iteration) array. A constant input has no
    autocorrelation structure; its ESS is reported as the draw count with a
    :class:`DegenerateChain` warning.
    """
    x = _as_chains(draws)
    m, n = x.shape
    if n < 100:
        raise TooFewDraws(f"chain_ess needs >= 100 draws per chain, got {n}")
    total = m * n
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1.0)
    within = chain_var.mean()
    var_plus = within * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus <= 0.0 or not np.isfinite(var_plus):
        warnings.warn("constant chain: reporting ESS as the draw count", DegenerateChain, stacklevel=2)
        return float(total)
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum of adjacent pairs, truncated at the first non-positive pair,
    # forced monotone non-increasing.
    n_pairs = (n - 1) // 2
    pairs = rho[0:2 * n_pairs:2] + rho[1:2 * n_pairs + 1:2]
    cutoff = np.flatnonzero(pairs <= 0.0)
    if cutoff.size:
        pairs = pairs[:cutoff[0]]
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / math.log10(total))
    return float(total / tau)
