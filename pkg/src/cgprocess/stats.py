"""Replicate orchestration and Monte Carlo estimators.

Replicates are split into fixed-size chunks.  Chunk ``k`` draws from the
stream ``(seed, stream_key, k)`` and its partial sums are merged exactly
(``Fraction`` arithmetic), so estimates do not depend on thread count or on
the order in which chunks finish.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np
from scipy import stats as _st

from .engine import BatchResult, Clock, MoneyState, play_schedules, sample_schedules
from .exceptions import InvalidArgument, ProtocolViolation
from .models import MeetingModel
from .rng import stream

__all__ = [
    "EstimateCI",
    "Accumulator",
    "Histogram",
    "run_chunks",
    "simulate",
    "estimate_density",
    "estimate_fixation_time",
    "winner_distribution",
    "pair_moment_curve",
    "factorial_moment_curve",
    "fortune_hist",
    "conditional_fortune_hist",
    "density_decay_curve",
    "loglog_slope",
    "chi_square_uniform",
    "chi_square_homogeneity",
    "total_variation",
    "P_VALUE_FLOOR",
]

P_VALUE_FLOOR = 1e-12

ModelSource = Union[MeetingModel, Callable[[np.random.Generator], MeetingModel]]


@dataclass(frozen=True)
class EstimateCI:
    mean: float
    std_error: float
    n_replicates: int

    def z_score(self, target: float) -> float:
        if self.std_error == 0:
            return 0.0 if self.mean == target else math.copysign(math.inf, self.mean - target)
        return (self.mean - target) / self.std_error

    def within(self, target: float, k: float = 3.0, slack: float = 0.0) -> bool:
        return abs(self.mean - target) <= k * self.std_error + slack

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "n": self.n_replicates}


def _exact_sums(v: np.ndarray) -> tuple[Fraction, Fraction]:
    """Exact sum and sum of squares of finite doubles, via integer mantissas."""
    if not np.all(np.isfinite(v)):
        raise InvalidArgument("values must be finite")
    m, e = np.frexp(v)
    mant = (m * 2.0**53).astype(np.int64)
    exp = e.astype(np.int64) - 53
    low = int(exp.min())
    ints = mant.astype(object) << (exp - low).astype(object)
    scale = Fraction(2) ** low
    return Fraction(int(ints.sum())) * scale, Fraction(int((ints * ints).sum())) * scale * scale


@dataclass
class Accumulator:
    """Count, sum and sum of squares, all held exactly."""

    count: int = 0
    total: Fraction = field(default_factory=Fraction)
    total_sq: Fraction = field(default_factory=Fraction)

    def add(self, values) -> "Accumulator":
        v = np.asarray(values, dtype=np.float64).ravel()
        if v.size == 0:
            return self
        s, sq = _exact_sums(v)
        self.count += int(v.size)
        self.total += s
        self.total_sq += sq
        return self

    def merge(self, other: "Accumulator") -> "Accumulator":
        return Accumulator(self.count + other.count, self.total + other.total, self.total_sq + other.total_sq)

    def estimate(self) -> EstimateCI:
        if self.count == 0:
            raise InvalidArgument("no replicates")
        mean = self.total / self.count
        if self.count < 2:
            return EstimateCI(float(mean), 0.0, self.count)
        var = (self.total_sq - self.count * mean * mean) / (self.count - 1)
        try:
            se = math.sqrt(max(float(var / self.count), 0.0))
        except OverflowError:
            se = math.inf
        return EstimateCI(float(mean), se, self.count)


def _merge_all(accs: Iterable[Accumulator]) -> Accumulator:
    out = Accumulator()
    for a in accs:
        out = out.merge(a)
    return out


@dataclass(frozen=True)
class Histogram:
    bins: Mapping[int, int]
    total: int

    def __post_init__(self):
        if sum(self.bins.values()) != self.total:
            raise InvalidArgument("histogram counts do not sum to total")

    @classmethod
    def from_values(cls, values) -> "Histogram":
        c = Counter(np.asarray(values).ravel().tolist())
        return cls(dict(sorted(c.items())), int(sum(c.values())))

    @classmethod
    def empty(cls) -> "Histogram":
        return cls({}, 0)

    def merge(self, other: "Histogram") -> "Histogram":
        c = Counter(self.bins)
        c.update(other.bins)
        return Histogram(dict(sorted(c.items())), self.total + other.total)

    def frequency(self, value: int) -> float:
        return self.bins.get(value, 0) / self.total if self.total else 0.0

    def frequencies(self) -> dict[int, float]:
        return {k: v / self.total for k, v in self.bins.items()}

    def conditional_on_positive(self) -> "Histogram":
        kept = {k: v for k, v in self.bins.items() if k > 0}
        return Histogram(kept, sum(kept.values()))

    def proportion_estimate(self, predicate: Callable[[int], bool]) -> EstimateCI:
        """Mean and standard error of the indicator ``predicate(value)``."""
        hits = sum(v for k, v in self.bins.items() if predicate(k))
        n = self.total
        p = hits / n
        # sample-variance convention, matching Accumulator
        se = math.sqrt(p * (1 - p) / (n - 1)) if n > 1 else 0.0
        return EstimateCI(p, se, n)


# orchestration ------------------------------------------------------------------


def _chunk_sizes(replicates: int, chunk_size: int) -> list[int]:
    full, rest = divmod(replicates, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def run_chunks(seed: int, replicates: int, work: Callable[[np.random.Generator, int], object],
               chunk_size: int, threads: int = 1, stream_key: int = 0) -> list:
    """Apply ``work(rng, size)`` to each chunk; results come back in chunk order."""
    if replicates < 1:
        raise InvalidArgument("replicates must be positive")
    sizes = _chunk_sizes(replicates, max(1, int(chunk_size)))

    def job(k):
        return work(stream(seed, stream_key, k), sizes[k])

    if threads <= 1:
        return [job(k) for k in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, range(len(sizes))))


def default_chunk_size(model: ModelSource) -> int:
    if isinstance(model, MeetingModel):
        return int(max(1, min(1024, 2_000_000 // max(1, model.n_edges + model.n))))
    return 16


def simulate(model: ModelSource, replicates: int, seed: int,
             reduce: Callable[[BatchResult, MeetingModel], object],
             init: MoneyState | None = None, clock: Clock = Clock.EXPONENTIAL,
             construction: str = "direct", threads: int = 1, stream_key: int = 0,
             chunk_size: int | None = None) -> list:
    """Run replicates and reduce each batch.  A callable ``model`` is sampled
    afresh (from the chunk's stream) for every replicate."""

    def work(rng, size):
        if isinstance(model, MeetingModel):
            start = init if init is not None else MoneyState.simple(model.n)
            batch = sample_schedules(model, clock, rng, size)
            return [reduce(play_schedules(batch, start, construction, rng), model)]
        parts = []
        for _ in range(size):
            m = model(rng)
            start = init if init is not None else MoneyState.simple(m.n)
            batch = sample_schedules(m, clock, rng, 1)
            parts.append(reduce(play_schedules(batch, start, construction, rng), m))
        return parts

    cs = chunk_size or default_chunk_size(model)
    chunks = run_chunks(seed, replicates, work, cs, threads, stream_key)
    return [p for chunk in chunks for p in chunk]


def _estimate(parts) -> EstimateCI:
    return _merge_all(parts).estimate()


def _check_replicates(replicates):
    if replicates < 2:
        raise InvalidArgument("at least two replicates are needed for a standard error")


# estimators ---------------------------------------------------------------------


def estimate_density(model: ModelSource, replicates: int, seed: int, threads: int = 1,
                     clock: Clock = Clock.EXPONENTIAL, **kw) -> EstimateCI:
    """Mean fraction of agents still solvent after absorption."""
    _check_replicates(replicates)
    parts = simulate(model, replicates, seed, lambda b, m: Accumulator().add(b.n_solvent() / m.n),
                     clock=clock, threads=threads, **kw)
    return _estimate(parts)


def estimate_fixation_time(model: ModelSource, replicates: int, seed: int, threads: int = 1, **kw) -> EstimateCI:
    """Mean absorption time (the fixation time when every pair meets)."""
    _check_replicates(replicates)
    parts = simulate(model, replicates, seed, lambda b, m: Accumulator().add(b.absorption_time()),
                     threads=threads, **kw)
    return _estimate(parts)


def winner_distribution(model: MeetingModel, replicates: int, seed: int, weights=None,
                        threads: int = 1, **kw) -> Histogram:
    """Empirical law of the agent holding all the money at the end."""
    init = MoneyState.standardized(weights) if weights is not None else MoneyState.simple(model.n)

    def reduce(b, m):
        if np.any(b.n_solvent() != 1):
            raise ProtocolViolation("a replicate ended with more than one solvent agent")
        return Histogram.from_values(b.winners())

    parts = simulate(model, replicates, seed, reduce, init=init, threads=threads, **kw)
    out = Histogram.empty()
    for p in parts:
        out = out.merge(p)
    return out


def pair_moment_curve(model: MeetingModel, i: int, j: int, times: Sequence[float], replicates: int,
                      seed: int, threads: int = 1, **kw) -> list[EstimateCI]:
    """Empirical E[X_i(t) X_j(t)] at each requested time (simple start)."""
    _check_replicates(replicates)
    times = [float(t) for t in times]

    def reduce(b, m):
        return [Accumulator().add(b.agent_at(t, i) * b.agent_at(t, j)) for t in times]

    parts = simulate(model, replicates, seed, reduce, threads=threads, **kw)
    return [_estimate(p[k] for p in parts) for k in range(len(times))]


def factorial_moment_curve(model: MeetingModel, i: int, times: Sequence[float], replicates: int,
                           seed: int, threads: int = 1, **kw) -> list[EstimateCI]:
    """Empirical E[X_i(t)(X_i(t) - 1)]."""
    _check_replicates(replicates)
    times = [float(t) for t in times]

    def reduce(b, m):
        out = []
        for t in times:
            x = b.agent_at(t, i)
            out.append(Accumulator().add(x * (x - 1)))
        return out

    parts = simulate(model, replicates, seed, reduce, threads=threads, **kw)
    return [_estimate(p[k] for p in parts) for k in range(len(times))]


def fortune_hist(model: ModelSource, t: float, replicates: int, seed: int, agent: int = 0,
                 clock: Clock = Clock.UNIFORM, threads: int = 1, **kw) -> Histogram:
    """Law of one agent's fortune at time ``t`` (zeros included)."""
    parts = simulate(model, replicates, seed, lambda b, m: Histogram.from_values(b.agent_at(t, agent)),
                     clock=clock, threads=threads, **kw)
    out = Histogram.empty()
    for p in parts:
        out = out.merge(p)
    return out


def conditional_fortune_hist(model: ModelSource, t: float, replicates: int, seed: int, agent: int = 0,
                             clock: Clock = Clock.UNIFORM, threads: int = 1, **kw) -> Histogram:
    """Fortune law at time ``t`` given that the agent is still solvent."""
    return fortune_hist(model, t, replicates, seed, agent, clock, threads, **kw).conditional_on_positive()


def loglog_slope(times, densities) -> float:
    """Least-squares slope of log density against log time."""
    x = np.log(np.asarray(times, dtype=np.float64))
    y = np.log(np.asarray(densities, dtype=np.float64))
    if x.size < 2:
        raise InvalidArgument("need at least two points to fit a slope")
    return float(np.polyfit(x, y, 1)[0])


def density_decay_curve(model: MeetingModel, times: Sequence[float], replicates: int, seed: int,
                        window: tuple[float, float] | None = None, threads: int = 1,
                        **kw) -> tuple[list[EstimateCI], float | None]:
    """Mean solvent density at each time and the fitted log-log slope.

    Without an explicit ``window`` the fit skips times where the density is
    above 0.9 or fewer than 10 agents remain solvent on average.
    """
    times = [float(t) for t in times]
    if any(t <= 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
        raise InvalidArgument("times must be positive and increasing")
    _check_replicates(replicates)

    def reduce(b, m):
        return [Accumulator().add(b.n_solvent_at(t) / m.n) for t in times]

    parts = simulate(model, replicates, seed, reduce, threads=threads, **kw)
    curve = [_estimate(p[k] for p in parts) for k in range(len(times))]
    if window is not None:
        keep = [k for k, t in enumerate(times) if window[0] <= t <= window[1]]
    else:
        keep = [k for k, e in enumerate(curve) if e.mean <= 0.9 and e.mean * model.n >= 10]
    if len(keep) < 2:
        return curve, None
    return curve, loglog_slope([times[k] for k in keep], [curve[k].mean for k in keep])


# goodness of fit ----------------------------------------------------------------


def chi_square_uniform(hist: Histogram, expected: Mapping[int, float] | Sequence[float]) -> tuple[float, float]:
    """Pearson goodness of fit of ``hist`` against ``expected`` probabilities.

    A sequence is read as probabilities for the values ``0, 1, ...``.
    Degrees of freedom are the number of categories minus one.
    """
    if hist.total == 0:
        raise InvalidArgument("empty histogram")
    if not isinstance(expected, Mapping):
        expected = dict(enumerate(expected))
    probs = {k: float(p) for k, p in expected.items()}
    if any(p <= 0 for p in probs.values()):
        raise InvalidArgument("expected probabilities must be strictly positive")
    if set(hist.bins) - set(probs):
        raise InvalidArgument("histogram has values outside the expected support")
    total_p = sum(probs.values())
    stat = 0.0
    for k, p in probs.items():
        e = hist.total * p / total_p
        o = hist.bins.get(k, 0)
        stat += (o - e) ** 2 / e
    dof = len(probs) - 1
    p_value = float(_st.chi2.sf(stat, dof)) if dof > 0 else 1.0
    return stat, max(p_value, P_VALUE_FLOOR)


def chi_square_homogeneity(a: Histogram, b: Histogram) -> tuple[float, float]:
    """Pearson test that two histograms come from the same law."""
    if a.total == 0 or b.total == 0:
        raise InvalidArgument("empty histogram")
    keys = sorted(set(a.bins) | set(b.bins))
    table = np.array([[a.bins.get(k, 0) for k in keys], [b.bins.get(k, 0) for k in keys]], dtype=np.float64)
    if len(keys) < 2:
        return 0.0, 1.0
    stat, p, _, _ = _st.chi2_contingency(table, correction=False)
    return float(stat), max(float(p), P_VALUE_FLOOR)


def total_variation(hist: Histogram, pmf: Callable[[int], float], support: Iterable[int]) -> float:
    """Half the L1 distance between empirical and target probabilities on ``support``."""
    if hist.total == 0:
        raise InvalidArgument("empty histogram")
    return 0.5 * sum(abs(hist.frequency(k) - pmf(k)) for k in support)
