"""Event-driven compulsive-gambler dynamics.

Only the first meeting of each pair can ever matter: after two solvent agents
meet, one of them is bankrupt for good.  A run therefore samples one meeting
time per positive-rate pair, sorts them, and scans the resulting schedule.
Three interchangeable rules decide the games:

* direct: the agent with fortune ``a`` beats fortune ``b`` with probability
  ``a / (a + b)``;
* augmented: a size-biased random order is fixed up front and the earlier
  agent always wins;
* token: tokens ``1..n`` are dealt uniformly (simple start only) and the
  holder of the smallest token wins, absorbing the loser's tokens.

All three consume an explicit schedule so they can be coupled on the same
meeting times.  Fortunes are integers throughout, so conservation is exact.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels as K
from .exceptions import InvalidArgument, InvariantViolation
from .models import MeetingModel

__all__ = [
    "Clock",
    "FirstMeetingSchedule",
    "MoneyState",
    "SizeBiasedOrder",
    "TokenState",
    "TrajectoryEvent",
    "RunResult",
    "ScheduleBatch",
    "BatchResult",
    "sample_schedule",
    "run_direct",
    "size_biased_order",
    "run_augmented",
    "run_token",
    "token_state_at",
    "n_solvent_curve",
    "pair_product_at",
    "audit",
    "sample_schedules",
    "play_schedules",
]

_WORD_HIGH = 1 << 53
_WORD_SLACK = 16


class Clock(str, Enum):
    EXPONENTIAL = "exponential"
    UNIFORM = "uniform"


def _check_clock(model: MeetingModel, clock: Clock) -> Clock:
    clock = Clock(clock)
    if clock is Clock.UNIFORM and not model.unit_rates():
        raise InvalidArgument("the uniform time-change clock requires all rates equal to 1")
    return clock


def _draw_times(model: MeetingModel, clock: Clock, rng: np.random.Generator, shape) -> np.ndarray:
    if clock is Clock.UNIFORM:
        return rng.random(shape)
    return rng.standard_exponential(shape) / model.rate


@dataclass(frozen=True, eq=False)
class FirstMeetingSchedule:
    """First meeting time of every positive-rate pair, sorted by time."""

    n: int
    times: np.ndarray
    i: np.ndarray
    j: np.ndarray

    @property
    def events(self) -> list[tuple[float, int, int]]:
        return [(float(t), int(a), int(b)) for t, a, b in zip(self.times, self.i, self.j)]

    def __len__(self):
        return int(self.times.size)

    def subset(self, keep: np.ndarray) -> "FirstMeetingSchedule":
        keep = np.asarray(keep, dtype=bool)
        return FirstMeetingSchedule(self.n, self.times[keep], self.i[keep], self.j[keep])


def sample_schedule(model: MeetingModel, clock: Clock, rng: np.random.Generator) -> FirstMeetingSchedule:
    """One independent first-meeting time per pair: Exponential(rate) or Uniform(0, 1)."""
    clock = _check_clock(model, clock)
    times = _draw_times(model, clock, rng, model.n_edges)
    # edges are stored in (i, j) order, so a stable sort breaks ties lexicographically
    order = np.argsort(times, kind="stable")
    return FirstMeetingSchedule(model.n, times[order], model.i[order], model.j[order])


@dataclass(frozen=True, eq=False)
class MoneyState:
    """Integer fortunes; the standardized configuration is ``fortunes / total``."""

    fortunes: np.ndarray

    def __post_init__(self):
        f = np.array(self.fortunes, dtype=np.int64).ravel()
        if f.size == 0 or np.any(f < 0):
            raise InvalidArgument("fortunes must be a nonempty vector of nonnegative integers")
        if f.sum() <= 0:
            raise InvalidArgument("total money must be positive")
        f.setflags(write=False)
        object.__setattr__(self, "fortunes", f)

    @classmethod
    def simple(cls, n: int) -> "MoneyState":
        return cls(np.ones(n, dtype=np.int64))

    @classmethod
    def standardized(cls, weights) -> "MoneyState":
        w = np.asarray(weights)
        if not np.issubdtype(w.dtype, np.integer) and not np.all(w == np.round(w)):
            raise InvalidArgument("standardized weights must be integers (x_i = w_i / W)")
        return cls(np.asarray(w, dtype=np.int64))

    @property
    def n(self) -> int:
        return int(self.fortunes.size)

    @property
    def total(self) -> int:
        return int(self.fortunes.sum())

    @property
    def x(self) -> np.ndarray:
        return self.fortunes / self.total

    def solvent(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.fortunes).tolist())

    def __eq__(self, other):
        return isinstance(other, MoneyState) and np.array_equal(self.fortunes, other.fortunes)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SizeBiasedOrder:
    """``rank[i]`` is the position of agent ``i``; smaller rank wins."""

    rank: np.ndarray

    def __post_init__(self):
        r = np.array(self.rank, dtype=np.int64).ravel()
        if not np.array_equal(np.sort(r), np.arange(r.size)):
            raise InvalidArgument("rank must be a permutation of 0..n-1")
        r.setflags(write=False)
        object.__setattr__(self, "rank", r)

    def agents(self) -> list[int]:
        """Agents listed from first to last."""
        return np.argsort(self.rank).tolist()

    def precedes(self, a: int, b: int) -> bool:
        return bool(self.rank[a] < self.rank[b])


def size_biased_order(init: MoneyState, rng: np.random.Generator) -> SizeBiasedOrder:
    """Sequential size-biased pick: the next agent is chosen with probability
    proportional to its weight among those not yet placed.  Each pick is one
    exact uniform integer draw.  Zero-weight agents follow in index order."""
    w = init.fortunes
    positive = np.flatnonzero(w > 0)
    if positive.size == 0:
        raise InvalidArgument("at least one positive weight is required")
    remaining = [int(a) for a in positive]
    weights = [int(w[a]) for a in remaining]
    left = sum(weights)
    picked = []
    while remaining:
        u = int(rng.integers(0, left))
        acc = 0
        for pos, wt in enumerate(weights):
            acc += wt
            if u < acc:
                break
        picked.append(remaining.pop(pos))
        left -= weights.pop(pos)
    picked.extend(int(a) for a in np.flatnonzero(w == 0))
    rank = np.empty(w.size, dtype=np.int64)
    rank[np.asarray(picked, dtype=np.int64)] = np.arange(w.size)
    return SizeBiasedOrder(rank)


@dataclass(frozen=True)
class TrajectoryEvent:
    time: float
    winner: int
    loser: int
    transferred: int


@dataclass(frozen=True, eq=False)
class TokenState:
    """Per-agent sorted token labels drawn from ``1..n``."""

    sets: tuple[tuple[int, ...], ...]

    def fortunes(self) -> np.ndarray:
        return np.array([len(s) for s in self.sets], dtype=np.int64)

    def check_partition(self) -> None:
        labels = sorted(t for s in self.sets for t in s)
        if labels != list(range(1, len(self.sets) + 1)):
            raise InvariantViolation("token sets do not partition 1..n")


@dataclass(frozen=True, eq=False)
class RunResult:
    initial: MoneyState
    final: MoneyState
    trajectory: tuple[TrajectoryEvent, ...]
    deal: np.ndarray | None = field(default=None, repr=False)

    @property
    def solvent(self) -> frozenset[int]:
        return self.final.solvent()

    @property
    def absorption_time(self) -> float:
        return self.trajectory[-1].time if self.trajectory else 0.0

    def fortunes_at(self, t: float) -> np.ndarray:
        """Right-continuous fortune vector at time ``t``."""
        x = self.initial.fortunes.copy()
        for ev in self.trajectory:
            if ev.time > t:
                break
            x[ev.winner] += x[ev.loser]
            x[ev.loser] = 0
        return x

    def summary(self) -> dict:
        return {
            "absorption_time": self.absorption_time,
            "n_solvent": len(self.solvent),
            "solvent_ids": sorted(self.solvent),
            "final_fortunes": self.final.fortunes.tolist(),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary())

    def trajectory_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "winner", "loser", "transferred"])
        for ev in self.trajectory:
            w.writerow([repr(ev.time), ev.winner, ev.loser, ev.transferred])
        return buf.getvalue()


def _words(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(0, _WORD_HIGH, size=shape, dtype=np.int64)


def _play_one(schedule: FirstMeetingSchedule, init: MoneyState, rank, rng) -> RunResult:
    if schedule.n != init.n:
        raise InvalidArgument("schedule and initial state disagree on n")
    n = init.n
    use_rank = rank is not None
    rank_arr = np.asarray(rank, dtype=np.int64) if use_rank else np.zeros(n, dtype=np.int64)
    words = np.empty(0, dtype=np.int64) if use_rank else _words(rng, n + _WORD_SLACK)
    order = np.arange(len(schedule), dtype=np.int64)
    while True:
        x = init.fortunes.copy()
        out_t = np.empty(n, dtype=np.float64)
        out_w = np.empty(n, dtype=np.int64)
        out_l = np.empty(n, dtype=np.int64)
        out_a = np.empty(n, dtype=np.int64)
        count, status = K.play(schedule.i, schedule.j, schedule.times, order, x, rank_arr,
                               use_rank, words, out_t, out_w, out_l, out_a)
        if status == K.OK:
            break
        words = np.concatenate([words, _words(rng, words.size)])
    events = tuple(
        TrajectoryEvent(float(out_t[q]), int(out_w[q]), int(out_l[q]), int(out_a[q])) for q in range(count)
    )
    return RunResult(init, MoneyState(x), events)


def run_direct(schedule: FirstMeetingSchedule, init: MoneyState, rng: np.random.Generator) -> RunResult:
    """Fair games: fortune ``a`` beats ``b`` with probability ``a / (a + b)``."""
    return _play_one(schedule, init, None, rng)


def run_augmented(schedule: FirstMeetingSchedule, init: MoneyState, order: SizeBiasedOrder) -> RunResult:
    """Deterministic given the schedule and the order: the earlier agent wins."""
    if order.rank.size != init.n:
        raise InvalidArgument("order and initial state disagree on n")
    return _play_one(schedule, init, order.rank, None)


def run_token(schedule: FirstMeetingSchedule, n: int, rng: np.random.Generator) -> tuple[RunResult, TokenState]:
    """Simple start; tokens are dealt by a uniform permutation and the holder
    of the smallest token wins every game it plays."""
    if schedule.n != n:
        raise InvalidArgument("schedule and n disagree")
    deal = rng.permutation(n).astype(np.int64) + 1
    sets: list[set[int]] = [{int(d)} for d in deal]
    x = np.ones(n, dtype=np.int64)
    events = []
    for t, a, b in zip(schedule.times.tolist(), schedule.i.tolist(), schedule.j.tolist()):
        if not sets[a] or not sets[b]:
            continue
        w, l = (a, b) if min(sets[a]) < min(sets[b]) else (b, a)
        events.append(TrajectoryEvent(float(t), w, l, len(sets[l])))
        sets[w] |= sets[l]
        sets[l] = set()
        x[w] += x[l]
        x[l] = 0
        if len(sets[w]) != x[w]:
            raise InvariantViolation("token set size diverged from fortune")
    state = TokenState(tuple(tuple(sorted(s)) for s in sets))
    state.check_partition()
    result = RunResult(MoneyState.simple(n), MoneyState(x), tuple(events), deal=deal)
    return result, state


def token_state_at(result: RunResult, t: float) -> TokenState:
    """Token sets at time ``t`` recovered from a token run's deal and trajectory."""
    if result.deal is None:
        raise InvalidArgument("result does not come from a token run")
    sets = [{int(d)} for d in result.deal]
    for ev in result.trajectory:
        if ev.time > t:
            break
        sets[ev.winner] |= sets[ev.loser]
        sets[ev.loser] = set()
    return TokenState(tuple(tuple(sorted(s)) for s in sets))


def n_solvent_curve(result: RunResult, n_initial: int) -> list[tuple[float, int]]:
    """Right-continuous step function of the number of solvent agents."""
    curve = [(0.0, int(n_initial))]
    count = int(n_initial)
    for ev in result.trajectory:
        count -= 1
        curve.append((ev.time, count))
    return curve


def pair_product_at(result: RunResult, init: MoneyState, i: int, j: int, t: float) -> int:
    if t < 0:
        raise InvalidArgument("t must be nonnegative")
    x = init.fortunes.copy()
    for ev in result.trajectory:
        if ev.time > t:
            break
        x[ev.winner] += x[ev.loser]
        x[ev.loser] = 0
    return int(x[i] * x[j])


def audit(result: RunResult, model: MeetingModel) -> None:
    """Raise :class:`InvariantViolation` unless the run conserves money,
    never revives a bankrupt agent and ends on an anticlique."""
    traj = result.trajectory
    w = np.array([[e.winner for e in traj]], dtype=np.int64).reshape(1, -1)
    l = np.array([[e.loser for e in traj]], dtype=np.int64).reshape(1, -1)
    a = np.array([[e.transferred for e in traj]], dtype=np.int64).reshape(1, -1)
    codes = K.check_batch(model.i, model.j, result.initial.fortunes, w, l, a,
                          np.array([len(traj)], dtype=np.int64), result.final.fortunes.reshape(1, -1))
    _raise_on_codes(codes)


_CODE_NAMES = {
    K.CHECK_CONSERVATION: "money not conserved",
    K.CHECK_BANKRUPTCY: "bankrupt agent played or transfer mismatch",
    K.CHECK_ANTICLIQUE: "final solvent set is not an anticlique",
    K.CHECK_REPLAY: "trajectory replay disagrees with final state",
}


def _raise_on_codes(codes: np.ndarray) -> None:
    bad = np.flatnonzero(codes)
    if bad.size:
        r = int(bad[0])
        raise InvariantViolation(f"replicate {r}: {_CODE_NAMES[int(codes[r])]}")


# batched replicates ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScheduleBatch:
    """``size`` independent schedules on one model; ``order[r]`` sorts ``times[r]``."""

    model: MeetingModel
    times: np.ndarray
    order: np.ndarray

    @property
    def size(self) -> int:
        return int(self.times.shape[0])

    def schedule(self, r: int) -> FirstMeetingSchedule:
        o = self.order[r]
        return FirstMeetingSchedule(self.model.n, self.times[r, o], self.model.i[o], self.model.j[o])


def sample_schedules(model: MeetingModel, clock: Clock, rng: np.random.Generator, size: int) -> ScheduleBatch:
    clock = _check_clock(model, clock)
    times = _draw_times(model, clock, rng, (size, model.n_edges))
    order = np.argsort(times, axis=1, kind="stable")
    return ScheduleBatch(model, times, order)


@dataclass(frozen=True, eq=False)
class BatchResult:
    initial: np.ndarray
    traj_t: np.ndarray
    traj_w: np.ndarray
    traj_l: np.ndarray
    traj_a: np.ndarray
    counts: np.ndarray
    final: np.ndarray
    ranks: np.ndarray | None = None

    @property
    def size(self) -> int:
        return int(self.counts.size)

    def n_solvent(self) -> np.ndarray:
        return (self.final > 0).sum(axis=1)

    def absorption_time(self) -> np.ndarray:
        last = np.maximum(self.counts - 1, 0)
        t = self.traj_t[np.arange(self.size), last] if self.traj_t.shape[1] else np.zeros(self.size)
        return np.where(self.counts > 0, t, 0.0)

    def fortunes_at(self, t: float) -> np.ndarray:
        return K.fortunes_at_batch(self.initial, self.traj_t, self.traj_w, self.traj_l, self.counts, float(t))

    def agent_at(self, t: float, agent: int) -> np.ndarray:
        return K.agent_at_batch(self.initial, self.traj_t, self.traj_w, self.traj_l, self.counts,
                                float(t), int(agent))

    def n_solvent_at(self, t: float) -> np.ndarray:
        n0 = int((self.initial > 0).sum())
        idx = np.arange(self.traj_t.shape[1])
        happened = (self.traj_t <= t) & (idx[None, :] < self.counts[:, None])
        return n0 - happened.sum(axis=1)

    def winners(self) -> np.ndarray:
        """Index of the richest final agent (the unique solvent one when fixation occurs)."""
        return self.final.argmax(axis=1)

    def result(self, r: int) -> RunResult:
        c = int(self.counts[r])
        events = tuple(
            TrajectoryEvent(float(self.traj_t[r, q]), int(self.traj_w[r, q]), int(self.traj_l[r, q]),
                            int(self.traj_a[r, q]))
            for q in range(c)
        )
        deal = self.ranks[r].copy() if self.ranks is not None else None
        return RunResult(MoneyState(self.initial), MoneyState(self.final[r]), events, deal=deal)


def _batch_ranks(init: MoneyState, construction: str, rng: np.random.Generator, size: int):
    n = init.n
    if construction == "augmented":
        w = init.fortunes.astype(np.float64)
        with np.errstate(divide="ignore"):
            key = rng.standard_exponential((size, n)) / w
        key[:, w == 0] = np.inf
        return np.argsort(np.argsort(key, axis=1, kind="stable"), axis=1, kind="stable").astype(np.int64)
    if construction == "token":
        if np.any(init.fortunes != 1):
            raise InvalidArgument("the token construction requires the simple start")
        base = np.broadcast_to(np.arange(1, n + 1, dtype=np.int64), (size, n))
        return rng.permuted(base, axis=1)
    raise InvalidArgument(f"unknown construction {construction!r}")


def play_schedules(batch: ScheduleBatch, init: MoneyState, construction: str,
                   rng: np.random.Generator, check: bool = True) -> BatchResult:
    """Run every schedule in ``batch`` under ``construction``
    (``"direct"``, ``"augmented"`` or ``"token"``) and audit each replicate.

    For the token construction the returned ``ranks`` are the dealt tokens.
    """
    model = batch.model
    n, R = model.n, batch.size
    if init.n != n:
        raise InvalidArgument("initial state and model disagree on n")
    use_rank = construction != "direct"
    if use_rank:
        ranks = _batch_ranks(init, construction, rng, R)
        words = np.empty((R, 0), dtype=np.int64)
    else:
        ranks = np.zeros((R, 1), dtype=np.int64)
        words = _words(rng, (R, n + _WORD_SLACK))
    while True:
        traj_t = np.zeros((R, n), dtype=np.float64)
        traj_w = np.zeros((R, n), dtype=np.int64)
        traj_l = np.zeros((R, n), dtype=np.int64)
        traj_a = np.zeros((R, n), dtype=np.int64)
        counts = np.zeros(R, dtype=np.int64)
        final = np.zeros((R, n), dtype=np.int64)
        status = np.zeros(R, dtype=np.int64)
        K.play_batch(model.i, model.j, batch.times, batch.order, init.fortunes, ranks, use_rank, words,
                     traj_t, traj_w, traj_l, traj_a, counts, final, status)
        if not np.any(status == K.EXHAUSTED):
            break
        words = np.concatenate([words, _words(rng, words.shape)], axis=1)
    out = BatchResult(init.fortunes.copy(), traj_t, traj_w, traj_l, traj_a, counts, final,
                      ranks if use_rank else None)
    if check:
        _raise_on_codes(K.check_batch(model.i, model.j, out.initial, traj_w, traj_l, traj_a, counts, final))
        if construction == "token":
            _check_token_rule(out)
    return out


def _check_token_rule(out: BatchResult) -> None:
    # the winner's smallest token is its own dealt token, which must beat the loser's
    idx = np.arange(out.traj_w.shape[1])
    live = idx[None, :] < out.counts[:, None]
    rows = np.arange(out.size)[:, None]
    tw = out.ranks[rows, out.traj_w]
    tl = out.ranks[rows, out.traj_l]
    if np.any(live & (tw >= tl)):
        raise InvariantViolation("a token game was won by the holder of the larger token")
