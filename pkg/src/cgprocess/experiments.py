"""Named, reproducible experiments.

Each experiment takes a model descriptor plus its own parameters and returns
an :class:`ExperimentOutput`: a JSON-ready summary (with the oracle value and
a z-score wherever a closed form exists) and zero or more curves for CSV.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from typing import Callable

import numpy as np
from scipy.stats import chi2

from . import models as M
from . import oracle, solver
from . import stats as S
from .engine import Clock, MoneyState, play_schedules, sample_schedules, token_state_at
from .exceptions import InvalidArgument, InvariantViolation
from .models import MeetingModel

__all__ = ["ExperimentOutput", "EXPERIMENTS", "build_model", "MODEL_FAMILIES", "run_experiment",
           "construction_equivalence", "exchangeability", "stratified_uniformity",
           "PARAM_TYPES", "MODEL_DEFAULTS"]


# rounding allowance when comparing two numerically solved tables
SANDWICH_SLACK = 1e-9


@dataclass
class ExperimentOutput:
    summary: dict
    curves: dict[str, list[dict]] = field(default_factory=dict)


# model descriptors ----------------------------------------------------------------

MODEL_FAMILIES: dict[str, dict] = {
    "complete": {"n": int, "rate": float},
    "edge-file": {"path": str},
    "near-cliques": {"r": int, "k": int},
    "er": {"n": int, "c": float},
    "torus": {"m": int, "d": int, "alpha": float},
    "dary": {"d": int, "depth": int},
    "regular-tree": {"r": int, "depth": int},
    "gw-poisson": {"c": float, "depth": int},
    "rrg": {"n": int, "r": int},
}

MODEL_DEFAULTS = {"complete": {"rate": 1.0}}

RANDOM_FAMILIES = {"er", "gw-poisson", "rrg"}


def coerce_model_params(family: str, params: dict) -> dict:
    if family not in MODEL_FAMILIES:
        raise InvalidArgument(f"unknown model family {family!r}")
    schema = MODEL_FAMILIES[family]
    unknown = set(params) - set(schema)
    if unknown:
        raise InvalidArgument(f"unknown keys for model family {family!r}: {sorted(unknown)}")
    out = {}
    for k, v in params.items():
        try:
            out[k] = schema[k](v)
        except (TypeError, ValueError) as exc:
            raise InvalidArgument(f"bad value for {k}: {v!r}") from exc
    return out


def build_model(family: str, params: dict):
    """A fixed :class:`MeetingModel`, or a sampler ``rng -> MeetingModel`` for random families."""
    p = coerce_model_params(family, params)
    try:
        if family == "complete":
            return M.complete_graph(p["n"], p.get("rate", 1.0))
        if family == "edge-file":
            return MeetingModel.load(p["path"])
        if family == "near-cliques":
            return M.ring_of_near_cliques(p["r"], p["k"])
        if family == "torus":
            return M.torus_power_law(p["m"], p["d"], p["alpha"])
        if family == "dary":
            return M.dary_tree(p["d"], p["depth"])
        if family == "regular-tree":
            return M.regular_tree(p["r"], p["depth"])
        if family == "er":
            n, c = p["n"], p["c"]
            return lambda rng: M.erdos_renyi(n, c, rng)
        if family == "rrg":
            n, r = p["n"], p["r"]
            return lambda rng: M.random_regular_graph(n, r, rng)
        if family == "gw-poisson":
            off, depth = M.GwOffspring.poisson(p["c"]), p["depth"]
            return lambda rng: M.galton_watson_tree(off, depth, rng)
    except KeyError as exc:
        raise InvalidArgument(f"model family {family!r} needs parameter {exc.args[0]!r}") from exc
    raise InvalidArgument(f"unknown model family {family!r}")


def _fixed(model, name):
    if not isinstance(model, MeetingModel):
        raise InvalidArgument(f"experiment {name!r} needs a fixed (non-random) model")
    return model


def _est(e: S.EstimateCI, target: float | None = None) -> dict:
    d = e.as_dict()
    if target is not None:
        d["oracle"] = target
        d["z_score"] = e.z_score(target)
    return d


# experiments ----------------------------------------------------------------------


def exp_kingman(model, replicates, seed, threads, clock, params):
    model = _fixed(model, "kingman")
    e = S.estimate_fixation_time(model, replicates, seed, threads, clock=clock)
    kingman_case = clock is Clock.EXPONENTIAL and model.all_pairs_positive() and model.unit_rates()
    target = oracle.kingman_expected_fixation(model.n) if kingman_case else None
    bounds = oracle.mean_fixation_bounds(model)
    return ExperimentOutput({"estimator": "fixation_time", **_est(e, target),
                             "kingman_bound": bounds.kingman, "tree_bound": bounds.tree})


def exp_winner_uniformity(model, replicates, seed, threads, clock, params):
    model = _fixed(model, "winner-uniformity")
    weights = params.get("weights")
    hist = S.winner_distribution(model, replicates, seed, weights=weights, threads=threads)
    if weights is None:
        expected = {a: 1.0 / model.n for a in range(model.n)}
    else:
        w = np.asarray(weights, dtype=np.float64)
        expected = {a: float(w[a] / w.sum()) for a in range(model.n) if w[a] > 0}
    stat, p = S.chi_square_uniform(hist, expected)
    rows = [{"agent": a, "frequency": hist.frequency(a), "expected": expected.get(a, 0.0)} for a in range(model.n)]
    return ExperimentOutput({"estimator": "winner_distribution", "chi_square": stat, "p_value": p,
                             "replicates": hist.total}, {"winners": rows})


def exp_pair_moment(model, replicates, seed, threads, clock, params):
    model = _fixed(model, "pair-moment")
    i, j = params.get("i", 0), params.get("j", 1)
    times = params.get("times", [0.25, 0.5, 1.0])
    rate = model.rate_of(i, j)
    curve = S.pair_moment_curve(model, i, j, times, replicates, seed, threads)
    fact = S.factorial_moment_curve(model, i, times, replicates, seed, threads, stream_key=1)
    rows = []
    for t, e, f in zip(times, curve, fact):
        rows.append({"time": t, "mean": e.mean, "std_error": e.std_error, "n": e.n_replicates,
                     "oracle": oracle.pair_moment_exact(rate, t), "z_score": e.z_score(oracle.pair_moment_exact(rate, t)),
                     "factorial_mean": f.mean, "factorial_std_error": f.std_error,
                     "factorial_oracle": oracle.second_factorial_moment(model, i, t)})
    worst = max(abs(r["z_score"]) for r in rows)
    return ExperimentOutput({"estimator": "pair_moment", "max_abs_z": worst, "points": rows}, {"pair_moment": rows})


def exp_er_density(model, replicates, seed, threads, clock, params):
    c = params["c"]
    e = S.estimate_density(model, replicates, seed, threads, clock=clock)
    return ExperimentOutput({"estimator": "density", **_est(e, oracle.er_limit_density(c)),
                             "abs_error": abs(e.mean - oracle.er_limit_density(c))})


def exp_rtree_density(model, replicates, seed, threads, clock, params):
    r, h = params["r"], params.get("h", 1e-3)
    grid = solver.Grid.uniform(h)
    star = solver.solve_r_regular(r, grid)
    base = solver.solve_dary_fixed_point(r - 1, grid)
    eps = oracle.epsilon_d(r - 1)
    sandwich = bool(np.all(star.values <= base.values + SANDWICH_SLACK)
                    and np.all((1 - eps) * base.values <= star.values + SANDWICH_SLACK))
    target = solver.solvent_probability(star, 1.0)
    e = S.estimate_density(model, replicates, seed, threads, clock=clock)
    return ExperimentOutput({"estimator": "density", **_est(e, target), "sandwich_holds": sandwich,
                             "asymptotic_2_over_r": 2.0 / r})


def exp_near_clique_bounds(model, replicates, seed, threads, clock, params):
    model = _fixed(model, "near-clique-bounds")
    r = params["r"]
    lower, upper = oracle.near_clique_density_bounds(r)
    e = S.estimate_density(model, replicates, seed, threads, clock=clock)
    return ExperimentOutput({"estimator": "density", **e.as_dict(), "lower_bound": lower, "upper_bound": upper,
                             "degree_bound": oracle.degree_lower_bound(model) / model.n,
                             "within": bool(lower - 3 * e.std_error <= e.mean <= upper + 3 * e.std_error)})


def exp_pgw_geometric(model, replicates, seed, threads, clock, params):
    c, t = params["c"], params.get("t", 1.0)
    hist = S.fortune_hist(model, t, replicates, seed, agent=0, clock=Clock.UNIFORM, threads=threads)
    solvent = hist.proportion_estimate(lambda k: k > 0)
    cond = hist.conditional_on_positive()
    kmax = params.get("kmax", 10)
    tv = S.total_variation(cond, lambda k: oracle.pgw_conditional_pmf(c, t, k), range(1, kmax + 1))
    rows = [{"k": k, "frequency": cond.frequency(k), "geometric": oracle.pgw_conditional_pmf(c, t, k)}
            for k in range(1, kmax + 1)]
    return ExperimentOutput({"estimator": "root_fortune", "solvent": _est(solvent, oracle.pgw_solvent_prob(c, t)),
                             "total_variation": tv}, {"conditional_pmf": rows})


def exp_torus_exponent(model, replicates, seed, threads, clock, params):
    model = _fixed(model, "torus-exponent")
    times = params.get("times") or list(np.geomspace(0.1, 1000.0, 25))
    curve, slope = S.density_decay_curve(model, times, replicates, seed, threads=threads)
    d, alpha = params["d"], params["alpha"]
    rows = [{"time": t, **e.as_dict()} for t, e in zip(times, curve)]
    return ExperimentOutput({"estimator": "density_decay", "fitted_slope": slope, "heuristic_slope": -d / alpha,
                             "gated": False}, {"density": rows})


def construction_equivalence(model: MeetingModel, t: float, replicates: int, seed: int,
                             threads: int = 1) -> dict[str, S.Histogram]:
    """Joint law of (sorted fortunes at ``t``, final winner) under the three
    constructions, each run on the same sampled schedules."""
    init = MoneyState.simple(model.n)
    names = ("direct", "augmented", "token")

    def work(rng, size):
        batch = sample_schedules(model, Clock.EXPONENTIAL, rng, size)
        out = {}
        for name in names:
            res = play_schedules(batch, init, name, rng)
            f = -np.sort(-res.fortunes_at(t), axis=1)
            w = res.winners()
            out[name] = S.Histogram.from_values(_keys(f, w))
        return out

    chunks = S.run_chunks(seed, replicates, work, 4096, threads)
    merged = {name: S.Histogram.empty() for name in names}
    for ch in chunks:
        for name in names:
            merged[name] = merged[name].merge(ch[name])
    return merged


def _keys(sorted_fortunes: np.ndarray, winners: np.ndarray) -> np.ndarray:
    # integer code: fortunes in base (n+1), then the winner
    n = sorted_fortunes.shape[1]
    powers = (n + 1) ** np.arange(n)
    return (sorted_fortunes @ powers) * n + winners


def exchangeability(model: MeetingModel, t: float, pattern: tuple[int, ...], replicates: int, seed: int,
                    threads: int = 1) -> dict[tuple[int, ...], S.Histogram]:
    """Token runs whose fortunes at ``t`` match ``pattern`` up to order.

    Returns, for each matching fortune vector, a histogram over the token
    sets held by the solvent agents (encoded by :func:`encode_blocks`).
    Given the fortune vector, every size-respecting assignment of tokens
    should be equally likely.
    """
    init = MoneyState.simple(model.n)
    target = np.asarray(sorted(pattern, reverse=True))
    if target.size != model.n or target.sum() != model.n:
        raise InvalidArgument("pattern must list one fortune per agent and sum to n")

    def work(rng, size):
        batch = sample_schedules(model, Clock.EXPONENTIAL, rng, size)
        res = play_schedules(batch, init, "token", rng)
        f = res.fortunes_at(t)
        hits = np.flatnonzero(np.all(-np.sort(-f, axis=1) == target, axis=1))
        out = []
        for r in hits.tolist():
            state = token_state_at(res.result(r), t)
            if not np.array_equal(state.fortunes(), f[r]):
                raise InvariantViolation("token sets disagree with fortunes")
            out.append((tuple(int(v) for v in f[r]), encode_blocks(tuple(s for s in state.sets if s))))
        return out

    chunks = S.run_chunks(seed, replicates, work, 4096, threads)
    grouped: dict[tuple[int, ...], list[int]] = {}
    for ch in chunks:
        for vec, code in ch:
            grouped.setdefault(vec, []).append(code)
    return {vec: S.Histogram.from_values(np.array(codes, dtype=np.int64)) for vec, codes in sorted(grouped.items())}


def encode_blocks(blocks: tuple[tuple[int, ...], ...]) -> int:
    """Token ``k`` in block ``b`` contributes ``(b + 1) * base**(k - 1)``."""
    base = len(blocks) + 1
    return sum((b + 1) * base ** (tok - 1) for b, block in enumerate(blocks) for tok in block)


def block_assignments(sizes: tuple[int, ...]) -> list[int]:
    """Codes of every assignment of tokens ``1..sum(sizes)`` to ordered blocks of the given sizes."""
    n = sum(sizes)
    codes = set()
    for perm in permutations(range(1, n + 1)):
        blocks, pos = [], 0
        for s in sizes:
            blocks.append(tuple(sorted(perm[pos:pos + s])))
            pos += s
        codes.add(encode_blocks(tuple(blocks)))
    return sorted(codes)


def stratified_uniformity(groups: dict[tuple[int, ...], S.Histogram]) -> tuple[float, int, float]:
    """Sum of per-stratum Pearson statistics against uniformity over the
    size-respecting assignments; returns (statistic, dof, p-value)."""
    stat, dof = 0.0, 0
    for vec, hist in groups.items():
        codes = block_assignments(tuple(v for v in vec if v > 0))
        if len(codes) < 2:
            continue
        s, _ = S.chi_square_uniform(hist, {c: 1.0 for c in codes})
        stat += s
        dof += len(codes) - 1
    if dof == 0:
        raise InvalidArgument("no stratum with more than one category")
    return stat, dof, max(float(chi2.sf(stat, dof)), S.P_VALUE_FLOOR)


def exp_construction_equivalence(model, replicates, seed, threads, clock, params):
    model = _fixed(model, "construction-equivalence")
    t = params.get("t", 0.5)
    hists = construction_equivalence(model, t, replicates, seed, threads)
    pairs = {}
    for a, b in (("direct", "augmented"), ("direct", "token"), ("augmented", "token")):
        stat, p = S.chi_square_homogeneity(hists[a], hists[b])
        pairs[f"{a}~{b}"] = {"chi_square": stat, "p_value": p}
    return ExperimentOutput({"estimator": "construction_equivalence", "t": t, "pairs": pairs,
                             "categories": len(set().union(*[h.bins for h in hists.values()]))})


def exp_exchangeability(model, replicates, seed, threads, clock, params):
    model = _fixed(model, "exchangeability")
    t = params.get("t", 0.4)
    pattern = tuple(params.get("pattern", (2, 2, 0, 0)))
    groups = exchangeability(model, t, pattern, replicates, seed, threads)
    stat, dof, p = stratified_uniformity(groups)
    return ExperimentOutput({"estimator": "exchangeability", "matches": sum(h.total for h in groups.values()),
                             "strata": len(groups), "chi_square": stat, "dof": dof, "p_value": p})


@dataclass(frozen=True)
class Experiment:
    run: Callable
    defaults: dict
    model: dict
    clock: Clock = Clock.EXPONENTIAL


EXPERIMENTS: dict[str, Experiment] = {
    "kingman": Experiment(exp_kingman, {"replicates": 2000}, {"family": "complete", "n": 200}),
    "winner-uniformity": Experiment(exp_winner_uniformity, {"replicates": 60000, "weights": None},
                                    {"family": "complete", "n": 6}),
    "pair-moment": Experiment(exp_pair_moment, {"replicates": 20000, "i": 0, "j": 1, "times": [0.25, 0.5, 1.0]},
                              {"family": "complete", "n": 50}),
    "construction-equivalence": Experiment(exp_construction_equivalence, {"replicates": 100000, "t": 0.5},
                                           {"family": "complete", "n": 4}),
    "er-density": Experiment(exp_er_density, {"replicates": 20, "c": 1.0}, {"family": "er", "n": 20000, "c": 1.0}),
    "rtree-density": Experiment(exp_rtree_density, {"replicates": 20, "r": 10, "h": 1e-3},
                                {"family": "rrg", "n": 10000, "r": 10}),
    "near-clique-bounds": Experiment(exp_near_clique_bounds, {"replicates": 2000, "r": 6},
                                     {"family": "near-cliques", "r": 6, "k": 50}),
    "pgw-geometric": Experiment(exp_pgw_geometric, {"replicates": 50000, "c": 1.0, "t": 1.0, "kmax": 10},
                                {"family": "gw-poisson", "c": 1.0, "depth": 12}, Clock.UNIFORM),
    "torus-exponent": Experiment(exp_torus_exponent, {"replicates": 200, "d": 1, "alpha": 2.0, "times": None},
                                 {"family": "torus", "m": 64, "d": 1, "alpha": 2.0}),
    "exchangeability": Experiment(exp_exchangeability, {"replicates": 100000, "t": 0.4, "pattern": [2, 2, 0, 0]},
                                  {"family": "complete", "n": 4}),
}

# experiment parameters that mirror a model parameter of the same name
_LINKED = {"c", "r", "d", "alpha"}

# value types for parameters whose default does not reveal one
PARAM_TYPES = {"weights": int, "times": float, "pattern": int}


def run_experiment(name: str, model_desc: dict | None = None, params: dict | None = None, seed: int = 0,
                   threads: int = 1, clock: Clock | str | None = None,
                   replicates: int | None = None) -> tuple[ExperimentOutput, dict]:
    """Run a registered experiment and return its output with the fully
    resolved configuration (defaults filled in)."""
    if name not in EXPERIMENTS:
        raise InvalidArgument(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    exp = EXPERIMENTS[name]
    params = dict(params or {})
    unknown = set(params) - set(exp.defaults) - {"replicates"}
    if unknown:
        raise InvalidArgument(f"unknown parameters for {name!r}: {sorted(unknown)}")
    desc = dict(model_desc) if model_desc else {}
    family = desc.pop("family", exp.model["family"])
    if family == exp.model["family"]:
        desc = {**{k: v for k, v in exp.model.items() if k != "family"}, **desc}
    desc = {**MODEL_DEFAULTS.get(family, {}), **coerce_model_params(family, desc)}
    merged = dict(exp.defaults)
    for k in _LINKED & set(merged) & set(desc):
        merged[k] = desc[k]
    merged.update(params)
    if replicates is not None:
        merged["replicates"] = replicates
    reps = int(merged.pop("replicates"))
    if reps < 2:
        raise InvalidArgument("replicates must be at least 2")
    clk = Clock(clock) if clock is not None else exp.clock
    model = build_model(family, desc)
    out = exp.run(model, reps, seed, threads, clk, merged)
    resolved = {"experiment": name, "model": {"family": family, **desc}, "clock": clk.value,
                "replicates": reps, "params": merged, "seed": seed, "threads": threads}
    return out, resolved
