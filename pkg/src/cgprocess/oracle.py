"""Closed forms and bounds for the compulsive-gambler process.

Pure functions; each validates its domain and raises ``InvalidArgument``
outside it.  Probability bounds are capped at 1 unless ``raw=True``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .exceptions import InvalidArgument
from .models import MeetingModel

__all__ = [
    "DaryBounds",
    "FixationBounds",
    "kingman_expected_fixation",
    "kingman_expected_fixation_sum",
    "pair_moment_exact",
    "second_factorial_moment",
    "weighted_sum_second_moment",
    "kingman_tail_bound",
    "mean_fixation_bounds",
    "degree_lower_bound",
    "sigma_m",
    "kappa_r",
    "near_clique_density_bounds",
    "epsilon_d",
    "dary_phi_bounds",
    "pgw_phi",
    "pgw_solvent_prob",
    "pgw_conditional_pmf",
    "er_limit_density",
    "mf_variance_bound",
    "REGISTRY",
]


def _unit(name, v):
    if not 0.0 <= v <= 1.0:
        raise InvalidArgument(f"{name} must lie in [0, 1]")


def kingman_expected_fixation(n: int) -> float:
    """Mean time for n blocks merging pairwise at rate 1 to reach one block."""
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    return 2.0 * (1.0 - 1.0 / n)


def kingman_expected_fixation_sum(n: int) -> float:
    """Same quantity summed level by level: sum over m=2..n of 1/C(m,2)."""
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    return math.fsum(1.0 / math.comb(m, 2) for m in range(2, n + 1))


def pair_moment_exact(rate: float, t: float) -> float:
    """E[X_i(t) X_j(t)] for the simple start."""
    if rate < 0 or t < 0:
        raise InvalidArgument("rate and t must be nonnegative")
    return math.exp(-rate * t)


def second_factorial_moment(model: MeetingModel, i: int, t: float) -> float:
    """E[X_i(t)(X_i(t) - 1)] = sum over neighbours j of 1 - exp(-rate_ij t)."""
    if t < 0:
        raise InvalidArgument("t must be nonnegative")
    if not 0 <= i < model.n:
        raise InvalidArgument("agent out of range")
    mask = (model.i == i) | (model.j == i)
    return math.fsum((-np.expm1(-model.rate[mask] * t)).tolist())


def weighted_sum_second_moment(model: MeetingModel, f, t: float) -> float:
    """E[(sum_i f_i X_i(t))^2] for the simple start.

    Non-edges contribute ``f_i f_j`` to the cross term (their rate is 0), so
    the sum is written as ``(sum f)^2`` plus edge corrections.
    """
    if t < 0:
        raise InvalidArgument("t must be nonnegative")
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (model.n,):
        raise InvalidArgument("f must have one entry per agent")
    decay = np.exp(-model.rate * t)
    fi, fj = f[model.i], f[model.j]
    # diagonal: f_i^2 (1 + sum_j (1 - e)); cross: f_i f_j e, counted twice per pair
    diag = float(f @ f) + math.fsum(((fi**2 + fj**2) * (1.0 - decay)).tolist())
    cross = float(f.sum() ** 2 - f @ f) + math.fsum((2.0 * fi * fj * (decay - 1.0)).tolist())
    return diag + cross


def kingman_tail_bound(r: int, delta: float, t: float, raw: bool = False) -> float:
    """Bound on P(N(t) > r) when every pair meets at rate at least ``delta``."""
    if r < 2 or not delta > 0 or not t > 0:
        raise InvalidArgument("need r >= 2, delta > 0, t > 0")
    v = 2.0 / (r * delta * t)
    return v if raw else min(1.0, v)


class FixationBounds(NamedTuple):
    kingman: float | None  # None when some pair never meets
    tree: float


def mean_fixation_bounds(model: MeetingModel) -> FixationBounds:
    """Upper bounds on the mean absorption time.

    ``kingman`` is 2/min-rate and needs every pair to meet; ``tree`` is
    (n - 1)/min positive rate and holds for any connected model.
    """
    if model.n == 1:
        return FixationBounds(0.0, 0.0)
    if model.n_edges == 0:
        return FixationBounds(None, 0.0)
    delta = float(model.rate.min())
    kingman = 2.0 / delta if model.all_pairs_positive() else None
    return FixationBounds(kingman, (model.n - 1) / delta)


def degree_lower_bound(model: MeetingModel) -> float:
    """Lower bound on the mean number of finally solvent agents."""
    return math.fsum((1.0 / (1.0 + model.degrees())).tolist())


_EXACT_SIGMA_LIMIT = 10**4


def sigma_m(m: int) -> float:
    """Probability that, among the first ``m`` token holders of a block, the
    ``m``-th is never involved before the others coalesce:
    prod_{i=0}^{m-3} C(m-i-1, 2) / (C(m-i, 2) - 1)."""
    if m < 2:
        raise InvalidArgument("m must be at least 2")
    if m <= _EXACT_SIGMA_LIMIT:
        acc = Fraction(1)
        for i in range(m - 2):
            acc *= Fraction(math.comb(m - i - 1, 2), math.comb(m - i, 2) - 1)
        return float(acc)
    logv = 0.0
    for i in range(m - 2):
        k = m - i
        logv += math.log((k - 1) * (k - 2) / 2.0) - math.log(k * (k - 1) / 2.0 - 1.0)
    return math.exp(logv)


def kappa_r(r: int) -> float:
    if r < 2:
        raise InvalidArgument("r must be at least 2")
    return math.fsum(sigma_m(m) for m in range(2, r + 1))


def near_clique_density_bounds(r: int) -> tuple[float, float]:
    """(lower, upper) bounds on the solvent density for the ring of near-cliques."""
    if r < 3:
        raise InvalidArgument("r must be at least 3")
    return 1.0 / (r + 1), (1.0 / r) * (1.0 + 2.0 * kappa_r(r) / (r - 1))


def epsilon_d(d: int) -> float:
    if d < 1:
        raise InvalidArgument("d must be at least 1")
    return (2.0 / d) * math.log1p(d / 2.0)


@dataclass(frozen=True)
class DaryBounds:
    lower: float | np.ndarray
    upper: float | np.ndarray
    epsilon_d: float


def dary_phi_bounds(d: int, z, t) -> DaryBounds:
    """Two-sided bounds on 1 - E[z^X(t)] at the root of the infinite d-ary
    tree; ``z`` and ``t`` may be arrays (broadcast together)."""
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any((z < 0) | (z > 1)) or np.any((t < 0) | (t > 1)):
        raise InvalidArgument("z and t must lie in [0, 1]")
    eps = epsilon_d(d)
    a = 1.0 - z
    lower = 2.0 * a * (1.0 - eps) / (2.0 * (1.0 - eps) + d * a * t)
    upper = 2.0 * a / (2.0 + d * a * t)
    # equal at t = 0, where the two expressions can round in opposite directions
    lower = np.minimum(lower, upper)
    if lower.ndim == 0:
        return DaryBounds(float(lower), float(upper), eps)
    return DaryBounds(lower, upper, eps)


def pgw_phi(c: float, z, t):
    """1 - E[z^X(t)] at the root of a Poisson(c) Galton-Watson tree; accepts arrays."""
    if c < 0:
        raise InvalidArgument("c must be nonnegative")
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any((z < 0) | (z > 1)) or np.any((t < 0) | (t > 1)):
        raise InvalidArgument("z and t must lie in [0, 1]")
    out = 2.0 * (1.0 - z) / (2.0 + c * (1.0 - z) * t)
    return float(out) if out.ndim == 0 else out


def pgw_solvent_prob(c: float, t: float) -> float:
    if c < 0:
        raise InvalidArgument("c must be nonnegative")
    _unit("t", t)
    return 2.0 / (2.0 + c * t)


def pgw_conditional_pmf(c: float, t: float, k: int) -> float:
    """P(X(t) = k | X(t) > 0): geometric on 1, 2, ... with success prob 2/(2+ct)."""
    if k < 1:
        raise InvalidArgument("k must be at least 1")
    p = pgw_solvent_prob(c, t)
    return p * (1.0 - p) ** (k - 1)


def er_limit_density(c: float) -> float:
    if c < 0:
        raise InvalidArgument("c must be nonnegative")
    return 2.0 / (2.0 + c)


def mf_variance_bound(nu_star: float, L_f: float, t: float) -> float:
    """Growth bound on E M_f(t)^2 - M_f(0)^2 for the standardized process."""
    if nu_star < 0 or L_f < 0 or t < 0:
        raise InvalidArgument("inputs must be nonnegative")
    return 0.5 * nu_star * L_f**2 * t


REGISTRY = {
    "kingman_expected_fixation": kingman_expected_fixation,
    "pair_moment_exact": pair_moment_exact,
    "kingman_tail_bound": kingman_tail_bound,
    "sigma_m": sigma_m,
    "kappa_r": kappa_r,
    "near_clique_density_bounds": near_clique_density_bounds,
    "epsilon_d": epsilon_d,
    "dary_phi_bounds": dary_phi_bounds,
    "pgw_phi": pgw_phi,
    "pgw_solvent_prob": pgw_solvent_prob,
    "pgw_conditional_pmf": pgw_conditional_pmf,
    "er_limit_density": er_limit_density,
    "mf_variance_bound": mf_variance_bound,
}
