"""Generating-function recursions on trees under uniform first-meeting times.

The state is ``phi(z, t) = 1 - E[z^X(t)]`` for the root fortune ``X`` together
with its running time integral ``psi(z, t) = int_0^t phi(z, u) du``.  Every
tree family reduces to

    phi(z, t) = int_z^1 G(1 - psi_children(xi, t)) d xi

with ``G`` a product over children (finite trees), ``x**d`` (infinite d-ary
tree) or an offspring generating function (Galton-Watson).  Self-similar
families are marched forward in ``t`` with Heun's predictor-corrector; the
``xi`` integral is a composite trapezoid on a uniform ``z`` grid.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import InvalidArgument
from .models import GwOffspring, MeetingModel, rooted_children

__all__ = [
    "Grid",
    "PgfTable",
    "OffGridWarning",
    "solve_tree_recursion",
    "solve_dary_fixed_point",
    "solve_gw",
    "solve_r_regular",
    "solvent_probability",
    "refine_and_estimate_error",
]


class OffGridWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Grid:
    z_points: int = 101
    t_step: float = 0.01
    t_max: float = 1.0

    def __post_init__(self):
        if self.z_points < 3:
            raise InvalidArgument("need at least 3 z points")
        if not 0 < self.t_max <= 1 or not self.t_step > 0:
            raise InvalidArgument("need 0 < t_max <= 1 and t_step > 0")
        steps = self.t_max / self.t_step
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise InvalidArgument("t_step must divide t_max")

    @classmethod
    def uniform(cls, h: float, t_max: float = 1.0) -> "Grid":
        """Grid with ``dz = dt = h``."""
        return cls(int(round(1.0 / h)) + 1, h, t_max)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.t_step))

    @property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.z_points)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_steps + 1)

    @property
    def dz(self) -> float:
        return 1.0 / (self.z_points - 1)

    def refined(self) -> "Grid":
        return Grid(2 * self.z_points - 1, self.t_step / 2, self.t_max)


@dataclass(frozen=True, eq=False)
class PgfTable:
    """``values[k, m] = phi(z_k, t_m)`` and ``psi[k, m]`` its time integral."""

    values: np.ndarray
    psi: np.ndarray
    grid: Grid
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for a in (self.values, self.psi):
            a.setflags(write=False)

    def t_index(self, t: float) -> tuple[int, bool]:
        pos = t / self.grid.t_step
        m = int(round(pos))
        m = min(max(m, 0), self.grid.n_steps)
        return m, abs(pos - m) < 1e-9

    def at(self, z_index: int, t: float) -> float:
        m, _ = self.t_index(t)
        return float(self.values[z_index, m])

    def check_invariants(self, tol: float = 1e-12) -> None:
        v = self.values
        if v.min() < -tol or v.max() > 1 + tol:
            raise AssertionError("phi left [0, 1]")
        if np.abs(v[-1, :]).max() > tol:
            raise AssertionError("phi(1, t) != 0")
        if np.abs(v[:, 0] - (1 - self.grid.z)).max() > tol:
            raise AssertionError("phi(z, 0) != 1 - z")
        if np.any(np.diff(v, axis=0) > tol):
            raise AssertionError("phi increases in z")

    def to_csv(self) -> str:
        """First row is the z grid, first column the t grid."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t\\z"] + [repr(float(z)) for z in self.grid.z])
        for m, t in enumerate(self.grid.t):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in self.values[:, m]])
        return buf.getvalue()

    def sidecar(self) -> dict:
        g = self.grid
        return {
            "scheme": "trapezoid in z, Heun in t",
            "z_points": g.z_points,
            "t_step": g.t_step,
            "t_max": g.t_max,
            **self.meta,
        }

    def sidecar_json(self) -> str:
        return json.dumps(self.sidecar(), sort_keys=True)


def _integrate_from_right(y: np.ndarray, dz: float) -> np.ndarray:
    """``out[k] = int_{z_k}^1 y`` by composite trapezoid along axis 0."""
    seg = 0.5 * dz * (y[1:] + y[:-1])
    out = np.zeros_like(y)
    out[:-1] = np.cumsum(seg[::-1], axis=0)[::-1]
    return out


def _integrate_in_time(phi: np.ndarray, dt: float) -> np.ndarray:
    seg = 0.5 * dt * (phi[:, 1:] + phi[:, :-1])
    out = np.zeros_like(phi)
    out[:, 1:] = np.cumsum(seg, axis=1)
    return out


def solve_tree_recursion(tree: MeetingModel, root: int, grid: Grid) -> PgfTable:
    """Bottom-up evaluation on a finite tree.

    Identical rooted subtrees share one table, so complete trees cost one
    solve per level.
    """
    children = rooted_children(tree, root)
    order = []
    stack = [root]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(children[v])
    z = grid.z
    dz, dt = grid.dz, grid.t_step
    leaf_phi = np.repeat((1.0 - z)[:, None], grid.n_steps + 1, axis=1)
    shape_of: dict[int, tuple] = {}
    tables: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
    for v in reversed(order):
        key = tuple(sorted(shape_of[c] for c in children[v]))
        shape_of[v] = key
        if key in tables:
            continue
        if not key:
            phi = leaf_phi
        else:
            prod = np.ones_like(leaf_phi)
            for child_key in key:
                prod *= 1.0 - tables[child_key][1]
            phi = _integrate_from_right(prod, dz)
        tables[key] = (phi, _integrate_in_time(phi, dt))
    phi, psi = tables[shape_of[root]]
    return PgfTable(phi.copy(), psi.copy(), grid, {"family": "tree", "n": tree.n, "root": root})


def _march(G: Callable[[np.ndarray], np.ndarray], grid: Grid, meta: dict) -> PgfTable:
    """Solve ``d psi/dt = phi = int_z^1 G(1 - psi) d xi`` with ``psi(., 0) = 0``."""
    M, steps = grid.z_points, grid.n_steps
    dz, dt = grid.dz, grid.t_step

    def rhs(psi):
        return _integrate_from_right(G(1.0 - psi), dz)

    phi = np.empty((M, steps + 1))
    psi = np.empty((M, steps + 1))
    psi[:, 0] = 0.0
    cur_psi = np.zeros(M)
    cur_phi = rhs(cur_psi)
    phi[:, 0] = cur_phi
    for m in range(steps):
        pred = cur_psi + dt * cur_phi
        cur_psi = cur_psi + 0.5 * dt * (cur_phi + rhs(pred))
        cur_phi = rhs(cur_psi)
        psi[:, m + 1] = cur_psi
        phi[:, m + 1] = cur_phi
    return PgfTable(phi, psi, grid, meta)


def solve_dary_fixed_point(d: int, grid: Grid) -> PgfTable:
    """Root of the infinite tree in which every vertex has ``d`` children."""
    if d < 1:
        raise InvalidArgument("d must be at least 1")
    return _march(lambda x: x**d, grid, {"family": "dary", "d": d})


def solve_gw(offspring: GwOffspring, grid: Grid) -> PgfTable:
    """Annealed table for a Galton-Watson tree with the given offspring law."""
    return _march(offspring.pgf, grid, {"family": "gw", "max_children": offspring.max_children,
                                        "mean_offspring": offspring.mean()})


def solve_r_regular(r: int, grid: Grid) -> PgfTable:
    """Root of the infinite r-regular tree: ``r`` independent (r-1)-ary subtrees."""
    if r < 2:
        raise InvalidArgument("r must be at least 2")
    base = solve_dary_fixed_point(r - 1, grid)
    phi = _integrate_from_right((1.0 - base.psi) ** r, grid.dz)
    return PgfTable(phi, _integrate_in_time(phi, grid.t_step), grid, {"family": "regular", "r": r})


def solvent_probability(table: PgfTable, t: float) -> float:
    """``phi(0, t) = P(X(t) > 0)``; off-grid ``t`` snaps to the nearest node with a warning."""
    m, exact = table.t_index(t)
    if not exact:
        warnings.warn(f"t={t} is not a grid node; using t={m * table.grid.t_step}", OffGridWarning,
                      stacklevel=2)
    return float(table.values[0, m])


def refine_and_estimate_error(solve: Callable[[Grid], PgfTable], grid: Grid) -> tuple[float, float]:
    """Solve on ``grid`` and on the grid with both steps halved.

    Returns the refined ``phi(0, t_max)`` and ``|coarse - fine| / 3``, the
    Richardson error estimate for a second-order scheme.
    """
    coarse = solve(grid).values[0, -1]
    fine = solve(grid.refined()).values[0, -1]
    return float(fine), float(abs(coarse - fine) / 3.0)
