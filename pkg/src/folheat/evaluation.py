"""Roll-out prediction, error metrics, flux recovery, field sampling, and the
NN-vs-FE speed benchmark.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import neural, sampling
from .errors import ValidationError
from .fe_solver import solve_transient
from .fem import (
    ConductivityField,
    ReducedSystem,
    b_matrix,
    gauss_rule_2x2,
    shape_gradients_ref,
    shape_values,
)
from .mesh import DofMap, Mesh
from .neural import ModelBundle

LINE_TOL = 1e-9  # nodes this close to a section line count as lying on it
CANONICAL_GAUSSIAN_SEED = 1234


@dataclass(frozen=True)
class RolloutResult:
    """Autoregressive prediction; trajectory[0] is the initial full field."""

    trajectory: list[np.ndarray]
    per_step_err: np.ndarray | None
    dt: float

    @property
    def n_steps(self) -> int:
        return len(self.trajectory) - 1


@dataclass(frozen=True)
class BenchmarkResult:
    t_nn: float  # median seconds for n_steps network inferences
    t_fe: float  # median seconds for n_steps FE solves
    ratio: float  # t_fe / t_nn; NaN when undefined
    n_steps: int
    repeats: int
    ratio_defined: bool


def rollout(model: ModelBundle, dofs: DofMap, t0: np.ndarray, n_steps: int) -> RolloutResult:
    """March the learned operator: free values through the net, Dirichlet
    values re-inserted each step. Out-of-range temperatures are kept as-is."""
    neural.check_fingerprint(model, dofs)
    if n_steps < 0:
        raise ValidationError(f"n_steps must be >= 0, got {n_steps}")
    t0 = np.asarray(t0, dtype=np.float64)
    if t0.shape != (dofs.n_nodes,):
        raise ValidationError(f"t0 has shape {t0.shape}, mesh has {dofs.n_nodes} nodes")
    fields = [t0.copy()]
    free = dofs.extract_free(t0)
    for _ in range(n_steps):
        free = neural.forward_batch(model, free[None, :])[0]
        fields.append(dofs.merge(free))
    return RolloutResult(fields, None, model.dt)


def relative_l2(t_nn: np.ndarray, t_fe: np.ndarray) -> float:
    """||t_nn - t_fe||_2 / ||t_fe||_2."""
    t_nn = np.asarray(t_nn, dtype=np.float64)
    t_fe = np.asarray(t_fe, dtype=np.float64)
    if t_nn.shape != t_fe.shape:
        raise ValidationError(f"shape mismatch: {t_nn.shape} vs {t_fe.shape}")
    ref = np.linalg.norm(t_fe)
    if ref == 0.0:
        raise ValidationError("reference field has zero norm")
    return float(np.linalg.norm(t_nn - t_fe) / ref)


def per_step_errors(pred: list[np.ndarray], ref: list[np.ndarray]) -> np.ndarray:
    """relative_l2 per step for two equal-length trajectories (step 0 included)."""
    if len(pred) != len(ref):
        raise ValidationError(f"trajectories have {len(pred)} vs {len(ref)} steps")
    return np.array([relative_l2(p, r) for p, r in zip(pred, ref)])


def heat_flux(mesh: Mesh, k: ConductivityField, t: np.ndarray) -> np.ndarray:
    """Nodal heat flux q = -k grad T, shape (n_nodes, 2).

    Gauss-point fluxes of each element are averaged (unweighted) onto all
    nodes of the elements touching a node.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (mesh.n_nodes,):
        raise ValidationError(f"field shape {t.shape} does not match mesh ({mesh.n_nodes})")
    if k.values.shape[0] != mesh.n_nodes:
        raise ValidationError("conductivity field does not match mesh")
    rule = gauss_rule_2x2()
    acc = np.zeros((mesh.n_nodes, 2))
    counts = np.zeros(mesh.n_nodes)
    for e in range(mesh.n_elems):
        conn = mesh.elems[e]
        coords = mesh.nodes[conn]
        t_e = t[conn]
        k_e = k.values[conn]
        q_mean = np.zeros(2)
        for xi, eta in rule.points:
            b, _ = b_matrix(coords, xi, eta)
            k_gp = float(shape_values(xi, eta) @ k_e)
            q_mean += -k_gp * (b @ t_e)
        q_mean /= rule.points.shape[0]
        acc[conn] += q_mean
        counts[conn] += 1.0
    counts[counts == 0] = 1.0
    return acc / counts[:, None]


def cross_section(mesh: Mesh, field: np.ndarray, axis: str, value: float) -> np.ndarray:
    """Sample a field along the line axis=value; returns (free coordinate, value) rows.

    Nodes within 1e-9 of the line are used directly; otherwise the field is
    interpolated where the line crosses element edges (exact for the
    bilinear basis restricted to an edge).
    """
    field = np.asarray(field, dtype=np.float64)
    if field.shape != (mesh.n_nodes,):
        raise ValidationError(f"field shape {field.shape} does not match mesh")
    if axis not in ("x", "y"):
        raise ValidationError(f"axis must be 'x' or 'y', got {axis!r}")
    fixed = 0 if axis == "x" else 1
    moving = 1 - fixed
    coords = mesh.nodes[:, fixed]
    if value < coords.min() - LINE_TOL or value > coords.max() + LINE_TOL:
        raise ValidationError(
            f"{axis}={value} lies outside the domain range [{coords.min()}, {coords.max()}]"
        )

    on_line = np.flatnonzero(np.abs(coords - value) <= LINE_TOL)
    if on_line.size:
        pts = np.column_stack([mesh.nodes[on_line, moving], field[on_line]])
        return pts[np.argsort(pts[:, 0])]

    seen = {}
    for conn in mesh.elems:
        for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
            na, nb = conn[a], conn[b]
            ca, cb = coords[na], coords[nb]
            if (ca - value) * (cb - value) > 0 or ca == cb:
                continue
            t_param = (value - ca) / (cb - ca)
            pos = mesh.nodes[na, moving] + t_param * (mesh.nodes[nb, moving] - mesh.nodes[na, moving])
            val = field[na] + t_param * (field[nb] - field[na])
            seen[round(pos / LINE_TOL)] = (pos, val)
    pts = np.array(sorted(seen.values()), dtype=np.float64)
    return pts.reshape(-1, 2)


class _PointLocator:
    """Bucketed point-in-element lookup with Newton inversion of the bilinear map."""

    def __init__(self, mesh: Mesh, n_buckets: int | None = None):
        self.mesh = mesh
        lo = mesh.nodes.min(axis=0)
        hi = mesh.nodes.max(axis=0)
        span = np.maximum(hi - lo, 1e-300)
        nb = n_buckets or max(1, int(np.sqrt(mesh.n_elems)))
        self.lo, self.span, self.nb = lo, span, nb
        self.buckets: dict[tuple[int, int], list[int]] = {}
        for e in range(mesh.n_elems):
            xy = mesh.elem_coords(e)
            b0 = self._bucket(xy.min(axis=0))
            b1 = self._bucket(xy.max(axis=0))
            for bx in range(b0[0], b1[0] + 1):
                for by in range(b0[1], b1[1] + 1):
                    self.buckets.setdefault((bx, by), []).append(e)

    def _bucket(self, p):
        idx = np.floor((p - self.lo) / self.span * self.nb).astype(int)
        return tuple(np.clip(idx, 0, self.nb - 1))

    def locate(self, p) -> tuple[int, float, float]:
        """(element, xi, eta) containing the point; raises when outside."""
        p = np.asarray(p, dtype=np.float64)
        for e in self.buckets.get(self._bucket(p), ()):  # bucket order is deterministic
            ref = self._invert(e, p)
            if ref is not None:
                return (e, ref[0], ref[1])
        raise ValidationError(f"point ({p[0]}, {p[1]}) lies outside the mesh")

    def _invert(self, e: int, p, tol: float = 1e-12):
        coords = self.mesh.elem_coords(e)
        xi = np.zeros(2)
        for _ in range(25):
            n = shape_values(xi[0], xi[1])
            res = n @ coords - p
            if np.abs(res).max() < tol:
                break
            jac = shape_gradients_ref(xi[0], xi[1]) @ coords
            delta = np.linalg.solve(jac.T, res)
            xi -= delta
            if np.abs(xi).max() > 3.0:  # diverging; point is far from this element
                return None
        if np.abs(xi).max() <= 1.0 + 1e-9:
            return np.clip(xi, -1.0, 1.0)
        return None


def upsample_field(mesh: Mesh, field: np.ndarray, rx: int, ry: int, fill: float | None = None) -> np.ndarray:
    """Resample onto an rx-by-ry grid over the mesh bounding box.

    Row i is the i-th y level (ascending), column j the j-th x position.
    Query points outside the mesh raise unless `fill` is given.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.shape != (mesh.n_nodes,):
        raise ValidationError(f"field shape {field.shape} does not match mesh")
    if rx < 2 or ry < 2:
        raise ValidationError(f"resampling grid must be at least 2x2, got {rx}x{ry}")
    locator = _PointLocator(mesh)
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    xs = np.linspace(lo[0], hi[0], rx)
    ys = np.linspace(lo[1], hi[1], ry)
    out = np.empty((ry, rx))
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            try:
                e, xi, eta = locator.locate((x, y))
            except ValidationError:
                if fill is None:
                    raise
                out[i, j] = fill
                continue
            out[i, j] = shape_values(xi, eta) @ field[mesh.elems[e]]
    return out


def canonical_test_fields(mesh: Mesh, dofs: DofMap) -> dict[str, np.ndarray]:
    """The five evaluation initial fields, Dirichlet entries overwritten."""
    x = mesh.nodes[:, 0]
    y = mesh.nodes[:, 1]
    gaussian_free = sampling.gen_gaussian(
        mesh, dofs, np.random.default_rng(CANONICAL_GAUSSIAN_SEED)
    )
    raw = {
        "sin10y": 0.5 * (np.sin(10.0 * y) + 1.0),
        "gaussian": dofs.merge(gaussian_free),
        "trig2": 0.5 * x**2 * np.abs(np.sin(10.0 * x) + np.cos(10.0 * y)),
        "const05": np.full(mesh.n_nodes, 0.5),
        "abs_sin10x": np.abs(np.sin(10.0 * x)),
    }
    return {name: dofs.merge(dofs.extract_free(f)) for name, f in raw.items()}


def benchmark_speed(
    model: ModelBundle,
    rs: ReducedSystem,
    dofs: DofMap,
    t0: np.ndarray,
    n_steps: int = 10,
    repeats: int = 5,
) -> BenchmarkResult:
    """Median wall-clock of n_steps network inferences vs n_steps FE solves.

    Both sides run in this process on whatever thread budget is active, so
    the comparison is apples-to-apples. A warm-up pass precedes the timing.
    """
    if repeats < 5:
        raise ValidationError(f"repeats must be >= 5 for a stable median, got {repeats}")
    rollout(model, dofs, t0, n_steps)  # warm-up
    solve_transient(rs, dofs, t0, n_steps)

    times_nn = []
    times_fe = []
    for _ in range(repeats):
        tic = time.perf_counter()
        rollout(model, dofs, t0, n_steps)
        times_nn.append(time.perf_counter() - tic)
        tic = time.perf_counter()
        solve_transient(rs, dofs, t0, n_steps)
        times_fe.append(time.perf_counter() - tic)
    t_nn = float(np.median(times_nn))
    t_fe = float(np.median(times_fe))
    defined = n_steps > 0 and t_nn > 0
    ratio = t_fe / t_nn if defined else float("nan")
    return BenchmarkResult(t_nn, t_fe, ratio, n_steps, repeats, defined)


def write_error_csv(path, errors: np.ndarray, dt: float) -> None:
    """Per-step relative error CSV: step, t, E_rr."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "t", "E_rr"])
        for i, e in enumerate(errors):
            w.writerow([i, repr(float(i * dt)), repr(float(e))])


def write_section_csv(path, section: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["coord", "value"])
        for coord, val in section:
            w.writerow([repr(float(coord)), repr(float(val))])


def write_pgm(path, grid: np.ndarray) -> None:
    """8-bit grayscale PGM of a 2-d array; [min, max] maps linearly to [0, 255].

    Rows are flipped so the first image row is the top of the domain. A
    constant field renders mid-gray.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValidationError(f"PGM output needs a 2-d grid, got shape {grid.shape}")
    lo = grid.min()
    span = grid.max() - lo
    if span <= 0:
        pixels = np.full(grid.shape, 127, dtype=np.uint8)
    else:
        pixels = np.round((grid - lo) / span * 255.0).astype(np.uint8)
    pixels = pixels[::-1]
    header = f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())
