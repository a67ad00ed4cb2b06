"""Reference finite-element time marcher and steady-state solver.

This is the ground truth the learned operator is judged against. The linear
solves use Jacobi-preconditioned conjugate gradients (the reduced operators
are SPD for alpha in {0.5, 1}); a dense fallback exists for debugging small
systems.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, NumericalError, ValidationError
from .fem import ReducedSystem, SystemMatrices, split_blocks
from .mesh import DofMap, Mesh

DEFAULT_TOL = 1e-12


@dataclass(frozen=True)
class Trajectory:
    """Time series of full nodal fields; fields[0] is the initial condition."""

    fields: list[np.ndarray]
    dt: float

    @property
    def n_steps(self) -> int:
        return len(self.fields) - 1


def linear_solve_spd(A, b: np.ndarray, tol: float = DEFAULT_TOL, max_iter: int | None = None) -> np.ndarray:
    """Solve A x = b for SPD A with Jacobi-preconditioned CG.

    Stops when ||A x - b|| <= tol * ||b||; deterministic for fixed inputs.
    """
    if tol <= 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if n == 0:
        return np.zeros(0)
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return np.zeros(n)
    if max_iter is None:
        max_iter = 10 * n

    diag = A.diagonal() if sp.issparse(A) else np.diagonal(np.asarray(A))
    if np.any(diag <= 0):
        raise NumericalError("matrix diagonal has non-positive entries; not SPD")

    x = np.zeros(n)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    target = tol * norm_b
    for _ in range(max_iter):
        ap = A @ p
        pap = float(p @ ap)
        if pap <= 0:
            raise NumericalError("conjugate gradient broke down; matrix not SPD?")
        step = rz / pap
        x += step * p
        r -= step * ap
        if np.linalg.norm(r) <= target:
            return x
        z = r / diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"PCG did not converge in {max_iter} iterations: "
        f"residual {np.linalg.norm(r):.3e}, target {target:.3e}"
    )


def linear_solve_dense(A, b: np.ndarray) -> np.ndarray:
    """Direct dense solve, for debugging small systems (n <= 500)."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] > 500:
        raise ValidationError("dense fallback is limited to n <= 500 dofs")
    if b.shape[0] == 0:
        return np.zeros(0)
    dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=np.float64)
    return np.linalg.solve(dense, b)


def step_fe(rs: ReducedSystem, dofs: DofMap, t_n: np.ndarray) -> np.ndarray:
    """One implicit step: solve A_ff T_f = B_ff T^n_f + rhs_const, merge Dirichlet."""
    t_free = dofs.extract_free(t_n)
    rhs = rs.B_ff @ t_free + rs.rhs_const
    t_next_free = linear_solve_spd(rs.A_ff, rhs)
    return dofs.merge(t_next_free)


def solve_transient(rs: ReducedSystem, dofs: DofMap, t0: np.ndarray, n_steps: int) -> Trajectory:
    """March n_steps from t0; the initial field is stored unmodified."""
    if n_steps < 0:
        raise ValidationError(f"n_steps must be >= 0, got {n_steps}")
    fields = [np.array(t0, dtype=np.float64)]
    for _ in range(n_steps):
        fields.append(step_fe(rs, dofs, fields[-1]))
    return Trajectory(fields, rs.dt)


def steady_state(sys: SystemMatrices, dofs: DofMap) -> np.ndarray:
    """Long-time limit: solve K_ff T_f = -K_fd T_d."""
    if dofs.constrained_nodes.size == 0:
        raise NumericalError("steady state needs at least one Dirichlet dof (singular otherwise)")
    k_ff, k_fd = split_blocks(sys.K, dofs)
    rhs = -(k_fd @ dofs.constrained_values)
    t_free = linear_solve_spd(k_ff, rhs)
    return dofs.merge(t_free)


def save_field(path, mesh: Mesh, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (mesh.n_nodes,):
        raise ValidationError(f"field shape {values.shape} does not match mesh ({mesh.n_nodes})")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["node_id", "x", "y", "T"])
        for i in range(mesh.n_nodes):
            w.writerow([i, repr(float(mesh.nodes[i, 0])), repr(float(mesh.nodes[i, 1])),
                        repr(float(values[i]))])


def load_field(path_or_text, mesh: Mesh | None = None) -> np.ndarray:
    """Read a `node_id,x,y,T` CSV back into a nodal array."""
    if hasattr(path_or_text, "read"):
        text = path_or_text.read()
    else:
        p = Path(path_or_text)
        text = p.read_text()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:4]] != ["node_id", "x", "y", "T"]:
        raise ValidationError(f"field CSV must start with 'node_id,x,y,T', got {header}")
    rows = {}
    for row in reader:
        if not row:
            continue
        rows[int(row[0])] = float(row[3])
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise ValidationError("field CSV node ids must be contiguous from 0")
    if mesh is not None and n != mesh.n_nodes:
        raise ValidationError(f"field CSV has {n} rows, mesh has {mesh.n_nodes} nodes")
    return np.array([rows[i] for i in range(n)])


def step_filename(i: int) -> str:
    return f"step_{i:04d}.csv"


def save_trajectory(out_dir, mesh: Mesh, traj: Trajectory) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, field in enumerate(traj.fields):
        save_field(out / step_filename(i), mesh, field)


def load_trajectory(in_dir, dt: float, mesh: Mesh | None = None) -> Trajectory:
    in_path = Path(in_dir)
    fields = []
    i = 0
    while (in_path / step_filename(i)).exists():
        fields.append(load_field(in_path / step_filename(i), mesh))
        i += 1
    if not fields:
        raise ValidationError(f"no step_*.csv files found in {in_path}")
    return Trajectory(fields, dt)
