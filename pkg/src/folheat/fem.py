"""Bilinear quad elements: shape functions, 2x2 Gauss quadrature, element
matrices, global assembly, and reduction to the free-dof system.

The element basis lives on the reference square [-1, 1]^2 with nodes ordered
counter-clockwise from (-1, -1). Nodal conductivity is interpolated to the
Gauss points with the same basis, so heterogeneous fields integrate exactly
for the 2x2 rule (integrands are at most cubic per axis).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError, ValidationError
from .mesh import SINGULAR_JACOBIAN_TOL, DofMap, Mesh

GAUSS_COORD = 1.0 / np.sqrt(3.0)

VALID_ALPHAS = (0.0, 0.5, 1.0)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (n, 2) reference coordinates
    weights: np.ndarray  # (n,)


@dataclass(frozen=True)
class MaterialParams:
    """Volumetric heat capacity factors: density [kg/m^3] and capacity [J/(kg K)]."""

    rho: float = 10.0
    c: float = 1.0

    def __post_init__(self):
        if self.rho <= 0 or self.c <= 0:
            raise ValidationError(f"rho and c must be positive, got {self.rho}, {self.c}")


@dataclass(frozen=True)
class ConductivityField:
    """Nodal thermal conductivity [W/(m K)], one value per mesh node."""

    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if values.ndim != 1:
            raise ValidationError(f"conductivity must be a 1-d nodal array, got {values.shape}")
        if not np.all(values > 0):
            raise ValidationError("conductivity values must be strictly positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def homogeneous(cls, mesh: Mesh, value: float = 1.0) -> "ConductivityField":
        return cls(np.full(mesh.n_nodes, float(value)))

    @classmethod
    def inclusions(
        cls,
        mesh: Mesh,
        circles=((0.3, 0.65, 0.17), (0.7, 0.3, 0.15), (0.55, 0.82, 0.1)),
        background: float = 1.0,
        inclusion: float = 0.1,
    ) -> "ConductivityField":
        """Background conductivity with low-conductivity circular inclusions.

        ``circles`` is a sequence of (cx, cy, radius); a node inside any
        circle takes the inclusion value.
        """
        x = mesh.nodes[:, 0]
        y = mesh.nodes[:, 1]
        values = np.full(mesh.n_nodes, float(background))
        for cx, cy, r in circles:
            inside = (x - cx) ** 2 + (y - cy) ** 2 <= r**2
            values[inside] = float(inclusion)
        return cls(values)


@dataclass(frozen=True)
class SystemMatrices:
    """Assembled global mass and stiffness matrices (CSR, symmetric)."""

    M: sp.csr_array
    K: sp.csr_array

    @property
    def n(self) -> int:
        return self.M.shape[0]


@dataclass(frozen=True)
class ReducedSystem:
    """Free-dof time stepping operators for one (dt, alpha) choice.

    A_ff = M_ff + alpha*dt*K_ff acts on the unknown next step;
    B_ff = M_ff - (1-alpha)*dt*K_ff acts on the current step;
    rhs_const = -dt*K_fd*T_d collects the (time-constant) Dirichlet coupling.
    """

    A_ff: sp.csr_array
    B_ff: sp.csr_array
    rhs_const: np.ndarray
    dt: float
    alpha: float

    @property
    def n_free(self) -> int:
        return self.A_ff.shape[0]


def gauss_rule_2x2() -> QuadratureRule:
    """Tensor 2x2 Gauss rule on [-1, 1]^2 (exact through cubic per axis)."""
    g = GAUSS_COORD
    points = np.array([(-g, -g), (g, -g), (g, g), (-g, g)])
    weights = np.ones(4)
    return QuadratureRule(points, weights)


def shape_values(xi: float, eta: float) -> np.ndarray:
    """Bilinear basis values [N1..N4] at a reference point."""
    return 0.25 * np.array(
        [
            (1 - xi) * (1 - eta),
            (1 + xi) * (1 - eta),
            (1 + xi) * (1 + eta),
            (1 - xi) * (1 + eta),
        ]
    )


def shape_gradients_ref(xi: float, eta: float) -> np.ndarray:
    """Reference-space basis gradients, rows (d/dxi, d/deta), shape (2, 4)."""
    return 0.25 * np.array(
        [
            [-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)],
            [-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)],
        ]
    )


def jacobian_det(elem_coords: np.ndarray, xi: float, eta: float) -> float:
    """det of the isoparametric map's Jacobian at one reference point."""
    jac = shape_gradients_ref(xi, eta) @ np.asarray(elem_coords, dtype=np.float64)
    return float(jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0])


def b_matrix(elem_coords: np.ndarray, xi: float, eta: float):
    """Physical-space basis gradients and Jacobian determinant.

    Returns (B, detJ) with B rows (dN_i/dx, dN_i/dy), shape (2, 4).
    Raises NumericalError when the map is singular at the point.
    """
    coords = np.asarray(elem_coords, dtype=np.float64)
    grad_ref = shape_gradients_ref(xi, eta)
    jac = grad_ref @ coords  # rows: d(x,y)/dxi, d(x,y)/deta
    det = float(jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0])
    if abs(det) < SINGULAR_JACOBIAN_TOL:
        raise NumericalError(f"singular element Jacobian (det={det:.3e}) at ({xi}, {eta})")
    inv = np.array([[jac[1, 1], -jac[0, 1]], [-jac[1, 0], jac[0, 0]]]) / det
    return inv @ grad_ref, det


def element_mass(elem_coords: np.ndarray, mat: MaterialParams, rule: QuadratureRule) -> np.ndarray:
    """4x4 consistent mass: sum_j N^T rho*c N detJ * w_j."""
    m = np.zeros((4, 4))
    rho_c = mat.rho * mat.c
    for (xi, eta), w in zip(rule.points, rule.weights):
        n = shape_values(xi, eta)
        det = jacobian_det(elem_coords, xi, eta)
        if abs(det) < SINGULAR_JACOBIAN_TOL:
            raise NumericalError(f"singular element Jacobian (det={det:.3e}) at ({xi}, {eta})")
        m += np.outer(n, n) * (rho_c * det * w)
    return m


def element_stiffness(elem_coords: np.ndarray, k_nodal: np.ndarray, rule: QuadratureRule) -> np.ndarray:
    """4x4 conductivity stiffness: sum_j B^T (N.k) B detJ * w_j."""
    k_nodal = np.asarray(k_nodal, dtype=np.float64)
    if k_nodal.shape != (4,):
        raise ValidationError(f"k_nodal must have 4 entries, got {k_nodal.shape}")
    ke = np.zeros((4, 4))
    for (xi, eta), w in zip(rule.points, rule.weights):
        b, det = b_matrix(elem_coords, xi, eta)
        k_gp = float(shape_values(xi, eta) @ k_nodal)
        ke += (b.T @ b) * (k_gp * det * w)
    return ke


def assemble(m: Mesh, k: ConductivityField, mat: MaterialParams) -> SystemMatrices:
    """Scatter-add element mass/stiffness into global CSR matrices."""
    if k.values.shape[0] != m.n_nodes:
        raise ValidationError(
            f"conductivity has {k.values.shape[0]} values, mesh has {m.n_nodes} nodes"
        )
    rule = gauss_rule_2x2()
    n_e = m.n_elems
    rows = np.empty(16 * n_e, dtype=np.int64)
    cols = np.empty(16 * n_e, dtype=np.int64)
    mass_data = np.empty(16 * n_e)
    stiff_data = np.empty(16 * n_e)
    for e in range(n_e):
        conn = m.elems[e]
        coords = m.nodes[conn]
        me = element_mass(coords, mat, rule)
        ke = element_stiffness(coords, k.values[conn], rule)
        sl = slice(16 * e, 16 * (e + 1))
        rows[sl] = np.repeat(conn, 4)
        cols[sl] = np.tile(conn, 4)
        mass_data[sl] = me.ravel()
        stiff_data[sl] = ke.ravel()
    shape = (m.n_nodes, m.n_nodes)
    mass = sp.coo_array((mass_data, (rows, cols)), shape=shape).tocsr()
    stiff = sp.coo_array((stiff_data, (rows, cols)), shape=shape).tocsr()
    return SystemMatrices(mass, stiff)


def split_blocks(mat: sp.csr_array, dofs: DofMap):
    """(free x free, free x constrained) blocks of a global matrix."""
    csr = sp.csr_array(mat)
    ff = csr[dofs.free][:, dofs.free]
    fd = csr[dofs.free][:, dofs.constrained_nodes]
    return sp.csr_array(ff), sp.csr_array(fd)


def reduce_system(sys: SystemMatrices, dofs: DofMap, dt: float, alpha: float) -> ReducedSystem:
    """Eliminate Dirichlet dofs from the one-step update for given dt, alpha."""
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    if alpha not in VALID_ALPHAS:
        raise ValidationError(f"alpha must be one of {VALID_ALPHAS}, got {alpha}")
    m_ff, _ = split_blocks(sys.M, dofs)
    k_ff, k_fd = split_blocks(sys.K, dofs)
    a_ff = sp.csr_array(m_ff + (alpha * dt) * k_ff)
    b_ff = sp.csr_array(m_ff - ((1.0 - alpha) * dt) * k_ff)
    rhs_const = -dt * (k_fd @ dofs.constrained_values)
    return ReducedSystem(a_ff, b_ff, np.asarray(rhs_const), float(dt), float(alpha))


def save_conductivity(path, k: ConductivityField) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["node_id", "k"])
        for i, v in enumerate(k.values):
            w.writerow([i, repr(float(v))])


def load_conductivity(path_or_text, n_nodes: int | None = None) -> ConductivityField:
    """Read the `node_id,k` CSV; rows must cover ids 0..n-1 exactly once."""
    if hasattr(path_or_text, "read"):
        text = path_or_text.read()
    else:
        try:
            with open(path_or_text) as f:
                text = f.read()
        except TypeError:
            text = str(path_or_text)
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:2]] != ["node_id", "k"]:
        raise ValidationError(f"conductivity CSV must start with 'node_id,k', got {header}")
    pairs = {}
    for row in reader:
        if not row:
            continue
        i, v = int(row[0]), float(row[1])
        if i in pairs:
            raise ValidationError(f"duplicate node id {i} in conductivity CSV")
        pairs[i] = v
    n = len(pairs)
    if sorted(pairs) != list(range(n)):
        raise ValidationError("conductivity CSV node ids must be contiguous from 0")
    if n_nodes is not None and n != n_nodes:
        raise ValidationError(f"conductivity CSV has {n} rows, mesh has {n_nodes} nodes")
    return ConductivityField(np.array([pairs[i] for i in range(n)]))
