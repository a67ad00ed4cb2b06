"""MLP time-steppers over the free-node field, with taped forward passes for
exact analytic backpropagation.

Three wirings are supported:

* ``separated``       -- one small net per output node, each reading the full
                         free field (the main-study layout);
* ``elementwise``     -- one small net per output node, reading only the free
                         nodes of elements that contain the output node;
* ``fully_connected`` -- a single wide net mapping the whole field at once.

Internally nets with identical layer shapes are stacked into "groups" whose
parameters are 3-d arrays (net, out, in), so every architecture runs through
the same batched matmul code path. The output layer is always linear; values
outside [0, 1] are allowed and diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import FingerprintError, ValidationError
from .mesh import DofMap, Mesh
from .textio import TokenReader, wrap_tokens

CHECKPOINT_FORMAT = "folmodel"
CHECKPOINT_VERSION = 1

ARCHITECTURES = ("separated", "elementwise", "fully_connected")
ACTIVATIONS = ("swish", "tanh", "sigmoid", "relu")

DEFAULT_HIDDEN = {
    "separated": (10, 10),
    "elementwise": (10, 10),
    "fully_connected": (170, 170, 170, 170),
}


def activation_apply(kind: str, x):
    """Elementwise activation; `x` may be scalar or array."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "swish":
        return x * expit(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return expit(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    raise ValidationError(f"unknown activation {kind!r}, expected one of {ACTIVATIONS}")


def activation_grad(kind: str, x):
    """Exact derivative of activation_apply (relu uses subgradient 0 at 0)."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "swish":
        s = expit(x)
        return s * (1.0 + x * (1.0 - s))
    if kind == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "sigmoid":
        s = expit(x)
        return s * (1.0 - s)
    if kind == "relu":
        return np.where(x > 0, 1.0, 0.0)
    raise ValidationError(f"unknown activation {kind!r}, expected one of {ACTIVATIONS}")


def _act_forward(kind: str, z):
    """(activation(z), cached transcendental) so the reverse pass can skip
    recomputing expit/tanh; the cache is expit(z) for swish/sigmoid, tanh(z)
    for tanh, None for relu."""
    if kind == "swish":
        s = expit(z)
        return z * s, s
    if kind == "tanh":
        t = np.tanh(z)
        return t, t
    if kind == "sigmoid":
        s = expit(z)
        return s, s
    return np.maximum(z, 0.0), None


def _act_grad_cached(kind: str, z, aux):
    # same expressions as activation_grad, reusing the forward cache
    if kind == "swish":
        return aux * (1.0 + z * (1.0 - aux))
    if kind == "tanh":
        return 1.0 - aux * aux
    if kind == "sigmoid":
        return aux * (1.0 - aux)
    return np.where(z > 0, 1.0, 0.0)


@dataclass
class LayerParams:
    """One net's weight matrix (out, in) and bias vector (out,)."""

    W: np.ndarray
    b: np.ndarray


@dataclass
class NetGroup:
    """Nets with identical layer shapes, parameters stacked along axis 0.

    out_slots maps the flattened group output (net-major) to free slots;
    in_slots is (n_nets, stencil) of input free slots, or None when every
    net reads the full field.
    """

    out_slots: np.ndarray
    in_slots: np.ndarray | None
    weights: list[np.ndarray]  # per layer (n_nets, out, in)
    biases: list[np.ndarray]  # per layer (n_nets, out)

    @property
    def n_nets(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)


@dataclass
class ModelBundle:
    """A trained (or trainable) time-stepper and the dof layout it belongs to."""

    arch: str
    activation: str
    n_free: int
    groups: list[NetGroup]
    grid_meta: str  # DofMap fingerprint of the training mesh
    dt: float

    @property
    def n_nets(self) -> int:
        return sum(g.n_nets for g in self.groups)

    @property
    def input_map(self) -> list[np.ndarray]:
        """Input free slots per net, ordered by output slot."""
        full = np.arange(self.n_free)
        if self.arch == "fully_connected":
            return [full]
        entries: list[tuple[int, np.ndarray]] = []
        for g in self.groups:
            for i in range(g.n_nets):
                slots = full if g.in_slots is None else g.in_slots[i]
                entries.append((int(g.out_slots[i]), slots))
        entries.sort(key=lambda t: t[0])
        return [slots for _, slots in entries]

    def net_layers(self, net: int) -> list[LayerParams]:
        """Layer views of one net (by output slot; 0 for fully_connected)."""
        if self.arch == "fully_connected":
            if net != 0:
                raise ValidationError("fully_connected has a single net (index 0)")
            g = self.groups[0]
            return [LayerParams(g.weights[l][0], g.biases[l][0]) for l in range(g.n_layers)]
        for g in self.groups:
            hits = np.flatnonzero(g.out_slots == net)
            if hits.size:
                i = int(hits[0])
                return [LayerParams(g.weights[l][i], g.biases[l][i]) for l in range(g.n_layers)]
        raise ValidationError(f"no net produces output slot {net}")

    def params_flat(self) -> np.ndarray:
        """All parameters as one vector (group, layer, weights-then-bias order)."""
        chunks = []
        for g in self.groups:
            for w, b in zip(g.weights, g.biases):
                chunks.append(w.ravel())
                chunks.append(b.ravel())
        return np.concatenate(chunks)

    def set_params_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        pos = 0
        for g in self.groups:
            for w, b in zip(g.weights, g.biases):
                np.copyto(w, vec[pos : pos + w.size].reshape(w.shape))
                pos += w.size
                np.copyto(b, vec[pos : pos + b.size].reshape(b.shape))
                pos += b.size
        if pos != vec.size:
            raise ValidationError(f"parameter vector has {vec.size} entries, model needs {pos}")

    def rebind_params_flat(self) -> np.ndarray:
        """Re-home all parameters as views into one flat buffer and return it.

        Optimizers can then update the buffer in place and the model follows,
        skipping a copy per step.
        """
        flat = self.params_flat()
        pos = 0
        for g in self.groups:
            for l in range(g.n_layers):
                w, b = g.weights[l], g.biases[l]
                g.weights[l] = flat[pos : pos + w.size].reshape(w.shape)
                pos += w.size
                g.biases[l] = flat[pos : pos + b.size].reshape(b.shape)
                pos += b.size
        return flat


def count_params(m: ModelBundle) -> int:
    """Total trainable scalars: sum over layers of out*in + out."""
    return sum(w.size + b.size for g in m.groups for w, b in zip(g.weights, g.biases))


def _glorot(rng: np.random.Generator, shape) -> np.ndarray:
    fan_out, fan_in = shape[-2], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _stacked_group(rng, out_slots, in_slots, n_nets, in_dim, hidden, out_dim) -> NetGroup:
    dims = [in_dim, *hidden, out_dim]
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        weights.append(_glorot(rng, (n_nets, d_out, d_in)))
        biases.append(np.zeros((n_nets, d_out)))
    return NetGroup(np.asarray(out_slots, dtype=np.int64), in_slots, weights, biases)


def _elementwise_stencils(mesh: Mesh, dofs: DofMap) -> list[np.ndarray]:
    """Per free node: free slots of all nodes sharing an element with it."""
    neighbors: list[set[int]] = [set() for _ in range(mesh.n_nodes)]
    for conn in mesh.elems:
        ids = conn.tolist()
        for nid in ids:
            neighbors[nid].update(ids)
    stencils = []
    for node in dofs.free:
        slots = sorted(
            int(dofs.node_to_slot[nb]) for nb in neighbors[node] if dofs.node_to_slot[nb] >= 0
        )
        stencils.append(np.array(slots, dtype=np.int64))
    return stencils


def init_model(
    arch: str,
    mesh: Mesh,
    dofs: DofMap,
    hidden_spec=None,
    activation: str = "swish",
    seed: int = 0,
    dt: float = 0.05,
) -> ModelBundle:
    """Build a fresh model with Glorot-uniform weights and zero biases.

    hidden_spec defaults to (10, 10) for the per-node architectures and
    (170, 170, 170, 170) for fully_connected.
    """
    if arch not in ARCHITECTURES:
        raise ValidationError(f"unknown architecture {arch!r}, expected one of {ARCHITECTURES}")
    if activation not in ACTIVATIONS:
        raise ValidationError(f"unknown activation {activation!r}, expected one of {ACTIVATIONS}")
    hidden = tuple(int(h) for h in (hidden_spec or DEFAULT_HIDDEN[arch]))
    if not hidden or min(hidden) < 1:
        raise ValidationError(f"hidden_spec must list positive widths, got {hidden}")
    n_free = dofs.n_free
    if n_free < 1:
        raise ValidationError("model needs at least one free dof")
    rng = np.random.default_rng(seed)

    groups: list[NetGroup] = []
    if arch == "fully_connected":
        groups.append(
            _stacked_group(rng, np.arange(n_free), None, 1, n_free, hidden, n_free)
        )
    elif arch == "separated":
        groups.append(_stacked_group(rng, np.arange(n_free), None, n_free, n_free, hidden, 1))
    else:  # elementwise
        stencils = _elementwise_stencils(mesh, dofs)
        by_size: dict[int, list[int]] = {}
        for slot, st in enumerate(stencils):
            by_size.setdefault(st.size, []).append(slot)
        for size in sorted(by_size):
            slots = np.array(by_size[size], dtype=np.int64)
            in_slots = np.stack([stencils[s] for s in slots])
            groups.append(_stacked_group(rng, slots, in_slots, slots.size, size, hidden, 1))

    return ModelBundle(arch, activation, n_free, groups, dofs.fingerprint, float(dt))


@dataclass
class GroupTape:
    x_full: np.ndarray | None  # (batch, n_free) view when the group reads the full field
    x_gath: np.ndarray | None  # (n_nets, batch, stencil) gathered inputs otherwise
    preacts: list[np.ndarray]  # z per layer, (n_nets, batch, out); last is the output
    acts: list[np.ndarray]  # activation(z) for hidden layers
    act_aux: list  # cached transcendentals for the reverse pass


@dataclass
class ForwardTape:
    group_tapes: list[GroupTape]
    out: np.ndarray  # (batch, n_free)

    @property
    def n_layers(self) -> int:
        return max(len(gt.preacts) for gt in self.group_tapes)


def _group_forward(group: NetGroup, X: np.ndarray, activation: str) -> GroupTape:
    n_nets, out0, in0 = group.weights[0].shape
    if group.in_slots is None:
        x_gath = None
        z = (X @ group.weights[0].reshape(n_nets * out0, in0).T).reshape(
            X.shape[0], n_nets, out0
        ).transpose(1, 0, 2)
    else:
        x_gath = np.ascontiguousarray(X[:, group.in_slots].transpose(1, 0, 2))
        z = x_gath @ group.weights[0].transpose(0, 2, 1)
    z = z + group.biases[0][:, None, :]
    preacts = [z]
    acts = []
    act_aux = []
    for l in range(1, group.n_layers):
        a, aux = _act_forward(activation, z)
        acts.append(a)
        act_aux.append(aux)
        z = a @ group.weights[l].transpose(0, 2, 1) + group.biases[l][:, None, :]
        preacts.append(z)
    return GroupTape(X if group.in_slots is None else None, x_gath, preacts, acts, act_aux)


def forward_batch(m: ModelBundle, X: np.ndarray) -> np.ndarray:
    """Evaluate a batch of free fields, shape (batch, n_free) -> same shape."""
    return forward_with_tape(m, X)[0]


def forward_with_tape(m: ModelBundle, X: np.ndarray):
    """forward_batch plus the intermediates needed for an exact reverse pass."""
    X = np.asarray(X, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != m.n_free:
        raise ValidationError(f"input shape {X.shape} does not match n_free={m.n_free}")
    out = np.empty((X.shape[0], m.n_free))
    tapes = []
    for g in m.groups:
        gt = _group_forward(g, X, m.activation)
        z = gt.preacts[-1]  # (n_nets, batch, out_dim)
        out[:, g.out_slots] = z.transpose(1, 0, 2).reshape(X.shape[0], -1)
        tapes.append(gt)
    if squeeze:
        return out[0], ForwardTape(tapes, out)
    return out, ForwardTape(tapes, out)


def forward(m: ModelBundle, t_n: np.ndarray) -> np.ndarray:
    """One free field in, one free field out."""
    t_n = np.asarray(t_n, dtype=np.float64)
    if t_n.shape != (m.n_free,):
        raise ValidationError(f"input shape {t_n.shape} does not match n_free={m.n_free}")
    return forward_batch(m, t_n[None, :])[0]


@dataclass
class Gradients:
    """Per-group, per-layer parameter gradients mirroring ModelBundle storage."""

    by_group: list[tuple[list[np.ndarray], list[np.ndarray]]]

    def flat(self) -> np.ndarray:
        chunks = []
        for d_ws, d_bs in self.by_group:
            for dw, db in zip(d_ws, d_bs):
                chunks.append(dw.ravel())
                chunks.append(db.ravel())
        return np.concatenate(chunks)

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(
            [
                ([dw * factor for dw in d_ws], [db * factor for db in d_bs])
                for d_ws, d_bs in self.by_group
            ]
        )


def backprop(m: ModelBundle, tape: ForwardTape, d_out: np.ndarray) -> Gradients:
    """Exact parameter gradients given d(loss)/d(output), shape (batch, n_free)."""
    d_out = np.asarray(d_out, dtype=np.float64)
    by_group = []
    for g, gt in zip(m.groups, tape.group_tapes):
        n_layers = g.n_layers
        batch = d_out.shape[0]
        dz = np.ascontiguousarray(
            d_out[:, g.out_slots].reshape(batch, g.n_nets, -1).transpose(1, 0, 2)
        )
        d_ws: list = [None] * n_layers
        d_bs: list = [None] * n_layers
        for l in range(n_layers - 1, 0, -1):
            a_prev = gt.acts[l - 1]
            d_ws[l] = dz.transpose(0, 2, 1) @ a_prev
            d_bs[l] = dz.sum(axis=1)
            da = dz @ g.weights[l]
            dz = da * _act_grad_cached(m.activation, gt.preacts[l - 1], gt.act_aux[l - 1])
        d_bs[0] = dz.sum(axis=1)
        if g.in_slots is None:
            n_nets, _, out0 = dz.shape
            dz0 = dz.transpose(1, 0, 2).reshape(batch, n_nets * out0)
            d_ws[0] = (dz0.T @ gt.x_full).reshape(n_nets, out0, -1)
        else:
            d_ws[0] = dz.transpose(0, 2, 1) @ gt.x_gath
        by_group.append((d_ws, d_bs))
    return Gradients(by_group)


def save_model(m: ModelBundle, path) -> None:
    """Write the versioned text checkpoint (exact decimal round trip)."""
    lines = [f"{CHECKPOINT_FORMAT} {CHECKPOINT_VERSION}"]
    lines.append(f"arch {m.arch}")
    lines.append(f"activation {m.activation}")
    lines.append(f"n_free {m.n_free}")
    lines.append(f"fingerprint {m.grid_meta}")
    lines.append(f"dt {float(m.dt)!r}")
    lines.append(f"groups {len(m.groups)}")
    for gi, g in enumerate(m.groups):
        lines.append(f"group {gi} nets {g.n_nets} layers {g.n_layers}")
        lines.append(f"outslots {g.out_slots.size}")
        lines.append(wrap_tokens(g.out_slots.tolist(), per_line=16))
        if g.in_slots is None:
            lines.append("input full")
        else:
            lines.append(f"input {g.in_slots.shape[1]}")
            lines.append(wrap_tokens(g.in_slots.ravel().tolist(), per_line=16))
        for l in range(g.n_layers):
            w, b = g.weights[l], g.biases[l]
            lines.append(f"layer {l} out {w.shape[1]} in {w.shape[2]}")
            lines.append("weights")
            lines.append(wrap_tokens([repr(float(v)) for v in w.ravel()], per_line=6))
            lines.append("biases")
            lines.append(wrap_tokens([repr(float(v)) for v in b.ravel()], per_line=6))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path_or_text, dofs: DofMap | None = None) -> ModelBundle:
    """Read a checkpoint; verifies the dof fingerprint when `dofs` is given."""
    if isinstance(path_or_text, str) and path_or_text.lstrip().startswith(CHECKPOINT_FORMAT):
        text = path_or_text
    else:
        text = Path(path_or_text).read_text()
    r = TokenReader(text, error_cls=ValidationError)
    r.expect(CHECKPOINT_FORMAT)
    version = r.next_int("checkpoint version")
    if version != CHECKPOINT_VERSION:
        r.fail(f"unsupported {CHECKPOINT_FORMAT} version {version}")
    r.expect("arch")
    arch = r.next_str("architecture")
    if arch not in ARCHITECTURES:
        r.fail(f"unknown architecture {arch!r}")
    r.expect("activation")
    activation = r.next_str("activation")
    if activation not in ACTIVATIONS:
        r.fail(f"unknown activation {activation!r}")
    r.expect("n_free")
    n_free = r.next_int("n_free")
    r.expect("fingerprint")
    fingerprint = r.next_str("fingerprint")
    r.expect("dt")
    dt = r.next_float("dt")
    r.expect("groups")
    n_groups = r.next_int("group count")

    groups = []
    for gi in range(n_groups):
        r.expect("group")
        if r.next_int("group index") != gi:
            r.fail("group indices must be contiguous")
        r.expect("nets")
        n_nets = r.next_int("net count")
        r.expect("layers")
        n_layers = r.next_int("layer count")
        r.expect("outslots")
        n_slots = r.next_int("output slot count")
        out_slots = np.array([r.next_int("output slot") for _ in range(n_slots)], dtype=np.int64)
        r.expect("input")
        tok = r.next_str("input spec")
        if tok == "full":
            in_slots = None
        else:
            try:
                stencil = int(tok)
            except ValueError:
                r.fail(f"expected 'full' or a stencil size, got {tok!r}")
            flat = [r.next_int("input slot") for _ in range(n_nets * stencil)]
            in_slots = np.array(flat, dtype=np.int64).reshape(n_nets, stencil)
        weights, biases = [], []
        for l in range(n_layers):
            r.expect("layer")
            if r.next_int("layer index") != l:
                r.fail("layer indices must be contiguous")
            r.expect("out")
            d_out = r.next_int("layer out dim")
            r.expect("in")
            d_in = r.next_int("layer in dim")
            r.expect("weights")
            w = np.array(
                [r.next_float("weight") for _ in range(n_nets * d_out * d_in)]
            ).reshape(n_nets, d_out, d_in)
            r.expect("biases")
            b = np.array([r.next_float("bias") for _ in range(n_nets * d_out)]).reshape(
                n_nets, d_out
            )
            weights.append(w)
            biases.append(b)
        groups.append(NetGroup(out_slots, in_slots, weights, biases))
    r.expect("end")

    model = ModelBundle(arch, activation, n_free, groups, fingerprint, dt)
    if dofs is not None:
        check_fingerprint(model, dofs)
    return model


def check_fingerprint(m: ModelBundle, dofs: DofMap) -> None:
    if m.grid_meta != dofs.fingerprint or m.n_free != dofs.n_free:
        raise FingerprintError(
            f"model was built for grid {m.grid_meta} ({m.n_free} free dofs), "
            f"got {dofs.fingerprint} ({dofs.n_free} free dofs)"
        )
