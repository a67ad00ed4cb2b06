"""Physics-based loss on the implicit-Euler FE residual, analytic gradients,
Adam and L-BFGS, and the mini-batch training loop.

The residual of one sample is r = A_ff t_hat - M_ff t_n - rhs_const, a purely
algebraic function of the network output, so the loss gradient with respect
to t_hat is (2/n_s) A_ff^T r and the rest is an exact reverse pass through
the taped forward evaluation - no numerical differentiation anywhere.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import neural
from .errors import FingerprintError, NumericalError, ValidationError
from .fem import ReducedSystem
from .mesh import DofMap
from .neural import Gradients, ModelBundle
from .sampling import SampleSet

LOSS_ALPHA = 1.0  # the residual loss is the backward-Euler one


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    log_every: int = 0  # epochs between progress lines; 0 = silent

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if self.optimizer not in ("adam", "lbfgs"):
            raise ValidationError(f"optimizer must be 'adam' or 'lbfgs', got {self.optimizer!r}")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")


def _require_loss_system(rs: ReducedSystem):
    if rs.alpha != LOSS_ALPHA:
        raise ValidationError(
            f"the residual loss is defined for alpha={LOSS_ALPHA}, got alpha={rs.alpha}"
        )


def _residual_matrix(rs: ReducedSystem, t_n: np.ndarray, t_hat: np.ndarray) -> np.ndarray:
    """Residuals column-wise: A_ff t_hat - M_ff t_n - rhs_const, shape (n_free, batch)."""
    # for alpha = 1, B_ff is exactly M_ff
    return rs.A_ff @ t_hat.T - rs.B_ff @ t_n.T - rs.rhs_const[:, None]


def residual_loss(rs: ReducedSystem, dofs: DofMap, t_n: np.ndarray, t_hat: np.ndarray) -> float:
    """L2 norm of one sample's implicit-Euler residual."""
    _require_loss_system(rs)
    t_n = np.asarray(t_n, dtype=np.float64)
    t_hat = np.asarray(t_hat, dtype=np.float64)
    if t_n.shape != (dofs.n_free,) or t_hat.shape != (dofs.n_free,):
        raise ValidationError(
            f"fields must have {dofs.n_free} free entries, got {t_n.shape} and {t_hat.shape}"
        )
    r = _residual_matrix(rs, t_n[None, :], t_hat[None, :])
    return float(np.linalg.norm(r))


def _loss_and_grad(rs: ReducedSystem, dofs: DofMap, batch: np.ndarray, model: ModelBundle,
                   want_grad: bool):
    _require_loss_system(rs)
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != dofs.n_free:
        raise ValidationError(
            f"batch must be (n, {dofs.n_free}), got {batch.shape}"
        )
    if batch.shape[0] == 0:
        raise ValidationError("batch must be non-empty")
    n_s = batch.shape[0]
    t_hat, tape = neural.forward_with_tape(model, batch)
    r = _residual_matrix(rs, batch, t_hat)  # (n_free, n_s)
    loss = float(np.sum(r * r)) / n_s
    if not want_grad:
        return loss, None
    # d(loss)/d(t_hat) = (2/n_s) A_ff^T r; A_ff is symmetric, so no transpose
    d_out = (2.0 / n_s) * (rs.A_ff @ r).T
    return loss, neural.backprop(model, tape, d_out)


def batch_loss(rs: ReducedSystem, dofs: DofMap, batch: np.ndarray, model: ModelBundle) -> float:
    """Mean over the batch of squared residual norms."""
    return _loss_and_grad(rs, dofs, batch, model, want_grad=False)[0]


def loss_gradient(rs: ReducedSystem, dofs: DofMap, batch: np.ndarray, model: ModelBundle) -> Gradients:
    """Exact gradient of batch_loss with respect to every weight and bias."""
    return _loss_and_grad(rs, dofs, batch, model, want_grad=True)[1]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def _adam_inplace(params, grads, state: AdamState, lr, beta1, beta2, eps, scratch):
    """Core Adam update mutating params/state; `grads` and `scratch` are clobbered."""
    state.t += 1
    np.multiply(grads, grads, out=scratch)
    state.v *= beta2
    scratch *= 1.0 - beta2
    state.v += scratch
    state.m *= beta1
    grads *= 1.0 - beta1
    state.m += grads
    # params -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    np.divide(state.v, 1.0 - beta2**state.t, out=scratch)
    np.sqrt(scratch, out=scratch)
    scratch += eps
    np.divide(state.m, scratch, out=scratch)
    scratch *= lr / (1.0 - beta1**state.t)
    params -= scratch


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """Standard bias-corrected Adam update; returns (new params, new state)."""
    params = np.array(params, dtype=np.float64)
    grads = np.array(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValidationError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}"
        )
    new_state = AdamState(state.m.copy(), state.v.copy(), state.t)
    _adam_inplace(params, grads, new_state, lr, beta1, beta2, eps, np.empty_like(params))
    return params, new_state


@dataclass
class LbfgsState:
    s_pairs: list = field(default_factory=list)  # parameter steps
    y_pairs: list = field(default_factory=list)  # gradient differences
    last_loss: float = np.nan
    line_search_failed: bool = False

    @property
    def history(self) -> int:
        return len(self.s_pairs)


ARMIJO_C = 1e-4
LINE_SEARCH_TRIALS = 20


def lbfgs_step(params: np.ndarray, grad_fn, state: LbfgsState, m: int = 10):
    """One L-BFGS step: two-loop recursion plus backtracking Armijo search.

    grad_fn(params) must return (loss, gradient). Pairs with non-positive
    curvature s.y are discarded. On line-search failure the parameters are
    returned unchanged and state.line_search_failed is set.
    """
    params = np.asarray(params, dtype=np.float64)
    loss, grad = grad_fn(params)
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss} in L-BFGS step")

    # two-loop recursion for the quasi-Newton direction
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(state.s_pairs), reversed(state.y_pairs)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append((a, rho, s, y))
        q -= a * y
    if state.s_pairs:
        s_last, y_last = state.s_pairs[-1], state.y_pairs[-1]
        q *= float(s_last @ y_last) / float(y_last @ y_last)
    for a, rho, s, y in reversed(alphas):
        b = rho * float(y @ q)
        q += (a - b) * s
    direction = -q

    slope = float(grad @ direction)
    if slope >= 0:  # not a descent direction; fall back to steepest descent
        direction = -grad
        slope = -float(grad @ grad)

    step = 1.0
    for _ in range(LINE_SEARCH_TRIALS):
        trial = params + step * direction
        trial_loss, trial_grad = grad_fn(trial)
        if np.isfinite(trial_loss) and trial_loss <= loss + ARMIJO_C * step * slope:
            s_new = trial - params
            y_new = trial_grad - grad
            new_state = LbfgsState(list(state.s_pairs), list(state.y_pairs), trial_loss, False)
            if float(s_new @ y_new) > 0:  # curvature guard
                new_state.s_pairs.append(s_new)
                new_state.y_pairs.append(y_new)
                if len(new_state.s_pairs) > m:
                    new_state.s_pairs.pop(0)
                    new_state.y_pairs.pop(0)
            return trial, new_state
        step *= 0.5
    failed = LbfgsState(list(state.s_pairs), list(state.y_pairs), loss, True)
    return params, failed


def train(
    model: ModelBundle,
    rs: ReducedSystem,
    dofs: DofMap,
    samples: SampleSet,
    cfg: TrainConfig,
):
    """Optimize the model on the sample set; returns (model, per-epoch losses).

    Adam shuffles and runs one step per mini-batch (short final batch kept);
    L-BFGS runs one full-batch step per epoch. Both are deterministic under
    cfg.seed. A non-finite loss aborts with a NumericalError.
    """
    if samples.fingerprint != model.grid_meta:
        raise FingerprintError(
            f"sample set was generated for grid {samples.fingerprint}, "
            f"model expects {model.grid_meta}"
        )
    model.dt = rs.dt  # the trained operator is specific to this step size
    data = samples.samples
    n_samples = data.shape[0]
    if n_samples == 0:
        raise ValidationError("sample set is empty")

    record = np.zeros(cfg.epochs)
    t_start = time.perf_counter()

    if cfg.optimizer == "adam":
        # parameters live in one flat buffer; the model's arrays are views
        neural_params = model.rebind_params_flat()
        state = AdamState.zeros(neural_params.size)
        scratch = np.empty_like(neural_params)
        for epoch in range(cfg.epochs):
            rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, epoch)))
            order = rng.permutation(n_samples)
            losses = []
            for lo in range(0, n_samples, cfg.batch_size):
                batch = data[order[lo : lo + cfg.batch_size]]
                loss, grads = _loss_and_grad(rs, dofs, batch, model, want_grad=True)
                if not np.isfinite(loss):
                    raise NumericalError(
                        f"loss diverged at epoch {epoch} (value {loss}); try a smaller lr"
                    )
                _adam_inplace(neural_params, grads.flat(), state, cfg.lr, 0.9, 0.999, 1e-8, scratch)
                losses.append(loss)
            record[epoch] = float(np.mean(losses))
            _maybe_log(cfg, epoch, record[epoch], t_start)
    else:  # lbfgs, full batch
        neural_params = model.params_flat()
        state = LbfgsState()

        def f_and_g(p):
            model.set_params_flat(p)
            loss, grads = _loss_and_grad(rs, dofs, data, model, want_grad=True)
            return loss, grads.flat()

        for epoch in range(cfg.epochs):
            neural_params, state = lbfgs_step(neural_params, f_and_g, state)
            model.set_params_flat(neural_params)
            if not np.isfinite(state.last_loss):
                raise NumericalError(f"loss diverged at epoch {epoch}")
            record[epoch] = state.last_loss
            _maybe_log(cfg, epoch, record[epoch], t_start)

    return model, record


def _maybe_log(cfg: TrainConfig, epoch: int, loss: float, t_start: float) -> None:
    if cfg.log_every and (epoch % cfg.log_every == 0 or epoch == cfg.epochs - 1):
        wall = time.perf_counter() - t_start
        print(f"epoch {epoch + 1}/{cfg.epochs}  mean_loss {loss:.6e}  wall {wall:.1f}s", flush=True)


def save_checkpoint(model: ModelBundle, path) -> None:
    neural.save_model(model, path)


def load_checkpoint(path, dofs: DofMap | None = None) -> ModelBundle:
    return neural.load_model(path, dofs)
