"""Dense float64 numeric core.

Every tensor in the package is a float64 numpy array; 2-D arrays play the
role of row-major matrices. Forward kernels are pure functions, backward
kernels take the upstream gradient plus whatever the forward pass cached.
"""
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple, Union
import math
import numpy as np
from keys import Keys
from classes.errors import DegenerateBatchError, DimensionError, NumericError

SeedLike = Union[int, np.random.Generator, np.random.SeedSequence, None]


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_finite(values: np.ndarray, what: str = "input"):
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{what} contains NaN or infinite values")


class Parameter:
    """A trainable array with its accumulated gradient"""

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


# ---------------------------------------------------------------- affine

def affine_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2:
        raise DimensionError(f"affine expects 2-D operands, got {x.ndim}-D and {w.ndim}-D")
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"x has {x.shape[1]} columns but w has {w.shape[0]} rows")
    if b.shape != (w.shape[1],):
        raise DimensionError(f"bias length {b.shape} does not match {w.shape[1]} outputs")
    return x @ w + b


def affine_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dL/dx, dL/dw, dL/db)"""
    if dy.shape != (x.shape[0], w.shape[1]):
        raise DimensionError(f"upstream gradient {dy.shape} does not match output {(x.shape[0], w.shape[1])}")
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


# ---------------------------------------------------------------- activations

def sigmoid(v):
    scalar = np.ndim(v) == 0
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if np.any(np.isnan(v)):
        raise NumericError("sigmoid received NaN")
    out = np.empty_like(v)
    positive = v >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-v[positive]))
    exp_v = np.exp(v[~positive])
    out[~positive] = exp_v / (1.0 + exp_v)
    if scalar:
        return float(out[0])
    return out


def softmax(v) -> np.ndarray:
    """Softmax over the last axis, stabilized by max subtraction"""
    v = np.asarray(v, dtype=np.float64)
    if np.any(np.isnan(v)):
        raise NumericError("softmax received NaN")
    shifted = v - np.max(v, axis=-1, keepdims=True)
    exp_v = np.exp(shifted)
    return exp_v / np.sum(exp_v, axis=-1, keepdims=True)


def softmax_backward(ds: np.ndarray, s: np.ndarray) -> np.ndarray:
    return s * (ds - np.sum(ds * s, axis=-1, keepdims=True))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------- batch norm

@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = Keys.BN_MOMENTUM
    eps: float = Keys.BN_EPS
    mode: str = "training"

    @classmethod
    def create(cls, num_features: int, momentum: float = Keys.BN_MOMENTUM, eps: float = Keys.BN_EPS):
        return cls(gamma=np.ones(num_features), beta=np.zeros(num_features),
                   running_mean=np.zeros(num_features), running_var=np.ones(num_features),
                   momentum=momentum, eps=eps)

    @property
    def training(self) -> bool:
        return self.mode == "training"


@dataclass
class BatchNormCache:
    x_norm: np.ndarray
    std: np.ndarray


def batch_norm(x: np.ndarray, state: BatchNormState) -> Tuple[np.ndarray, Optional[BatchNormCache]]:
    """Normalizes a (batch, features) matrix.

    Training mode uses batch statistics and updates the running averages in
    ``state``; inference mode reads the running averages only and returns no
    cache.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != state.gamma.shape[0]:
        raise DimensionError(f"batch norm over {state.gamma.shape[0]} features got input {x.shape}")
    if not state.training:
        std = np.sqrt(state.running_var + state.eps)
        return state.gamma * (x - state.running_mean) / std + state.beta, None
    if x.shape[0] < 2:
        raise DegenerateBatchError("training-mode batch norm needs at least 2 rows")
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    std = np.sqrt(var + state.eps)
    x_norm = (x - mean) / std
    state.running_mean = (1.0 - state.momentum) * state.running_mean + state.momentum * mean
    state.running_var = (1.0 - state.momentum) * state.running_var + state.momentum * var
    return state.gamma * x_norm + state.beta, BatchNormCache(x_norm=x_norm, std=std)


def batch_norm_backward(dy: np.ndarray, cache: BatchNormCache, state: BatchNormState) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dL/dx, dL/dgamma, dL/dbeta)"""
    n = dy.shape[0]
    dgamma = np.sum(dy * cache.x_norm, axis=0)
    dbeta = np.sum(dy, axis=0)
    dx_norm = dy * state.gamma
    sum1 = np.sum(dx_norm, axis=0)
    sum2 = np.sum(dx_norm * cache.x_norm, axis=0)
    dx = (n * dx_norm - sum1 - cache.x_norm * sum2) / (n * cache.std)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------- adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = Keys.LR
    beta1: float = Keys.ADAM_BETA1
    beta2: float = Keys.ADAM_BETA2
    eps: float = Keys.ADAM_EPS

    @classmethod
    def like(cls, param: np.ndarray, **hyper):
        return cls(m=np.zeros_like(param, dtype=np.float64), v=np.zeros_like(param, dtype=np.float64), **hyper)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> Tuple[np.ndarray, AdamState]:
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise DimensionError(f"adam: param {param.shape}, grad {grad.shape}, moments {state.m.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_param = param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_param, replace(state, m=m, v=v, t=t)


class Adam:
    """Single optimizer over a list of Parameters, updated in place"""

    def __init__(self, parameters: Sequence[Parameter], lr: float = Keys.LR, beta1: float = Keys.ADAM_BETA1,
                 beta2: float = Keys.ADAM_BETA2, eps: float = Keys.ADAM_EPS):
        self.parameters = list(parameters)
        self.states = [AdamState.like(p.value, lr=lr, beta1=beta1, beta2=beta2, eps=eps) for p in self.parameters]

    def zero_grad(self):
        for p in self.parameters:
            p.zero_grad()

    def step(self):
        for i, p in enumerate(self.parameters):
            new_value, self.states[i] = adam_step(p.value, p.grad, self.states[i])
            p.value[...] = new_value


# ---------------------------------------------------------------- init

def xavier_init(rows: int, cols: int, rng_seed: SeedLike = None) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise DimensionError(f"xavier_init needs positive shape, got ({rows}, {cols})")
    bound = math.sqrt(6.0 / (rows + cols))
    return as_generator(rng_seed).uniform(-bound, bound, size=(rows, cols))


# ---------------------------------------------------------------- gradient check

def grad_check(loss_fn: Callable[[], Tuple[float, List[np.ndarray]]], params: Sequence[np.ndarray],
               eps: float = Keys.GRAD_CHECK_EPS, max_coords: Optional[int] = None, seed: SeedLike = 0) -> float:
    """Compares analytic gradients with central differences.

    ``loss_fn`` evaluates the loss at the current contents of ``params`` and
    returns ``(loss, grads)`` with one gradient per parameter. Parameters are
    perturbed in place and restored. Returns the maximum over checked
    coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    _, analytic = loss_fn()
    analytic = [np.array(g, dtype=np.float64, copy=True) for g in analytic]
    rng = as_generator(seed)
    worst = 0.0
    for param, grad in zip(params, analytic):
        flat = param.reshape(-1)
        if not np.shares_memory(flat, param):
            raise DimensionError("grad_check needs contiguous parameter arrays")
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        grad_flat = grad.reshape(-1)
        for c in coords:
            original = flat[c]
            flat[c] = original + eps
            plus, _ = loss_fn()
            flat[c] = original - eps
            minus, _ = loss_fn()
            flat[c] = original
            numeric = (plus - minus) / (2.0 * eps)
            error = abs(grad_flat[c] - numeric) / max(1.0, abs(grad_flat[c]))
            worst = max(worst, error)
    return worst
