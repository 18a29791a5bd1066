from typing import Dict, Iterator, List, Tuple
import numpy as np
from classes.numerics import (Parameter, SeedLike, as_generator, affine_forward, affine_backward, batch_norm,
                              batch_norm_backward, BatchNormState, softmax, softmax_backward, xavier_init)
from classes.errors import DimensionError


class Layer:
    """Container of named Parameters, buffers and child layers.

    Each concrete layer caches what its backward pass needs during forward;
    backward accumulates into ``Parameter.grad`` and returns the input
    gradient.
    """

    def __init__(self):
        self._params: Dict[str, Parameter] = {}
        self._children: Dict[str, "Layer"] = {}
        self.training = True

    def add_param(self, name: str, value: np.ndarray) -> Parameter:
        param = Parameter(value, name=name)
        self._params[name] = param
        return param

    def add_child(self, name: str, layer: "Layer") -> "Layer":
        self._children[name] = layer
        return layer

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for child_name, child in self._children.items():
            yield from child.named_parameters(prefix + child_name + ".")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for child_name, child in self._children.items():
            yield from child.named_buffers(prefix + child_name + ".")

    def set_buffer(self, name: str, value: np.ndarray):
        child_name, _, rest = name.partition(".")
        self._children[child_name].set_buffer(rest, value)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True):
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.value.copy() for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            state[name] = np.array(buf, copy=True)
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        for name, value in state.items():
            if name in params:
                if params[name].value.shape != value.shape:
                    raise DimensionError(f"{name}: checkpoint shape {value.shape} != {params[name].value.shape}")
                params[name].value[...] = value
            elif name in buffers:
                self.set_buffer(name, np.array(value, dtype=np.float64, copy=True))
            else:
                raise KeyError(f"unexpected state entry {name}")
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)}")

    def param_count(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, seed: SeedLike = None):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.add_param("weight", xavier_init(in_features, out_features, seed))
        self.bias = self.add_param("bias", np.zeros(out_features))
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return affine_forward(x, self.weight.value, self.bias.value)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx, dw, db = affine_backward(dy, self._x, self.weight.value)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class BatchNorm1D(Layer):
    def __init__(self, num_features: int):
        super().__init__()
        self.state = BatchNormState.create(num_features)
        self.gamma = self.add_param("gamma", self.state.gamma)
        self.beta = self.add_param("beta", self.state.beta)
        # the state must see the same arrays the optimizer updates
        self.state.gamma = self.gamma.value
        self.state.beta = self.beta.value
        self._cache = None

    def train(self, mode: bool = True):
        super().train(mode)
        self.state.mode = "training" if mode else "inference"
        return self

    def named_buffers(self, prefix: str = ""):
        yield prefix + "running_mean", self.state.running_mean
        yield prefix + "running_var", self.state.running_var

    def set_buffer(self, name: str, value: np.ndarray):
        setattr(self.state, name, value)

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, self._cache = batch_norm(x, self.state)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx, dgamma, dbeta = batch_norm_backward(dy, self._cache, self.state)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx


class MLPTower(Layer):
    """Stack of affine + ReLU layers"""

    def __init__(self, in_features: int, hidden_dims, seed: SeedLike = None):
        super().__init__()
        rng = as_generator(seed)
        self.layers: List[Linear] = []
        width = in_features
        for i, h in enumerate(hidden_dims):
            self.layers.append(self.add_child(f"dense{i}", Linear(width, h, rng)))
            width = h
        self.out_features = width
        self._masks = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._masks = []
        for layer in self.layers:
            x = layer.forward(x)
            mask = x > 0
            self._masks.append(mask)
            x = x * mask
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer, mask in zip(reversed(self.layers), reversed(self._masks)):
            dy = layer.backward(dy * mask)
        return dy


class Controller(Layer):
    """Batch norm -> affine -> softmax over the N fields.

    Takes the flattened concatenation of N field embeddings and returns one
    positive importance score per field, summing to one per instance.
    """

    def __init__(self, n_fields: int, emb_dim: int, seed: SeedLike = None):
        super().__init__()
        self.n_fields = n_fields
        self.emb_dim = emb_dim
        self.norm = self.add_child("norm", BatchNorm1D(n_fields * emb_dim))
        self.fc = self.add_child("fc", Linear(n_fields * emb_dim, n_fields, seed))
        self._scores = None

    def forward(self, embeddings: np.ndarray) -> np.ndarray:
        """embeddings: (batch, N, d) -> scores (batch, N)"""
        if embeddings.ndim != 3 or embeddings.shape[1:] != (self.n_fields, self.emb_dim):
            raise DimensionError(f"controller expects (batch, {self.n_fields}, {self.emb_dim}), got {embeddings.shape}")
        flat = embeddings.reshape(embeddings.shape[0], -1)
        self._scores = softmax(self.fc.forward(self.norm.forward(flat)))
        return self._scores

    def backward(self, d_scores: np.ndarray) -> np.ndarray:
        d_logits = softmax_backward(d_scores, self._scores)
        d_flat = self.norm.backward(self.fc.backward(d_logits))
        return d_flat.reshape(-1, self.n_fields, self.emb_dim)
