"""
Minimal trainable network substrate in NumPy.

Layers cache what they need in forward() and write parameter gradients in
backward(). Gradients accumulate until ParamStore.zero_grad(). Tensors are
plain ndarrays; convolutional tensors are laid out (batch, channels, length).
"""

import hashlib
import io
import json
import logging
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import CheckpointError, ModelStateError, ParameterError, ShapeError

logger = logging.getLogger(__name__)

Tensor = np.ndarray

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
CHECKPOINT_MAGIC = b"AFRG1"


class LayerKind(Enum):
    CONV1D = "conv1d"
    BATCHNORM1D = "batchnorm1d"
    RELU = "relu"
    TANH = "tanh"
    MAXPOOL1D = "maxpool1d"
    DROPOUT = "dropout"
    DENSE = "dense"
    SOFTMAX = "softmax"
    FLATTEN = "flatten"


class Mode(Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class LayerSpec:
    """Layer kind plus hyper-parameters. `features` is channels (conv/bn) or width (dense)."""

    kind: LayerKind
    in_features: int = 0
    out_features: int = 0
    kernel: int = 0
    stride: int = 1
    p: float = 0.0
    bias: bool = True

    def __post_init__(self):
        if self.kind in (LayerKind.CONV1D, LayerKind.MAXPOOL1D):
            if self.kernel <= 0 or self.stride <= 0:
                raise ParameterError(f"{self.kind.value}: kernel and stride must be positive")
        if self.kind in (LayerKind.CONV1D, LayerKind.DENSE):
            if self.in_features <= 0 or self.out_features <= 0:
                raise ParameterError(f"{self.kind.value}: feature counts must be positive")
        if self.kind is LayerKind.BATCHNORM1D and self.in_features <= 0:
            raise ParameterError("batchnorm1d: feature count must be positive")
        if self.kind is LayerKind.DROPOUT and not 0.0 <= self.p < 1.0:
            raise ParameterError(f"dropout: p must be in [0, 1), got {self.p}")


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray
    trainable: bool = True


class ParamStore:
    """Named parameters, their gradients and Adam state, plus the seeded RNG for init and dropout."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.params: Dict[str, Parameter] = {}
        self.adam_m: Dict[str, np.ndarray] = {}
        self.adam_v: Dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Parameter:
        if name in self.params:
            raise ParameterError(f"Duplicate parameter name: {name}")
        value = np.asarray(value, dtype=np.float64)
        param = Parameter(value, np.zeros_like(value), trainable)
        self.params[name] = param
        return param

    def he_normal(self, name: str, shape: Tuple[int, ...], fan_in: int) -> Parameter:
        """Fan-in scaled Gaussian init, std sqrt(2 / fan_in)."""
        return self.add(name, self.rng.normal(0.0, np.sqrt(2.0 / fan_in), shape))

    def zeros(self, name: str, shape: Tuple[int, ...], trainable: bool = True) -> Parameter:
        return self.add(name, np.zeros(shape), trainable)

    def ones(self, name: str, shape: Tuple[int, ...], trainable: bool = True) -> Parameter:
        return self.add(name, np.ones(shape), trainable)

    def trainable(self) -> Dict[str, Parameter]:
        return {name: p for name, p in self.params.items() if p.trainable}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad.fill(0.0)

    def parameter_count(self) -> int:
        return int(sum(p.value.size for p in self.trainable().values()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.value for name, p in self.params.items()}

    def load_state_dict(self, tensors: Dict[str, np.ndarray]) -> None:
        missing = [name for name in self.params if name not in tensors]
        if missing:
            raise CheckpointError(f"Checkpoint is missing tensors: {', '.join(missing)}")
        for name, param in self.params.items():
            value = np.asarray(tensors[name], dtype=np.float64)
            if value.shape != param.value.shape:
                raise CheckpointError(f"Tensor {name}: checkpoint shape {value.shape} != model shape {param.value.shape}")
            param.value[...] = value


class Layer:
    """Base class: forward caches, backward consumes the cache."""

    kind: LayerKind

    def __init__(self, spec: LayerSpec, name: str):
        self.spec = spec
        self.name = name
        self._cache: Any = None

    def forward(self, x: Tensor, mode: Mode) -> Tensor:
        raise NotImplementedError

    def backward(self, grad: Tensor) -> Tensor:
        raise NotImplementedError

    def _cached(self) -> Any:
        if self._cache is None:
            raise ModelStateError(f"{self.name}: backward called without a cached forward pass")
        return self._cache


def _strided_slice(start: int, count: int, stride: int) -> slice:
    return slice(start, start + stride * (count - 1) + 1, stride)


class Conv1D(Layer):
    """Valid-padding 1-D cross-correlation; weight (filters, channels, kernel)."""

    kind = LayerKind.CONV1D

    def __init__(self, spec: LayerSpec, store: ParamStore, name: str):
        super().__init__(spec, name)
        fan_in = spec.in_features * spec.kernel
        self.weight = store.he_normal(f"{name}.weight", (spec.out_features, spec.in_features, spec.kernel), fan_in)
        self.bias = store.zeros(f"{name}.bias", (spec.out_features,)) if spec.bias else None

    def output_length(self, length: int) -> int:
        return (length - self.spec.kernel) // self.spec.stride + 1

    def forward(self, x: Tensor, mode: Mode) -> Tensor:
        k, c_out = self.spec.kernel, self.spec.out_features
        if x.ndim != 3 or x.shape[1] != self.spec.in_features:
            raise ShapeError(f"{self.name}: expected (B, {self.spec.in_features}, L), got {x.shape}")
        if x.shape[2] < k:
            raise ShapeError(f"{self.name}: input length {x.shape[2]} shorter than kernel {k}")
        b, c, _ = x.shape
        cols = sliding_window_view(x, k, axis=2)[:, :, :: self.spec.stride, :]
        l_out = cols.shape[2]
        patches = cols.transpose(0, 2, 1, 3).reshape(b * l_out, c * k)
        out = (patches @ self.weight.value.reshape(c_out, c * k).T).reshape(b, l_out, c_out).transpose(0, 2, 1)
        if self.bias is not None:
            out = out + self.bias.value[None, :, None]
        self._cache = (patches, x.shape, l_out)
        return out

    def backward(self, grad: Tensor) -> Tensor:
        patches, shape, l_out = self._cached()
        b, c, _ = shape
        k, c_out = self.spec.kernel, self.spec.out_features
        g = grad.transpose(0, 2, 1).reshape(b * l_out, c_out)
        self.weight.grad += (g.T @ patches).reshape(c_out, c, k)
        if self.bias is not None:
            self.bias.grad += grad.sum(axis=(0, 2))
        d_patches = (g @ self.weight.value.reshape(c_out, c * k)).reshape(b, l_out, c, k)
        dx = np.zeros(shape)
        for j in range(k):
            dx[:, :, _strided_slice(j, l_out, self.spec.stride)] += d_patches[:, :, :, j].transpose(0, 2, 1)
        return dx


class BatchNorm1D(Layer):
    """Per-channel normalization of (B, C) or (B, C, L) input."""

    kind = LayerKind.BATCHNORM1D

    def __init__(self, spec: LayerSpec, store: ParamStore, name: str):
        super().__init__(spec, name)
        c = spec.in_features
        self.gamma = store.ones(f"{name}.gamma", (c,))
        self.beta = store.zeros(f"{name}.beta", (c,))
        self.running_mean = store.zeros(f"{name}.running_mean", (c,), trainable=False)
        self.running_var = store.ones(f"{name}.running_var", (c,), trainable=False)

    def forward(self, x: Tensor, mode: Mode) -> Tensor:
        if x.ndim not in (2, 3) or x.shape[1] != self.spec.in_features:
            raise ShapeError(f"{self.name}: expected (B, {self.spec.in_features}[, L]), got {x.shape}")
        axes = (0,) if x.ndim == 2 else (0, 2)
        view = (1, -1) if x.ndim == 2 else (1, -1, 1)
        n = x.size // x.shape[1]
        if mode is Mode.TRAIN:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            unbiased = var * n / (n - 1) if n > 1 else var
            self.running_mean.value[...] = (1 - BN_MOMENTUM) * self.running_mean.value + BN_MOMENTUM * mean
            self.running_var.value[...] = (1 - BN_MOMENTUM) * self.running_var.value + BN_MOMENTUM * unbiased
        else:
            mean = self.running_mean.value
            var = self.running_var.value
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        x_hat = (x - mean.reshape(view)) * inv_std.reshape(view)
        self._cache = (x_hat, inv_std, mode, axes, view, n)
        return self.gamma.value.reshape(view) * x_hat + self.beta.value.reshape(view)

    def backward(self, grad: Tensor) -> Tensor:
        x_hat, inv_std, mode, axes, view, n = self._cached()
        self.gamma.grad += np.sum(grad * x_hat, axis=axes)
        self.beta.grad += np.sum(grad, axis=axes)
        d_xhat = grad * self.gamma.value.reshape(view)
        if mode is Mode.EVAL:
            return d_xhat * inv_std.reshape(view)
        sum_d = np.sum(d_xhat, axis=axes).reshape(view)
        sum_dx = np.sum(d_xhat * x_hat, axis=axes).reshape(view)
        return (inv_std.reshape(view) / n) * (n * d_xhat - sum_d - x_hat * sum_dx)


class ReLU(Layer):
    kind = LayerKind.RELU

    def forward(self, x: Tensor, mode: Mode) -> Tensor:
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, grad: Tensor) -> Tensor:
        return grad * self._cached()


class Tanh(Layer):
    kind = LayerKind.TANH

    def forward(self, x: Tensor, mode: Mode) -> Tensor:
        out = np.tanh(x)
        self._cache = out
        return out

    def backward(self, grad: Tensor) -> Tensor:
        out = self._cached()
        return grad * (1.0 - out * out)


class MaxPool1D(Layer):
    kind = LayerKind.MAXPOOL1D

    def output_length(self, length: int) -> int:
        return (length - self.spec.kernel) // self.spec.stride + 1

    def forward(self, x: Tensor, mode: Mode) -> Tensor:
        k = self.spec.kernel
        if x.shape[-1] < k:
            raise ShapeError(f"{self.name}: input length {x.shape[-1]} shorter than pool window {k}")
        windows = sliding_window_view(x, k, axis=-1)[..., :: self.spec.stride, :]
        idx = windows.argmax(axis=-1)
        self._cache = (idx, x.shape)
        return np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad: Tensor) -> Tensor:
        idx, shape = self._cached()
        l_out = idx.shape[-1]
        dx = np.zeros(shape)
        for j in range(self.spec.kernel):
            dx[..., _strided_slice(j, l_out, self.spec.stride)] += grad * (idx == j)
        return dx


class Dropout(Layer):
    """Inverted dropout; identity in EVAL mode."""

    kind = LayerKind.DROPOUT

    def __init__(self, spec: LayerSpec, store: ParamStore, name: str):
        super().__init__(spec, name)
        self.rng = store.rng

    def forward(self, x: Tensor, mode: Mode) -> Tensor:
        p = self.spec.p
        if mode is Mode.EVAL or p == 0.0:
            self._cache = 1.0
            return x
        mask = (self.rng.random(x.shape) >= p) / (1.0 - p)
        self._cache = mask
        return x * mask

    def backward(self, grad: Tensor) -> Tensor:
        return grad * self._cached()


class Dense(Layer):
    """Affine map x @ W + b with W of shape (in, out)."""

    kind = LayerKind.DENSE

    def __init__(self, spec: LayerSpec, store: ParamStore, name: str):
        super().__init__(spec, name)
        self.weight = store.he_normal(f"{name}.weight", (spec.in_features, spec.out_features), spec.in_features)
        self.bias = store.zeros(f"{name}.bias", (spec.out_features,)) if spec.bias else None

    def forward(self, x: Tensor, mode: Mode) -> Tensor:
        if x.shape[-1] != self.spec.in_features:
            raise ShapeError(f"{self.name}: expected width {self.spec.in_features}, got {x.shape[-1]}")
        self._cache = x
        out = x @ self.weight.value
        if self.bias is not None:
            out = out + self.bias.value
        return out

    def backward(self, grad: Tensor) -> Tensor:
        x = self._cached()
        self.weight.grad += x.reshape(-1, x.shape[-1]).T @ grad.reshape(-1, grad.shape[-1])
        if self.bias is not None:
            self.bias.grad += grad.reshape(-1, grad.shape[-1]).sum(axis=0)
        return grad @ self.weight.value.T


class Softmax(Layer):
    kind = LayerKind.SOFTMAX

    def forward(self, x: Tensor, mode: Mode) -> Tensor:
        out = softmax(x)
        self._cache = out
        return out

    def backward(self, grad: Tensor) -> Tensor:
        s = self._cached()
        return s * (grad - np.sum(grad * s, axis=-1, keepdims=True))


class Flatten(Layer):
    kind = LayerKind.FLATTEN

    def forward(self, x: Tensor, mode: Mode) -> Tensor:
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad: Tensor) -> Tensor:
        return grad.reshape(self._cached())


_LAYER_TYPES = {
    LayerKind.CONV1D: Conv1D,
    LayerKind.BATCHNORM1D: BatchNorm1D,
    LayerKind.DROPOUT: Dropout,
    LayerKind.DENSE: Dense,
}
_STATELESS_TYPES = {
    LayerKind.RELU: ReLU,
    LayerKind.TANH: Tanh,
    LayerKind.MAXPOOL1D: MaxPool1D,
    LayerKind.SOFTMAX: Softmax,
    LayerKind.FLATTEN: Flatten,
}


def build_layer(spec: LayerSpec, store: ParamStore, name: str) -> Layer:
    """Instantiate the layer for `spec`, registering its parameters in `store` under `name`."""
    if spec.kind in _LAYER_TYPES:
        return _LAYER_TYPES[spec.kind](spec, store, name)
    return _STATELESS_TYPES[spec.kind](spec, name)


class Sequential:
    """A chain of layers run forward in order and backward in reverse."""

    def __init__(self, specs: Sequence[LayerSpec], store: ParamStore, prefix: str):
        self.layers: List[Layer] = [
            build_layer(spec, store, f"{prefix}.{i}_{spec.kind.value}") for i, spec in enumerate(specs)
        ]

    def forward(self, x: Tensor, mode: Mode) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x, mode)
        return x

    def backward(self, grad: Tensor) -> Tensor:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(logits: Tensor, labels: Union[int, Sequence[int], np.ndarray]) -> Tuple[float, Tensor]:
    """
    Softmax cross-entropy averaged over the batch.

    Args:
        logits: (C,) for one example or (B, C)
        labels: Class index or (B,) indices

    Returns:
        (loss, gradient w.r.t. logits with the logits' shape)
    """
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    y = np.atleast_1d(np.asarray(labels, dtype=int))
    if y.shape[0] != z.shape[0]:
        raise ShapeError(f"{z.shape[0]} logit rows but {y.shape[0]} labels")
    shifted = z - np.max(z, axis=1, keepdims=True)
    log_probs = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    rows = np.arange(z.shape[0])
    loss = -float(np.mean(log_probs[rows, y]))
    grad = np.exp(log_probs)
    grad[rows, y] -= 1.0
    grad /= z.shape[0]
    return loss, (grad[0] if single else grad)


def adam_step(
    store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> None:
    """Apply one bias-corrected Adam update to every trainable parameter in place."""
    store.step_count += 1
    t = store.step_count
    for name, p in store.trainable().items():
        m = store.adam_m.setdefault(name, np.zeros_like(p.value))
        v = store.adam_v.setdefault(name, np.zeros_like(p.value))
        m *= beta1
        m += (1 - beta1) * p.grad
        v *= beta2
        v += (1 - beta2) * p.grad * p.grad
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-4, indices: Optional[Sequence] = None) -> np.ndarray:
    """
    Central finite differences of a scalar function w.r.t. an array it reads.

    Args:
        f: Zero-argument function evaluated after each in-place perturbation of x
        x: Array perturbed in place (restored afterwards)
        h: Step size
        indices: Flat indices to differentiate; all elements when None

    Returns:
        Array shaped like x (skipped entries are 0)
    """
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size) if indices is None else indices:
        original = flat_x[i]
        flat_x[i] = original + h
        up = f()
        flat_x[i] = original - h
        down = f()
        flat_x[i] = original
        flat_g[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / (||a|| + ||n||), 0 when both vanish."""
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def save_checkpoint(path: Union[str, Path], tensors: Dict[str, np.ndarray], metadata: Dict[str, Any]) -> str:
    """
    Write tensors in the AFRG1 format.

    Layout: magic "AFRG1", uint32 JSON-metadata length + UTF-8 JSON, uint32 tensor
    count, then per tensor: uint16 name length + UTF-8 name, uint8 ndim, uint32 dims,
    little-endian float32 data. All integers little-endian.

    Returns:
        SHA-256 hex digest of the written bytes
    """
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    header = json.dumps(metadata, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        encoded = name.encode("utf-8")
        value = np.asarray(value)
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", value.ndim))
        buf.write(struct.pack(f"<{value.ndim}I", *value.shape))
        buf.write(value.astype("<f4").tobytes())
    data = buf.getvalue()
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(data)
    except OSError as e:
        raise CheckpointError(f"Error writing checkpoint {path}: {e}")
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Read an AFRG1 checkpoint.

    Returns:
        (metadata, tensors as float64 arrays)

    Raises:
        CheckpointError: If the file is missing, truncated or not AFRG1
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"Error reading checkpoint {path}: {e}")
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not an AFRG1 checkpoint")
    try:
        pos = len(CHECKPOINT_MAGIC)
        (header_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        metadata = json.loads(data[pos : pos + header_len].decode("utf-8"))
        pos += header_len
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        tensors: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(data):
                raise CheckpointError(f"{path}: tensor {name} is truncated")
            tensors[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).astype(np.float64).reshape(shape)
            pos += 4 * size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}")
    return metadata, tensors


def file_digest(path: Union[str, Path]) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as e:
        raise CheckpointError(f"Error reading checkpoint {path}: {e}")
