"""
Dual-stream emotion classifier.

The spectral branch is a three-block 1-D CNN over the serialized feature
vector; the temporal branch encodes per-frame descriptor rows into hidden
states and pools them with learned attention. Both embeddings are
concatenated and classified by a small dense head over the seven emotions.
"""

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum, IntEnum
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

from config import override
from errors import CheckpointError, ModelStateError, ParameterError, ShapeError
from features import FeatureConfig, FeatureVector, frame_descriptors, frame_descriptors_backward
from nn_core import (
    LayerKind,
    LayerSpec,
    Mode,
    ParamStore,
    Sequential,
    Tensor,
    adam_step,
    cross_entropy,
    load_checkpoint,
    save_checkpoint,
    softmax,
)

logger = logging.getLogger(__name__)

NUM_CLASSES = 7
PREDICT_BATCH = 64
# index of the ReLU after the abstraction-block convolution in the spectral stack
LAST_CONV_ACTIVATION = 11


class EmotionClass(IntEnum):
    HAPPY = 0
    ANGRY = 1
    FEAR = 2
    SAD = 3
    SURPRISED = 4
    DISGUST = 5
    NEUTRAL = 6

    @classmethod
    def from_label(cls, label: Union[str, int, "EmotionClass"]) -> "EmotionClass":
        """Parse a class name (any case) or integer code."""
        if isinstance(label, (int, np.integer)):
            try:
                return cls(int(label))
            except ValueError:
                raise ParameterError(f"Unknown emotion code: {label}")
        try:
            return cls[str(label).strip().upper()]
        except KeyError:
            raise ParameterError(f"Unknown emotion label: {label!r}")


class Variant(Enum):
    """Model variants compared in the ablation, rows A to D."""

    SPECTRAL_ONLY = "spectral_only"
    TEMPORAL_ONLY = "temporal_only"
    SIMPLE_CONCAT = "simple_concat"
    FULL = "full"

    @property
    def uses_spectral(self) -> bool:
        return self is not Variant.TEMPORAL_ONLY

    @property
    def uses_temporal(self) -> bool:
        return self is not Variant.SPECTRAL_ONLY

    @property
    def attentive(self) -> bool:
        return self in (Variant.TEMPORAL_ONLY, Variant.FULL)

    @property
    def row(self) -> str:
        return "ABCD"[list(Variant).index(self)]


@dataclass(frozen=True)
class TrainConfig:
    """Training hyper-parameters and model widths."""

    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    width_scale: float = 0.125
    hidden_width: int = 32
    attention_width: int = 32
    head_width: int = 64
    val_fraction: float = 0.1
    augment: bool = False
    semitones: float = 0.7
    seed: int = 0
    variant: Variant = Variant.FULL

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 < self.width_scale <= 1:
            raise ParameterError(f"width_scale must be in (0, 1], got {self.width_scale}")
        for name in ("hidden_width", "attention_width", "head_width"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 <= self.val_fraction < 1:
            raise ParameterError(f"val_fraction must be in [0, 1), got {self.val_fraction}")

    def widths(self) -> Tuple[int, int, int, int]:
        """Filters of the three convolution blocks and the spectral embedding width."""
        s = self.width_scale
        return tuple(max(1, int(round(w * s))) for w in (512, 256, 128, 512))

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


def spectral_specs(length: int, config: TrainConfig) -> Tuple[List[LayerSpec], int]:
    """
    Layer list of the spectral branch for input (B, 1, length).

    Returns:
        (layer specs, embedding width)

    Raises:
        ShapeError: If the input is too short to survive the three pooling stages
    """
    c1, c2, c3, emb = config.widths()
    n = length
    for kernel, pool in ((5, 5), (5, 5), (3, 3)):
        n = n - kernel + 1
        n = (n - pool) // 2 + 1 if n >= pool else 0
    if n < 1:
        raise ShapeError(f"Feature vectors of length {length} are too short for the spectral branch (minimum 41)")
    conv, bn, relu, pool, drop = (
        LayerKind.CONV1D,
        LayerKind.BATCHNORM1D,
        LayerKind.RELU,
        LayerKind.MAXPOOL1D,
        LayerKind.DROPOUT,
    )
    specs = [
        # expansion
        LayerSpec(conv, 1, c1, kernel=5),
        LayerSpec(bn, c1),
        LayerSpec(relu),
        LayerSpec(pool, kernel=5, stride=2),
        # compression
        LayerSpec(conv, c1, c2, kernel=5),
        LayerSpec(bn, c2),
        LayerSpec(relu),
        LayerSpec(pool, kernel=5, stride=2),
        LayerSpec(drop, p=0.2),
        # abstraction
        LayerSpec(conv, c2, c3, kernel=3),
        LayerSpec(bn, c3),
        LayerSpec(relu),
        LayerSpec(pool, kernel=3, stride=2),
        LayerSpec(drop, p=0.2),
        # projection
        LayerSpec(LayerKind.FLATTEN),
        LayerSpec(LayerKind.DENSE, c3 * n, emb),
        LayerSpec(relu),
        LayerSpec(bn, emb),
    ]
    return specs, emb


class FrameEncoder(Protocol):
    """Maps per-frame descriptor rows (B, T, K+2) to hidden states (B, T, d)."""

    hidden_width: int

    def forward(self, frames: Tensor, mode: Mode) -> Tensor: ...

    def backward(self, grad: Tensor) -> Tensor: ...


class StubFrameEncoder:
    """Per-frame affine map followed by tanh, shared across frames."""

    def __init__(self, store: ParamStore, in_width: int, hidden_width: int, prefix: str = "temporal.encoder"):
        self.hidden_width = hidden_width
        self.net = Sequential(
            [LayerSpec(LayerKind.DENSE, in_width, hidden_width), LayerSpec(LayerKind.TANH)], store, prefix
        )

    @property
    def weight(self):
        return self.net.layers[0].weight

    @property
    def bias(self):
        return self.net.layers[0].bias

    def forward(self, frames: Tensor, mode: Mode) -> Tensor:
        return self.net.forward(frames, mode)

    def backward(self, grad: Tensor) -> Tensor:
        return self.net.backward(grad)


def attentive_pool(H: np.ndarray, W_a: np.ndarray, b_a: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Attention-weighted average of hidden states.

    e_t = w . tanh(W_a h_t + b_a), alpha = softmax(e), v = sum_t alpha_t h_t.
    W_a is stored (d, a) so that W_a h_t is h_t @ W_a.

    Args:
        H: Hidden states, (T, d) or batched (B, T, d)
        W_a: (d, a) projection
        b_a: (a,) projection bias
        w: (a,) scoring vector (no bias)

    Returns:
        (context vector (d,) or (B, d), attention weights (T,) or (B, T))
    """
    if H.shape[-2] < 1:
        raise ShapeError("Attentive pooling needs at least one time step")
    e = np.tanh(H @ W_a + b_a) @ w
    alpha = softmax(e)
    return np.einsum("...t,...td->...d", alpha, H), alpha


class AttentivePooling:
    """Trainable attentive pooling over (B, T, d); uniform=True pools with 1/T weights and no parameters."""

    def __init__(self, store: ParamStore, hidden_width: int, attention_width: int, uniform: bool = False,
                 prefix: str = "temporal.pool"):
        self.uniform = uniform
        self.name = prefix
        self._cache = None
        if not uniform:
            self.W_a = store.he_normal(f"{prefix}.W_a", (hidden_width, attention_width), hidden_width)
            self.b_a = store.zeros(f"{prefix}.b_a", (attention_width,))
            self.w = store.he_normal(f"{prefix}.w", (attention_width,), attention_width)

    def weights(self, H: Tensor) -> Tensor:
        if self.uniform:
            return np.full(H.shape[:-1], 1.0 / H.shape[-2])
        return attentive_pool(H, self.W_a.value, self.b_a.value, self.w.value)[1]

    def forward(self, H: Tensor, mode: Mode) -> Tensor:
        if self.uniform:
            alpha = np.full(H.shape[:2], 1.0 / H.shape[1])
            self._cache = (H, alpha, None)
            return H.mean(axis=1)
        Z = np.tanh(H @ self.W_a.value + self.b_a.value)
        alpha = softmax(Z @ self.w.value)
        self._cache = (H, alpha, Z)
        return np.einsum("bt,btd->bd", alpha, H)

    def backward(self, grad: Tensor) -> Tensor:
        if self._cache is None:
            raise ModelStateError(f"{self.name}: backward called without a cached forward pass")
        H, alpha, Z = self._cache
        dH = alpha[:, :, None] * grad[:, None, :]
        if self.uniform:
            return dH
        d_alpha = np.einsum("bd,btd->bt", grad, H)
        d_e = alpha * (d_alpha - np.sum(d_alpha * alpha, axis=1, keepdims=True))
        self.w.grad += np.einsum("bt,bta->a", d_e, Z)
        dU = d_e[:, :, None] * self.w.value[None, None, :] * (1.0 - Z * Z)
        self.W_a.grad += np.einsum("btd,bta->da", H, dU)
        self.b_a.grad += dU.sum(axis=(0, 1))
        return dH + dU @ self.W_a.value.T


class FusionModel:
    """
    Spectral CNN branch + temporal attentive branch + classifier head.

    Inputs to forward() live in the standardized space: (values - mean) / scale with
    the per-index statistics fitted on the training vectors.
    """

    def __init__(self, feature_config: FeatureConfig, config: TrainConfig = TrainConfig()):
        self.feature_config = feature_config
        self.config = config
        self.variant = config.variant
        self.store = ParamStore(config.seed)
        length = feature_config.vector_length
        self.input_mean = self.store.zeros("input.mean", (length,), trainable=False)
        self.input_scale = self.store.ones("input.scale", (length,), trainable=False)
        self.fitted = False

        fusion_width = 0
        self.spectral: Optional[Sequential] = None
        self.encoder: Optional[StubFrameEncoder] = None
        self.pooling: Optional[AttentivePooling] = None
        if self.variant.uses_spectral:
            specs, emb = spectral_specs(length, config)
            self.spectral = Sequential(specs, self.store, "spectral")
            self.spectral_width = emb
            fusion_width += emb
        else:
            self.spectral_width = 0
        if self.variant.uses_temporal:
            self.encoder = StubFrameEncoder(self.store, feature_config.frame_width, config.hidden_width)
            self.pooling = AttentivePooling(
                self.store, config.hidden_width, config.attention_width, uniform=not self.variant.attentive
            )
            self.temporal_width = config.hidden_width
            fusion_width += config.hidden_width
        else:
            self.temporal_width = 0
        self.fusion_width = fusion_width
        self.head = Sequential(
            [
                LayerSpec(LayerKind.DENSE, fusion_width, config.head_width),
                LayerSpec(LayerKind.RELU),
                LayerSpec(LayerKind.DROPOUT, p=0.5),
                LayerSpec(LayerKind.DENSE, config.head_width, NUM_CLASSES, bias=False),
            ],
            self.store,
            "head",
        )
        self._silence: Optional[str] = None

    @property
    def is_fitted(self) -> bool:
        return self.fitted

    def parameter_count(self) -> int:
        return self.store.parameter_count()

    def fit_standardizer(self, values: np.ndarray) -> None:
        """Fit per-index mean and scale on raw training vectors (B, L)."""
        scaler = StandardScaler().fit(values)
        self.input_mean.value[...] = scaler.mean_
        self.input_scale.value[...] = scaler.scale_

    def standardize(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.input_mean.value) / self.input_scale.value

    def network_input(self, fv: FeatureVector) -> np.ndarray:
        """The model-input (standardized) form of a feature vector, shape (L,)."""
        self._check_vector(fv)
        return self.standardize(fv.values)

    def _check_vector(self, fv: FeatureVector) -> None:
        if fv.config.vector_length != self.feature_config.vector_length or fv.config != self.feature_config:
            raise ShapeError(
                f"Feature vector layout (T={fv.config.target_frames}, K={fv.config.num_mfcc}) does not match "
                f"the model (T={self.feature_config.target_frames}, K={self.feature_config.num_mfcc})"
            )

    def _embed(self, X: Tensor, mode: Mode, silence: Optional[str]) -> Tensor:
        parts = []
        if self.spectral is not None:
            v_spec = self.spectral.forward(X[:, None, :], mode)
            parts.append(np.zeros_like(v_spec) if silence == "spectral" else v_spec)
        if self.encoder is not None:
            H = self.encoder.forward(frame_descriptors(X, self.feature_config), mode)
            v_ctx = self.pooling.forward(H, mode)
            parts.insert(0, np.zeros_like(v_ctx) if silence == "temporal" else v_ctx)
        return np.concatenate(parts, axis=1)

    def forward(self, X: Tensor, mode: Mode = Mode.EVAL, silence: Optional[str] = None) -> Tensor:
        """
        Logits for a batch of standardized vectors.

        Args:
            X: (B, L) standardized inputs
            mode: TRAIN enables dropout and batch statistics
            silence: "spectral" or "temporal" zeroes that stream's embedding before fusion

        Returns:
            (B, 7) logits
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.feature_config.vector_length:
            raise ShapeError(f"Expected inputs of width {self.feature_config.vector_length}, got {X.shape[1]}")
        if silence is not None:
            if silence not in ("spectral", "temporal"):
                raise ParameterError(f"silence must be 'spectral' or 'temporal', got {silence!r}")
            if (silence == "spectral" and self.spectral is None) or (silence == "temporal" and self.encoder is None):
                raise ParameterError(f"Variant {self.variant.value} has no {silence} stream to silence")
        self._silence = silence
        return self.head.forward(self._embed(X, mode, silence), mode)

    def backward(self, grad_logits: Tensor) -> Tensor:
        """Backpropagate d(loss)/d(logits); returns the gradient w.r.t. the (B, L) input."""
        d_fusion = self.head.backward(grad_logits)
        dX = np.zeros((d_fusion.shape[0], self.feature_config.vector_length))
        offset = 0
        if self.encoder is not None:
            d_ctx = d_fusion[:, offset : offset + self.temporal_width]
            offset += self.temporal_width
            if self._silence != "temporal":
                dH = self.pooling.backward(d_ctx)
                dX += frame_descriptors_backward(self.encoder.backward(dH), self.feature_config)
        if self.spectral is not None:
            d_spec = d_fusion[:, offset : offset + self.spectral_width]
            if self._silence != "spectral":
                dX += self.spectral.backward(d_spec)[:, 0, :]
        return dX

    def class_scores(self, X: Tensor, silence: Optional[str] = None) -> Tensor:
        """Eval-mode class probabilities (B, 7) for standardized inputs (L,) or (B, L)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = [softmax(self.forward(X[i : i + PREDICT_BATCH], Mode.EVAL, silence)) for i in range(0, len(X), PREDICT_BATCH)]
        return np.concatenate(out, axis=0)

    def predict_proba(self, vectors: Union[Sequence[FeatureVector], np.ndarray], silence: Optional[str] = None) -> Tensor:
        """Eval-mode class probabilities for raw feature vectors."""
        if isinstance(vectors, np.ndarray):
            raw = np.atleast_2d(vectors)
        else:
            for fv in vectors:
                self._check_vector(fv)
            raw = np.stack([fv.values for fv in vectors])
        return self.class_scores(self.standardize(raw), silence)

    def predict(self, vectors: Union[Sequence[FeatureVector], np.ndarray], silence: Optional[str] = None) -> np.ndarray:
        return np.argmax(self.predict_proba(vectors, silence), axis=1)

    def last_conv_maps(self, X: Tensor) -> Tensor:
        """Post-activation maps of the final convolution, (B, C, L') for standardized inputs."""
        if self.spectral is None:
            raise ModelStateError(f"Variant {self.variant.value} has no spectral branch")
        h = np.atleast_2d(np.asarray(X, dtype=np.float64))[:, None, :]
        for layer in self.spectral.layers[: LAST_CONV_ACTIVATION + 1]:
            h = layer.forward(h, Mode.EVAL)
        return h

    def hidden_states(self, fv: FeatureVector) -> Tensor:
        """Temporal-branch hidden states H, shape (T, d)."""
        if self.encoder is None:
            raise ModelStateError(f"Variant {self.variant.value} has no temporal branch")
        X = self.network_input(fv)[None, :]
        return self.encoder.forward(frame_descriptors(X, self.feature_config), Mode.EVAL)[0]

    def attention_weights(self, fv: FeatureVector) -> np.ndarray:
        """Temporal pooling weights alpha_t, shape (T,)."""
        if self.pooling is None:
            raise ModelStateError(f"Variant {self.variant.value} has no temporal pooling")
        return self.pooling.weights(self.hidden_states(fv)[None])[0]

    def save(self, path: Union[str, Path]) -> str:
        """Write an AFRG1 checkpoint; returns its SHA-256 digest."""
        metadata = {
            "feature_config": asdict(self.feature_config),
            "train_config": self.config.to_dict(),
            "classes": [c.name for c in EmotionClass],
        }
        digest = save_checkpoint(path, self.store.state_dict(), metadata)
        logger.info("Saved %s checkpoint to %s (%s)", self.variant.value, path, digest[:12])
        return digest

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FusionModel":
        metadata, tensors = load_checkpoint(path)
        try:
            feature_config = override(FeatureConfig(), metadata["feature_config"])
            config = override(TrainConfig(), metadata["train_config"])
        except (KeyError, TypeError) as e:
            raise CheckpointError(f"Checkpoint {path} has incomplete metadata: {e}")
        model = cls(feature_config, config)
        model.store.load_state_dict(tensors)
        model.fitted = True
        return model


def stub_frame_encoder(fv: FeatureVector, model: FusionModel) -> np.ndarray:
    """Hidden states of `fv` under the model's per-frame encoder, shape (T, d)."""
    return model.hidden_states(fv)


def forward_fusion(fv: FeatureVector, model: FusionModel, mode: Mode = Mode.EVAL) -> np.ndarray:
    """Class-probability 7-vector for one feature vector."""
    X = model.network_input(fv)[None, :]
    return softmax(model.forward(X, mode))[0]


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    support: int
    per_class: Dict[str, Dict[str, float]] = field(default_factory=dict)
    confusion: np.ndarray = field(default_factory=lambda: np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=int))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
            "per_class": self.per_class,
            "confusion": self.confusion.tolist(),
        }


def compute_metrics(y_true: Sequence[int], y_pred: Sequence[int]) -> Metrics:
    """
    Accuracy and macro precision/recall/F1 over the classes that occur in either array.

    Classes with a zero denominator contribute 0 to the macro averages.
    """
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.size == 0:
        raise ParameterError("Cannot compute metrics on an empty dataset")
    present = np.union1d(y_true, y_pred)
    precision, recall, f1, _ = precision_recall_fscore_support(
        y_true, y_pred, labels=present, average="macro", zero_division=0
    )
    p_c, r_c, f_c, s_c = precision_recall_fscore_support(
        y_true, y_pred, labels=np.arange(NUM_CLASSES), average=None, zero_division=0
    )
    per_class = {
        c.name: {"precision": float(p_c[c]), "recall": float(r_c[c]), "f1": float(f_c[c]), "support": int(s_c[c])}
        for c in EmotionClass
    }
    return Metrics(
        accuracy=float(accuracy_score(y_true, y_pred)),
        precision=float(precision),
        recall=float(recall),
        f1=float(f1),
        support=int(y_true.size),
        per_class=per_class,
        confusion=confusion_matrix(y_true, y_pred, labels=np.arange(NUM_CLASSES)),
    )


Dataset = Sequence[Tuple[FeatureVector, EmotionClass]]


def _unpack(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    if len(dataset) == 0:
        raise ParameterError("Dataset is empty")
    layout = dataset[0][0].config
    for fv, _ in dataset:
        if fv.config != layout:
            raise ShapeError("Dataset mixes feature vectors of different layouts")
    return np.stack([fv.values for fv, _ in dataset]), np.array([int(label) for _, label in dataset])


def evaluate(dataset: Dataset, model: FusionModel, silence: Optional[str] = None) -> Metrics:
    """Eval-mode metrics of `model` on a labeled dataset."""
    if not model.is_fitted:
        raise ModelStateError("Model has not been trained or loaded")
    X, y = _unpack(dataset)
    return compute_metrics(y, model.predict(X, silence))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: Optional[float] = None
    val_accuracy: Optional[float] = None
    val_f1: Optional[float] = None


@dataclass
class TrainingHistory:
    epochs: List[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [r.train_loss for r in self.epochs]

    def to_records(self) -> List[Dict[str, Any]]:
        return [asdict(r) for r in self.epochs]


def _minibatches(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    # a single-example batch gives degenerate batch statistics
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def validation_split(
    X: Tensor, y: np.ndarray, config: TrainConfig
) -> Tuple[Tensor, np.ndarray, Optional[Tensor], Optional[np.ndarray]]:
    """
    Stratified held-out split of config.val_fraction (at least one example per class).

    Returns (X, y, None, None) when val_fraction is 0 or some class has fewer than two
    examples, or when holding one out per class would leave fewer training examples than classes.
    """
    if config.val_fraction == 0:
        return X, y, None, None
    counts = np.bincount(y)
    present = counts[counts > 0]
    n_val = max(int(np.ceil(config.val_fraction * len(y))), present.size)
    if present.min() < 2 or len(y) - n_val < present.size:
        logger.warning("Too few examples for a stratified validation split (%d over %d classes)", len(y), present.size)
        return X, y, None, None
    X_train, X_val, y_train, y_val = train_test_split(
        X, y, test_size=n_val, random_state=config.seed, stratify=y
    )
    return X_train, y_train, X_val, y_val


def train(dataset: Dataset, config: TrainConfig = TrainConfig()) -> Tuple[FusionModel, TrainingHistory]:
    """
    Fit a FusionModel with shuffled minibatch Adam on cross-entropy.

    Args:
        dataset: (feature vector, label) pairs sharing one layout
        config: Hyper-parameters; config.seed fixes init, dropout, shuffling and the validation split

    Returns:
        (trained model, per-epoch history)

    Raises:
        ParameterError: If the dataset is empty or holds fewer than two classes
    """
    X_all, y_all = _unpack(dataset)
    if np.unique(y_all).size < 2:
        raise ParameterError("Training needs at least two classes")
    X_train, y_train, X_val, y_val = validation_split(X_all, y_all, config)

    model = FusionModel(dataset[0][0].config, config)
    model.fit_standardizer(X_train)
    Xs_train = model.standardize(X_train)
    Xs_val = None if X_val is None else model.standardize(X_val)
    rng = np.random.default_rng(config.seed)
    history = TrainingHistory()
    logger.info(
        "Training %s model: %d examples, %d parameters, %d epochs",
        config.variant.value, len(y_train), model.parameter_count(), config.epochs,
    )

    for epoch in range(1, config.epochs + 1):
        total_loss, correct = 0.0, 0
        for idx in _minibatches(rng.permutation(len(y_train)), config.batch_size):
            model.store.zero_grad()
            logits = model.forward(Xs_train[idx], Mode.TRAIN)
            loss, grad = cross_entropy(logits, y_train[idx])
            model.backward(grad)
            adam_step(model.store, config.learning_rate)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y_train[idx]))
        record = EpochRecord(epoch, total_loss / len(y_train), correct / len(y_train))
        if Xs_val is not None:
            probs = model.class_scores(Xs_val)
            val_loss, _ = cross_entropy(np.log(np.clip(probs, 1e-12, None)), y_val)
            val_metrics = compute_metrics(y_val, np.argmax(probs, axis=1))
            record = replace(record, val_loss=val_loss, val_accuracy=val_metrics.accuracy, val_f1=val_metrics.f1)
        history.epochs.append(record)
        logger.info(
            "Epoch %d/%d: loss %.4f, train acc %.3f%s",
            epoch, config.epochs, record.train_loss, record.train_accuracy,
            "" if record.val_accuracy is None else f", val acc {record.val_accuracy:.3f}",
        )

    model.fitted = True
    return model, history


@dataclass(frozen=True)
class AblationRow:
    variant: Variant
    clean_accuracy: float
    clean_f1: float
    noisy_accuracy: float
    noisy_f1: float
    parameter_count: int
    latency_ms: float

    def to_dict(self, with_latency: bool = True) -> Dict[str, Any]:
        d = {
            "row": self.variant.row,
            "variant": self.variant.value,
            "clean_accuracy": self.clean_accuracy,
            "clean_f1": self.clean_f1,
            "noisy_accuracy": self.noisy_accuracy,
            "noisy_f1": self.noisy_f1,
            "parameter_count": self.parameter_count,
        }
        if with_latency:
            d["latency_ms"] = self.latency_ms
        return d


def ablate(
    train_set: Dataset,
    clean_test: Dataset,
    noisy_test: Dataset,
    config: TrainConfig = TrainConfig(),
    variants: Sequence[Variant] = tuple(Variant),
) -> List[AblationRow]:
    """
    Train and evaluate each variant on identical data and seed.

    Returns:
        One row per variant, in the order given
    """
    rows = []
    for variant in variants:
        model, _ = train(train_set, replace(config, variant=variant))
        clean = evaluate(clean_test, model)
        start = time.perf_counter()
        noisy = evaluate(noisy_test, model)
        latency_ms = 1000.0 * (time.perf_counter() - start) / len(noisy_test)
        row = AblationRow(
            variant, clean.accuracy, clean.f1, noisy.accuracy, noisy.f1, model.parameter_count(), latency_ms
        )
        logger.info(
            "Ablation %s (%s): clean acc %.3f, noisy acc %.3f, %d parameters",
            variant.row, variant.value, clean.accuracy, noisy.accuracy, row.parameter_count,
        )
        rows.append(row)
    return rows
