"""Compact convolutional speech-command classifier.

Two valid-padding conv+ReLU layers over the MFCC map feed a single fully
connected layer producing one logit per class.  Weights live in plain
float64 arrays so the whole network, including the front-end, has exact
hand-written gradients; training uses seeded minibatch Adam and is
bit-reproducible for a fixed seed on one machine.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .audio import CANONICAL_LABELS, CLIP_SAMPLES, Waveform, label_indices, stack
from .frontend import (
    FrontendConfig,
    MODEL_A_FRONTEND,
    mfcc_backward_batch,
    mfcc_forward_batch,
)

FORMAT_VERSION = 1
_CHUNK = 256  # fixed evaluation chunk size; keeps batched BLAS calls reproducible


class ModelFileError(ValueError):
    """Base class for unreadable model files."""


class FormatVersionError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class TruncatedFileError(ModelFileError):
    pass


class NonFiniteLossError(RuntimeError):
    """Training diverged; carries the epoch and batch where loss went non-finite."""


@dataclass(frozen=True)
class Architecture:
    """Kernel shapes (time, freq) and channel counts of the two conv layers."""

    conv1_kernel: tuple = (20, 8)
    conv1_channels: int = 64
    conv2_kernel: tuple = (10, 4)
    conv2_channels: int = 64

    def __post_init__(self):
        object.__setattr__(self, "conv1_kernel", tuple(int(v) for v in self.conv1_kernel))
        object.__setattr__(self, "conv2_kernel", tuple(int(v) for v in self.conv2_kernel))

    def to_dict(self) -> dict:
        return {
            "conv1_kernel": list(self.conv1_kernel),
            "conv1_channels": self.conv1_channels,
            "conv2_kernel": list(self.conv2_kernel),
            "conv2_channels": self.conv2_channels,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Architecture":
        return cls(
            tuple(data["conv1_kernel"]),
            data["conv1_channels"],
            tuple(data["conv2_kernel"]),
            data["conv2_channels"],
        )


DEFAULT_ARCHITECTURE = Architecture()
TOY_ARCHITECTURE = Architecture((8, 4), 16, (4, 3), 16)


@dataclass
class ModelParams:
    """All classifier weights plus the front-end configuration."""

    architecture: Architecture
    frontend: FrontendConfig
    label_set: tuple
    seed: int
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.label_set)

    def weight_items(self):
        """Weight arrays in the on-disk declaration order."""
        return [
            ("conv1_w", self.conv1_w),
            ("conv1_b", self.conv1_b),
            ("conv2_w", self.conv2_w),
            ("conv2_b", self.conv2_b),
            ("fc_w", self.fc_w),
            ("fc_b", self.fc_b),
        ]

    def weight_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in self.weight_items())

    def checksum(self) -> str:
        return hashlib.sha256(self.weight_bytes()).hexdigest()


def feature_shape(arch: Architecture, frontend: FrontendConfig) -> tuple:
    """Activation shapes: (input, conv1 out, conv2 out, flattened size)."""
    t0, f0 = frontend.n_frames(CLIP_SAMPLES), frontend.dct_coeffs
    t1 = t0 - arch.conv1_kernel[0] + 1
    f1 = f0 - arch.conv1_kernel[1] + 1
    t2 = t1 - arch.conv2_kernel[0] + 1
    f2 = f1 - arch.conv2_kernel[1] + 1
    if min(t1, f1, t2, f2) < 1:
        raise ValueError(
            f"conv kernels {arch.conv1_kernel}/{arch.conv2_kernel} do not fit the "
            f"{t0}x{f0} feature map"
        )
    return (t0, f0), (t1, f1), (t2, f2), t2 * f2 * arch.conv2_channels


def init_params(
    arch: Architecture,
    frontend: FrontendConfig,
    label_set,
    seed: int,
) -> ModelParams:
    """He-initialized weights from a seeded generator; biases start at zero."""
    label_set = tuple(label_set)
    _, _, _, flat = feature_shape(arch, frontend)
    rng = np.random.default_rng(seed)
    kt1, kf1 = arch.conv1_kernel
    kt2, kf2 = arch.conv2_kernel
    c1, c2 = arch.conv1_channels, arch.conv2_channels
    k = len(label_set)

    def he(shape, fan_in):
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    return ModelParams(
        architecture=arch,
        frontend=frontend,
        label_set=label_set,
        seed=seed,
        conv1_w=he((kt1, kf1, 1, c1), kt1 * kf1),
        conv1_b=np.zeros(c1),
        conv2_w=he((kt2, kf2, c1, c2), kt2 * kf2 * c1),
        conv2_b=np.zeros(c2),
        fc_w=he((flat, k), flat),
        fc_b=np.zeros(k),
    )


# ---------------------------------------------------------------------------
# conv primitives


def _im2col(x: np.ndarray, kernel: tuple) -> np.ndarray:
    """Patches of x (B, T, F, C) as a (B, T', F', kt*kf*C) array."""
    kt, kf = kernel
    win = np.lib.stride_tricks.sliding_window_view(x, (kt, kf), axis=(1, 2))
    # win: (B, T', F', C, kt, kf) -> (B, T', F', kt, kf, C) to match weight layout
    win = win.transpose(0, 1, 2, 4, 5, 3)
    return np.ascontiguousarray(win).reshape(win.shape[:3] + (-1,))


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    kt, kf, cin, cout = w.shape
    cols = _im2col(x, (kt, kf))
    out = cols @ w.reshape(-1, cout) + b
    return out, cols


def _conv_backward_input(d_out: np.ndarray, w: np.ndarray, in_shape: tuple) -> np.ndarray:
    kt, kf, cin, cout = w.shape
    d_in = np.zeros(d_out.shape[:1] + in_shape, dtype=np.float64)
    tp, fp = d_out.shape[1], d_out.shape[2]
    for i in range(kt):
        for j in range(kf):
            d_in[:, i : i + tp, j : j + fp, :] += d_out @ w[i, j].T
    return d_in


# ---------------------------------------------------------------------------
# forward / gradients


def _features(params: ModelParams, batch: np.ndarray, want_cache: bool = False):
    feats, cache = mfcc_forward_batch(batch, params.frontend)
    return (feats, cache) if want_cache else (feats, None)


def _net_forward(params: ModelParams, feats: np.ndarray, want_cache: bool = False):
    """Logits for a (B, frames, coeffs) feature batch."""
    x1 = feats[..., None]
    a1, cols1 = _conv_forward(x1, params.conv1_w, params.conv1_b)
    r1 = np.maximum(a1, 0.0)
    a2, cols2 = _conv_forward(r1, params.conv2_w, params.conv2_b)
    r2 = np.maximum(a2, 0.0)
    flat = r2.reshape(r2.shape[0], -1)
    logits = flat @ params.fc_w + params.fc_b
    if not want_cache:
        return logits, None
    cache = {
        "x1_shape": x1.shape[1:],
        "r1_shape": r1.shape[1:],
        "mask1": a1 > 0.0,
        "mask2": a2 > 0.0,
        "cols1": cols1,
        "cols2": cols2,
        "r1": r1,
        "flat": flat,
    }
    return logits, cache


def _net_backward_input(params: ModelParams, cache: dict, d_logits: np.ndarray) -> np.ndarray:
    """Feature-map gradient for a batch of logit gradients."""
    d_flat = d_logits @ params.fc_w.T
    b = d_logits.shape[0]
    t2, f2 = cache["mask2"].shape[1:3]
    d_r2 = d_flat.reshape(b, t2, f2, params.architecture.conv2_channels)
    d_a2 = d_r2 * cache["mask2"]
    d_r1 = _conv_backward_input(d_a2, params.conv2_w, cache["r1_shape"])
    d_a1 = d_r1 * cache["mask1"]
    d_x1 = _conv_backward_input(d_a1, params.conv1_w, cache["x1_shape"])
    return d_x1[..., 0]


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    probabilities: np.ndarray
    label_index: int
    label: str


def logits_batch(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Logits for a (B, 16000) waveform batch, evaluated in fixed-size chunks."""
    batch = np.asarray(batch, dtype=np.float64)
    out = np.empty((batch.shape[0], params.n_classes))
    for start in range(0, batch.shape[0], _CHUNK):
        feats, _ = _features(params, batch[start : start + _CHUNK])
        out[start : start + _CHUNK], _ = _net_forward(params, feats)
    return out


def predict_batch(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Predicted class ids for a waveform batch (argmax, lowest index wins ties)."""
    return np.argmax(logits_batch(params, batch), axis=-1)


def forward(params: ModelParams, x) -> Prediction:
    """Single-clip prediction with logits and softmax probabilities."""
    samples = x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)
    logits = logits_batch(params, samples[None])[0]
    probs = _softmax(logits)
    idx = int(np.argmax(logits))
    return Prediction(logits, probs, idx, params.label_set[idx])


def logits_and_input_jacobian(params: ModelParams, x):
    """Logits plus the full (k, 16000) Jacobian of logits w.r.t. the waveform.

    All class gradients share one cached forward pass; the per-class
    upstream seeds are pushed through the network and the front-end in a
    single batched backward sweep.
    """
    samples = x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)
    feats, mfcc_cache = _features(params, samples, want_cache=True)
    logits, net_cache = _net_forward(params, feats[None], want_cache=True)
    k = params.n_classes
    d_feats = _net_backward_input(params, net_cache, np.eye(k))
    jac = mfcc_backward_batch(mfcc_cache, d_feats)
    return logits[0], jac


def input_gradient(params: ModelParams, x, class_index: int) -> np.ndarray:
    """Gradient of one pre-softmax logit with respect to every waveform sample."""
    if not 0 <= class_index < params.n_classes:
        raise ValueError(f"class index {class_index} out of range")
    _, jac = logits_and_input_jacobian(params, x)
    return jac[class_index]


def accuracy(params: ModelParams, dataset) -> float:
    preds = predict_batch(params, stack(dataset))
    truth = label_indices(dataset, params.label_set)
    return float(np.mean(preds == truth))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-3
    seed: int = 0
    label_smoothing: float = 0.0


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)


def derive_label_set(dataset) -> tuple:
    """Labels present in the dataset, ordered by the canonical encoding."""
    present = {w.label for w in dataset}
    unknown = present.difference(CANONICAL_LABELS)
    ordered = [name for name in CANONICAL_LABELS if name in present]
    ordered += sorted(unknown - {None})
    return tuple(ordered)


def compute_features(batch: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """Front-end features for a large batch without retaining backward caches."""
    pieces = []
    for start in range(0, batch.shape[0], _CHUNK):
        feats, _ = mfcc_forward_batch(batch[start : start + _CHUNK], cfg)
        pieces.append(feats)
    return np.concatenate(pieces) if len(pieces) > 1 else pieces[0]


def train(
    dataset,
    config: TrainConfig,
    frontend: FrontendConfig = MODEL_A_FRONTEND,
    arch: Architecture = DEFAULT_ARCHITECTURE,
    label_set=None,
):
    """Minimize cross-entropy with seeded minibatch Adam.

    Returns (params, log).  The front-end has no trainable state, so
    features are extracted once up front.  Raises NonFiniteLossError with
    the failing epoch/batch if the loss diverges.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    labels = tuple(label_set) if label_set is not None else derive_label_set(dataset)
    params = init_params(arch, frontend, labels, config.seed)
    k = len(labels)

    batch = stack(dataset)
    targets_idx = label_indices(dataset, labels)
    feats_all = compute_features(batch, frontend)

    rng = np.random.default_rng(config.seed)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    weights = {name: arr for name, arr in params.weight_items()}
    m = {name: np.zeros_like(a) for name, a in weights.items()}
    v = {name: np.zeros_like(a) for name, a in weights.items()}
    step = 0
    log = TrainLog()

    n = batch.shape[0]
    smooth = config.label_smoothing
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for bstart in range(0, n, config.batch_size):
            idx = order[bstart : bstart + config.batch_size]
            fb = feats_all[idx]
            yb = targets_idx[idx]
            bsz = idx.shape[0]

            logits, cache = _net_forward(params, fb, want_cache=True)
            probs = _softmax(logits)
            onehot = np.zeros_like(probs)
            onehot[np.arange(bsz), yb] = 1.0
            target = onehot * (1.0 - smooth) + smooth / k
            logp = logits - np.max(logits, axis=-1, keepdims=True)
            logp = logp - np.log(np.sum(np.exp(logp), axis=-1, keepdims=True))
            loss = float(-np.mean(np.sum(target * logp, axis=-1)))
            if not np.isfinite(loss):
                raise NonFiniteLossError(
                    f"loss became {loss} at epoch {epoch}, batch {bstart // config.batch_size}"
                )
            epoch_loss += loss * bsz
            correct += int(np.sum(np.argmax(logits, axis=-1) == yb))

            d_logits = (probs - target) / bsz
            grads = {
                "fc_w": cache["flat"].T @ d_logits,
                "fc_b": d_logits.sum(0),
            }
            d_flat = d_logits @ params.fc_w.T
            t2, f2 = cache["mask2"].shape[1:3]
            d_a2 = d_flat.reshape(bsz, t2, f2, arch.conv2_channels) * cache["mask2"]
            cols2 = cache["cols2"]
            grads["conv2_w"] = (
                cols2.reshape(-1, cols2.shape[-1]).T @ d_a2.reshape(-1, arch.conv2_channels)
            ).reshape(params.conv2_w.shape)
            grads["conv2_b"] = d_a2.sum((0, 1, 2))
            d_a1 = _conv_backward_input(d_a2, params.conv2_w, cache["r1_shape"]) * cache["mask1"]
            cols1 = cache["cols1"]
            grads["conv1_w"] = (
                cols1.reshape(-1, cols1.shape[-1]).T @ d_a1.reshape(-1, arch.conv1_channels)
            ).reshape(params.conv1_w.shape)
            grads["conv1_b"] = d_a1.sum((0, 1, 2))

            step += 1
            for name, g in grads.items():
                m[name] = beta1 * m[name] + (1.0 - beta1) * g
                v[name] = beta2 * v[name] + (1.0 - beta2) * g * g
                mhat = m[name] / (1.0 - beta1**step)
                vhat = v[name] / (1.0 - beta2**step)
                weights[name] -= config.lr * mhat / (np.sqrt(vhat) + eps)

        log.losses.append(epoch_loss / n)
        log.accuracies.append(correct / n)
    return params, log


# ---------------------------------------------------------------------------
# serialization


def save_params(params: ModelParams, path) -> None:
    """Write a model file: one JSON header line, then raw little-endian float64."""
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": params.architecture.to_dict(),
        "frontend": params.frontend.to_dict(),
        "label_set": list(params.label_set),
        "seed": params.seed,
        "weights": [{"name": n, "shape": list(a.shape)} for n, a in params.weight_items()],
        "checksum": params.checksum(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(params.weight_bytes())


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"{path}: unreadable header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatVersionError(
            f"{path}: format version {header.get('format_version')}, expected {FORMAT_VERSION}"
        )
    arrays = {}
    offset = 0
    for spec in header["weights"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise TruncatedFileError(f"{path}: weight data ends early at {spec['name']}")
        arrays[spec["name"]] = (
            np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            .reshape(spec["shape"])
            .copy()
        )
        offset += nbytes
    if offset != len(blob):
        raise TruncatedFileError(f"{path}: {len(blob) - offset} trailing bytes")
    params = ModelParams(
        architecture=Architecture.from_dict(header["architecture"]),
        frontend=FrontendConfig.from_dict(header["frontend"]),
        label_set=tuple(header["label_set"]),
        seed=header["seed"],
        **arrays,
    )
    if params.checksum() != header["checksum"]:
        raise ChecksumError(f"{path}: weight checksum mismatch")
    return params


# ---------------------------------------------------------------------------
# attack-facing adapter


class ClassifierModel:
    """Bundles ModelParams behind the small interface the attack code expects.

    Attack routines accept any object with ``label_set``, ``logits``,
    ``logits_and_jacobian`` and ``predict_batch``; this adapter provides
    them for the CNN.
    """

    def __init__(self, params: ModelParams):
        self.params = params

    @property
    def label_set(self):
        return self.params.label_set

    @property
    def n_classes(self) -> int:
        return self.params.n_classes

    def logits(self, x) -> np.ndarray:
        samples = x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)
        return logits_batch(self.params, samples[None])[0]

    def logits_and_jacobian(self, x):
        return logits_and_input_jacobian(self.params, x)

    def predict_batch(self, batch: np.ndarray) -> np.ndarray:
        return predict_batch(self.params, batch)

    def forward(self, x) -> Prediction:
        return forward(self.params, x)

    def checksum(self) -> str:
        return self.params.checksum()
