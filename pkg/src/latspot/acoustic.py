"""Frame-level phone classifier: a small feed-forward net over spliced MFCCs.

One hidden tanh layer by default, softmax output, trained with mini-batch
gradient descent on cross-entropy. Training is deterministic for a fixed
seed. Class priors are the label frequencies of the training set; they turn
posteriors into the scaled log-likelihoods the decoder consumes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureMatrix

MODEL_MAGIC = b"FCM1"
MODEL_VERSION = 1

LOG_FLOOR = 1e-10


class DimMismatch(ValueError):
    """Feature/label dimensions disagree with the model or phone set."""


class EmptyTrainingSet(ValueError):
    """No training frames were supplied."""


class ZeroPrior(ValueError):
    """A prior is zero or negative; scaled log-likelihoods are undefined."""


class CorruptModel(ValueError):
    """Model file does not parse."""


@dataclass(frozen=True)
class PhoneSet:
    """Ordered phone inventory; index 0 is always the silence symbol SIL."""

    phones: tuple

    def __post_init__(self) -> None:
        if len(self.phones) < 2:
            raise ValueError("phone set needs at least SIL and one phone")
        if self.phones[0] != "SIL":
            raise ValueError("phone set must start with SIL")
        if len(set(self.phones)) != len(self.phones):
            raise ValueError("phone symbols must be unique")

    def __len__(self) -> int:
        return len(self.phones)

    def index(self, phone: str) -> int:
        return self.phones.index(phone)


@dataclass
class PosteriorMatrix:
    """Per-frame phone probabilities for one utterance."""

    data: np.ndarray
    frame_shift: float
    utt_id: str = ""

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError("posteriors must be a (T, P) matrix with T >= 1")
        if np.any(self.data < 0.0) or np.any(self.data > 1.0):
            raise ValueError("posterior entries must lie in [0, 1]")
        if np.max(np.abs(self.data.sum(axis=1) - 1.0)) > 1e-6:
            raise ValueError("posterior rows must sum to 1")
        if self.frame_shift <= 0:
            raise ValueError("frame_shift must be positive")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_phones(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    hidden_dims: tuple = (128,)
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0


@dataclass
class FrameClassifier:
    """Feed-forward phone classifier plus the training-label priors."""

    weights: list
    biases: list
    priors: np.ndarray
    loss_history: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self.priors = np.asarray(self.priors, dtype=np.float64)
        if abs(self.priors.sum() - 1.0) > 1e-9:
            raise ValueError("priors must sum to 1")
        for arr in (*self.weights, *self.biases, self.priors):
            if not np.all(np.isfinite(arr)):
                raise ValueError("model parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def initialize(
        cls, input_dim: int, hidden_dims, output_dim: int, seed: int = 0
    ) -> "FrameClassifier":
        rng = np.random.default_rng(seed)
        dims = [input_dim, *hidden_dims, output_dim]
        weights, biases = [], []
        for layer, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            scale = np.sqrt(6.0 / (din + dout))
            if layer == len(dims) - 2:
                # Keep untrained logits near zero so a fresh model emits
                # near-uniform posteriors.
                scale *= 0.01
            weights.append(rng.uniform(-scale, scale, (din, dout)))
            biases.append(np.zeros(dout))
        priors = np.full(output_dim, 1.0 / output_dim)
        return cls(weights, biases, priors)

    def _forward(self, x: np.ndarray):
        acts = [x]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            acts.append(np.tanh(acts[-1] @ w + b))
        logits = acts[-1] @ self.weights[-1] + self.biases[-1]
        return acts, logits

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self._forward(np.asarray(x, dtype=np.float64))[1]

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray):
        """Mean cross-entropy and gradients for every weight and bias."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        acts, logits = self._forward(x)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        loss = float(np.mean(log_z - shifted[np.arange(len(y)), y]))

        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        delta = probs
        delta[np.arange(len(y)), y] -= 1.0
        delta /= len(y)

        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        for layer in reversed(range(len(self.weights))):
            grads_w[layer] = acts[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (1.0 - acts[layer] ** 2)
        return loss, grads_w, grads_b


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs


def _stack_training_data(feats_list, frame_labels, n_phones):
    xs, ys = [], []
    for fm in feats_list:
        if fm.utt_id not in frame_labels:
            raise DimMismatch(f"no labels for utterance {fm.utt_id!r}")
        labels = np.asarray(frame_labels[fm.utt_id], dtype=np.int64)
        if len(labels) != fm.n_frames:
            raise DimMismatch(
                f"{fm.utt_id}: {fm.n_frames} frames but {len(labels)} labels"
            )
        if np.any(labels < 0) or np.any(labels >= n_phones):
            raise DimMismatch(f"{fm.utt_id}: label outside [0, {n_phones})")
        xs.append(fm.data)
        ys.append(labels)
    if not xs:
        raise EmptyTrainingSet("no training utterances")
    return np.concatenate(xs), np.concatenate(ys)


def train(feats_list, frame_labels, phones: PhoneSet, cfg: TrainConfig = TrainConfig()):
    """Fit a classifier to labeled frames; priors become label frequencies."""
    x, y = _stack_training_data(feats_list, frame_labels, len(phones))
    model = FrameClassifier.initialize(
        x.shape[1], cfg.hidden_dims, len(phones), cfg.seed
    )
    counts = np.bincount(y, minlength=len(phones)).astype(np.float64)
    model.priors = counts / counts.sum()

    rng = np.random.default_rng(cfg.seed)
    loss0, _, _ = model.loss_and_grads(x, y)
    model.loss_history.append(loss0)
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(y))
        for start in range(0, len(y), cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            _, gw, gb = model.loss_and_grads(x[sel], y[sel])
            for layer in range(len(model.weights)):
                model.weights[layer] -= cfg.learning_rate * gw[layer]
                model.biases[layer] -= cfg.learning_rate * gb[layer]
        loss, _, _ = model.loss_and_grads(x, y)
        model.loss_history.append(loss)
    return model


def posteriors(model: FrameClassifier, feats: FeatureMatrix) -> PosteriorMatrix:
    """Softmax outputs for every frame of one utterance."""
    if feats.dim != model.input_dim:
        raise DimMismatch(
            f"features have dim {feats.dim}, model expects {model.input_dim}"
        )
    probs = softmax(model.logits(feats.data))
    return PosteriorMatrix(probs, feats.frame_shift, feats.utt_id)


def scaled_loglikes(post: PosteriorMatrix, priors: np.ndarray) -> np.ndarray:
    """log(posterior + floor) - log(prior), the decoder's frame scores."""
    priors = np.asarray(priors, dtype=np.float64)
    if np.any(priors <= 0.0):
        raise ZeroPrior("priors must be strictly positive")
    if len(priors) != post.n_phones:
        raise DimMismatch(
            f"{post.n_phones} posterior columns but {len(priors)} priors"
        )
    return np.log(post.data + LOG_FLOOR) - np.log(priors)


def save_model(model: FrameClassifier, path) -> None:
    """Versioned binary: topology header then f32 parameter blobs."""
    dims = [model.input_dim]
    for w in model.weights:
        dims.append(w.shape[1])
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<II", MODEL_VERSION, len(dims)))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        for w, b in zip(model.weights, model.biases):
            f.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(model.priors, dtype="<f4").tobytes())


def load_model(path) -> FrameClassifier:
    with open(path, "rb") as f:
        blob = f.read()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CorruptModel(f"truncated model file at byte {pos}")
        out = blob[pos : pos + n]
        pos += n
        return out

    if take(4) != MODEL_MAGIC:
        raise CorruptModel("bad magic")
    version, n_dims = struct.unpack("<II", take(8))
    if version != MODEL_VERSION:
        raise CorruptModel(f"unsupported version {version}")
    if n_dims < 2:
        raise CorruptModel("topology needs at least input and output dims")
    dims = struct.unpack(f"<{n_dims}I", take(4 * n_dims))
    weights, biases = [], []
    for din, dout in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(take(4 * din * dout), dtype="<f4").reshape(din, dout)
        b = np.frombuffer(take(4 * dout), dtype="<f4")
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    priors = np.frombuffer(take(4 * dims[-1]), dtype="<f4").astype(np.float64)
    if pos != len(blob):
        raise CorruptModel(f"{len(blob) - pos} trailing bytes")
    # f32 storage wobbles the sum in the last bit; renormalize.
    priors = priors / priors.sum()
    return FrameClassifier(weights, biases, priors)


def write_phones(phones: PhoneSet, path) -> None:
    """Phone inventory file: one symbol per line, SIL first."""
    with open(path, "w", encoding="utf-8") as f:
        for p in phones.phones:
            f.write(p + "\n")


def read_phones(path) -> PhoneSet:
    symbols = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            sym = line.strip()
            if not sym:
                continue
            if any(ch.isspace() for ch in sym):
                raise ValueError(f"{path}:{lineno}: phone symbol contains whitespace")
            symbols.append(sym)
    try:
        return PhoneSet(tuple(symbols))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def write_labels(frame_labels: dict, path) -> None:
    """Text label file: one `utt_id idx idx ...` line per utterance."""
    with open(path, "w", encoding="utf-8") as f:
        for utt_id in frame_labels:
            row = " ".join(str(int(v)) for v in frame_labels[utt_id])
            f.write(f"{utt_id} {row}\n")


def read_labels(path) -> dict:
    out: dict = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: label line needs indices")
            try:
                out[parts[0]] = np.array([int(v) for v in parts[1:]], dtype=np.int64)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out
