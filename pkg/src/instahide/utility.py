"""Desk-scale training harness: a linear softmax classifier with soft-label
cross-entropy, minibatch SGD with momentum, per-epoch re-encrypted training,
and encrypted inference by prediction averaging.

Soft labels may sum to less than one (cross-dataset encryption publishes only
the private share of the label mass); the loss L = -sum_c y_c log p_c and its
gradient (sum(y) * p - y) handle that case exactly, and reduce to the familiar
p - y when the label mass is 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Dataset, Image, LabelVector
from .encrypt import EncryptedSample, SchemeConfig, encrypt_epoch, encrypt_input
from .errors import FormatError, TruncatedFileError, ValidationError
from .rng import RngStream

MODEL_MAGIC = b"IHMD"
_MODEL_HEADER = struct.Struct("<4sHI")

DEFAULT_MOMENTUM = 0.9
DEFAULT_BATCH_SIZE = 128
DEFAULT_WEIGHT_DECAY = 1e-4
DEFAULT_ENSEMBLE = 10


@dataclass
class LinearSoftmaxModel:
    """Logits = W x + b, probabilities by softmax. Weights live in float64;
    checkpoints store float32."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64).reshape(-1)
        if self.W.ndim != 2 or self.W.shape[0] != self.b.size:
            raise ValidationError(
                f"W shape {self.W.shape} incompatible with b length {self.b.size}"
            )
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValidationError("model weights must be finite")

    @property
    def classes(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "LinearSoftmaxModel":
        return LinearSoftmaxModel(self.W.copy(), self.b.copy())


def init_model(
    classes: int, d: int, rng: RngStream | None = None, scale: float = 0.01
) -> LinearSoftmaxModel:
    """Zero model, or N(0, scale^2) entries when an rng is given."""
    if classes < 2 or d < 1:
        raise ValidationError(f"need classes >= 2 and d >= 1, got {classes}, {d}")
    if rng is None:
        return LinearSoftmaxModel(np.zeros((classes, d)), np.zeros(classes))
    gen = rng.generator()
    return LinearSoftmaxModel(
        gen.standard_normal((classes, d)) * scale, gen.standard_normal(classes) * scale
    )


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _pixels_of(x) -> np.ndarray:
    arr = x.pixels if isinstance(x, Image) else np.asarray(x)
    return arr.astype(np.float64).reshape(-1)


def _weights_of(y) -> np.ndarray:
    arr = y.weights if isinstance(y, LabelVector) else np.asarray(y)
    return arr.astype(np.float64).reshape(-1)


def forward(model: LinearSoftmaxModel, x) -> np.ndarray:
    """Class probabilities for one input; positive, summing to 1."""
    xv = _pixels_of(x)
    if xv.size != model.d:
        raise ValidationError(f"input length {xv.size} != model d {model.d}")
    return softmax_rows(model.W @ xv + model.b)


def loss_and_gradient(
    model: LinearSoftmaxModel, x, y
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Soft-target cross-entropy and its exact gradient in (W, b).

    L = -sum_c y_c log p_c, computed through log-sum-exp so extreme logits
    stay finite; grad_W = (sum(y) p - y) x^T and grad_b = sum(y) p - y.
    """
    xv = _pixels_of(x)
    yv = _weights_of(y)
    if xv.size != model.d or yv.size != model.classes:
        raise ValidationError(
            f"input ({xv.size}, {yv.size}) incompatible with model "
            f"({model.d}, {model.classes})"
        )
    if not (np.all(np.isfinite(xv)) and np.all(np.isfinite(yv))):
        raise ValidationError("inputs to the loss must be finite")
    z = model.W @ xv + model.b
    zmax = z.max()
    lse = zmax + np.log(np.exp(z - zmax).sum())
    mass = yv.sum()
    loss = float(mass * lse - yv @ z)
    residual = mass * softmax_rows(z) - yv
    return loss, (np.outer(residual, xv), residual)


def _as_xy(samples, classes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stack training samples into (X, Y) float64 matrices. Accepts a Dataset,
    EncryptedSamples, or (image, label) pairs."""
    if isinstance(samples, Dataset):
        if samples.labels is None:
            raise ValidationError("training needs labels")
        return samples.matrix().astype(np.float64), samples.label_matrix().astype(
            np.float64
        )
    xs, ys = [], []
    for s in samples:
        if isinstance(s, EncryptedSample):
            xs.append(_pixels_of(s.xtilde))
            ys.append(_weights_of(s.ytilde))
        else:
            xs.append(_pixels_of(s[0]))
            ys.append(_weights_of(s[1]))
    if not xs:
        raise ValidationError("no training samples")
    X = np.stack(xs)
    Y = np.stack(ys)
    if classes is not None and Y.shape[1] != classes:
        raise ValidationError(f"label width {Y.shape[1]} != expected {classes}")
    return X, Y


def train(
    model: LinearSoftmaxModel,
    samples,
    epochs: int,
    lr: float,
    rng: RngStream,
    momentum: float = DEFAULT_MOMENTUM,
    batch_size: int = DEFAULT_BATCH_SIZE,
    weight_decay: float = DEFAULT_WEIGHT_DECAY,
) -> LinearSoftmaxModel:
    """Minibatch SGD with momentum and L2 weight decay on W. Input model is
    left untouched; a trained copy is returned. Deterministic given the rng.
    """
    if epochs < 0 or lr <= 0 or batch_size < 1:
        raise ValidationError("need epochs >= 0, lr > 0, batch_size >= 1")
    X, Y = _as_xy(samples, model.classes)
    if X.shape[1] != model.d:
        raise ValidationError(f"sample length {X.shape[1]} != model d {model.d}")
    W, b = model.W.copy(), model.b.copy()
    vW = np.zeros_like(W)
    vb = np.zeros_like(b)
    gen = rng.generator()
    n = X.shape[0]
    for _ in range(int(epochs)):
        order = gen.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            Xb, Yb = X[idx], Y[idx]
            P = softmax_rows(Xb @ W.T + b)
            R = Yb.sum(axis=1, keepdims=True) * P - Yb
            gW = R.T @ Xb / idx.size + weight_decay * W
            gb = R.mean(axis=0)
            vW = momentum * vW - lr * gW
            vb = momentum * vb - lr * gb
            W += vW
            b += vb
    return LinearSoftmaxModel(W, b)


def canonical_input(x: Image, masked: bool) -> Image:
    """Model-side representation of an encrypted sample.

    A sign-masked sample carries exactly the per-pixel absolute values of its
    underlying mix (|sigma o m| == |m|), and the mask's sign symmetry makes any
    linear map of the raw masked pixels uninformative in expectation. Masked
    inputs therefore enter the model as their absolute values, the canonical
    mask-invariant form; unmasked inputs pass through untouched.
    """
    if not masked:
        return x
    return Image(np.abs(x.pixels), x.dims)


def train_encrypted(
    model: LinearSoftmaxModel,
    private: Dataset,
    cfg: SchemeConfig,
    epochs: int,
    lr: float,
    rng: RngStream,
    publicset=None,
    **train_kwargs,
) -> LinearSoftmaxModel:
    """Re-encrypt the private set with fresh keys every epoch and take one SGD
    pass over each encryption batch. Sign-masked schemes train on the
    canonical absolute-value representation (see canonical_input)."""
    out = model.copy()
    masked = cfg.scheme != "mixup"
    for epoch in range(int(epochs)):
        samples = encrypt_epoch(
            private, cfg, epoch, rng.child("enc"), publicset=publicset
        )
        if masked:
            samples = [(canonical_input(s.xtilde, True), s.ytilde) for s in samples]
        out = train(out, samples, 1, lr, rng.child("sgd", epoch), **train_kwargs)
    return out


def _draw_partners(
    cfg: SchemeConfig, gen: np.random.Generator, partner_pool, publicset
) -> list[Image]:
    """Partner images for one inference-time encryption."""
    if cfg.k == 1:
        return []
    pool = partner_pool.images if isinstance(partner_pool, Dataset) else partner_pool
    if not pool:
        raise ValidationError(f"k={cfg.k} inference encryption needs a partner pool")
    if cfg.scheme == "cross":
        patches = (
            publicset.patches if hasattr(publicset, "patches") else
            publicset.images if isinstance(publicset, Dataset) else publicset
        )
        if not patches or len(patches) < cfg.k - 2:
            raise ValidationError("cross inference encryption needs k-2 public patches")
        partner = pool[int(gen.integers(0, len(pool)))]
        pub = [
            patches[int(j)]
            for j in gen.choice(len(patches), size=cfg.k - 2, replace=False)
        ]
        return [partner] + pub
    return [
        pool[int(j)] for j in gen.choice(len(pool), size=cfg.k - 1, replace=False)
    ]


def predict_encrypted(
    model: LinearSoftmaxModel,
    x: Image,
    cfg: SchemeConfig,
    rng: RngStream,
    ensemble: int = DEFAULT_ENSEMBLE,
    partner_pool=None,
    publicset=None,
) -> np.ndarray:
    """Mean of forward() over ``ensemble`` fresh encryptions of x; a mean of
    simplex points, so still a probability vector."""
    if ensemble < 1:
        raise ValidationError(f"ensemble must be >= 1, got {ensemble}")
    acc = np.zeros(model.classes)
    masked = cfg.scheme != "mixup"
    for e in range(int(ensemble)):
        child = rng.child("predict", e)
        others = _draw_partners(cfg, child.generator(), partner_pool, publicset)
        enc = encrypt_input(x, others, cfg, child.child("enc"))
        acc += forward(model, canonical_input(enc, masked))
    return acc / ensemble


def evaluate(
    model: LinearSoftmaxModel,
    test: Dataset,
    mode: str = "plain",
    cfg: SchemeConfig | None = None,
    rng: RngStream | None = None,
    ensemble: int = DEFAULT_ENSEMBLE,
    partner_pool=None,
    publicset=None,
) -> float:
    """Top-1 accuracy against the argmax of the true label vectors."""
    if mode not in ("plain", "encrypted"):
        raise ValidationError(f"mode must be plain or encrypted, got {mode!r}")
    if test.labels is None or test.n == 0:
        raise ValidationError("evaluation needs a labelled, non-empty dataset")
    truth = np.argmax(test.label_matrix(), axis=1)
    if mode == "plain":
        P = softmax_rows(test.matrix().astype(np.float64) @ model.W.T + model.b)
        return float(np.mean(np.argmax(P, axis=1) == truth))
    if cfg is None or rng is None:
        raise ValidationError("encrypted evaluation needs cfg and rng")
    hits = 0
    for i, im in enumerate(test.images):
        probs = predict_encrypted(
            model,
            im,
            cfg,
            rng.child("eval", i),
            ensemble=ensemble,
            partner_pool=partner_pool,
            publicset=publicset,
        )
        hits += int(np.argmax(probs) == truth[i])
    return hits / test.n


# ---------------------------------------------------------------------------
# checkpoint I/O


def model_to_bytes(model: LinearSoftmaxModel) -> bytes:
    if model.classes > 0xFFFF or model.d > 0xFFFFFFFF:
        raise ValidationError("model too large for the checkpoint header")
    header = _MODEL_HEADER.pack(MODEL_MAGIC, model.classes, model.d)
    body = model.W.astype("<f4").tobytes() + model.b.astype("<f4").tobytes()
    return header + body


def model_from_bytes(blob: bytes) -> LinearSoftmaxModel:
    if len(blob) < _MODEL_HEADER.size:
        raise TruncatedFileError("checkpoint shorter than its header")
    magic, classes, d = _MODEL_HEADER.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    need = _MODEL_HEADER.size + 4 * (classes * d + classes)
    if len(blob) < need:
        raise TruncatedFileError(f"checkpoint has {len(blob)} bytes, needs {need}")
    if len(blob) > need:
        raise FormatError(f"{len(blob) - need} trailing bytes after checkpoint payload")
    W = np.frombuffer(
        blob, dtype="<f4", count=classes * d, offset=_MODEL_HEADER.size
    ).reshape(classes, d)
    b = np.frombuffer(blob, dtype="<f4", count=classes, offset=need - 4 * classes)
    return LinearSoftmaxModel(W, b)


def save_model(model: LinearSoftmaxModel, path: str | Path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path: str | Path) -> LinearSoftmaxModel:
    return model_from_bytes(Path(path).read_bytes())


def central_difference(fn, vec: np.ndarray, index: int, h: float) -> float:
    """Central finite difference of a scalar function along one coordinate."""
    hi = vec.copy()
    lo = vec.copy()
    hi[index] += h
    lo[index] -= h
    return (fn(hi) - fn(lo)) / (2.0 * h)
