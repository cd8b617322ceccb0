"""The Mixup and InstaHide encryption schemes.

Both schemes publish, for a private image x_i, a convex combination of k
source images under L1-normalized coefficients lambda with max entry at most
c1. InstaHide additionally multiplies the mix by a fresh random +/-1 pixel
mask, its one-time key. The inside-dataset variant draws every source from
the private set (the first source is x_i itself); the cross-dataset variant
mixes x_i, one other private image, and k-2 public patches, with the two
private coefficients summing to at least c2, and only the private images
contribute to the published label.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    Coefficients,
    Dataset,
    Image,
    LabelVector,
    SignMask,
    _sample_coefficients_from,
)
from .errors import DimensionMismatchError, ValidationError
from .rng import RngStream

SCHEMES = ("mixup", "inside", "cross")


@dataclass(frozen=True)
class SchemeConfig:
    """Encryption parameters; defaults follow the standard evaluation setup."""

    scheme: str = "inside"
    k: int = 4
    c1: float = 0.65
    c2: float = 0.3

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if int(self.k) < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        object.__setattr__(self, "k", int(self.k))
        if self.scheme == "cross" and self.k < 3:
            raise ValidationError("cross-dataset mixing needs k >= 3")
        if not 0.0 < self.c1 <= 1.0:
            raise ValidationError(f"c1 must be in (0, 1], got {self.c1}")
        if not 0.0 <= self.c2 <= 1.0:
            raise ValidationError(f"c2 must be in [0, 1], got {self.c2}")


@dataclass(frozen=True)
class EncryptionKey:
    """Ground truth for one encryption: tagged source indices, coefficients,
    and the sign mask (all +1 for plain Mixup)."""

    sources: tuple[tuple[str, int], ...]
    lam: Coefficients
    mask: SignMask

    def __post_init__(self):
        if len(self.sources) != self.lam.k:
            raise ValidationError(
                f"{len(self.sources)} sources for {self.lam.k} coefficients"
            )
        for tag, idx in self.sources:
            if tag not in ("private", "public") or int(idx) < 0:
                raise ValidationError(f"bad source ({tag!r}, {idx})")

    def source_set(self, tag: str | None = None) -> frozenset:
        items = self.sources if tag is None else [s for s in self.sources if s[0] == tag]
        return frozenset(items)


@dataclass(frozen=True)
class EncryptedSample:
    """One published sample: mixed (and possibly masked) pixels plus the
    mixed label, tagged with the epoch and a history-unique sample id."""

    xtilde: Image
    ytilde: LabelVector
    epoch: int = 0
    sample_id: int = 0


def mix_pixels(images: list[Image], lam: Coefficients) -> np.ndarray:
    if len(images) != lam.k:
        raise ValidationError(f"{len(images)} images for {lam.k} coefficients")
    dims = images[0].dims
    acc = np.zeros(images[0].d, dtype=np.float64)
    for w, im in zip(lam.values, images):
        if im.dims != dims:
            raise DimensionMismatchError("mixing images with mixed dims")
        acc += w * im.pixels.astype(np.float64)
    return acc.astype(np.float32)


def mix_labels(labels: list[LabelVector], lam_values: np.ndarray) -> LabelVector:
    classes = labels[0].classes
    acc = np.zeros(classes, dtype=np.float64)
    for w, lb in zip(lam_values, labels):
        if lb.classes != classes:
            raise ValidationError("mixing labels with mixed class counts")
        acc += w * lb.weights.astype(np.float64)
    # mixing can overshoot 1 by a few ulps; clip the float noise only
    return LabelVector(np.clip(acc, 0.0, 1.0).astype(np.float32))


def apply_mask(x, mask: SignMask):
    """Multiply pixels by the +/-1 mask. Involutive and magnitude-preserving
    bit for bit. Accepts an Image or a raw array; returns the same kind."""
    if isinstance(x, Image):
        if x.d != mask.d:
            raise DimensionMismatchError(f"mask length {mask.d} != image length {x.d}")
        return Image(x.pixels * mask.signs, x.dims, normalized=False)
    arr = np.asarray(x)
    if arr.shape[-1] != mask.d:
        raise DimensionMismatchError(
            f"mask length {mask.d} != vector length {arr.shape[-1]}"
        )
    return arr * mask.signs


def identity_mask(d: int) -> SignMask:
    return SignMask(np.ones(d, dtype=np.int8))


def mixup_encrypt(
    sources: list[tuple[Image, LabelVector]],
    lam: Coefficients,
    epoch: int = 0,
    sample_id: int = 0,
) -> EncryptedSample:
    """Plain Mixup: coefficient-weighted image and label sums, no mask."""
    images = [s[0] for s in sources]
    labels = [s[1] for s in sources]
    xt = Image(mix_pixels(images, lam), images[0].dims)
    return EncryptedSample(xt, mix_labels(labels, lam.values), epoch, sample_id)


def _pick_partners(gen: np.random.Generator, n: int, i: int, count: int) -> list[int]:
    if count > n - 1:
        raise ValidationError(f"need {count} partners but only {n - 1} other images")
    others = np.delete(np.arange(n), i)
    if count == 0:
        return []
    return [int(v) for v in gen.choice(others, size=count, replace=False)]


def instahide_encrypt_inside(
    private: Dataset, i: int, k: int, c1: float, rng: RngStream
) -> tuple[EncryptedSample, EncryptionKey]:
    """Inside-dataset InstaHide for image i: mix x_i with k-1 distinct other
    private images, then apply a fresh sign mask."""
    if private.labels is None:
        raise ValidationError("inside-dataset encryption needs labels")
    if not 0 <= i < private.n:
        raise ValidationError(f"index {i} out of range for n={private.n}")
    gen = rng.generator()
    partners = _pick_partners(gen, private.n, i, int(k) - 1)
    idx = [int(i)] + partners
    lam = _sample_coefficients_from(gen, int(k), c1)
    mask = SignMask(gen.integers(0, 2, size=private.d, dtype=np.int8) * 2 - 1)

    images = [private.images[j] for j in idx]
    labels = [private.labels[j] for j in idx]
    xt = Image(apply_mask(mix_pixels(images, lam), mask), private.dims)
    key = EncryptionKey(tuple(("private", j) for j in idx), lam, mask)
    return EncryptedSample(xt, mix_labels(labels, lam.values)), key


def instahide_encrypt_cross(
    private: Dataset,
    i: int,
    publicset,
    k: int,
    c1: float,
    c2: float,
    rng: RngStream,
) -> tuple[EncryptedSample, EncryptionKey]:
    """Cross-dataset InstaHide for image i: x_i, one other private image, and
    k-2 distinct public patches, masked. The two private coefficients sum to
    at least c2 and only they reach the label."""
    if private.labels is None:
        raise ValidationError("cross-dataset encryption needs labels")
    if int(k) < 3:
        raise ValidationError("cross-dataset mixing needs k >= 3")
    patches = publicset.patches if hasattr(publicset, "patches") else publicset.images
    if len(patches) < int(k) - 2:
        raise ValidationError(
            f"public set has {len(patches)} patches, need {int(k) - 2}"
        )
    gen = rng.generator()
    partner = _pick_partners(gen, private.n, i, 1)[0]
    pub_idx = [int(v) for v in gen.choice(len(patches), size=int(k) - 2, replace=False)]
    lam = _sample_coefficients_from(gen, int(k), c1, head_pair_min=c2)
    mask = SignMask(gen.integers(0, 2, size=private.d, dtype=np.int8) * 2 - 1)

    images = [private.images[i], private.images[partner]] + [patches[j] for j in pub_idx]
    xt = Image(apply_mask(mix_pixels(images, lam), mask), private.dims)
    ytilde = mix_labels(
        [private.labels[i], private.labels[partner]], lam.values[:2]
    )
    sources = (("private", int(i)), ("private", partner)) + tuple(
        ("public", j) for j in pub_idx
    )
    return EncryptedSample(xt, ytilde), EncryptionKey(sources, lam, mask)


def encrypt_sample(
    private: Dataset,
    i: int,
    cfg: SchemeConfig,
    rng: RngStream,
    publicset=None,
    epoch: int = 0,
    sample_id: int = 0,
) -> tuple[EncryptedSample, EncryptionKey]:
    """Scheme dispatch for one private image."""
    if cfg.scheme == "inside":
        sample, key = instahide_encrypt_inside(private, i, cfg.k, cfg.c1, rng)
    elif cfg.scheme == "cross":
        if publicset is None:
            raise ValidationError("cross-dataset encryption needs a public set")
        sample, key = instahide_encrypt_cross(
            private, i, publicset, cfg.k, cfg.c1, cfg.c2, rng
        )
    else:  # mixup: same source policy as inside, no mask, c1 optional via cfg
        if private.labels is None:
            raise ValidationError("mixup needs labels")
        gen = rng.generator()
        idx = [int(i)] + _pick_partners(gen, private.n, i, cfg.k - 1)
        lam = _sample_coefficients_from(gen, cfg.k, cfg.c1)
        images = [private.images[j] for j in idx]
        labels = [private.labels[j] for j in idx]
        xt = Image(mix_pixels(images, lam), private.dims)
        sample = EncryptedSample(xt, mix_labels(labels, lam.values))
        key = EncryptionKey(
            tuple(("private", j) for j in idx), lam, identity_mask(private.d)
        )
    return (
        EncryptedSample(sample.xtilde, sample.ytilde, epoch, sample_id),
        key,
    )


def encrypt_epoch(
    private: Dataset,
    cfg: SchemeConfig,
    epoch: int,
    rng: RngStream,
    publicset=None,
    return_keys: bool = False,
):
    """Encrypt every private image once with fresh keys, in a random output
    order. Sample ids are epoch * n + i, so merge order is recoverable."""
    n = private.n
    out, keys = [], []
    for i in range(n):
        sample, key = encrypt_sample(
            private,
            i,
            cfg,
            rng.child(epoch, i),
            publicset=publicset,
            epoch=epoch,
            sample_id=epoch * n + i,
        )
        out.append(sample)
        keys.append(key)
    perm = rng.child(epoch, "perm").generator().permutation(n)
    samples = [out[j] for j in perm]
    keys = [keys[j] for j in perm]
    return (samples, keys) if return_keys else samples


def encrypt_history(
    private: Dataset,
    cfg: SchemeConfig,
    epochs: int,
    rng: RngStream,
    publicset=None,
):
    """T epochs of encryptions with per-epoch fresh keys; returns aligned
    (samples, keys) lists of length n * T."""
    samples, keys = [], []
    for t in range(int(epochs)):
        s, k = encrypt_epoch(private, cfg, t, rng, publicset=publicset, return_keys=True)
        samples.extend(s)
        keys.extend(k)
    return samples, keys


def encrypt_input(
    x: Image, others: list[Image], cfg: SchemeConfig, rng: RngStream
) -> Image:
    """Inference-time encryption of a single input (labels play no role).

    ``others`` supplies the k-1 partner images; for the cross scheme the
    first one stands in for the second private image so the c2 floor applies
    to x and others[0].
    """
    if len(others) != cfg.k - 1:
        raise ValidationError(f"need {cfg.k - 1} partner images, got {len(others)}")
    gen = rng.generator()
    head = cfg.c2 if cfg.scheme == "cross" else 0.0
    lam = _sample_coefficients_from(gen, cfg.k, cfg.c1, head_pair_min=head)
    mixed = mix_pixels([x] + list(others), lam)
    if cfg.scheme == "mixup":
        return Image(mixed, x.dims)
    mask = SignMask(gen.integers(0, 2, size=x.d, dtype=np.int8) * 2 - 1)
    return Image(apply_mask(mixed, mask), x.dims)


def export_challenge(
    samples: list[EncryptedSample], path: str | Path, meta: dict
) -> tuple[Path, Path]:
    """Write a challenge release: the encrypted samples as IHDS plus a
    key=value sidecar of public parameters. Keys and originals never touch
    this path."""
    from .ihds import save_dataset

    if not samples:
        raise ValidationError("challenge export needs at least one sample")
    ds = Dataset(
        tuple(s.xtilde for s in samples),
        tuple(s.ytilde for s in samples),
        name="challenge",
    )
    path = Path(path)
    save_dataset(ds, path)
    sidecar = path.with_suffix(path.suffix + ".meta.txt")
    lines = [f"{k}={meta[k]}" for k in sorted(meta)]
    sidecar.write_text("\n".join(lines) + "\n")
    return path, sidecar
