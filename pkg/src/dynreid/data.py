"""Synthetic identity data, PK sampling, augmentation and the DYRD file format."""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, SpecInvalid, TooFewIdentities

DYRD_MAGIC = b"DYRD"
DYRD_VERSION = 1


@dataclass
class Sample:
    image: np.ndarray  # float32, C x H x W, values in [0, 1]
    id: int
    cam: int


@dataclass
class SynthSpec:
    num_ids: int = 8
    imgs_per_id: int = 20
    num_cams: int = 3
    height: int = 32
    width: int = 16
    noise: float = 0.15
    seed: int = 0

    def validate(self):
        if self.num_ids < 2:
            raise SpecInvalid(f"num_ids must be >= 2, got {self.num_ids}")
        if self.imgs_per_id < 2:
            raise SpecInvalid(f"imgs_per_id must be >= 2, got {self.imgs_per_id}")
        if self.num_cams < 2:
            raise SpecInvalid(f"num_cams must be >= 2, got {self.num_cams}")
        if self.height < 4 or self.width < 4:
            raise SpecInvalid("images must be at least 4x4")
        if self.noise < 0:
            raise SpecInvalid("noise must be nonnegative")


# A small palette keeps identities from being separable by one colour alone.
_PALETTE = np.array([
    [0.85, 0.20, 0.20], [0.20, 0.65, 0.25], [0.20, 0.30, 0.85], [0.90, 0.80, 0.25],
    [0.55, 0.25, 0.70], [0.95, 0.55, 0.15], [0.25, 0.75, 0.80], [0.45, 0.45, 0.45],
])


def _identity_signature(rng, h, w):
    """Torso/legs layout with a small emblem; returns (C, H, W) in [0, 1]."""
    img = np.empty((3, h, w))
    img[:] = 0.12  # background
    head = max(1, h // 8)
    split = int(round(h * rng.uniform(0.45, 0.6)))
    torso, legs = _PALETTE[rng.choice(len(_PALETTE), 2, replace=False)]
    body = slice(max(1, w // 8), w - max(1, w // 8))
    img[:, head:split, body] = torso[:, None, None]
    img[:, split:, body] = legs[:, None, None]
    img[:, :head, w // 2 - max(1, w // 8):w // 2 + max(1, w // 8)] = 0.8
    # emblem on the torso
    eh, ew = max(1, h // 8), max(1, w // 4)
    y0 = rng.integers(head, max(head + 1, split - eh))
    x0 = rng.integers(body.start, max(body.start + 1, body.stop - ew))
    img[:, y0:y0 + eh, x0:x0 + ew] = _PALETTE[rng.integers(len(_PALETTE))][:, None, None]
    return img


def _shift(img, dy, dx):
    out = np.full_like(img, 0.12)
    h, w = img.shape[1:]
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[:, yd, xd] = img[:, ys, xs]
    return out


def generate_dataset(spec):
    """Render ``num_ids * imgs_per_id`` samples; a pure function of ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    sigs = [_identity_signature(rng, h, w) for _ in range(spec.num_ids)]
    gain = rng.uniform(0.7, 1.3, size=spec.num_cams)
    cast = rng.uniform(-0.08, 0.08, size=(spec.num_cams, 3))
    shift = max(1, h // 16)
    offsets = [(int(rng.integers(-shift, shift + 1)), int(rng.integers(-1, 2))) for _ in range(spec.num_cams)]
    views = {}
    samples = []
    for pid in range(spec.num_ids):
        for k in range(spec.imgs_per_id):
            cam = k % spec.num_cams
            if (pid, cam) not in views:
                v = _shift(sigs[pid], *offsets[cam]) * gain[cam] + cast[cam][:, None, None]
                views[pid, cam] = v
            img = views[pid, cam] + spec.noise * rng.standard_normal((3, h, w))
            samples.append(Sample(np.clip(img, 0.0, 1.0).astype(np.float32), pid, cam))
    return samples


def split_query_gallery(samples, num_cams=None):
    """Per identity, images from camera ``id % num_cams`` are queries; the rest gallery."""
    if num_cams is None:
        num_cams = max(s.cam for s in samples) + 1
    query = [s for s in samples if s.cam == s.id % num_cams]
    gallery = [s for s in samples if s.cam != s.id % num_cams]
    return query, gallery


def pk_sample(dataset, P, K, rng):
    """P distinct identities, K images each, grouped by identity."""
    by_id = {}
    for i, s in enumerate(dataset):
        by_id.setdefault(s.id, []).append(i)
    ids = sorted(by_id)
    if len(ids) < P:
        raise TooFewIdentities(f"need {P} identities, dataset has {len(ids)}")
    chosen = rng.choice(len(ids), size=P, replace=False)
    batch = []
    for c in chosen:
        pool = by_id[ids[c]]
        picks = rng.choice(len(pool), size=K, replace=len(pool) < K)
        batch.extend(dataset[pool[p]] for p in picks)
    return batch


def flip(img):
    return np.ascontiguousarray(img[..., ::-1])


def augment_train(img, rng, pad=2, flip_prob=0.5):
    """Random horizontal flip, zero pad and random crop back to the input size."""
    if rng.random() < flip_prob:
        img = flip(img)
    if pad == 0:
        return img
    c, h, w = img.shape
    padded = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=img.dtype)
    padded[:, pad:pad + h, pad:pad + w] = img
    y, x = rng.integers(0, 2 * pad + 1, size=2)
    return padded[:, y:y + h, x:x + w].copy()


def stack_images(samples):
    return np.stack([s.image for s in samples]).astype(np.float64)


def write_dataset(path, samples):
    with open(path, "wb") as fh:
        fh.write(DYRD_MAGIC)
        fh.write(struct.pack("<HI", DYRD_VERSION, len(samples)))
        for s in samples:
            c, h, w = s.image.shape
            fh.write(struct.pack("<IIHHH", s.id, s.cam, c, h, w))
            fh.write(np.ascontiguousarray(s.image, dtype="<f4").tobytes())


def read_dataset(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != DYRD_MAGIC:
        raise FormatError(f"{path}: not a DYRD file")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != DYRD_VERSION:
        raise FormatError(f"{path}: unsupported DYRD version {version}")
    off = 10
    samples = []
    for _ in range(count):
        pid, cam, c, h, w = struct.unpack_from("<IIHHH", buf, off)
        off += 14
        n = c * h * w
        img = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(c, h, w).astype(np.float32)
        off += 4 * n
        samples.append(Sample(img, pid, cam))
    if off != len(buf):
        raise FormatError(f"{path}: {len(buf) - off} trailing bytes")
    return samples
