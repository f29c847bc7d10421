"""DYCK checkpoint format.

Layout (little-endian)::

    b"DYCK" | u16 version | u32 record count
    record: u32 byte length | u16 name length | name (utf-8) | tensor
    tensor: u8 dtype code | u8 rank | u32 extent * rank | raw values

Dtype codes: 0 float32, 1 float64, 2 int64, 3 uint8.
"""

import struct

import numpy as np

from .errors import CheckpointVersionMismatch, FormatError

MAGIC = b"DYCK"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "u1"}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2, np.dtype("uint8"): 3}


def encode_tensor(arr):
    arr = np.asarray(arr)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    head = struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode_tensor(buf, off=0):
    code, rank = struct.unpack_from("<BB", buf, off)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    off += 2
    shape = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    dt = np.dtype(_DTYPES[code])
    n = int(np.prod(shape)) if rank else 1
    arr = np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(shape).astype(dt.newbyteorder("="))
    return arr, off + n * dt.itemsize


def write_records(path, records):
    """``records``: ordered iterable of ``(name, array)``."""
    records = list(records)
    out = [MAGIC, struct.pack("<HI", VERSION, len(records))]
    for name, arr in records:
        nb = name.encode("utf-8")
        body = struct.pack("<H", len(nb)) + nb + encode_tensor(arr)
        out.append(struct.pack("<I", len(body)) + body)
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def read_records(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: not a DYCK checkpoint")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise CheckpointVersionMismatch(f"{path}: checkpoint version {version}, expected {VERSION}")
    off = 10
    records = {}
    for _ in range(count):
        (length,) = struct.unpack_from("<I", buf, off)
        end = off + 4 + length
        (nlen,) = struct.unpack_from("<H", buf, off + 4)
        name = buf[off + 6:off + 6 + nlen].decode("utf-8")
        arr, stop = decode_tensor(buf, off + 6 + nlen)
        if stop != end:
            raise FormatError(f"{path}: record {name!r} length mismatch")
        records[name] = arr
        off = end
    if off != len(buf):
        raise FormatError(f"{path}: trailing bytes")
    return records


def _text(s):
    return np.frombuffer(s.encode("utf-8"), dtype=np.uint8)


def save_checkpoint(path, model, optimizer=None, epoch=0):
    image_shape = model.backbone.config.image_shape
    step = optimizer.step_count if optimizer is not None else 0
    records = [
        ("__config__", _text(model.cfg.to_text())),
        ("__branches__", _text(",".join(model.branches))),
        ("__meta__", np.array([model.num_ids, epoch, step, *image_shape], dtype=np.int64)),
    ]
    for name, t in model.named_parameters():
        records.append(("param." + name, t.data))
    for name, state, attr in model.named_buffers():
        records.append(("buffer." + name, getattr(state, attr)))
    if optimizer is not None:
        for name, (m, v) in optimizer.named_state():
            records.append(("adam.m." + name, m))
            records.append(("adam.v." + name, v))
    write_records(path, records)


def load_checkpoint(path):
    """Return ``(model, optimizer, epoch)`` restored from ``path``."""
    from .config import TrainConfig
    from .model import DynReIDModel
    from .train import Adam

    rec = read_records(path)
    try:
        cfg = TrainConfig.from_text(bytes(rec["__config__"]).decode("utf-8"))
        branches = bytes(rec["__branches__"]).decode("utf-8").split(",")
        num_ids, epoch, step, *image_shape = (int(v) for v in rec["__meta__"])
    except KeyError as exc:
        raise FormatError(f"{path}: missing record {exc}") from exc
    model = DynReIDModel(cfg, num_ids, tuple(image_shape), branches)
    for name, t in model.named_parameters():
        arr = rec.get("param." + name)
        if arr is None or arr.shape != t.shape:
            raise FormatError(f"{path}: parameter {name} missing or misshapen")
        t.data = arr.astype(np.float64)
    for name, state, attr in model.named_buffers():
        setattr(state, attr, rec["buffer." + name].astype(np.float64))
    opt = Adam(model.named_parameters(), lr=cfg.base_lr)
    opt.step_count = step
    for name, (m, v) in opt.named_state():
        if "adam.m." + name in rec:
            m[...] = rec["adam.m." + name]
            v[...] = rec["adam.v." + name]
    return model, opt, epoch
