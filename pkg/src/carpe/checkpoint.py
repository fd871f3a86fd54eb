"""Versioned binary checkpoints and parameter-space merging.

Layout (all integers little-endian unsigned 64-bit unless noted):

    magic "CARPE-CKPT" (10 bytes)
    format version (uint32)
    header length, header JSON (sorted keys: config, epoch, meta, rng_state)
    record count
    records, sorted by tensor name:
        name length, name (utf-8)
        group length, group (utf-8)
        ndim, dims...
        values (float64, little-endian)
    sha256 of everything above (32 bytes)

Serialization is canonical (sorted names, sorted JSON keys), so
save -> load -> save reproduces the file byte for byte.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError

MAGIC = b"CARPE-CKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)  # name -> (group, ndarray)
    version: int = FORMAT_VERSION

    def group_hashes(self):
        """sha256 per parameter group, for freeze-schedule checks."""
        buckets = {}
        for name in sorted(self.tensors):
            group, arr = self.tensors[name]
            buckets.setdefault(group, hashlib.sha256()).update(
                name.encode() + np.ascontiguousarray(arr, dtype="<f8").tobytes()
            )
        return {g: h.hexdigest() for g, h in sorted(buckets.items())}


def serialize(ck: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<I", ck.version)]
    header = json.dumps(
        {"config": ck.config, "epoch": ck.epoch, "meta": ck.meta, "rng_state": ck.rng_state},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    out.append(struct.pack("<Q", len(header)))
    out.append(header)
    out.append(struct.pack("<Q", len(ck.tensors)))
    for name in sorted(ck.tensors):
        group, arr = ck.tensors[name]
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode()
        gb = group.encode()
        out.append(struct.pack("<Q", len(nb)))
        out.append(nb)
        out.append(struct.pack("<Q", len(gb)))
        out.append(gb)
        out.append(struct.pack("<Q", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    body = b"".join(out)
    return body + hashlib.sha256(body).digest()


def deserialize(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 4 + 32 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a CARPE-CKPT file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint content hash mismatch")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", blob, off)
    off += 8
    header = json.loads(blob[off : off + hlen].decode())
    off += hlen
    (count,) = struct.unpack_from("<Q", blob, off)
    off += 8
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<Q", blob, off)
        off += 8
        name = blob[off : off + nlen].decode()
        off += nlen
        (glen,) = struct.unpack_from("<Q", blob, off)
        off += 8
        group = blob[off : off + glen].decode()
        off += glen
        (ndim,) = struct.unpack_from("<Q", blob, off)
        off += 8
        shape = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
        tensors[name] = (group, arr)
    return Checkpoint(
        config=header["config"],
        epoch=header["epoch"],
        meta=header["meta"],
        rng_state=header["rng_state"],
        tensors=tensors,
        version=version,
    )


def save_checkpoint(ck: Checkpoint, path):
    blob = serialize(ck)
    with open(path, "wb") as fh:
        fh.write(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def content_hash(ck: Checkpoint) -> str:
    return hashlib.sha256(serialize(ck)).hexdigest()


def checkpoint_from_model(model, config_dict, epoch=0, rng_state=None, meta=None) -> Checkpoint:
    tensors = {name: (group, t.data.copy()) for name, group, t in model.named_params()}
    return Checkpoint(
        config=config_dict,
        epoch=epoch,
        rng_state=rng_state or {},
        meta=meta or {},
        tensors=tensors,
    )


def load_into_model(model, ck: Checkpoint, strict=True):
    """Copy checkpoint tensors into an already-built model."""
    named = {name: (group, t) for name, group, t in model.named_params()}
    missing = set(named) - set(ck.tensors)
    extra = set(ck.tensors) - set(named)
    if strict and (missing or extra):
        raise CheckpointError(f"parameter set mismatch: missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]}")
    for name, (group, arr) in ck.tensors.items():
        if name not in named:
            continue
        g, t = named[name]
        if g != group or t.data.shape != arr.shape:
            raise CheckpointError(f"record {name}: group/shape mismatch ({group}/{arr.shape} vs {g}/{t.data.shape})")
        t.data = arr.copy()
    return model


def wiseft_merge(ck_a: Checkpoint, ck_b: Checkpoint, coeff: float) -> Checkpoint:
    """Parameter-space interpolation theta = (1-coeff)*A + coeff*B.

    coeff 0 and 1 reproduce the respective input exactly (same header,
    bit-equal tensors)."""
    names_a, names_b = set(ck_a.tensors), set(ck_b.tensors)
    if names_a != names_b:
        raise CheckpointError(f"checkpoint structures differ: {sorted(names_a ^ names_b)[:4]}")
    for name in names_a:
        ga, aa = ck_a.tensors[name]
        gb, ab = ck_b.tensors[name]
        if ga != gb or aa.shape != ab.shape:
            raise CheckpointError(f"record {name}: group/shape mismatch between inputs")
    coeff = float(coeff)
    if coeff == 0.0:
        src = ck_a
    elif coeff == 1.0:
        src = ck_b
    else:
        src = None
    if src is not None:
        return Checkpoint(
            config=src.config,
            epoch=src.epoch,
            meta=src.meta,
            rng_state=src.rng_state,
            tensors={n: (g, a.copy()) for n, (g, a) in src.tensors.items()},
        )
    tensors = {}
    for name in names_a:
        group, a = ck_a.tensors[name]
        _, b = ck_b.tensors[name]
        tensors[name] = (group, (1.0 - coeff) * a + coeff * b)
    meta = dict(ck_a.meta)
    meta["wiseft"] = {"coeff": coeff}
    return Checkpoint(
        config=ck_a.config,
        epoch=max(ck_a.epoch, ck_b.epoch),
        meta=meta,
        rng_state=ck_a.rng_state,
        tensors=tensors,
    )
