"""Binary container format shared by every artifact written to disk.

Layout::

    b"EMBSURG1" | u64 header length | JSON header | array bytes | sha256

The header holds the format version, a type tag, the creation seed, a
provenance map, type-specific metadata and an index of named arrays
(dtype, shape, byte offset). Arrays are stored little-endian and
C-contiguous. The trailing SHA-256 covers every preceding byte and is
checked before anything is decoded, so a damaged file never yields a
partial object.

TrialResult wall-clock times are deliberately not stored so that two runs
with the same seed write byte-identical files; commands log timings
separately.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import torch

from . import nets
from .errors import ConfigurationError, IntegrityError, UnsupportedVersionError
from .metrics import MetricReport, ReferenceStats
from .optimizer import TrialResult
from .synthdata import DatasetSpec, LabeledImageSet

MAGIC = b"EMBSURG1"
FORMAT_VERSION = 1
DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}
_LEN = struct.Struct("<Q")
_DIGEST = 32


# ---------------------------------------------------------------------------
# raw container


def encode(type_tag: str, arrays: dict, meta: dict, seed: int | None = None, provenance: dict | None = None) -> bytes:
    index, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        key = arr.dtype.name
        if key not in DTYPES:
            raise ConfigurationError(f"array {name!r} has unsupported dtype {key}", name)
        raw = np.ascontiguousarray(arr, dtype=np.dtype(DTYPES[key])).tobytes()
        index.append({"name": name, "dtype": key, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "version": FORMAT_VERSION,
        "type": type_tag,
        "seed": seed,
        "provenance": provenance or {},
        "meta": meta,
        "arrays": index,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + _LEN.pack(len(hbytes)) + hbytes + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def decode(blob: bytes) -> tuple[dict, dict]:
    """Verify and split a container into (header, arrays)."""
    if len(blob) < len(MAGIC) + _LEN.size + _DIGEST or blob[: len(MAGIC)] != MAGIC:
        raise IntegrityError("not a container file (bad magic or too short)")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    (hlen,) = _LEN.unpack_from(body, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    try:
        header = json.loads(body[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        header = None
    # version is checked before the digest so a newer file gets the clearer error
    if isinstance(header, dict) and isinstance(header.get("version"), int) and header["version"] > FORMAT_VERSION:
        raise UnsupportedVersionError(f"container version {header['version']} is newer than {FORMAT_VERSION}")
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checksum mismatch: file is truncated or corrupt")
    if not isinstance(header, dict) or header.get("version") != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported container version {header and header.get('version')!r}")
    data = body[start + hlen :]
    arrays = {}
    for entry in header["arrays"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(data):
            raise IntegrityError(f"array {entry['name']!r} runs past the end of the file")
        arr = np.frombuffer(data[lo:hi], dtype=np.dtype(DTYPES[entry["dtype"]]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
    return header, arrays


def write_bytes(path, blob: bytes) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# typed encoders


def _state_arrays(prefix: str, module: torch.nn.Module) -> dict:
    return {f"{prefix}/{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def _load_state(prefix: str, module: torch.nn.Module, arrays: dict) -> None:
    n = len(prefix) + 1
    state = {k[n:]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith(prefix + "/")}
    module.load_state_dict(state)


def _to_payload(obj):
    """(type tag, arrays, meta) for a supported object."""
    if isinstance(obj, nets.GeneratorCheckpoint):
        arrays = _state_arrays("body", obj.body)
        arrays["embedding"] = obj.embedding.detach().cpu().numpy()
        meta = {"config": dataclasses.asdict(obj.config), "version": obj.version, "meta": obj.meta}
        return "generator", arrays, meta
    if isinstance(obj, nets.ClassifierCheckpoint):
        meta = {"config": dataclasses.asdict(obj.config), "version": obj.version, "meta": obj.meta}
        return "classifier", _state_arrays("net", obj.net), meta
    if isinstance(obj, nets.DiscriminatorCheckpoint):
        net = obj.net
        meta = {
            "num_classes": net.num_classes,
            "channels": net.channels,
            "width": net.width,
            "version": obj.version,
            "meta": obj.meta,
        }
        return "discriminator", _state_arrays("net", net), meta
    if isinstance(obj, LabeledImageSet):
        return "dataset", {"images": obj.images, "labels": obj.labels}, {"spec": obj.spec.to_dict()}
    if isinstance(obj, TrialResult):
        arrays = {"trace": np.asarray(obj.trace)}
        for name in ("final_embedding", "init_embedding"):
            if getattr(obj, name) is not None:
                arrays[name] = np.asarray(getattr(obj, name))
        meta = {
            f.name: getattr(obj, f.name)
            for f in dataclasses.fields(obj)
            if f.name not in ("trace", "final_embedding", "init_embedding", "wall_time")
        }
        meta["clip_bounds"] = None if obj.clip_bounds is None else list(obj.clip_bounds)
        return "trial_result", arrays, meta
    if isinstance(obj, ReferenceStats):
        arrays = {"mean": obj.mean, "cov": obj.cov}
        meta = {"ms_ssim": obj.ms_ssim, "perceptual": obj.perceptual, "n_images": obj.n_images}
        return "reference_stats", arrays, meta
    if isinstance(obj, MetricReport):
        return "metric_report", {}, obj.to_dict()
    raise ConfigurationError(f"cannot store objects of type {type(obj).__name__}", "object")


def _from_payload(tag: str, arrays: dict, meta: dict):
    if tag == "generator":
        g = nets.new_generator(nets.GeneratorConfig(**meta["config"]))
        _load_state("body", g.body, arrays)
        return nets.GeneratorCheckpoint(
            g.config, g.body, torch.from_numpy(arrays["embedding"].copy()), meta["version"], meta["meta"]
        )
    if tag == "classifier":
        cfg = dict(meta["config"])
        cfg["widths"] = tuple(cfg["widths"])
        p = nets.new_classifier(nets.ClassifierConfig(**cfg))
        _load_state("net", p.net, arrays)
        return nets.ClassifierCheckpoint(p.config, p.net, meta["version"], meta["meta"])
    if tag == "discriminator":
        net = nets.DiscriminatorNet(meta["num_classes"], meta["channels"], meta["width"])
        _load_state("net", net, arrays)
        return nets.DiscriminatorCheckpoint(net, meta["version"], meta["meta"])
    if tag == "dataset":
        return LabeledImageSet(arrays["images"], arrays["labels"], DatasetSpec.from_dict(meta["spec"]))
    if tag == "trial_result":
        kw = dict(meta)
        kw["clip_bounds"] = None if kw["clip_bounds"] is None else tuple(kw["clip_bounds"])
        return TrialResult(
            final_embedding=arrays.get("final_embedding"),
            trace=arrays["trace"],
            init_embedding=arrays.get("init_embedding"),
            wall_time=0.0,
            **kw,
        )
    if tag == "reference_stats":
        return ReferenceStats(mean=arrays["mean"], cov=arrays["cov"], **meta)
    if tag == "metric_report":
        return MetricReport.from_dict(meta)
    raise IntegrityError(f"unknown container type {tag!r}")


def dumps(obj, seed: int | None = None, provenance: dict | None = None) -> bytes:
    tag, arrays, meta = _to_payload(obj)
    return encode(tag, arrays, meta, seed=seed, provenance=provenance)


def loads(blob: bytes, expect: str | None = None):
    header, arrays = decode(blob)
    if expect is not None and header["type"] != expect:
        raise ConfigurationError(f"expected a {expect} container, found {header['type']}", "type")
    return _from_payload(header["type"], arrays, header["meta"])


def save(path, obj, seed: int | None = None, provenance: dict | None = None) -> Path:
    write_bytes(path, dumps(obj, seed=seed, provenance=provenance))
    return Path(path)


def load(path, expect: str | None = None):
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise ConfigurationError(f"no such file: {path}", "path") from None
    return loads(blob, expect=expect)


def read_header(path) -> dict:
    header, _ = decode(Path(path).read_bytes())
    return header
