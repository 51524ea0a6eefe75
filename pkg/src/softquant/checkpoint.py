"""Binary model checkpoints and codebook sidecars.

Both containers share the same skeleton: a 4-byte magic, a version, a
length-prefixed JSON manifest, then raw little-endian tensor records in
manifest order. Byte layouts are documented in docs/FORMATS.md; the
manifest JSON is written with sorted keys and no whitespace so identical
states serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import nn
from .errors import ParseError
from .quantize import ClusterMap

CHECKPOINT_MAGIC = b"SQCK"
CODEBOOK_MAGIC = b"SQCB"
FORMAT_VERSION = 1


def _manifest_bytes(manifest: dict) -> bytes:
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write_container(path, magic: bytes, manifest: dict, tensors: list[bytes]) -> None:
    body = _manifest_bytes(manifest)
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(body)))
        f.write(body)
        for t in tensors:
            f.write(t)


def _read_container(path, magic: bytes):
    with open(path, "rb") as f:
        got = f.read(4)
        if got != magic:
            raise ParseError(f"bad magic {got!r}, expected {magic!r}", 0)
        header = f.read(12)
        if len(header) != 12:
            raise ParseError("truncated header", 4)
        version, body_len = struct.unpack("<IQ", header)
        if version != FORMAT_VERSION:
            raise ParseError(f"unsupported container version {version}", 4)
        body = f.read(body_len)
        if len(body) != body_len:
            raise ParseError("truncated manifest", 16)
        try:
            manifest = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ParseError(f"manifest is not valid JSON: {e}", 16) from e
        rest = f.read()
    return manifest, rest, 16 + body_len


def _le_f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save_checkpoint(path, model: nn.ModelState) -> None:
    manifest = {
        "seed": model.rng_seed,
        "layers": [
            {
                "name": l.spec.name,
                "kind": l.spec.kind,
                "fan_in": l.spec.fan_in,
                "fan_out": l.spec.fan_out,
                "kernel": l.spec.kernel,
                "has_bias": l.spec.has_bias,
                "couple": l.spec.couple,
                "activation": l.spec.activation,
                "weight_shape": list(l.weights.shape),
            }
            for l in model.layers
        ],
    }
    tensors = []
    for l in model.layers:
        tensors.append(_le_f64(l.weights))
        tensors.append(_le_f64(l.velocity))
        if l.bias is not None:
            tensors.append(_le_f64(l.bias))
            tensors.append(_le_f64(l.bias_velocity))
    _write_container(path, CHECKPOINT_MAGIC, manifest, tensors)


def load_checkpoint(path) -> nn.ModelState:
    manifest, rest, data_start = _read_container(path, CHECKPOINT_MAGIC)
    layers = []
    offset = 0
    for entry in manifest["layers"]:
        spec = nn.LayerSpec(
            name=entry["name"],
            kind=entry["kind"],
            fan_in=entry["fan_in"],
            fan_out=entry["fan_out"],
            kernel=entry["kernel"],
            has_bias=entry["has_bias"],
            couple=entry["couple"],
            activation=entry["activation"],
        )
        shape = tuple(entry["weight_shape"])
        if shape != spec.weight_shape:
            raise ParseError(
                f"layer {spec.name!r}: stored shape {shape} != spec shape {spec.weight_shape}",
                data_start + offset,
            )
        n = int(np.prod(shape))

        def take(count, what):
            nonlocal offset
            nbytes = count * 8
            if offset + nbytes > len(rest):
                raise ParseError(f"truncated {what}", data_start + offset)
            arr = np.frombuffer(rest, dtype="<f8", count=count, offset=offset)
            offset += nbytes
            return arr.astype(np.float64).reshape(-1)

        weights = take(n, f"weights of {spec.name!r}").reshape(shape)
        velocity = take(n, f"velocity of {spec.name!r}").reshape(shape)
        bias = bias_velocity = None
        if spec.has_bias:
            bias = take(spec.fan_out, f"bias of {spec.name!r}")
            bias_velocity = take(spec.fan_out, f"bias velocity of {spec.name!r}")
        layers.append(
            nn.Layer(
                spec=spec,
                weights=weights,
                bias=bias,
                velocity=velocity,
                bias_velocity=bias_velocity,
            )
        )
    if offset != len(rest):
        raise ParseError("trailing bytes after tensor data", data_start + offset)
    return nn.ModelState(layers=layers, rng_seed=manifest["seed"])


def _index_dtype(k: int) -> str:
    if k <= 2**8:
        return "<u1"
    if k <= 2**16:
        return "<u2"
    return "<u4"


def save_codebook(path, maps: list[ClusterMap]) -> None:
    """Per-layer centroid lists plus per-weight index arrays.

    Indices use the narrowest unsigned width that holds K_l values, so
    the sidecar is a true compressed representation of the layer.
    """
    manifest = {"layers": []}
    tensors = []
    for m in maps:
        dtype = _index_dtype(m.k)
        manifest["layers"].append(
            {"name": m.layer, "k": int(m.k), "count": int(len(m.assignments)), "index_dtype": dtype}
        )
        tensors.append(_le_f64(m.centroids))
        tensors.append(np.ascontiguousarray(m.assignments, dtype=dtype).tobytes())
    _write_container(path, CODEBOOK_MAGIC, manifest, tensors)


def load_codebook(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Returns {layer: (centroids, assignments)}."""
    manifest, rest, data_start = _read_container(path, CODEBOOK_MAGIC)
    out = {}
    offset = 0
    for entry in manifest["layers"]:
        k = entry["k"]
        count = entry["count"]
        dtype = entry["index_dtype"]
        cbytes = k * 8
        if offset + cbytes > len(rest):
            raise ParseError(f"truncated centroids of {entry['name']!r}", data_start + offset)
        centroids = np.frombuffer(rest, dtype="<f8", count=k, offset=offset).astype(np.float64)
        offset += cbytes
        width = np.dtype(dtype).itemsize
        ibytes = count * width
        if offset + ibytes > len(rest):
            raise ParseError(f"truncated indices of {entry['name']!r}", data_start + offset)
        idx = np.frombuffer(rest, dtype=dtype, count=count, offset=offset).astype(np.int64)
        offset += ibytes
        out[entry["name"]] = (centroids, idx)
    if offset != len(rest):
        raise ParseError("trailing bytes after codebook data", data_start + offset)
    return out


def reconstruct_weights(codebook_entry: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    centroids, idx = codebook_entry
    return centroids[idx]
