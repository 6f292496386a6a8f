"""Checkpoint files: a JSON manifest next to a blob of little-endian float64 values.

The manifest records the model config, the full vocabulary, its hash, and the
name and shape of every parameter in blob order. Loading validates all of it
before building a model, so a bad file never yields a half-loaded model.
"""
from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .model import ModelConfig, Seq2SeqModel, _param_shapes
from .text import Vocab

FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)


def _paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".json", ".bin") else p
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def save_checkpoint(model: Seq2SeqModel, path: str | Path, meta: dict | None = None) -> Path:
    """Write ``<stem>.json`` and ``<stem>.bin``; returns the manifest path."""
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    tensors = [{"name": n, "shape": list(t.shape)} for n, t in model.params.items()]
    blob = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes() for t in model.params.values())
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "vocab": json.loads(model.vocab.to_json()),
        "vocab_hash": model.vocab.hash(),
        "tensors": tensors,
        "blob": blob_path.name,
        "blob_bytes": len(blob),
        "meta": meta or {},
    }
    _atomic_write(blob_path, blob)
    _atomic_write(manifest_path, (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())
    return manifest_path


def read_manifest(path: str | Path) -> dict:
    manifest_path, _ = _paths(path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupted checkpoint manifest {manifest_path}: {exc}") from None
    if not isinstance(manifest, dict) or "format_version" not in manifest:
        raise ValueError(f"corrupted checkpoint manifest {manifest_path}: no format_version")
    if manifest["format_version"] not in SUPPORTED_VERSIONS:
        raise ValueError(f"unsupported checkpoint format version {manifest['format_version']}")
    return manifest


def load_checkpoint(path: str | Path, vocab: Vocab | None = None,
                    config: ModelConfig | None = None) -> Seq2SeqModel:
    """Rebuild a model bit-exactly.

    ``vocab`` (if given) must hash identically to the stored vocabulary, and
    ``config`` (if given) must imply the stored parameter shapes.
    """
    manifest_path, blob_path = _paths(path)
    manifest = read_manifest(manifest_path)
    try:
        stored_vocab = Vocab.from_json(json.dumps(manifest["vocab"]))
        cfg = ModelConfig.from_dict(manifest["config"])
        tensors = manifest["tensors"]
        expected = int(manifest["blob_bytes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"corrupted checkpoint manifest {manifest_path}: {exc}") from None
    if stored_vocab.hash() != manifest["vocab_hash"]:
        raise ValueError("vocabulary drift: stored vocabulary does not match its recorded hash")
    if vocab is not None and vocab.hash() != manifest["vocab_hash"]:
        raise ValueError("vocabulary drift: supplied vocabulary differs from the checkpoint's")
    shapes = [(t["name"], tuple(t["shape"])) for t in tensors]
    if config is not None:
        want = [(n, tuple(s)) for n, s, _ in _param_shapes(config)]
        for (n1, s1), (n2, s2) in zip(want, shapes):
            if n1 != n2 or s1 != s2:
                raise ValueError(f"shape mismatch: config expects {n1} {s1}, checkpoint has {n2} {s2}")
        if len(want) != len(shapes):
            raise ValueError("shape mismatch: parameter lists differ in length")
    if sum(int(np.prod(s)) for _, s in shapes) * 8 != expected:
        raise ValueError("corrupted checkpoint manifest: tensor shapes disagree with blob size")
    blob = blob_path.read_bytes() if blob_path.exists() else b""
    if len(blob) != expected:
        raise ValueError(f"truncated checkpoint blob {blob_path}: expected {expected} bytes, got {len(blob)}")
    values = np.frombuffer(blob, dtype="<f8")
    params: OrderedDict[str, Tensor] = OrderedDict()
    offset = 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        params[name] = Tensor(values[offset:offset + n].reshape(shape).astype(np.float64), requires_grad=True,
                              name=name)
        offset += n
    if params["embed"].shape[0] != stored_vocab.size or cfg.vocab_size != stored_vocab.size:
        raise ValueError("corrupted checkpoint: embedding rows disagree with the vocabulary")
    return Seq2SeqModel(cfg, vocab if vocab is not None else stored_vocab, params)
