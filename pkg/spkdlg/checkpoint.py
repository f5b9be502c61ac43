"""
Binary model checkpoint.

Layout (little-endian):
    b"SPKDLG1"                 magic
    uint32                     format version
    uint32                     header length in bytes
    header                     UTF-8 JSON: config, vocabularies, parameter table, metadata
    float64 * N                parameter values, row-major, in parameter-table order
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from spkdlg.config import ModelConfig
from spkdlg.corpus.vocab import Vocabularies
from spkdlg.dialogue_model import RoleContextualModel, build_params
from spkdlg.errors import CheckpointError, ConfigError, ContractError

logger = logging.getLogger(__name__)

MAGIC = b"SPKDLG1"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<II")
_VALUE_DTYPE = np.dtype("<f8")


def save_checkpoint(
    path: Union[str, Path], model: RoleContextualModel, metadata: Optional[Dict[str, Any]] = None
) -> Path:
    path = Path(path)
    named = model.named_parameters()
    header = {
        "config": model.config.to_dict(),
        "vocabularies": model.vocabs.to_dict(),
        "parameters": [{"name": name, "shape": list(t.shape)} for name, t in named],
        "metadata": metadata or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_PREFIX.pack(FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for _, tensor in named:
            f.write(np.ascontiguousarray(tensor.data, dtype=_VALUE_DTYPE).tobytes())
    logger.info("Saved checkpoint %s (%d tensors)", path, len(named))
    return path


def _read_header(blob: bytes, path: str) -> Tuple[Dict[str, Any], int]:
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    offset = len(MAGIC)
    if len(blob) < offset + _PREFIX.size:
        raise CheckpointError(f"{path}: truncated header")
    version, header_len = _PREFIX.unpack_from(blob, offset)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    offset += _PREFIX.size
    if len(blob) < offset + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from e
    return header, offset + header_len


def read_checkpoint_header(path: Union[str, Path]) -> Dict[str, Any]:
    path = str(path)
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint not found: {path}") from e
    header, _ = _read_header(blob, path)
    return header


def load_checkpoint(path: Union[str, Path]) -> Tuple[RoleContextualModel, Dict[str, Any]]:
    """Rebuild the model from a checkpoint. Returns (model, metadata)."""
    path = str(path)
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint not found: {path}") from e

    header, offset = _read_header(blob, path)
    try:
        config = ModelConfig.from_dict(header["config"])
        vocabs = Vocabularies.from_dict(header["vocabularies"])
        table = [(entry["name"], tuple(entry["shape"])) for entry in header["parameters"]]
    except (KeyError, TypeError, ConfigError, ContractError) as e:
        raise CheckpointError(f"{path}: malformed header ({e})") from e

    model = RoleContextualModel(
        build_params(config, len(vocabs.tokens), len(vocabs.labels), len(vocabs.actions)), vocabs
    )
    named = dict(model.named_parameters())
    if [name for name, _ in table] != [name for name, _ in model.named_parameters()]:
        raise CheckpointError(f"{path}: parameter table does not match the configured architecture")

    expected = int(np.sum([int(np.prod(shape)) for _, shape in table])) * _VALUE_DTYPE.itemsize
    if len(blob) - offset != expected:
        raise CheckpointError(f"{path}: expected {expected} value bytes, found {len(blob) - offset}")

    values = np.frombuffer(blob, dtype=_VALUE_DTYPE, offset=offset)
    cursor = 0
    for name, shape in table:
        tensor = named[name]
        if tensor.shape != shape:
            raise CheckpointError(f"{path}: {name} has shape {shape}, architecture needs {tensor.shape}")
        n = int(np.prod(shape))
        tensor.data[...] = values[cursor : cursor + n].reshape(shape)
        cursor += n
    logger.info("Loaded checkpoint %s (%d tensors)", path, len(table))
    return model, header.get("metadata", {})
