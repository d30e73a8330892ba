"""
Binary checkpoint files.

Layout (all integers little-endian uint32)::

    b"YORO1"
    header length, header JSON (UTF-8): {"model": {...}, "vocab": [...], "params": [...]}
    per parameter: name length, name (UTF-8), ndim, dims..., float64 LE values
"""

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from yoro._errors import CheckpointError, YoroError
from yoro.config import config_from_dict
from yoro.data import Vocabulary
from yoro.model import YoroModel

MAGIC = b"YORO1"
_U32 = struct.Struct("<I")


def save_checkpoint(path: Union[str, Path], model: YoroModel, vocab: Vocabulary,
                    extra: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write *model* and *vocab* to *path* atomically.

    Parameters
    ----------
    extra : dict, optional
        Additional JSON-serialisable header entries (e.g. training summary).
    """
    path = Path(path)
    params = list(model.named_parameters())
    header = {"model": model.config.to_dict(), "vocab": vocab.to_list(),
              "params": [name for name, _ in params]}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")

    chunks = [MAGIC, _U32.pack(len(blob)), blob]
    for name, tensor in params:
        raw = name.encode("utf-8")
        chunks.append(_U32.pack(len(raw)))
        chunks.append(raw)
        chunks.append(_U32.pack(tensor.ndim))
        chunks.extend(_U32.pack(extent) for extent in tensor.shape)
        chunks.append(tensor.data.astype("<f8").tobytes())

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint", path=self.path,
                                  offset=self.pos)
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Parse *path* into its header and named parameter arrays."""
    path = str(path)
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}", path=path) from None
    reader = _Reader(data, path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a YORO1 checkpoint", path=path)
    try:
        header = json.loads(reader.take(reader.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}", path=path) from None

    arrays: Dict[str, np.ndarray] = {}
    names: List[str] = header.get("params", [])
    for expected in names:
        name = reader.take(reader.u32()).decode("utf-8", errors="replace")
        if name != expected:
            raise CheckpointError(f"{path}: parameter {name!r} where {expected!r} was listed",
                                  path=path)
        dims = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(reader.take(8 * count), dtype="<f8")
        arrays[name] = values.astype(np.float64).reshape(dims)
    if reader.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - reader.pos} trailing bytes", path=path)
    return header, arrays


def load_checkpoint(path: Union[str, Path]) -> Tuple[YoroModel, Vocabulary, Dict[str, Any]]:
    """
    Rebuild the model and vocabulary stored in *path*.

    Raises
    ------
    CheckpointError
        If the file is unreadable, malformed, or its parameters do not fit
        the stored configuration.
    """
    header, arrays = read_checkpoint(path)
    try:
        config = config_from_dict({"model": header["model"]}, source=str(path)).model
        model = YoroModel(config)
        model.load_state_dict(arrays)
    except KeyError as e:
        raise CheckpointError(f"{path}: header lacks {e}", path=str(path)) from None
    except YoroError as e:
        raise CheckpointError(f"{path}: {e}", path=str(path)) from None
    return model, Vocabulary(header.get("vocab", [])), header
