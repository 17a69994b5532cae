"""Single-file binary checkpoints with a versioned header.

Layout (all integers little-endian):

    magic   8 bytes  b"TRYONCKP"
    version u32      format schema, currently 1
    cfg_len u32      followed by cfg_len bytes of UTF-8 JSON (model config)
    count   u32      number of named tensors, then per tensor:
        name_len u16, name bytes (UTF-8)
        dtype    u8   (0 = float32, 1 = float64, 2 = int64)
        ndim     u8
        dims     ndim x u32
        payload  raw little-endian array bytes
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"TRYONCKP"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def save_checkpoint(path: str | Path, tensors: dict, config: dict) -> None:
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg)), cfg,
              struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        value = tensors[name]
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arr = np.ascontiguousarray(value)
        if arr.dtype == np.float32:
            arr = arr.astype("<f4")
        elif arr.dtype == np.float64:
            arr = arr.astype("<f8")
        elif arr.dtype == np.int64:
            arr = arr.astype("<i8")
        else:
            raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint (bad magic)")
    pos = 8
    (version,) = struct.unpack_from("<I", blob, pos); pos += 4
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", blob, pos); pos += 4
    config = json.loads(blob[pos:pos + cfg_len].decode("utf-8")); pos += cfg_len
    (count,) = struct.unpack_from("<I", blob, pos); pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos); pos += 2
        name = blob[pos:pos + name_len].decode("utf-8"); pos += name_len
        code, ndim = struct.unpack_from("<BB", blob, pos); pos += 2
        shape = struct.unpack_from(f"<{ndim}I", blob, pos); pos += 4 * ndim
        dtype = _CODE_DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        tensors[name] = np.frombuffer(
            blob[pos:pos + n_bytes], dtype=dtype).reshape(shape).copy()
        pos += n_bytes
    return tensors, config


def save_model_pair(path: str | Path, main: torch.nn.Module,
                    reference: torch.nn.Module, config: dict) -> None:
    """Persist both U-Nets under "main."/"reference." name prefixes."""
    tensors: dict[str, torch.Tensor] = {}
    for prefix, model in (("main", main), ("reference", reference)):
        for name, param in model.state_dict().items():
            tensors[f"{prefix}.{name}"] = param
    save_checkpoint(path, tensors, config)


def load_model_pair(path: str | Path):
    """Rebuild the (main, reference) pair recorded by save_model_pair."""
    from .unet import make_unet_pair

    tensors, config = load_checkpoint(path)
    main, reference = make_unet_pair(
        latent_channels=config.get("latent_channels", 4),
        base_channels=config.get("base_channels", 8),
        ctx_dim=config.get("text_dim", 16),
        head_dim=config.get("head_dim", 32),
        seed=config.get("seed", 0),
    )
    for prefix, model in (("main", main), ("reference", reference)):
        state = {name[len(prefix) + 1:]: torch.from_numpy(arr)
                 for name, arr in tensors.items() if name.startswith(prefix + ".")}
        model.load_state_dict(state, strict=True)
    return main, reference, config
