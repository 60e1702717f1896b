"""File formats: PNG image directories, binary feature files, CSV helpers."""

from __future__ import annotations

import binascii
import csv
import hashlib
import io
import json
import logging
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .dae import DaeConfig, preprocess, to_unit_range
from .errors import ChecksumError, ConfigError, InputError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png",)


def list_images(directory) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise InputError(f"{root} is not a directory")
    return sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def read_png(path) -> np.ndarray:
    """Decode a PNG to uint8 H x W x C (C = 1 for grayscale, 3 for colour)."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "1", "P", "LA"):
            im = im.convert("L")
            return np.asarray(im, dtype=np.uint8)[..., None]
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_images(directory, config: DaeConfig | tuple | None = None,
                strict: bool = False) -> list[np.ndarray]:
    """Read every PNG in ``directory`` sorted by filename.

    With ``config``, images are preprocessed to its input shape; otherwise they
    keep their size and channel count and are only rescaled to [-1, 1].
    Undecodable files are skipped with a warning, or raise when ``strict``.
    """
    paths = list_images(directory)
    if not paths:
        raise InputError(f"no PNG images in {directory}")
    images, skipped = [], 0
    for path in paths:
        try:
            raw = read_png(path)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            if strict:
                raise InputError(f"cannot decode {path}: {exc}") from exc
            log.warning("skipping undecodable image %s (%s)", path, exc)
            skipped += 1
            continue
        if config is not None:
            images.append(preprocess(raw, config))
        else:
            images.append(to_unit_range(raw) * 2.0 - 1.0)
    if skipped:
        log.warning("skipped %d of %d files in %s", skipped, len(paths), directory)
    if not images:
        raise InputError(f"no decodable images in {directory}")
    return images


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[-1, 1] float image -> uint8, squeezing a single channel."""
    arr = np.asarray(img, dtype=np.float64)
    u8 = np.clip(np.round((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)
    if u8.ndim == 3 and u8.shape[2] == 1:
        u8 = u8[..., 0]
    return u8


def write_png(img: np.ndarray, path) -> None:
    Image.fromarray(to_uint8(img)).save(path, optimize=False)


def write_images(images: Iterable[np.ndarray], names: Sequence[str], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for img, name in zip(images, names):
        path = out / name
        write_png(img, path)
        paths.append(path)
    return paths


def content_hash(arr: np.ndarray) -> str:
    """SHA-256 over dtype, shape and bytes of an array."""
    arr = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(f"{arr.dtype.str}{arr.shape}".encode())
    h.update(arr.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# feature files
#
# b"FEAT" | u16 version | u64 N | u64 D | 32-byte encoder hash | N*D <f4 | u32 crc32

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1
_FEAT_HEADER = struct.Struct("<4sHQQ32s")


def write_features(features: np.ndarray, encoder_hash: str | bytes, path) -> None:
    feats = np.asarray(features)
    if feats.ndim != 2:
        raise InputError(f"features must be N x D, got shape {feats.shape}")
    digest = bytes.fromhex(encoder_hash) if isinstance(encoder_hash, str) else bytes(encoder_hash)
    if len(digest) != 32:
        raise InputError("encoder hash must be 32 bytes (SHA-256)")
    n, d = feats.shape
    body = _FEAT_HEADER.pack(FEAT_MAGIC, FEAT_VERSION, n, d, digest)
    body += np.ascontiguousarray(feats, dtype="<f4").tobytes()
    Path(path).write_bytes(body + struct.pack("<I", binascii.crc32(body) & 0xFFFFFFFF))


def read_features(path) -> tuple[np.ndarray, str]:
    """Returns (features as float32 N x D, encoder hash hex)."""
    blob = Path(path).read_bytes()
    if len(blob) < _FEAT_HEADER.size + 4:
        raise ChecksumError(f"{path}: truncated feature file")
    magic, version, n, d, digest = _FEAT_HEADER.unpack_from(blob)
    if magic != FEAT_MAGIC:
        raise ChecksumError(f"{path}: bad magic {magic!r}")
    if version != FEAT_VERSION:
        raise ChecksumError(f"{path}: unsupported version {version}")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if len(body) != _FEAT_HEADER.size + 4 * n * d:
        raise ChecksumError(f"{path}: header declares {n}x{d} but body length disagrees")
    if binascii.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: CRC32 mismatch")
    feats = np.frombuffer(body, dtype="<f4", offset=_FEAT_HEADER.size).reshape(n, d)
    return feats.astype(np.float32), digest.hex()


# ---------------------------------------------------------------------------
# config files and key=value option strings


def parse_options(text: str, types: dict) -> dict:
    """``key=value,key=value`` -> dict, converting with ``types[key]``."""
    out = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        key, eq, value = item.partition("=")
        key = key.strip()
        if not eq or key not in types:
            raise ConfigError(f"unknown option {key!r}; valid keys: {', '.join(sorted(types))}")
        try:
            out[key] = types[key](value.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return out


def load_json_config(path, allowed: Iterable[str]) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    allowed = set(allowed)
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(allowed))}")
    return data


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], comment: str | None = None) -> None:
    """CSV with an optional leading ``# comment`` line; floats written with repr()."""
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
