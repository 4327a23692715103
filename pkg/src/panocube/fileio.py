"""Deterministic file I/O: PNG rasters, checkpoints, configs, manifests.

PNG is read and written directly (zlib + the standard row filters) so that
8- and 16-bit grayscale and RGB all round-trip exactly; common library
bindings truncate 16-bit RGB to 8 bits on read. Only non-interlaced
depth-8/16 gray and truecolor images are supported.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .geometry import FACE_FILE_NAMES, Cubemap, FaceId

__all__ = [
    "ImageIOError",
    "ConfigError",
    "RunConfig",
    "DatasetManifest",
    "load_image",
    "save_image",
    "load_cubemap",
    "save_cubemap",
    "save_checkpoint",
    "load_checkpoint",
    "read_config",
    "write_config",
    "read_manifest",
    "write_manifest",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "MANIFEST_VERSION",
]


class ImageIOError(OSError):
    """Unreadable or unsupported image file."""


class ConfigError(ValueError):
    """Malformed or invalid configuration input."""


_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _chunk(kind: bytes, data: bytes) -> bytes:
    return (
        struct.pack(">I", len(data))
        + kind
        + data
        + struct.pack(">I", zlib.crc32(kind + data) & 0xFFFFFFFF)
    )


def _write_png(path: Path, arr: np.ndarray, bit_depth: int) -> None:
    h, w, c = arr.shape
    color_type = 0 if c == 1 else 2
    raw = bytearray()
    if bit_depth == 8:
        rows = arr.astype(np.uint8)
        for r in range(h):
            raw.append(0)
            raw.extend(rows[r].tobytes())
    else:
        rows = arr.astype(">u2")
        for r in range(h):
            raw.append(0)
            raw.extend(rows[r].tobytes())
    ihdr = struct.pack(">IIBBBBB", w, h, bit_depth, color_type, 0, 0, 0)
    payload = zlib.compress(bytes(raw), 6)
    path.write_bytes(
        _PNG_SIG + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", payload) + _chunk(b"IEND", b"")
    )


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw: bytes, h: int, w: int, channels: int, sample_bytes: int, path) -> np.ndarray:
    stride = w * channels * sample_bytes
    bpp = channels * sample_bytes
    if len(raw) != h * (stride + 1):
        raise ImageIOError(f"{path}: IDAT size mismatch")
    out = bytearray(h * stride)
    prev = bytes(stride)
    pos = 0
    for r in range(h):
        ftype = raw[pos]
        line = bytearray(raw[pos + 1 : pos + 1 + stride])
        pos += 1 + stride
        if ftype == 0:
            pass
        elif ftype == 1:  # sub
            for i in range(bpp, stride):
                line[i] = (line[i] + line[i - bpp]) & 0xFF
        elif ftype == 2:  # up
            for i in range(stride):
                line[i] = (line[i] + prev[i]) & 0xFF
        elif ftype == 3:  # average
            for i in range(stride):
                left = line[i - bpp] if i >= bpp else 0
                line[i] = (line[i] + ((left + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:  # paeth
            for i in range(stride):
                left = line[i - bpp] if i >= bpp else 0
                upleft = prev[i - bpp] if i >= bpp else 0
                line[i] = (line[i] + _paeth(left, prev[i], upleft)) & 0xFF
        else:
            raise ImageIOError(f"{path}: unknown PNG filter {ftype}")
        out[r * stride : (r + 1) * stride] = line
        prev = bytes(line)
    dtype = np.uint8 if sample_bytes == 1 else np.dtype(">u2")
    return np.frombuffer(bytes(out), dtype=dtype).reshape(h, w, channels)


def _read_png(path: Path) -> tuple[np.ndarray, int]:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
    if blob[:8] != _PNG_SIG:
        raise ImageIOError(f"{path}: not a PNG file")
    pos = 8
    ihdr = None
    idat = bytearray()
    while pos + 8 <= len(blob):
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        kind = blob[pos + 4 : pos + 8]
        data = blob[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if kind == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", data)
        elif kind == b"IDAT":
            idat.extend(data)
        elif kind == b"IEND":
            break
    if ihdr is None:
        raise ImageIOError(f"{path}: missing IHDR")
    w, h, depth, color, _comp, _filt, interlace = ihdr
    if interlace != 0:
        raise ImageIOError(f"{path}: interlaced PNG not supported")
    if depth not in (8, 16) or color not in (0, 2):
        raise ImageIOError(
            f"{path}: unsupported PNG (depth {depth}, color type {color}); "
            "need 8- or 16-bit grayscale or RGB"
        )
    channels = 1 if color == 0 else 3
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise ImageIOError(f"{path}: corrupt image data ({exc})") from exc
    arr = _unfilter(raw, h, w, channels, depth // 8, path)
    return arr.astype(np.uint16 if depth == 16 else np.uint8), depth


def load_image(path) -> np.ndarray:
    """PNG to float (H, W, C) in [0, 1]; 255 or 65535 maps to exactly 1.0."""
    arr, depth = _read_png(Path(path))
    peak = 255.0 if depth == 8 else 65535.0
    return arr.astype(np.float64) / peak


def save_image(raster: np.ndarray, path, bit_depth: int = 8) -> None:
    """Float [0, 1] raster to PNG; values quantized by round-half-up."""
    if bit_depth not in (8, 16):
        raise ImageIOError(f"{path}: bit depth must be 8 or 16")
    arr = np.asarray(raster, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ImageIOError(f"{path}: raster must be (H, W) or (H, W, 1|3)")
    if not np.all(np.isfinite(arr)):
        raise ImageIOError(f"{path}: raster has non-finite values")
    peak = 255.0 if bit_depth == 8 else 65535.0
    q = np.floor(np.clip(arr, 0.0, 1.0) * peak + 0.5)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_png(path, q, bit_depth)


def load_cubemap(directory) -> Cubemap:
    """Load front/right/back/left/up/down .png from a directory."""
    directory = Path(directory)
    faces = []
    for name in FACE_FILE_NAMES:
        p = directory / f"{name}.png"
        if not p.exists():
            raise ImageIOError(f"{directory}: missing face file {name}.png")
        faces.append(load_image(p))
    shapes = {f.shape for f in faces}
    if len(shapes) != 1:
        raise ImageIOError(f"{directory}: face sizes differ: {sorted(shapes)}")
    return Cubemap(np.stack(faces))


def save_cubemap(cube: Cubemap, directory, bit_depth: int = 8) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for face in FaceId:
        save_image(cube.face(face), directory / f"{FACE_FILE_NAMES[int(face)]}.png", bit_depth)


CHECKPOINT_MAGIC = b"PANOCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Named float32 tensor table with a versioned binary header.

    Layout: magic, u32 version, u32 count, then per tensor (sorted by name):
    u16 name length, utf-8 name, u8 dtype tag (0 = f32), u8 ndim,
    u32 dims, row-major little-endian float32 payload.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<II", CHECKPOINT_VERSION, len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
        enc = name.encode("utf-8")
        out += struct.pack("<H", len(enc)) + enc
        out += struct.pack("<BB", 0, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.astype("<f4").tobytes()
    path.write_bytes(bytes(out))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ImageIOError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise ImageIOError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        dtype_tag, ndim = struct.unpack_from("<BB", blob, pos)
        pos += 2
        if dtype_tag != 0:
            raise ImageIOError(f"{path}: unsupported tensor dtype tag {dtype_tag}")
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(shape)
        pos += 4 * n
        tensors[name] = arr.astype(np.float32)
    return tensors


@dataclass
class RunConfig:
    """Sizes and settings shared by the toy model, trainer, and CLI."""

    depth: int = 4
    channels: int = 24
    heads: int = 2
    rope_base: float = 10000.0
    vocab_size: int = 8
    cond_tokens: int = 4
    face_size: int = 16
    face_channels: int = 3
    patch_size: int = 2
    steps: int = 50
    lr: float = 0.02
    seed: int = 0
    train_steps: int = 2000
    batch_size: int = 4
    scenes: int = 64
    optimizer: str = "sgd"
    blend_iterations: int = 200
    band_frac: float = 0.01
    value_scale: str = "byte"

    @property
    def tokens_per_face(self) -> int:
        g = self.face_size // self.patch_size
        return g * g

    def validate(self) -> "RunConfig":
        positive_ints = (
            "depth", "channels", "heads", "vocab_size", "cond_tokens", "face_size",
            "face_channels", "patch_size", "steps", "train_steps", "batch_size",
            "scenes", "blend_iterations",
        )
        for name in positive_ints:
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr!r}")
        if self.rope_base <= 1:
            raise ConfigError(f"rope_base must be > 1, got {self.rope_base!r}")
        if self.channels % self.heads != 0:
            raise ConfigError("channels must be divisible by heads")
        if (self.channels // self.heads) % 6 != 0:
            raise ConfigError("head dim (channels / heads) must be divisible by 6")
        if self.face_size % self.patch_size != 0:
            raise ConfigError("face_size must be divisible by patch_size")
        if self.face_channels not in (1, 3):
            raise ConfigError("face_channels must be 1 or 3")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if not 0.0 < self.band_frac <= 0.5:
            raise ConfigError("band_frac must be in (0, 0.5]")
        if self.value_scale not in ("unit", "byte"):
            raise ConfigError("value_scale must be unit or byte")
        return self


_CONFIG_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, text: str, lineno: int):
    kind = _CONFIG_TYPES[key]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: bad value for {key}: {text!r}") from exc


def read_config(path) -> RunConfig:
    """Parse a key = value text config; unknown and duplicate keys are errors."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
    seen: dict[str, object] = {}
    for lineno, line in enumerate(lines, start=1):
        bare = line.split("#", 1)[0].strip()
        if not bare:
            continue
        if "=" not in bare:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = (part.strip() for part in bare.partition("="))
        if key not in _CONFIG_TYPES:
            valid = ", ".join(sorted(_CONFIG_TYPES))
            raise ConfigError(f"line {lineno}: unknown key {key!r}; valid keys: {valid}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen[key] = _parse_value(key, value, lineno)
    return RunConfig(**seen).validate()


def write_config(cfg: RunConfig, path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


MANIFEST_VERSION = "1"


@dataclass
class DatasetManifest:
    seed: int
    entries: list[dict]
    generator_version: str = MANIFEST_VERSION

    def validate(self, base_dir=None) -> "DatasetManifest":
        ids = [e["scene_id"] for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ConfigError("manifest scene_ids must be unique")
        for e in self.entries:
            if "cond_id" not in e or not isinstance(e["cond_id"], int):
                raise ConfigError(f"manifest entry {e.get('scene_id')}: missing integer cond_id")
            path = e.get("cubemap_dir") or e.get("erp_path")
            if path is None:
                raise ConfigError(f"manifest entry {e.get('scene_id')}: no data path")
            if base_dir is not None and not (Path(base_dir) / path).exists():
                raise ConfigError(f"manifest entry {e.get('scene_id')}: {path} does not exist")
        return self


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}") from exc
    try:
        manifest = DatasetManifest(
            seed=int(data["seed"]),
            entries=list(data["entries"]),
            generator_version=str(data.get("generator_version", MANIFEST_VERSION)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed manifest ({exc})") from exc
    return manifest.validate(base_dir=path.parent)


def write_manifest(manifest: DatasetManifest, path) -> None:
    payload = {
        "seed": manifest.seed,
        "generator_version": manifest.generator_version,
        "entries": manifest.entries,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
