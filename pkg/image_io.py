"""File helpers: PNG frames through pygame, float maps, key-value manifests.

Every writer goes through `atomic_path`, so a failed command never leaves a
half-written file behind.
"""

import contextlib
import logging
import os

import numpy as np

os.environ.setdefault("PYGAME_HIDE_SUPPORT_PROMPT", "1")
os.environ.setdefault("SDL_VIDEODRIVER", "dummy")
import pygame  # noqa: E402

from constants import PNG_LEVELS  # noqa: E402
from errors import DataError  # noqa: E402

logger = logging.getLogger(__name__)

FRAME_SUFFIXES = (".png",)
FLOAT_SUFFIXES = (".pfm", ".npy")


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temporary sibling of `path`; rename it into place on success."""
    path = os.fspath(path)
    folder, name = os.path.split(path)
    stem, suffix = os.path.splitext(name)
    tmp = os.path.join(folder, f".{stem}.partial{suffix}")
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def list_files(folder, suffixes):
    if not os.path.isdir(folder):
        raise DataError(f"not a directory: {folder}")
    names = sorted(n for n in os.listdir(folder)
                   if n.lower().endswith(suffixes) and not n.startswith("."))
    return [os.path.join(folder, n) for n in names]


# -- PNG frames -----------------------------------------------------------------
def load_frame(path):
    """Read an 8-bit RGB PNG as an (H, W, 3) float64 array in [0, 1]."""
    try:
        surface = pygame.image.load(os.fspath(path))
    except (pygame.error, FileNotFoundError) as e:
        raise DataError(f"could not read frame {path}: {e}") from None
    rgb = pygame.surfarray.array3d(surface).transpose(1, 0, 2)
    return rgb.astype(np.float64) / PNG_LEVELS


def quantize(frame):
    """Map [0, 1] floats to 8-bit levels, rounding half to even."""
    return np.rint(np.clip(frame, 0.0, 1.0) * PNG_LEVELS).astype(np.uint8)


def save_frame(path, frame):
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DataError(f"expected an (H, W, 3) frame for {path}, got {frame.shape}")
    surface = pygame.surfarray.make_surface(quantize(frame).transpose(1, 0, 2))
    with atomic_path(path) as tmp:
        pygame.image.save(surface, tmp)


# -- float maps -------------------------------------------------------------------
def save_pfm(path, array):
    """Write a 2-D (grayscale) or (H, W, 3) map as little-endian float32 PFM."""
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == 2:
        tag = b"Pf"
    elif array.ndim == 3 and array.shape[2] == 3:
        tag = b"PF"
    else:
        raise DataError(f"PFM holds 1 or 3 channels, got shape {array.shape}")
    h, w = array.shape[:2]
    header = tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    body = np.flipud(array).astype("<f4").tobytes()
    with atomic_path(path) as tmp:
        with open(tmp, "wb") as f:
            f.write(header + body)


def load_pfm(path):
    try:
        with open(path, "rb") as f:
            tag = f.readline().strip()
            dims = f.readline().split()
            scale = float(f.readline().strip())
            body = f.read()
    except (OSError, ValueError) as e:
        raise DataError(f"could not read float map {path}: {e}") from None
    if tag not in (b"Pf", b"PF") or len(dims) != 2:
        raise DataError(f"{path} is not a PFM file")
    w, h = int(dims[0]), int(dims[1])
    channels = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(body, dtype=dtype)
    if data.size != w * h * channels:
        raise DataError(f"{path}: expected {w * h * channels} values, found {data.size}")
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float64)


def save_array(path, array):
    """Lossless float64 dump used for inspection maps."""
    with atomic_path(path) as tmp:
        with open(tmp, "wb") as f:
            np.save(f, np.asarray(array, dtype=np.float64))


def load_float_map(path):
    path = os.fspath(path)
    if path.lower().endswith(".npy"):
        try:
            return np.load(path).astype(np.float64)
        except (OSError, ValueError) as e:
            raise DataError(f"could not read float map {path}: {e}") from None
    return load_pfm(path)


# -- key-value text -----------------------------------------------------------
def format_value(value):
    if isinstance(value, (tuple, list)):
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(getattr(value, "value", value))


def dump_key_values(mapping):
    return "".join(f"{k} = {format_value(v)}\n" for k, v in mapping.items())


def parse_key_values(text, source="<text>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def write_key_values(path, mapping):
    with atomic_path(path) as tmp:
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(dump_key_values(mapping))


def read_key_values(path):
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise DataError(f"could not read {path}: {e}") from None
    return parse_key_values(text, source=os.fspath(path))
