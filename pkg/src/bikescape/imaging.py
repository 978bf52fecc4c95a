"""Raster helpers shared across the pipeline.

Images are numpy uint8 arrays of shape (H, W, 3); binary masks are uint8
arrays of shape (H, W) with values in {0, 1}. PNG is the only on-disk
format so artifact bytes stay reproducible.
"""

from __future__ import annotations

import base64
import hashlib
import io
from pathlib import Path

import numpy as np
from PIL import Image


def to_image(data: np.ndarray) -> np.ndarray:
    """Coerce an array into a (H, W, 3) uint8 image, validating shape."""
    arr = np.asarray(data)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {arr.shape}")
    return arr.astype(np.uint8, copy=False)


def to_mask(data: np.ndarray) -> np.ndarray:
    """Coerce an array into a (H, W) uint8 binary mask with values {0, 1}."""
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ValueError(f"expected (H, W) mask, got shape {arr.shape}")
    arr = (arr > 0).astype(np.uint8)
    return arr


def png_bytes(image: np.ndarray) -> bytes:
    """Encode an image or mask to PNG bytes (deterministic for fixed pixels)."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        pil = Image.fromarray((arr * 255).astype(np.uint8) if arr.max(initial=0) <= 1 else arr, "L")
    else:
        pil = Image.fromarray(to_image(arr), "RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def image_from_bytes(data: bytes) -> np.ndarray:
    pil = Image.open(io.BytesIO(data)).convert("RGB")
    return np.asarray(pil, dtype=np.uint8)


def mask_from_bytes(data: bytes) -> np.ndarray:
    pil = Image.open(io.BytesIO(data)).convert("L")
    return to_mask(np.asarray(pil))


def load_image(path: str | Path) -> np.ndarray:
    return image_from_bytes(Path(path).read_bytes())


def save_png(image: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(png_bytes(image))


def b64_of(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64_to_bytes(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def image_digest(image: np.ndarray) -> str:
    """Content hash of raw pixel data (independent of PNG encoder settings)."""
    arr = np.ascontiguousarray(np.asarray(image))
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()
