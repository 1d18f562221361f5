"""Image and mask files addressed by paths relative to a dataset root."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image


class ImageStore:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def path(self, ref: str) -> Path:
        return self.root / ref

    def exists(self, ref: str) -> bool:
        return self.path(ref).is_file()

    def read_image(self, ref: str) -> np.ndarray:
        """Return an (H, W, 3) uint8 array."""
        with Image.open(self.path(ref)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()

    def write_image(self, ref: str, pixels: np.ndarray) -> str:
        pixels = np.asarray(pixels, dtype=np.uint8)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) image, got shape {pixels.shape}")
        dest = self.path(ref)
        dest.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels).save(dest, format="PNG")
        return ref

    def read_mask(self, ref: str) -> np.ndarray:
        """Return an (H, W) boolean mask."""
        with Image.open(self.path(ref)) as im:
            values = np.asarray(im.convert("L"), dtype=np.uint8)
        return values > 127

    def write_mask(self, ref: str, mask: np.ndarray) -> str:
        """Masks are single-channel PNGs holding only 0 and 255."""
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError(f"expected an (H, W) mask, got shape {mask.shape}")
        dest = self.path(ref)
        dest.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(dest, format="PNG")
        return ref

    def image_size(self, ref: str) -> tuple[int, int]:
        """(width, height) of a stored image."""
        with Image.open(self.path(ref)) as im:
            return im.size
