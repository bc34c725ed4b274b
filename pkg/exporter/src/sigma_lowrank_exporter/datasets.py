"""Input sampling: synthetic batches or an image folder, resized with a
configurable interpolation.  Everything is seeded so exports replay exactly."""

from __future__ import annotations

from pathlib import Path

import torch
from torchvision.transforms import InterpolationMode
from torchvision.transforms import functional as tvf

_INTERP = {
    "bilinear": InterpolationMode.BILINEAR,
    "bicubic": InterpolationMode.BICUBIC,
}

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm"}


def interpolation_mode(name: str) -> InterpolationMode:
    if name not in _INTERP:
        raise ValueError(f"interpolation must be one of {sorted(_INTERP)}, got {name!r}")
    return _INTERP[name]


def iter_batches(
    dataset: str,
    n: int,
    resolution: int,
    interpolation: str,
    seed: int,
    batch_size: int = 16,
    channels: int = 3,
):
    """Yield float32 batches (B, C, resolution, resolution)."""
    if n < 1:
        raise ValueError("sample count must be >= 1")
    mode = interpolation_mode(interpolation)
    if dataset == "synthetic":
        yield from _synthetic_batches(n, resolution, mode, seed, batch_size, channels)
    else:
        yield from _folder_batches(Path(dataset), n, resolution, mode, batch_size)


def _synthetic_batches(n, resolution, mode, seed, batch_size, channels):
    # generate at a fixed base resolution so the interpolation choice
    # actually participates in the pipeline
    base = max(resolution // 2, 8)
    gen = torch.Generator().manual_seed(seed)
    remaining = n
    while remaining > 0:
        b = min(batch_size, remaining)
        raw = torch.randn(b, channels, base, base, generator=gen)
        yield tvf.resize(raw, [resolution, resolution], interpolation=mode, antialias=True)
        remaining -= b


def _folder_batches(root: Path, n, resolution, mode, batch_size):
    from PIL import Image

    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} not found")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)[:n]
    if not files:
        raise FileNotFoundError(f"no images under {root}")
    batch = []
    for path in files:
        with Image.open(path) as img:
            img = img.convert("RGB")
            tensor = tvf.pil_to_tensor(img).float() / 255.0
        batch.append(tvf.resize(tensor, [resolution, resolution], interpolation=mode, antialias=True))
        if len(batch) == batch_size:
            yield torch.stack(batch)
            batch = []
    if batch:
        yield torch.stack(batch)
