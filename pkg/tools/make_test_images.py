#!/usr/bin/env python3
"""Regenerate the bundled test images (deterministic).

Twelve 128x128 RGB PNGs with photography-like statistics: a 1/f
spectral base with soft shapes and mild sensor noise (img01..img10),
plus two oriented-texture images (img11, img12) whose descriptors are
far from those of random noise. Scene images are normalized so the
mean-subtracted RGB pixel norm has RMS near 80, the scale the default
energy constants are tuned to.
"""

import os

import numpy as np
from PIL import Image

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "preimage", "data", "images")
SIZE = 128


def scene(seed: int, n: int = SIZE) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    f = np.fft.fftfreq(n)[:, None] ** 2 + np.fft.fftfreq(n)[None, :] ** 2
    amp = 1.0 / (f + (1.5 / n) ** 2) ** 0.9
    base_phase = rng.uniform(size=(n, n))
    chans = []
    for _ in range(3):
        spec = amp * np.exp(2j * np.pi * (base_phase + 0.15 * rng.uniform(size=(n, n))))
        b = np.real(np.fft.ifft2(spec))
        chans.append((b - b.mean()) / b.std())
    img = np.stack(chans, axis=-1)
    yy, xx = np.mgrid[0:n, 0:n]
    for _ in range(7):
        cx, cy = rng.uniform(8, n - 8, 2)
        r = rng.uniform(8, 34)
        if rng.integers(0, 2) == 0:
            mask = ((xx - cx) ** 2 + (yy - cy) ** 2) < r * r
        else:
            mask = (np.abs(xx - cx) < r) & (np.abs(yy - cy) < r * rng.uniform(0.4, 1.2))
        img[mask] = img[mask] * 0.35 + rng.uniform(-2.0, 2.0, 3)
    img += 0.35 * rng.normal(size=img.shape)
    img = (img - img.mean()) / img.std() * 46.0 + 128.0
    return np.clip(img, 0, 255)


def grating(seed: int, amp: float, wob: float, n: int = SIZE) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    yy, xx = np.mgrid[0:n, 0:n].astype(float)
    th = 0.8 * np.sin(2 * np.pi * yy / n * 1.3) + 1.1 * np.cos(2 * np.pi * xx / n * 0.9)
    phase = (xx * np.cos(th) + yy * np.sin(th)) * 0.55
    img = 128 + amp * np.sin(phase) + wob * np.sin(2 * np.pi * (xx + yy) / n * 0.8)
    img += 1.5 * rng.normal(size=(n, n))
    img = np.clip(img, 0, 255)
    return np.repeat(img[:, :, None], 3, axis=2)


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    images = {f"img{i:02d}": scene(i) for i in range(1, 11)}
    images["img11"] = grating(5, amp=12.0, wob=14.0)
    images["img12"] = grating(9, amp=18.0, wob=10.0)
    for name, arr in images.items():
        path = os.path.join(OUT_DIR, f"{name}.png")
        Image.fromarray(np.round(arr).astype(np.uint8), mode="RGB").save(path)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
