"""Writes the SSIM reference pairs and prints scikit-image's scores for them.

Run from this directory: python3 make_pairs.py
"""
import numpy as np
from PIL import Image
from skimage.metrics import structural_similarity

H, W = 128, 64
rng = np.random.default_rng(20240601)
yy, xx = np.mgrid[0:H, 0:W]


def smooth():
    base = np.stack([
        0.5 + 0.4 * np.sin(xx / 7.0 + c) * np.cos(yy / 11.0 - c) for c in range(3)
    ], axis=-1)
    return np.clip(base, 0, 1)


def to_u8(a):
    return np.clip(np.round(a * 255), 0, 255).astype(np.uint8)


a1 = to_u8(smooth())
b1 = to_u8(smooth() + rng.normal(0, 0.08, (H, W, 3)))
a2 = to_u8(rng.uniform(0, 1, (H, W, 3)))
b2 = to_u8(0.7 * a2 / 255.0 + 0.2)
a3 = to_u8((((yy // 8) + (xx // 8)) % 2)[..., None].repeat(3, -1) * 0.8 + 0.1)
b3 = to_u8(rng.uniform(0, 1, (H, W, 3)))

for i, (a, b) in enumerate([(a1, b1), (a2, b2), (a3, b3)], start=1):
    Image.fromarray(a).save(f"pair{i}_a.png")
    Image.fromarray(b).save(f"pair{i}_b.png")
    s = structural_similarity(
        a / 255.0, b / 255.0, channel_axis=-1, data_range=1.0,
        gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
    )
    print(f"pair{i}: {s:.12f}")
