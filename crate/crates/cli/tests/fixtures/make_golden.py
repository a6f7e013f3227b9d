"""Regenerates the golden files for the `hmk mask` tests.

Features are (4, 4, 4) and the mask is 8x8, so every bilinear weight is a
multiple of 0.25 and float32 products are exact regardless of evaluation
order. Run from this directory: python3 make_golden.py
"""

import numpy as np


def resize_bilinear(m, oh, ow):
    h, w = m.shape
    out = np.zeros((oh, ow))
    for i in range(oh):
        sy = min(max((i + 0.5) * h / oh - 0.5, 0.0), h - 1)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        dy = sy - y0
        for j in range(ow):
            sx = min(max((j + 0.5) * w / ow - 0.5, 0.0), w - 1)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            dx = sx - x0
            out[i, j] = ((1 - dy) * (1 - dx) * m[y0, x0] + (1 - dy) * dx * m[y0, x1]
                         + dy * (1 - dx) * m[y1, x0] + dy * dx * m[y1, x1])
    return out


rng = np.random.default_rng(7)
features = rng.uniform(-2.0, 2.0, size=(4, 4, 4)).astype(np.float32)
im_features = rng.uniform(-2.0, 2.0, size=(4, 4, 4)).astype(np.float32)
mask = np.zeros((8, 8), dtype=np.uint8)
mask[1:5, 2:7] = 1
mask[6, 0] = 1

tau = resize_bilinear(mask.astype(np.float64), 4, 4).astype(np.float32)
fm = features * tau[None, :, :]
hybrid = np.where(fm != 0, fm, im_features).astype(np.float32)
assert (tau == 0).any() and (tau > 0).any()

np.save("features.npy", features)
np.save("im_features.npy", im_features)
np.save("mask.npy", mask)
np.save("fm_golden.npy", fm)
np.save("hybrid_golden.npy", hybrid)
