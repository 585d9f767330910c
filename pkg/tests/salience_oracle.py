"""Naive-loop reference implementation of the salience pipeline.

Everything is plain Python loops over the documented definitions so it shares
no code path with the vectorized implementation it checks.
"""

from __future__ import annotations

import numpy as np

from soundmem.salience import SalienceConfig, gaussian_kernel, gaussian_derivative_kernel

_PYR = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def conv1d_nearest(mat: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    k = np.asarray(kernel)
    r = len(k) // 2
    n0, n1 = mat.shape
    out = np.zeros_like(mat, dtype=float)
    for i in range(n0):
        for j in range(n1):
            acc = 0.0
            for kk in range(len(k)):
                if axis == 0:
                    src = min(max(i + r - kk, 0), n0 - 1)
                    acc += k[kk] * mat[src, j]
                else:
                    src = min(max(j + r - kk, 0), n1 - 1)
                    acc += k[kk] * mat[i, src]
            out[i, j] = acc
    return out


def downsample(mat: np.ndarray) -> np.ndarray:
    return conv1d_nearest(conv1d_nearest(mat, _PYR, 0), _PYR, 1)[::2, ::2]


def resize(mat: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    rows, cols = shape
    src_r, src_c = mat.shape
    out = np.zeros(shape)
    for i in range(rows):
        for j in range(cols):
            ri = i * (src_r - 1) / (rows - 1) if rows > 1 and src_r > 1 else 0.0
            cj = j * (src_c - 1) / (cols - 1) if cols > 1 and src_c > 1 else 0.0
            r0, c0 = int(np.floor(ri)), int(np.floor(cj))
            r1, c1 = min(r0 + 1, src_r - 1), min(c0 + 1, src_c - 1)
            fr, fc = ri - r0, cj - c0
            top = mat[r0, c0] * (1 - fc) + mat[r0, c1] * fc
            bot = mat[r1, c0] * (1 - fc) + mat[r1, c1] * fc
            out[i, j] = top * (1 - fr) + bot * fr
    return out


def level_shape(shape: tuple[int, int], level: int) -> tuple[int, int]:
    r, c = shape
    for _ in range(level):
        r = -(-r // 2)
        c = -(-c // 2)
    return r, c


def oracle_maps(values: np.ndarray, cfg: SalienceConfig) -> dict[str, np.ndarray]:
    base = np.array(values, dtype=float)
    pad_r = max(0, 64 - base.shape[0])
    pad_c = max(0, 64 - base.shape[1])
    if pad_r or pad_c:
        padded = np.zeros((base.shape[0] + pad_r, base.shape[1] + pad_c))
        for i in range(padded.shape[0]):
            for j in range(padded.shape[1]):
                padded[i, j] = base[min(i, base.shape[0] - 1), min(j, base.shape[1] - 1)]
        base = padded
    out_shape = level_shape(base.shape, 2)

    g_center = gaussian_kernel(cfg.center_sigma)
    g_surround = gaussian_kernel(cfg.surround_sigma)
    g_elong = gaussian_kernel(cfg.center_sigma * cfg.elongation)
    d_time = gaussian_derivative_kernel(cfg.center_sigma)
    contrast = conv1d_nearest(conv1d_nearest(base, g_center, 0), g_elong, 1) - conv1d_nearest(
        conv1d_nearest(base, g_surround, 0), g_elong, 1
    )
    onsets = np.abs(conv1d_nearest(conv1d_nearest(base, g_elong, 0), d_time, 1))

    maps: dict[str, np.ndarray] = {}
    for name, img in (("intensity", base), ("frequency", contrast), ("temporal", onsets)):
        pyramid = [img]
        while len(pyramid) < cfg.pyramid_levels:
            pyramid.append(downsample(pyramid[-1]))
        acc = np.zeros(out_shape)
        for center in cfg.center_levels:
            for delta in cfg.surround_deltas:
                cs = np.abs(pyramid[center] - resize(pyramid[center + delta], pyramid[center].shape))
                peak = cs.max()
                if peak <= 0:
                    continue
                cs = cs / peak
                weight = (cs.max() - cs.mean()) ** 2
                acc += resize(cs * weight, out_shape)
        maps[name] = acc
    return maps
