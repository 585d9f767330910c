"""Center-surround auditory salience maps over log spectrograms.

Three channels are derived from the input: intensity (the spectrogram itself),
frequency contrast (difference-of-Gaussians across bins, elongated in time),
and temporal onsets (rectified Gaussian derivative along time, elongated in
frequency). Each channel is decomposed into a Gaussian pyramid, differenced
across center/surround scale pairs, peak-promoted, and summed into one
conspicuity map per channel at quarter (pyramid level 2) resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import ndimage

from .audio import Spectrogram


class ConfigError(Exception):
    """Salience configuration violates its structural constraints."""


SALIENCE_CHANNELS = ("intensity", "frequency", "temporal")
_SUMMARY_STATS = ("peak", "mean", "freq_skew", "time_skew", "peak_time_s", "peak_freq_hz")

SUMMARY_KEYS = tuple(
    f"salience_{channel}_{stat}" for channel in SALIENCE_CHANNELS for stat in _SUMMARY_STATS
)

_MIN_INPUT = 64
_OUTPUT_LEVEL = 2

_PYRAMID_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(slots=True)
class SalienceConfig:
    """Pyramid depth, center/surround pairing, and kernel geometry."""

    pyramid_levels: int = 7
    center_levels: tuple[int, ...] = (2, 3)
    surround_deltas: tuple[int, ...] = (2, 3)
    center_sigma: float = 1.0
    surround_sigma: float = 4.0
    elongation: float = 8.0
    normalization: str = "peak_promotion"

    def validate(self) -> None:
        if self.pyramid_levels < 2:
            raise ConfigError("pyramid_levels must be at least 2")
        if not self.center_levels or min(self.center_levels) < 0:
            raise ConfigError("center_levels must be nonnegative and nonempty")
        if not self.surround_deltas or min(self.surround_deltas) < 1:
            raise ConfigError("surround_deltas must be positive and nonempty")
        if max(self.center_levels) + max(self.surround_deltas) >= self.pyramid_levels:
            raise ConfigError("deepest surround level must stay inside the pyramid")
        if self.center_sigma <= 0 or self.surround_sigma <= self.center_sigma:
            raise ConfigError("need 0 < center_sigma < surround_sigma")
        if self.elongation < 1.0:
            raise ConfigError("elongation must be >= 1")
        if self.normalization != "peak_promotion":
            raise ConfigError(f"unknown normalization {self.normalization!r}")


@dataclass(slots=True)
class SalienceMaps:
    """Per-channel conspicuity maps sharing one quarter-resolution grid."""

    intensity: np.ndarray
    frequency: np.ndarray
    temporal: np.ndarray
    freq_cell_hz: float
    time_cell_s: float

    def __post_init__(self) -> None:
        shapes = {self.intensity.shape, self.frequency.shape, self.temporal.shape}
        if len(shapes) != 1:
            raise ValueError("the three maps must share one shape")
        for m in (self.intensity, self.frequency, self.temporal):
            if not np.all(np.isfinite(m)) or np.min(m) < 0:
                raise ValueError("maps must be finite and nonnegative")

    def channels(self) -> Mapping[str, np.ndarray]:
        return {
            "intensity": self.intensity,
            "frequency": self.frequency,
            "temporal": self.temporal,
        }


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled normalized Gaussian, radius ceil(3*sigma)."""
    radius = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_derivative_kernel(sigma: float) -> np.ndarray:
    """Odd first-derivative profile, L1-normalized."""
    radius = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = -x * np.exp(-(x**2) / (2.0 * sigma**2))
    return k / np.abs(k).sum()


def _separable_filter(mat: np.ndarray, k_freq: np.ndarray, k_time: np.ndarray) -> np.ndarray:
    out = ndimage.convolve1d(mat, k_freq, axis=0, mode="nearest")
    return ndimage.convolve1d(out, k_time, axis=1, mode="nearest")


def _downsample(mat: np.ndarray) -> np.ndarray:
    blurred = _separable_filter(mat, _PYRAMID_KERNEL, _PYRAMID_KERNEL)
    return blurred[::2, ::2]


def _pyramid(mat: np.ndarray, levels: int) -> list[np.ndarray]:
    out = [mat]
    while len(out) < levels:
        out.append(_downsample(out[-1]))
    return out


def _resize_axis(mat: np.ndarray, n_dst: int, axis: int) -> np.ndarray:
    n_src = mat.shape[axis]
    if n_src == n_dst:
        return mat
    if n_src == 1:
        return np.repeat(mat, n_dst, axis=axis)
    coords = np.linspace(0.0, n_src - 1.0, n_dst)
    lo = np.floor(coords).astype(int)
    hi = np.minimum(lo + 1, n_src - 1)
    frac = coords - lo
    shape = [1] * mat.ndim
    shape[axis] = n_dst
    f = frac.reshape(shape)
    return np.take(mat, lo, axis=axis) * (1.0 - f) + np.take(mat, hi, axis=axis) * f


def resize_linear(mat: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Separable linear resampling onto the target shape (corner-aligned)."""
    return _resize_axis(_resize_axis(mat, shape[0], 0), shape[1], 1)


def level_shape(shape: tuple[int, int], level: int) -> tuple[int, int]:
    rows, cols = shape
    for _ in range(level):
        rows = -(-rows // 2)
        cols = -(-cols // 2)
    return rows, cols


def _channel_images(base: np.ndarray, cfg: SalienceConfig) -> dict[str, np.ndarray]:
    g_center = gaussian_kernel(cfg.center_sigma)
    g_surround = gaussian_kernel(cfg.surround_sigma)
    g_elong = gaussian_kernel(cfg.center_sigma * cfg.elongation)
    d_time = gaussian_derivative_kernel(cfg.center_sigma)
    contrast = _separable_filter(base, g_center, g_elong) - _separable_filter(
        base, g_surround, g_elong
    )
    onsets = np.abs(_separable_filter(base, g_elong, d_time))
    return {"intensity": base, "frequency": contrast, "temporal": onsets}


def _conspicuity(img: np.ndarray, cfg: SalienceConfig, out_shape: tuple[int, int]) -> np.ndarray:
    pyr = _pyramid(img, cfg.pyramid_levels)
    acc = np.zeros(out_shape)
    for center in cfg.center_levels:
        for delta in cfg.surround_deltas:
            surround = pyr[center + delta]
            cs = np.abs(pyr[center] - resize_linear(surround, pyr[center].shape))
            peak = cs.max()
            if peak <= 0.0:
                continue
            cs = cs / peak
            weight = (cs.max() - cs.mean()) ** 2  # promotes maps with sparse peaks
            acc += resize_linear(cs * weight, out_shape)
    return acc


def salience_maps(spec: Spectrogram, cfg: SalienceConfig | None = None) -> SalienceMaps:
    """Compute the three conspicuity maps for a log-compressed spectrogram.

    Inputs smaller than 64x64 are padded by edge replication before analysis.
    """
    cfg = cfg or SalienceConfig()
    cfg.validate()
    if not spec.log_compressed:
        raise ValueError("salience expects a log-compressed spectrogram")
    base = np.asarray(spec.values, dtype=np.float64)
    pad_rows = max(0, _MIN_INPUT - base.shape[0])
    pad_cols = max(0, _MIN_INPUT - base.shape[1])
    if pad_rows or pad_cols:
        base = np.pad(base, ((0, pad_rows), (0, pad_cols)), mode="edge")
    out_shape = level_shape(base.shape, _OUTPUT_LEVEL)
    images = _channel_images(base, cfg)
    maps = {name: _conspicuity(img, cfg, out_shape) for name, img in images.items()}
    scale = 2**_OUTPUT_LEVEL
    return SalienceMaps(
        intensity=maps["intensity"],
        frequency=maps["frequency"],
        temporal=maps["temporal"],
        freq_cell_hz=spec.freq_bin_hz * scale,
        time_cell_s=spec.frame_hop_s * scale,
    )


def _index_skewness(marginal: np.ndarray) -> float:
    total = marginal.sum()
    if total <= 0.0:
        return 0.0
    p = marginal / total
    idx = np.arange(marginal.size, dtype=np.float64)
    mean = float(np.sum(p * idx))
    var = float(np.sum(p * (idx - mean) ** 2))
    if var <= 1e-24:
        return 0.0
    third = float(np.sum(p * (idx - mean) ** 3))
    return third / var**1.5


def salience_summary(maps: SalienceMaps) -> dict[str, float]:
    """Reduce each map to six named scalars (18 keys total, see SUMMARY_KEYS)."""
    out: dict[str, float] = {}
    for name, mat in maps.channels().items():
        peak = float(mat.max())
        mean = float(mat.mean())
        freq_skew = _index_skewness(mat.sum(axis=1))
        time_skew = _index_skewness(mat.sum(axis=0))
        peak_bin, peak_frame = np.unravel_index(int(np.argmax(mat)), mat.shape)
        out[f"salience_{name}_peak"] = peak
        out[f"salience_{name}_mean"] = mean
        out[f"salience_{name}_freq_skew"] = freq_skew
        out[f"salience_{name}_time_skew"] = time_skew
        out[f"salience_{name}_peak_time_s"] = peak_frame * maps.time_cell_s
        out[f"salience_{name}_peak_freq_hz"] = peak_bin * maps.freq_cell_hz
    return out


def write_pgm(mat: np.ndarray, path) -> None:
    """Dump a map as an 8-bit binary PGM for visual inspection."""
    m = np.asarray(mat, dtype=np.float64)
    peak = m.max()
    scaled = (m / peak * 255.0).astype(np.uint8) if peak > 0 else np.zeros_like(m, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii"))
        fh.write(scaled.tobytes())
