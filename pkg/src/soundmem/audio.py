"""WAV decoding and the spectrogram front-end shared by all feature extractors."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

DEFAULT_SAMPLE_RATE = 44100
DEFAULT_WINDOW_LEN = 1024
DEFAULT_HOP = 512

LOG_EPSILON = 1e-10
LOG_FLOOR_DB = -80.0

_SPG_MAGIC = b"SPG1"


class DecodeError(Exception):
    """Malformed or truncated WAV container."""


class UnsupportedFormat(Exception):
    """WAV codec outside PCM 16/24-bit or 32-bit float, or more than 2 channels."""


class InsufficientAudio(Exception):
    """Clip too short for the requested transform."""


@dataclass(slots=True)
class AudioClip:
    """Mono audio with samples in [-1, 1], keyed by an opaque id."""

    id: str
    sample_rate: int
    samples: np.ndarray

    def __post_init__(self) -> None:
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("samples must be a nonempty 1-D array")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        peak = float(np.max(np.abs(self.samples)))
        if peak > 1.0 + 1e-9:
            raise ValueError(f"samples exceed [-1, 1] (peak {peak:.6g})")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(slots=True)
class Spectrogram:
    """Magnitude spectrogram, bins along rows and frames along columns."""

    values: np.ndarray
    freq_bin_hz: float
    frame_hop_s: float
    window_len: int
    log_compressed: bool = False

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-D matrix")
        if self.values.shape[0] != self.window_len // 2 + 1:
            raise ValueError("bin count must equal window_len // 2 + 1")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrogram values must be finite")
        if np.min(self.values) < 0.0:
            raise ValueError("spectrogram values must be nonnegative")

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def nyquist_hz(self) -> float:
        return self.freq_bin_hz * (self.window_len // 2)

    @property
    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.freq_bin_hz


def decode_audio(data: bytes, clip_id: str = "clip") -> AudioClip:
    """Decode a RIFF/WAVE byte string into a mono AudioClip.

    Accepts PCM 16/24-bit and IEEE float 32-bit, 1 or 2 channels. Stereo is
    downmixed by channel mean; integer PCM is scaled into [-1, 1].
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DecodeError("missing RIFF/WAVE header")
    fmt: tuple[int, ...] | None = None
    payload: bytes | None = None
    pos = 12
    n = len(data)
    while pos + 8 <= n:
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        if body_start + size > n:
            raise DecodeError(f"chunk {chunk_id!r} overruns the file")
        if chunk_id == b"fmt ":
            if size < 16:
                raise DecodeError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", data, body_start)
        elif chunk_id == b"data":
            payload = data[body_start : body_start + size]
        pos = body_start + size + (size & 1)
    if fmt is None:
        raise DecodeError("missing fmt chunk")
    if payload is None:
        raise DecodeError("missing data chunk")

    audio_format, channels, rate, _byte_rate, _block_align, bits = fmt
    if rate <= 0:
        raise DecodeError("non-positive sample rate")
    if channels not in (1, 2):
        raise UnsupportedFormat(f"{channels} channels not supported")

    if audio_format == 1 and bits == 16:
        usable = len(payload) - len(payload) % 2
        raw = np.frombuffer(payload[:usable], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == 1 and bits == 24:
        usable = len(payload) - len(payload) % 3
        raw = np.frombuffer(payload[:usable], dtype=np.uint8).reshape(-1, 3).astype(np.int64)
        vals = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        vals = np.where(vals >= 1 << 23, vals - (1 << 24), vals)
        samples = vals.astype(np.float64) / float(1 << 23)
    elif audio_format == 3 and bits == 32:
        usable = len(payload) - len(payload) % 4
        raw = np.frombuffer(payload[:usable], dtype="<f4")
        samples = np.clip(raw.astype(np.float64), -1.0, 1.0)
    else:
        raise UnsupportedFormat(f"audio format {audio_format} at {bits} bits not supported")

    if channels == 2:
        usable = samples.size - samples.size % 2
        samples = samples[:usable].reshape(-1, 2).mean(axis=1)
    if samples.size == 0:
        raise DecodeError("empty data chunk")
    return AudioClip(clip_id, int(rate), samples)


def resample_clip(clip: AudioClip, target_rate: int = DEFAULT_SAMPLE_RATE) -> AudioClip:
    """Resample by linear interpolation; returns the clip unchanged if rates match."""
    if clip.sample_rate == target_rate:
        return clip
    n_out = max(1, round(clip.samples.size * target_rate / clip.sample_rate))
    t_out = np.arange(n_out) / target_rate
    t_in = np.arange(clip.samples.size) / clip.sample_rate
    return AudioClip(clip.id, target_rate, np.interp(t_out, t_in, clip.samples))


def _periodic_hann(n: int) -> np.ndarray:
    # periodic variant keeps integer-bin tones leak-free beyond adjacent bins
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(
    clip: AudioClip,
    window_len: int = DEFAULT_WINDOW_LEN,
    hop: int = DEFAULT_HOP,
) -> Spectrogram:
    """Hann-windowed magnitude STFT keeping bins 0..window_len/2."""
    if window_len < 2 or window_len & (window_len - 1):
        raise ValueError("window_len must be a power of two")
    if not 0 < hop <= window_len:
        raise ValueError("hop must satisfy 0 < hop <= window_len")
    x = clip.samples
    if x.size < window_len:
        raise InsufficientAudio(
            f"clip has {x.size} samples, below one window of {window_len}"
        )
    frames = np.lib.stride_tricks.sliding_window_view(x, window_len)[::hop]
    spec = np.abs(np.fft.rfft(frames * _periodic_hann(window_len), axis=1)).T
    return Spectrogram(
        values=spec,
        freq_bin_hz=clip.sample_rate / window_len,
        frame_hop_s=hop / clip.sample_rate,
        window_len=window_len,
    )


def log_compress(spec: Spectrogram, floor_db: float = LOG_FLOOR_DB) -> Spectrogram:
    """Map magnitudes to dB, clamp below floor_db, rescale affinely to [0, 1].

    A constant input has no dB range and maps to all zeros.
    """
    if spec.log_compressed:
        raise ValueError("spectrogram is already log-compressed")
    db = 20.0 * np.log10(np.maximum(spec.values, LOG_EPSILON))
    db = np.maximum(db, floor_db)
    lo = db.min()
    span = db.max() - lo
    scaled = (db - lo) / span if span > 0 else np.zeros_like(db)
    return Spectrogram(
        values=scaled,
        freq_bin_hz=spec.freq_bin_hz,
        frame_hop_s=spec.frame_hop_s,
        window_len=spec.window_len,
        log_compressed=True,
    )


def write_spectrogram_matrix(values: np.ndarray, path) -> None:
    """Dump a matrix as SPG1: 16-byte header (magic, u32 rows, u32 cols, u32 pad), f32 LE."""
    mat = np.ascontiguousarray(values, dtype="<f4")
    if mat.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    header = _SPG_MAGIC + struct.pack("<III", mat.shape[0], mat.shape[1], 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(mat.tobytes())


def read_spectrogram_matrix(path) -> np.ndarray:
    """Read a matrix written by write_spectrogram_matrix."""
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != _SPG_MAGIC:
            raise DecodeError("bad SPG1 header")
        rows, cols, _pad = struct.unpack_from("<III", header, 4)
        data = np.frombuffer(fh.read(rows * cols * 4), dtype="<f4")
    if data.size != rows * cols:
        raise DecodeError("truncated SPG1 data")
    return data.reshape(rows, cols).astype(np.float64)
