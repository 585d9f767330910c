"""Shared signal synthesis and WAV helpers for the test suite."""

from __future__ import annotations

import io
import struct
import wave

import numpy as np
import pytest

from soundmem.audio import AudioClip

SR = 44100


def tone(freq: float, dur_s: float = 2.0, sr: int = SR, amp: float = 0.8) -> np.ndarray:
    t = np.arange(int(sr * dur_s)) / sr
    return amp * np.sin(2.0 * np.pi * freq * t)


def white_noise(dur_s: float = 2.0, sr: int = SR, amp: float = 0.3, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.clip(amp * rng.standard_normal(int(sr * dur_s)), -1.0, 1.0)


def faded(x: np.ndarray, fade_s: float = 0.15, sr: int = SR) -> np.ndarray:
    n = int(fade_s * sr)
    env = np.ones(x.size)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n) / n)
    env[:n] = ramp
    env[-n:] = ramp[::-1]
    return x * env


def clip_of(x: np.ndarray, clip_id: str = "clip", sr: int = SR) -> AudioClip:
    return AudioClip(clip_id, sr, np.clip(x, -1.0, 1.0))


def make_wav_bytes(
    samples: np.ndarray,
    rate: int = SR,
    bits: int = 16,
    channels: int = 1,
) -> bytes:
    """Assemble WAV bytes by hand so the decoder is exercised independently."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] not in (1, 2):
        raise ValueError("expected [channels, n] samples")
    if samples.shape[0] != channels:
        raise ValueError("channel count mismatch")
    interleaved = samples.T.reshape(-1)
    if bits == 16:
        fmt_code, block = 1, 2 * channels
        payload = (np.clip(interleaved, -1, 1) * 32767.0).astype("<i2").tobytes()
    elif bits == 24:
        fmt_code, block = 1, 3 * channels
        vals = (np.clip(interleaved, -1, 1) * float((1 << 23) - 1)).astype(np.int64)
        vals = np.where(vals < 0, vals + (1 << 24), vals)
        raw = np.zeros((vals.size, 3), dtype=np.uint8)
        raw[:, 0] = vals & 0xFF
        raw[:, 1] = (vals >> 8) & 0xFF
        raw[:, 2] = (vals >> 16) & 0xFF
        payload = raw.tobytes()
    elif bits == 32:
        fmt_code, block = 3, 4 * channels
        payload = interleaved.astype("<f4").tobytes()
    else:
        raise ValueError(bits)
    fmt = struct.pack(
        "<HHIIHH", fmt_code, channels, rate, rate * block, block, bits
    )
    chunks = b"".join(
        [
            b"fmt ",
            struct.pack("<I", len(fmt)),
            fmt,
            b"data",
            struct.pack("<I", len(payload)),
            payload,
            b"" if len(payload) % 2 == 0 else b"\x00",
        ]
    )
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


def small_wav(freq: float = 440.0, dur_s: float = 0.05, rate: int = 8000) -> bytes:
    """Tiny valid WAV for service tests (uses the stdlib writer as a cross-check)."""
    t = np.arange(int(rate * dur_s)) / rate
    pcm = (0.5 * np.sin(2.0 * np.pi * freq * t) * 32767.0).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())
    return buf.getvalue()


@pytest.fixture
def pool_402() -> list[str]:
    return [f"sound_{i:04d}" for i in range(402)]
