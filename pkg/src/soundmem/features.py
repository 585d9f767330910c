"""Acoustic feature battery and the merged per-sound feature table.

Low-level features are computed from one shared spectrogram front-end; the
crowd-rated attributes (causal uncertainty, imageability, familiarity,
valence, arousal, embedding density) are ingested from CSV and joined in.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .audio import (
    DEFAULT_HOP,
    DEFAULT_SAMPLE_RATE,
    DEFAULT_WINDOW_LEN,
    AudioClip,
    Spectrogram,
    log_compress,
    resample_clip,
    stft_magnitude,
)
from .salience import SUMMARY_KEYS, SalienceConfig, salience_maps, salience_summary

_EPS = 1e-12

TAG_LOW = "low_level"
TAG_SALIENCE = "salience"
TAG_HIGH = "high_level"

BAND_EDGES_HZ = {"bass": (20.0, 250.0), "mid": (250.0, 4000.0), "treble": (4000.0, None)}
HPSS_KERNEL = 17

N_FLUX_BANDS = 4
FLUX_HISTOGRAM_BINS = 16

HIGH_LEVEL_COLUMNS = (
    "hcu",
    "imageability",
    "imageability_std",
    "familiarity",
    "familiarity_std",
    "valence",
    "arousal",
    "arousal_std",
    "location_embedding_density",
)

REQUIRED_RATING_COLUMNS = (
    "sound_id",
    "Hcu",
    "imageability",
    "imageability_std",
    "familiarity",
    "familiarity_std",
    "valence",
    "arousal",
    "arousal_std",
    "location_embedding_density",
)

LOW_LEVEL_COLUMNS = (
    "avg_spectral_spread",
    "peak_spectral_spread",
    "avg_spectral_skew",
    "max_energy",
    *(f"avg_flux_band_{i}" for i in range(1, N_FLUX_BANDS + 1)),
    *(f"flux_entropy_band_{i}" for i in range(1, N_FLUX_BANDS + 1)),
    "bass_ratio",
    "mid_ratio",
    "treble_ratio",
    "percussive_harmonic_ratio",
    "pitch_diversity",
    "sharpness",
    "roughness",
    "silence_flag",
)

SALIENCE_COLUMNS = SUMMARY_KEYS

ALL_FEATURE_COLUMNS = LOW_LEVEL_COLUMNS + SALIENCE_COLUMNS + HIGH_LEVEL_COLUMNS


class SchemaError(Exception):
    """Ratings CSV is missing a required column."""


class DuplicateKey(Exception):
    """The same sound id occurs twice where it must be unique."""


def default_column_tags() -> dict[str, str]:
    tags = {name: TAG_LOW for name in LOW_LEVEL_COLUMNS}
    tags.update({name: TAG_SALIENCE for name in SALIENCE_COLUMNS})
    tags.update({name: TAG_HIGH for name in HIGH_LEVEL_COLUMNS})
    return tags


# ---------------------------------------------------------------------------
# spectral moments


def spectral_stats(spec: Spectrogram) -> dict[str, float]:
    """Frame-wise spectral spread/skew (Hz) and peak frame RMS.

    Each frame's magnitudes are normalized into a distribution over bin
    frequencies; averages across frames are weighted by frame energy.
    A silent spectrogram yields all zeros.
    """
    if spec.log_compressed:
        raise ValueError("spectral_stats expects uncompressed magnitudes")
    mags = spec.values
    zeros = {
        "avg_spectral_spread": 0.0,
        "peak_spectral_spread": 0.0,
        "avg_spectral_skew": 0.0,
        "max_energy": 0.0,
    }
    frame_mag = mags.sum(axis=0)
    frame_energy = (mags**2).sum(axis=0)
    if frame_energy.sum() <= _EPS:
        return zeros
    freqs = spec.bin_frequencies
    live = frame_mag > _EPS
    p = mags[:, live] / frame_mag[live]
    mean = (p * freqs[:, None]).sum(axis=0)
    var = (p * (freqs[:, None] - mean) ** 2).sum(axis=0)
    spread = np.sqrt(np.maximum(var, 0.0))
    third = (p * (freqs[:, None] - mean) ** 3).sum(axis=0)
    skew = np.where(var > _EPS, third / np.maximum(var, _EPS) ** 1.5, 0.0)
    weights = frame_energy[live]
    wsum = weights.sum()
    return {
        "avg_spectral_spread": float((weights * spread).sum() / wsum),
        "peak_spectral_spread": float(spread.max()),
        "avg_spectral_skew": float((weights * skew).sum() / wsum),
        "max_energy": float(np.sqrt((mags**2).mean(axis=0)).max()),
    }


# ---------------------------------------------------------------------------
# sub-band flux


def _log_band_indices(spec: Spectrogram, n_bands: int) -> np.ndarray:
    """Assign each bin to one of n_bands log-spaced bands; DC goes to band 0."""
    freqs = spec.bin_frequencies
    f_lo = spec.freq_bin_hz
    f_hi = spec.nyquist_hz
    edges = f_lo * (f_hi / f_lo) ** (np.arange(1, n_bands) / n_bands)
    idx = np.searchsorted(edges, np.maximum(freqs, f_lo), side="right")
    return np.minimum(idx, n_bands - 1)


def _histogram_entropy(values: np.ndarray, bins: int = FLUX_HISTOGRAM_BINS) -> float:
    # range anchored at zero so leading silence cannot re-bin the histogram
    if values.size == 0:
        return 0.0
    hi = float(values.max())
    if hi <= _EPS:
        return 0.0
    counts, _ = np.histogram(values, bins=bins, range=(0.0, hi))
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def subband_flux_stats(spec: Spectrogram, n_bands: int = N_FLUX_BANDS) -> dict[str, float]:
    """Per-band positive spectral flux: frame average plus histogram entropy (nats)."""
    if spec.n_frames < 2:
        raise ValueError("need at least 2 frames for flux")
    band = _log_band_indices(spec, n_bands)
    rising = np.maximum(np.diff(spec.values, axis=1), 0.0)
    out: dict[str, float] = {}
    for b in range(n_bands):
        flux = rising[band == b].sum(axis=0)
        out[f"avg_flux_band_{b + 1}"] = float(flux.mean())
        out[f"flux_entropy_band_{b + 1}"] = _histogram_entropy(flux)
    return out


# ---------------------------------------------------------------------------
# band energy ratios and harmonic/percussive balance


def energy_and_hpss(spec: Spectrogram) -> dict[str, float]:
    """Bass/mid/treble energy ratios plus a median-filter percussive/harmonic ratio.

    Ratios are taken against the summed energy of the three bands, so they
    add to one for any non-silent input; sub-20 Hz bins are ignored.
    """
    if spec.log_compressed:
        raise ValueError("energy_and_hpss expects uncompressed magnitudes")
    power = spec.values**2
    freqs = spec.bin_frequencies
    bin_power = power.sum(axis=1)
    band_energy = {}
    for name, (lo, hi) in BAND_EDGES_HZ.items():
        mask = freqs >= lo if hi is None else (freqs >= lo) & (freqs < hi)
        band_energy[name] = float(bin_power[mask].sum())
    total = sum(band_energy.values())
    if total <= _EPS:
        return {
            "bass_ratio": 0.0,
            "mid_ratio": 0.0,
            "treble_ratio": 0.0,
            "percussive_harmonic_ratio": 0.0,
        }
    harmonic = ndimage.median_filter(spec.values, size=(1, HPSS_KERNEL), mode="nearest")
    percussive = ndimage.median_filter(spec.values, size=(HPSS_KERNEL, 1), mode="nearest")
    return {
        "bass_ratio": band_energy["bass"] / total,
        "mid_ratio": band_energy["mid"] / total,
        "treble_ratio": band_energy["treble"] / total,
        "percussive_harmonic_ratio": float((percussive**2).sum() / ((harmonic**2).sum() + _EPS)),
    }


# ---------------------------------------------------------------------------
# pitch contour diversity


def pitch_diversity(
    clip: AudioClip,
    frame_len: int = 2048,
    hop: int = DEFAULT_HOP,
    f_min: float = 50.0,
    f_max: float = 2000.0,
    voicing_threshold: float = 0.5,
) -> float:
    """Shannon entropy (nats) of voiced-frame f0 quantized to semitones.

    f0 comes from the normalized autocorrelation peak in [f_min, f_max];
    frames whose peak falls below the voicing threshold are discarded, and a
    fully unvoiced clip scores 0.
    """
    x = clip.samples
    if x.size < frame_len:
        return 0.0
    frames = np.array(np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop])
    frames -= frames.mean(axis=1, keepdims=True)
    rate = clip.sample_rate
    tau_min = max(2, int(np.ceil(rate / f_max)))
    tau_max = min(frame_len - 2, int(np.floor(rate / f_min)))
    if tau_max <= tau_min:
        return 0.0
    nfft = 2 * frame_len
    spectrum = np.fft.rfft(frames, nfft, axis=1)
    autocorr = np.fft.irfft(spectrum * np.conj(spectrum), nfft, axis=1)[:, :frame_len]
    cums = np.cumsum(frames**2, axis=1)
    total = cums[:, -1:]
    taus = np.arange(tau_min, tau_max + 1)
    e_head = cums[:, frame_len - 1 - taus]
    e_tail = total - cums[:, taus - 1]
    r = autocorr[:, taus] / np.sqrt(e_head * e_tail + _EPS)
    r_max = r.max(axis=1)
    voiced = r_max >= voicing_threshold
    if not voiced.any():
        return 0.0
    rv = r[voiced]
    # prefer the earliest strong local maximum so octave-equal peaks resolve
    # to the true period instead of drifting between subharmonics
    interior = rv[:, 1:-1]
    is_peak = (
        (interior >= rv[:, :-2])
        & (interior >= rv[:, 2:])
        & (interior >= 0.9 * r_max[voiced, None])
    )
    has_peak = is_peak.any(axis=1)
    first_peak = np.argmax(is_peak, axis=1) + 1
    best = np.where(has_peak, first_peak, np.argmax(rv, axis=1))
    f0 = rate / taus[best]
    semitones = np.round(12.0 * np.log2(f0 / 440.0)).astype(int)
    _, counts = np.unique(semitones, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


# ---------------------------------------------------------------------------
# timbral sharpness and roughness


def hz_to_bark(freq: np.ndarray | float) -> np.ndarray | float:
    return 13.0 * np.arctan(0.00076 * np.asarray(freq)) + 3.5 * np.arctan(
        (np.asarray(freq) / 7500.0) ** 2
    )


def _bark_weights(n_bands: int = 24) -> np.ndarray:
    z = np.arange(1, n_bands + 1, dtype=np.float64)
    g = np.ones(n_bands)
    high = z > 15
    g[high] = np.exp(0.171 * (z[high] - 15.0))
    return g


# Plomp-Levelt pair dissonance constants after Sethares
_DISS_PARAMS = (-3.51, -5.75, 0.0207, 19.96, 5.0, -5.0, 0.24)


def pair_dissonance(freqs: np.ndarray, amps: np.ndarray) -> float:
    """Summed pairwise dissonance of a set of partials."""
    b1, b2, s1, s2, c1, c2, d_star = _DISS_PARAMS
    order = np.argsort(freqs)
    f = np.asarray(freqs, dtype=np.float64)[order]
    a = np.asarray(amps, dtype=np.float64)[order]
    n = f.size
    total = 0.0
    for i in range(1, n):
        f_low = f[: n - i]
        s = d_star / (s1 * f_low + s2)
        df = f[i:] - f_low
        aa = a[i:] * a[: n - i]
        total += float((aa * (c1 * np.exp(b1 * s * df) + c2 * np.exp(b2 * s * df))).sum())
    return total


def _averaged_spectrum(clip: AudioClip, window: int = 8192) -> tuple[np.ndarray, float]:
    x = clip.samples
    if x.size < window:
        x = np.pad(x, (0, window - x.size))
    hop = window // 2
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop]
    win = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window) / window)
    spec = np.abs(np.fft.rfft(frames * win, axis=1)).mean(axis=0)
    return spec, clip.sample_rate / window


def _spectral_peaks(
    spectrum: np.ndarray,
    bin_hz: float,
    max_peaks: int = 20,
    min_separation_bins: int = 4,
    amp_floor: float = 0.02,
) -> tuple[np.ndarray, np.ndarray]:
    interior = spectrum[1:-1]
    local_max = (interior >= spectrum[:-2]) & (interior > spectrum[2:])
    idx = np.nonzero(local_max)[0] + 1
    if idx.size == 0:
        return np.array([]), np.array([])
    amps = spectrum[idx]
    top = amps.max()
    if top <= _EPS:
        return np.array([]), np.array([])
    keep_idx: list[int] = []
    for j in idx[np.argsort(-amps)]:
        if spectrum[j] < amp_floor * top:
            break
        if all(abs(j - k) >= min_separation_bins for k in keep_idx):
            keep_idx.append(int(j))
        if len(keep_idx) >= max_peaks:
            break
    keep = np.array(sorted(keep_idx))
    return keep * bin_hz, spectrum[keep] / top


def timbral_stats(clip: AudioClip) -> dict[str, float]:
    """Bark-weighted sharpness and Plomp-Levelt roughness of the spectral peaks."""
    x = clip.samples
    if x.size < DEFAULT_WINDOW_LEN:
        clip = AudioClip(clip.id, clip.sample_rate, np.pad(x, (0, DEFAULT_WINDOW_LEN - x.size)))
    spec = stft_magnitude(clip, DEFAULT_WINDOW_LEN, DEFAULT_HOP)
    power = (spec.values**2).sum(axis=1)
    total = power.sum()
    if total <= _EPS:
        return {"sharpness": 0.0, "roughness": 0.0}
    bands = np.clip(np.floor(hz_to_bark(spec.bin_frequencies)).astype(int) + 1, 1, 24)
    band_energy = np.bincount(bands - 1, weights=power, minlength=24)
    z = np.arange(1, 25, dtype=np.float64)
    sharpness = float((z * _bark_weights() * band_energy).sum() / band_energy.sum())
    avg_spec, bin_hz = _averaged_spectrum(clip)
    freqs, amps = _spectral_peaks(avg_spec, bin_hz)
    roughness = pair_dissonance(freqs, amps) if freqs.size >= 2 else 0.0
    return {"sharpness": sharpness, "roughness": roughness}


# ---------------------------------------------------------------------------
# high-level ratings ingestion


@dataclass(slots=True)
class HighLevelRatings:
    """One sound's crowd-rated attributes."""

    sound_id: str
    hcu: float
    imageability: float
    imageability_std: float
    familiarity: float
    familiarity_std: float
    valence: float
    arousal: float
    arousal_std: float
    location_embedding_density: float

    def as_columns(self) -> dict[str, float]:
        return {
            "hcu": self.hcu,
            "imageability": self.imageability,
            "imageability_std": self.imageability_std,
            "familiarity": self.familiarity,
            "familiarity_std": self.familiarity_std,
            "valence": self.valence,
            "arousal": self.arousal,
            "arousal_std": self.arousal_std,
            "location_embedding_density": self.location_embedding_density,
        }


@dataclass(slots=True)
class RowError:
    line: int
    sound_id: str
    reason: str


@dataclass
class IngestResult:
    ratings: dict[str, HighLevelRatings]
    errors: list[RowError]


def ingest_high_level(source) -> IngestResult:
    """Parse the ratings CSV; bad rows are reported, bad schema raises.

    `source` is a path or an open text file. Rows with unparseable numbers,
    negative standard deviations, or negative causal uncertainty are rejected
    individually and listed in the result.
    """
    if hasattr(source, "read"):
        return _ingest_stream(source)
    with open(source, newline="", encoding="utf-8") as fh:
        return _ingest_stream(fh)


def _ingest_stream(fh) -> IngestResult:
    reader = csv.DictReader(fh)
    names = reader.fieldnames or []
    missing = [c for c in REQUIRED_RATING_COLUMNS if c not in names]
    if missing:
        raise SchemaError(f"missing required column: {', '.join(missing)}")
    ratings: dict[str, HighLevelRatings] = {}
    errors: list[RowError] = []
    for line, row in enumerate(reader, start=2):
        sid = (row.get("sound_id") or "").strip()
        if not sid:
            errors.append(RowError(line, "", "empty sound_id"))
            continue
        if sid in ratings:
            raise DuplicateKey(f"duplicate sound_id {sid!r} at line {line}")
        values: dict[str, float] = {}
        reason = ""
        for col in REQUIRED_RATING_COLUMNS[1:]:
            try:
                values[col] = float(row[col])
            except (TypeError, ValueError):
                reason = f"unparseable {col}: {row[col]!r}"
                break
        if not reason:
            for col in ("imageability_std", "familiarity_std", "arousal_std"):
                if values[col] < 0:
                    reason = f"negative {col}"
                    break
        if not reason and values["Hcu"] < 0:
            reason = "negative Hcu"
        if reason:
            errors.append(RowError(line, sid, reason))
            continue
        ratings[sid] = HighLevelRatings(
            sound_id=sid,
            hcu=values["Hcu"],
            imageability=values["imageability"],
            imageability_std=values["imageability_std"],
            familiarity=values["familiarity"],
            familiarity_std=values["familiarity_std"],
            valence=values["valence"],
            arousal=values["arousal"],
            arousal_std=values["arousal_std"],
            location_embedding_density=values["location_embedding_density"],
        )
    return IngestResult(ratings, errors)


# ---------------------------------------------------------------------------
# the merged feature table


class FeatureTable:
    """Per-sound rows over a fixed, tagged column set; missing cells are None."""

    def __init__(self, columns: Sequence[str], tags: Mapping[str, str] | None = None):
        if len(set(columns)) != len(columns):
            raise ValueError("column names must be unique")
        self.columns = list(columns)
        registry = default_column_tags()
        self.tags = {c: (tags or {}).get(c) or registry.get(c) or _tag_heuristic(c) for c in columns}
        self._rows: dict[str, dict[str, float | None]] = {}
        self.errors: dict[str, str] = {}

    @property
    def ids(self) -> list[str]:
        return list(self._rows)

    def __len__(self) -> int:
        return len(self._rows)

    def __contains__(self, sound_id: str) -> bool:
        return sound_id in self._rows

    def add_row(self, sound_id: str, values: Mapping[str, float | None]) -> None:
        if sound_id in self._rows:
            raise DuplicateKey(f"duplicate sound_id {sound_id!r}")
        unknown = set(values) - set(self.columns)
        if unknown:
            raise ValueError(f"unknown columns: {sorted(unknown)}")
        self._rows[sound_id] = {c: values.get(c) for c in self.columns}

    def row(self, sound_id: str) -> dict[str, float | None]:
        return dict(self._rows[sound_id])

    def value(self, sound_id: str, column: str) -> float | None:
        return self._rows[sound_id][column]

    def columns_with_tag(self, tag: str) -> list[str]:
        return [c for c in self.columns if self.tags[c] == tag]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["sound_id", *self.columns])
        for sid, row in self._rows.items():
            writer.writerow(
                [sid, *("NA" if row[c] is None else repr(float(row[c])) for c in self.columns)]
            )
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def from_csv(cls, source, tags: Mapping[str, str] | None = None) -> "FeatureTable":
        """Load a table; unknown columns default by prefix (hl_* high, else low)."""
        if hasattr(source, "read"):
            fh = source
            reader = csv.reader(fh)
            return cls._from_reader(reader, tags)
        with open(source, newline="", encoding="utf-8") as fh:
            return cls._from_reader(csv.reader(fh), tags)

    @classmethod
    def _from_reader(cls, reader, tags) -> "FeatureTable":
        header = next(reader, None)
        if not header or header[0] != "sound_id":
            raise SchemaError("feature CSV must start with a sound_id column")
        table = cls(header[1:], tags)
        for row in reader:
            if not row:
                continue
            values = {
                c: (None if v == "NA" or v == "" else float(v))
                for c, v in zip(header[1:], row[1:])
            }
            table.add_row(row[0], values)
        return table


def _tag_heuristic(column: str) -> str:
    if column.startswith("hl_"):
        return TAG_HIGH
    if column.startswith("salience_"):
        return TAG_SALIENCE
    return TAG_LOW


@dataclass
class FeatureConfig:
    target_rate: int = DEFAULT_SAMPLE_RATE
    window_len: int = DEFAULT_WINDOW_LEN
    hop: int = DEFAULT_HOP
    n_flux_bands: int = N_FLUX_BANDS
    salience: SalienceConfig = field(default_factory=SalienceConfig)


def extract_clip_features(clip: AudioClip, cfg: FeatureConfig | None = None) -> dict[str, float]:
    """Run every computed extractor on one clip (resampled to the target rate)."""
    cfg = cfg or FeatureConfig()
    clip = resample_clip(clip, cfg.target_rate)
    spec = stft_magnitude(clip, cfg.window_len, cfg.hop)
    out: dict[str, float] = {}
    out.update(spectral_stats(spec))
    out.update(subband_flux_stats(spec, cfg.n_flux_bands))
    out.update(energy_and_hpss(spec))
    out["pitch_diversity"] = pitch_diversity(clip)
    out.update(timbral_stats(clip))
    out["silence_flag"] = 1.0 if (spec.values**2).sum() <= _EPS else 0.0
    out.update(salience_summary(salience_maps(log_compress(spec), cfg.salience)))
    return out


def build_feature_table(
    clips: Iterable[AudioClip],
    ratings: IngestResult | Mapping[str, HighLevelRatings] | None = None,
    cfg: FeatureConfig | None = None,
) -> FeatureTable:
    """Extract all features per clip and join the high-level ratings by id.

    A clip whose extraction fails keeps its row with the computed columns
    missing and the failure recorded in table.errors; other rows are
    unaffected. Rows are emitted in sorted id order so output is stable.
    """
    cfg = cfg or FeatureConfig()
    rating_map: Mapping[str, HighLevelRatings]
    if ratings is None:
        rating_map = {}
    elif isinstance(ratings, IngestResult):
        rating_map = ratings.ratings
    else:
        rating_map = ratings
    clip_list = list(clips)
    ids = [c.id for c in clip_list]
    if len(set(ids)) != len(ids):
        raise DuplicateKey("clip ids must be unique")
    table = FeatureTable(list(ALL_FEATURE_COLUMNS))
    for clip in sorted(clip_list, key=lambda c: c.id):
        try:
            values: dict[str, float | None] = dict(extract_clip_features(clip, cfg))
        except Exception as exc:  # noqa: BLE001 - per-row isolation is the contract
            table.errors[clip.id] = f"{type(exc).__name__}: {exc}"
            values = {}
        rating = rating_map.get(clip.id)
        if rating is not None:
            values.update(rating.as_columns())
        table.add_row(clip.id, values)
    return table
