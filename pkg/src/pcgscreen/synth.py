"""Deterministic synthetic phonocardiograms for end-to-end and ablation checks.

Each beat has an S1 burst (damped sinusoid near 60 Hz) followed after the
systolic interval by an S2 burst (near 90 Hz). Murmurs are band-limited noise
confined to the gap between the bursts of the chosen phase. This is a
pipeline oracle, not a physiological model.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidSpec
from .signal_io import (
    CARDIAC_SITES,
    DatasetManifest,
    Label,
    PatientRecord,
    Quality,
    Recording,
    RecordingRef,
    Site,
    Source,
    write_manifest,
    write_wav,
)

S1_FREQ_HZ = 60.0
S2_FREQ_HZ = 90.0
BURST_DECAY_S = 0.015
BURST_LEN_S = 0.06
SYSTOLE_FRACTION = 0.35
FIRST_ONSET_FRACTION = 0.1
PEAK_LEVEL = 0.5


class Murmur(str, enum.Enum):
    NONE = "none"
    SYSTOLIC = "systolic"
    DIASTOLIC = "diastolic"


@dataclass(frozen=True)
class SynthSpec:
    heart_rate_bpm: float = 72.0
    murmur: Murmur = Murmur.NONE
    murmur_band_hz: tuple[float, float] = (150.0, 400.0)
    snr_db: float = 20.0
    duration_s: float = 5.0
    fs_hz: int = 4000
    seed: int = 0
    # murmur RMS relative to the peak amplitude of S1
    murmur_level: float = 0.25

    def validate(self) -> None:
        lo, hi = self.murmur_band_hz
        if not 30 <= self.heart_rate_bpm <= 220:
            raise InvalidSpec(f"heart rate {self.heart_rate_bpm} outside [30, 220] bpm")
        if self.fs_hz <= 0:
            raise InvalidSpec("fs_hz must be positive")
        if not 0 < lo < hi < self.fs_hz / 2:
            raise InvalidSpec(f"murmur band {self.murmur_band_hz} must satisfy 0 < low < high < fs/2")
        if self.duration_s <= 0:
            raise InvalidSpec("duration_s must be positive")
        if self.murmur_level < 0 or math.isnan(self.snr_db):
            raise InvalidSpec("murmur_level must be >= 0 and snr_db a number")


@dataclass(frozen=True)
class BeatTiming:
    s1_onsets: np.ndarray
    s2_onsets: np.ndarray
    period_s: float


def beat_timing(spec: SynthSpec) -> BeatTiming:
    """S1/S2 onset times (seconds) of every burst that fits inside the recording."""
    period = 60.0 / spec.heart_rate_bpm
    starts = np.arange(0.0, spec.duration_s, period) + FIRST_ONSET_FRACTION * period
    s1 = starts[starts + BURST_LEN_S <= spec.duration_s]
    s2 = starts + SYSTOLE_FRACTION * period
    s2 = s2[s2 + BURST_LEN_S <= spec.duration_s]
    return BeatTiming(s1, s2, period)


def phase_windows(spec: SynthSpec) -> tuple[list[tuple[float, float]], list[tuple[float, float]]]:
    """(systolic, diastolic) intervals in seconds between the bursts."""
    timing = beat_timing(spec)
    period = timing.period_s
    systolic, diastolic = [], []
    for s1 in timing.s1_onsets:
        a, b = s1 + BURST_LEN_S, s1 + SYSTOLE_FRACTION * period
        if b <= spec.duration_s and b > a:
            systolic.append((a, b))
        c, d = b + BURST_LEN_S, s1 + period
        if d <= spec.duration_s and d > c:
            diastolic.append((c, d))
    return systolic, diastolic


def _burst(t: np.ndarray, onset: float, freq: float) -> np.ndarray:
    dt = t - onset
    inside = (dt >= 0) & (dt < BURST_LEN_S)
    out = np.zeros_like(t)
    out[inside] = np.exp(-dt[inside] / BURST_DECAY_S) * np.sin(2 * np.pi * freq * dt[inside])
    return out


def _band_noise(rng: np.random.Generator, n: int, fs: float, band: tuple[float, float]) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    spectrum[(freqs < band[0]) | (freqs > band[1])] = 0
    x = np.fft.irfft(spectrum, n)
    rms = np.sqrt(np.mean(x * x))
    return x / rms if rms > 0 else x


def _window_mask(t: np.ndarray, intervals: Sequence[tuple[float, float]]) -> np.ndarray:
    """Hann-tapered indicator of the given intervals (zero outside them)."""
    mask = np.zeros_like(t)
    for a, b in intervals:
        inside = (t >= a) & (t < b)
        if inside.any():
            mask[inside] = np.sin(np.pi * (t[inside] - a) / (b - a)) ** 2
    return mask


def generate(spec: SynthSpec) -> Recording:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration_s * spec.fs_hz))
    t = np.arange(n) / spec.fs_hz
    timing = beat_timing(spec)
    clean = np.zeros(n)
    for onset in timing.s1_onsets:
        clean += _burst(t, onset, S1_FREQ_HZ)
    for onset in timing.s2_onsets:
        clean += 0.8 * _burst(t, onset, S2_FREQ_HZ)

    murmur_noise = _band_noise(rng, n, spec.fs_hz, spec.murmur_band_hz)
    if spec.murmur is not Murmur.NONE and spec.murmur_level > 0:
        systolic, diastolic = phase_windows(spec)
        windows = systolic if spec.murmur is Murmur.SYSTOLIC else diastolic
        clean += spec.murmur_level * murmur_noise * _window_mask(t, windows)

    white = rng.standard_normal(n)
    x = clean
    if np.isfinite(spec.snr_db):
        power = np.mean(clean * clean)
        x = clean + white * np.sqrt(power / 10 ** (spec.snr_db / 10))
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x * (PEAK_LEVEL / peak)
    return Recording(samples=x, sample_rate_hz=spec.fs_hz)


def band_energy(samples: np.ndarray, fs: float, band: tuple[float, float],
                intervals: Sequence[tuple[float, float]]) -> float:
    """Energy inside ``band`` summed over Hann-windowed DFTs of each interval."""
    total = 0.0
    for a, b in intervals:
        seg = samples[int(round(a * fs)) : int(round(b * fs))]
        if len(seg) < 2:
            continue
        spec = np.fft.rfft(seg * np.hanning(len(seg)))
        freqs = np.fft.rfftfreq(len(seg), 1.0 / fs)
        sel = (freqs >= band[0]) & (freqs <= band[1])
        total += float(np.sum(np.abs(spec[sel]) ** 2))
    return total


def generate_cohort(
    n_patients: int,
    positive_fraction: float,
    sites: Sequence[Site] = CARDIAC_SITES,
    spec_base: SynthSpec = SynthSpec(),
    seed: int = 0,
    *,
    hr_jitter_bpm: float = 12.0,
    murmur_sites: Sequence[Site] | None = None,
    snr_jitter_db: float = 0.0,
    low_quality_fraction: float = 0.0,
    low_quality_snr_db: float = 0.0,
    id_prefix: str = "syn",
) -> DatasetManifest:
    """In-memory cohort: positives carry murmurs, negatives none.

    ``murmur_sites`` restricts murmurs to some sites; ``snr_jitter_db`` draws
    each recording's SNR uniformly within +/- that many dB; a
    ``low_quality_fraction`` of recordings is marked unsatisfactory and
    generated at ``low_quality_snr_db``. Everything else is satisfactory.
    """
    if n_patients < 2:
        raise InvalidSpec("need at least 2 patients")
    if not 0 < positive_fraction < 1:
        raise InvalidSpec("positive_fraction must lie strictly between 0 and 1")
    if not sites:
        raise InvalidSpec("need at least one site")
    if not 0 <= low_quality_fraction <= 1:
        raise InvalidSpec("low_quality_fraction must lie in [0, 1]")
    spec_base.validate()
    murmur_kind = spec_base.murmur if spec_base.murmur is not Murmur.NONE else Murmur.SYSTOLIC
    murmur_sites = set(sites if murmur_sites is None else murmur_sites)

    rng = np.random.default_rng(seed)
    n_pos = int(round(n_patients * positive_fraction))
    n_pos = min(max(n_pos, 1), n_patients - 1)
    positive = np.zeros(n_patients, dtype=bool)
    positive[rng.permutation(n_patients)[:n_pos]] = True

    entries = []
    for i in range(n_patients):
        pid = f"{id_prefix}{i:04d}"
        label = Label.POSITIVE if positive[i] else Label.NEGATIVE
        hr = float(np.clip(spec_base.heart_rate_bpm + rng.uniform(-hr_jitter_bpm, hr_jitter_bpm), 30, 220))
        refs = []
        for site in sites:
            rec_seed = int(rng.integers(0, 2**63 - 1))
            snr = spec_base.snr_db + (rng.uniform(-snr_jitter_db, snr_jitter_db) if snr_jitter_db else 0.0)
            quality = Quality.SATISFACTORY
            if low_quality_fraction and rng.random() < low_quality_fraction:
                quality = Quality.UNSATISFACTORY
                snr = low_quality_snr_db
            murmur = murmur_kind if positive[i] and site in murmur_sites else Murmur.NONE
            spec = replace(spec_base, heart_rate_bpm=hr, murmur=murmur, snr_db=snr, seed=rec_seed)
            rec = replace(generate(spec), patient_id=pid, site=site, quality=quality)
            refs.append(RecordingRef(pid, site, quality, buffer=rec))
        entries.append(PatientRecord(pid, label, tuple(refs), {"heart_rate_bpm": hr}))
    return DatasetManifest(tuple(entries), Source.SYNTHETIC)


def write_cohort(manifest: DatasetManifest, out_dir, manifest_name: str = "manifest.csv") -> DatasetManifest:
    """Write every recording as PCM16 WAV plus a native manifest CSV.

    Returns the equivalent file-backed manifest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for patient in manifest.entries:
        refs = []
        for ref in patient.recordings:
            path = out / f"{patient.patient_id}_{ref.site.value}.wav"
            write_wav(path, ref.load())
            refs.append(RecordingRef(patient.patient_id, ref.site, ref.quality, path))
        entries.append(replace(patient, recordings=tuple(refs)))
    on_disk = DatasetManifest(tuple(entries), manifest.source)
    write_manifest(on_disk, out / manifest_name)
    return on_disk
