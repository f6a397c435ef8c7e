"""Recording and manifest types, WAV I/O, PhysioNet 2022 headers, patient-wise splits."""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import os
import wave
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import (
    InsufficientPatients,
    MalformedHeader,
    MissingAudio,
    NotWav,
    TruncatedFile,
    UnknownLabel,
    UnsupportedEncoding,
)

log = logging.getLogger(__name__)

PCM16_SCALE = 32768.0


class Site(str, enum.Enum):
    AV = "AV"
    MV = "MV"
    PV = "PV"
    TV = "TV"
    UNKNOWN = "UNKNOWN"


class Quality(str, enum.Enum):
    SATISFACTORY = "satisfactory"
    UNSATISFACTORY = "unsatisfactory"
    UNRATED = "unrated"


class Label(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"

    @property
    def index(self) -> int:
        """Class index used by the network: 1 for positive, 0 for negative."""
        return 1 if self is Label.POSITIVE else 0


class Source(str, enum.Enum):
    BANGLADESH = "bangladesh"
    PHYSIONET2022 = "physionet2022"
    PHYSIONET2016 = "physionet2016"
    SYNTHETIC = "synthetic"


CARDIAC_SITES = (Site.AV, Site.MV, Site.PV, Site.TV)


@dataclass(frozen=True, eq=False)
class Recording:
    samples: np.ndarray
    sample_rate_hz: int
    patient_id: str = ""
    site: Site = Site.UNKNOWN
    quality: Quality = Quality.UNRATED

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class RecordingRef:
    """A recording held either as a file path or as an in-memory buffer."""

    patient_id: str
    site: Site
    quality: Quality = Quality.UNRATED
    path: Path | None = None
    buffer: Recording | None = field(default=None, compare=False, repr=False)

    def load(self) -> Recording:
        if self.buffer is not None:
            rec = self.buffer
        elif self.path is not None:
            if not Path(self.path).is_file():
                raise MissingAudio(str(self.path))
            rec = read_wav(self.path)
        else:
            raise MissingAudio(f"recording {self.patient_id}/{self.site.value} has no source")
        return replace(rec, patient_id=self.patient_id, site=self.site, quality=self.quality)


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    label: Label
    recordings: tuple[RecordingRef, ...]
    demographics: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[PatientRecord, ...]
    source: Source = Source.SYNTHETIC

    def __post_init__(self):
        ids = [p.patient_id for p in self.entries]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate patient ids in manifest: {dup[:5]}")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[PatientRecord]:
        return iter(self.entries)

    @property
    def patient_ids(self) -> list[str]:
        return [p.patient_id for p in self.entries]

    def recordings(self) -> Iterator[tuple[PatientRecord, RecordingRef]]:
        for patient in self.entries:
            for ref in patient.recordings:
                yield patient, ref

    @property
    def num_recordings(self) -> int:
        return sum(len(p.recordings) for p in self.entries)

    def label_counts(self) -> dict[Label, int]:
        counts = {Label.NEGATIVE: 0, Label.POSITIVE: 0}
        for p in self.entries:
            counts[p.label] += 1
        return counts

    def filter_recordings(self, keep: Callable[[RecordingRef], bool]) -> "DatasetManifest":
        """Keep only matching recordings; patients left with none are dropped."""
        entries = []
        for p in self.entries:
            recs = tuple(r for r in p.recordings if keep(r))
            if recs:
                entries.append(replace(p, recordings=recs))
        return DatasetManifest(tuple(entries), self.source)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f < 0 or f > 1 for f in fracs):
            raise ValueError(f"split fractions must lie in [0, 1]: {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1: {fracs}")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")


# --------------------------------------------------------------------------- WAV


def read_wav(path: str | os.PathLike) -> Recording:
    """Read a mono PCM16 WAV file into a Recording with samples in [-1, 1)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    return _decode_wav(raw, str(path))


def read_wav_bytes(raw: bytes) -> Recording:
    return _decode_wav(raw, "<buffer>")


def _decode_wav(raw: bytes, name: str) -> Recording:
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise NotWav(f"{name}: missing RIFF/WAVE magic")
    try:
        with wave.open(io.BytesIO(raw), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            nframes = wf.getnframes()
            frames = wf.readframes(nframes)
    except EOFError as exc:
        raise TruncatedFile(f"{name}: {exc}") from exc
    except wave.Error as exc:
        # the stdlib reader rejects non-PCM format tags and broken fmt chunks alike
        if "unknown format" in str(exc):
            raise UnsupportedEncoding(f"{name}: {exc}") from exc
        raise TruncatedFile(f"{name}: {exc}") from exc
    if channels != 1:
        raise UnsupportedEncoding(f"{name}: {channels} channels, only mono is supported")
    if width != 2:
        raise UnsupportedEncoding(f"{name}: {8 * width}-bit samples, only PCM16 is supported")
    if nframes == 0 or len(frames) == 0:
        raise TruncatedFile(f"{name}: empty data chunk")
    if len(frames) < 2 * nframes:
        raise TruncatedFile(f"{name}: header declares {nframes} frames, found {len(frames) // 2}")
    pcm = np.frombuffer(frames, dtype="<i2")
    return Recording(samples=pcm.astype(np.float64) / PCM16_SCALE, sample_rate_hz=rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    q = np.round(np.asarray(samples, dtype=np.float64) * PCM16_SCALE)
    return np.clip(q, -32768, 32767).astype("<i2")


def write_wav(path: str | os.PathLike, recording: Recording) -> None:
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(recording.sample_rate_hz)
        wf.writeframes(to_pcm16(recording.samples).tobytes())


# ------------------------------------------------------------- PhysioNet 2022

_PHYSIONET_SITES = {s.value: s for s in CARDIAC_SITES}
_DEMOGRAPHIC_KEYS = {"Age": "age", "Sex": "sex", "Height": "height", "Weight": "weight"}


def parse_physionet_patient(
    header_text: str, audio_resolver: Callable[[str], str | os.PathLike]
) -> PatientRecord:
    """Parse one PhysioNet 2022 patient description file.

    ``audio_resolver`` maps a wav file name from the header to a path.
    Recordings at locations other than AV/MV/PV/TV (``Phc``) are skipped.
    Raises UnknownLabel for ``#Murmur: Unknown`` so callers can drop the patient.
    """
    lines = [ln.strip() for ln in header_text.splitlines() if ln.strip()]
    if not lines:
        raise MalformedHeader("empty header")
    head = lines[0].split()
    if len(head) < 3:
        raise MalformedHeader(f"first line needs '<id> <num_locations> <fs>': {lines[0]!r}")
    patient_id = head[0]
    try:
        n_locations = int(head[1])
        fs = int(float(head[2]))
    except ValueError as exc:
        raise MalformedHeader(f"bad counts in first line: {lines[0]!r}") from exc
    if n_locations < 1 or len(lines) < 1 + n_locations:
        raise MalformedHeader(f"patient {patient_id}: expected {n_locations} recording lines")

    annotations = {}
    for ln in lines[1 + n_locations :]:
        if ln.startswith("#") and ":" in ln:
            key, _, value = ln[1:].partition(":")
            annotations[key.strip()] = value.strip()

    murmur = annotations.get("Murmur")
    if murmur is None:
        raise MalformedHeader(f"patient {patient_id}: no #Murmur annotation")
    if murmur == "Present":
        label = Label.POSITIVE
    elif murmur == "Absent":
        label = Label.NEGATIVE
    elif murmur == "Unknown":
        raise UnknownLabel(patient_id)
    else:
        raise MalformedHeader(f"patient {patient_id}: murmur value {murmur!r}")

    refs = []
    for ln in lines[1 : 1 + n_locations]:
        parts = ln.split()
        if len(parts) < 3 or parts[0].startswith("#"):
            raise MalformedHeader(f"patient {patient_id}: bad recording line {ln!r}")
        location, wav_name = parts[0], parts[2]
        site = _PHYSIONET_SITES.get(location)
        if site is None:
            log.debug("patient %s: skipping location %s", patient_id, location)
            continue
        try:
            path = Path(audio_resolver(wav_name))
        except (KeyError, FileNotFoundError) as exc:
            raise MissingAudio(f"patient {patient_id}: {wav_name}") from exc
        if not path.is_file():
            raise MissingAudio(f"patient {patient_id}: {path}")
        refs.append(RecordingRef(patient_id, site, Quality.UNRATED, path))
    if not refs:
        raise MalformedHeader(f"patient {patient_id}: no recordings at AV/MV/PV/TV")

    demographics = {
        name: annotations[key]
        for key, name in _DEMOGRAPHIC_KEYS.items()
        if annotations.get(key, "nan").lower() != "nan"
    }
    demographics["sample_rate_hz"] = fs
    return PatientRecord(patient_id, label, tuple(refs), demographics)


def load_physionet_directory(directory: str | os.PathLike) -> tuple[DatasetManifest, int]:
    """Parse every patient ``.txt`` file in a PhysioNet 2022 data directory.

    Returns the manifest and the number of Unknown-murmur patients skipped.
    """
    root = Path(directory)
    entries = []
    skipped = 0
    for header in sorted(root.glob("*.txt"), key=lambda p: p.name):
        try:
            entries.append(parse_physionet_patient(header.read_text(), lambda name: root / name))
        except UnknownLabel:
            skipped += 1
    return DatasetManifest(tuple(entries), Source.PHYSIONET2022), skipped


# ------------------------------------------------------------ native manifest

MANIFEST_COLUMNS = ("patient_id", "site", "label", "quality", "path")


def read_manifest(path: str | os.PathLike, source: Source = Source.BANGLADESH) -> DatasetManifest:
    """Read a native CSV manifest; relative paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    patients: dict[str, tuple[Label, list[RecordingRef]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_COLUMNS:
            raise MalformedHeader(f"{path}: header must be {','.join(MANIFEST_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                site = Site(row["site"].upper())
                label = Label(row["label"].lower())
                quality = Quality(row["quality"].lower())
            except ValueError as exc:
                raise MalformedHeader(f"{path}:{lineno}: {exc}") from exc
            pid = row["patient_id"]
            rec_path = Path(row["path"])
            if not rec_path.is_absolute():
                rec_path = base / rec_path
            if pid in patients and patients[pid][0] is not label:
                raise MalformedHeader(f"{path}:{lineno}: patient {pid} has conflicting labels")
            patients.setdefault(pid, (label, []))[1].append(
                RecordingRef(pid, site, quality, rec_path)
            )
    entries = tuple(PatientRecord(pid, lab, tuple(refs)) for pid, (lab, refs) in patients.items())
    return DatasetManifest(entries, source)


def write_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    """Write a native CSV manifest. Every recording must be file-backed."""
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for patient, ref in manifest.recordings():
            if ref.path is None:
                raise ValueError(f"recording {ref.patient_id}/{ref.site.value} is not file-backed")
            rec_path = Path(ref.path).resolve()
            try:
                shown = rec_path.relative_to(base).as_posix()
            except ValueError:
                shown = rec_path.as_posix()
            writer.writerow(
                [patient.patient_id, ref.site.value, patient.label.value, ref.quality.value, shown]
            )


def load_recordings(refs: Iterable[RecordingRef], threads: int = 1) -> list[Recording]:
    refs = list(refs)
    if threads <= 1 or len(refs) < 2:
        return [r.load() for r in refs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(RecordingRef.load, refs))


# ---------------------------------------------------------------------- split


def _subset_count(n: int, fraction: float) -> int:
    # nearest integer; an exact .5 rounds down so the remainder lands in train
    return int(math.ceil(n * fraction - 0.5 - 1e-9)) if fraction > 0 else 0


def patient_split(
    manifest: DatasetManifest, spec: SplitSpec
) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Stratified patient-wise split into (train, val, test) manifests."""
    rng = np.random.default_rng(spec.seed)
    by_class = {
        label: [p for p in manifest.entries if p.label is label]
        for label in (Label.NEGATIVE, Label.POSITIVE)
    }
    train, val, test = [], [], []
    for label, patients in by_class.items():
        order = rng.permutation(len(patients))
        shuffled = [patients[i] for i in order]
        n = len(shuffled)
        n_val = _subset_count(n, spec.val_fraction)
        n_test = _subset_count(n, spec.test_fraction)
        n_train = n - n_val - n_test
        for name, frac, count in (
            ("train", spec.train_fraction, n_train),
            ("val", spec.val_fraction, n_val),
            ("test", spec.test_fraction, n_test),
        ):
            if frac > 0 and count == 0:
                raise InsufficientPatients(
                    f"{name} subset would receive no {label.value} patients "
                    f"({n} available at fraction {frac})"
                )
        val.extend(shuffled[:n_val])
        test.extend(shuffled[n_val : n_val + n_test])
        train.extend(shuffled[n_val + n_test :])

    def build(items):
        items = sorted(items, key=lambda p: p.patient_id)
        return DatasetManifest(tuple(items), manifest.source)

    return build(train), build(val), build(test)
