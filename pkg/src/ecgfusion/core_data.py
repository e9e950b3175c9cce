"""Domain types, record persistence, manifests, and seeded synthetic data.

Records are plain CSV matrices (one lead per row, no header) so every
pipeline stage can be inspected with standard tools.  All randomness is
routed through :class:`RngStream` so each stage draws from its own named
substream and runs are reproducible across platforms.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ArgumentError, DataError, FormatError, InputError, OutputError

SAMPLING_RATE_HZ = 500.0

# Shape every record is normalized to by the cleansing stage.
CLEAN_LEADS = 12
CLEAN_SAMPLES = 5000

# CPSC2018-style nine-class taxonomy with post-preprocessing record counts.
CPSC_CLASS_NAMES = ("Normal", "AF", "I-AVB", "LBBB", "RBBB", "PAC", "PVC", "STD", "STE")
CPSC_CLASS_COUNTS = (9928, 1578, 788, 228, 1701, 642, 748, 826, 213)


@dataclass(frozen=True)
class RngStream:
    """Named random stream with platform-stable substream derivation.

    Identical ``(seed, stream_id)`` pairs produce identical draw sequences
    on every platform.  Substreams are derived by name, never by draw
    order, so pipeline stages can run (and re-run) independently.
    """

    seed: int
    stream_id: str = "root"

    def substream(self, name: str) -> "RngStream":
        return RngStream(self.seed, f"{self.stream_id}/{name}")

    def generator(self) -> np.random.Generator:
        """Fresh generator; repeated calls restart the same sequence."""
        digest = hashlib.sha256(self.stream_id.encode("utf-8")).digest()
        words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
        return np.random.default_rng(np.random.SeedSequence([self.seed & (2**64 - 1), *words]))


@dataclass(frozen=True)
class ClassId:
    """Class label: a dense index plus a human-readable name."""

    index: int
    name: str = ""

    def __post_init__(self):
        if self.index < 0:
            raise ArgumentError(f"class index must be >= 0, got {self.index}")
        if not self.name:
            object.__setattr__(self, "name", f"class{self.index}")


def cpsc_classes() -> list[ClassId]:
    return [ClassId(i, name) for i, name in enumerate(CPSC_CLASS_NAMES)]


@dataclass(frozen=True, eq=False)
class EcgRecord:
    """One multi-lead signal: rows are leads, columns are time samples.

    The matrix is validated (2-D, finite) and frozen on construction, so
    records are safe to share across threads.
    """

    leads: np.ndarray
    label: ClassId | None = None
    id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.leads, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"record {self.id!r}: leads must be a non-empty 2-D matrix, "
                            f"got shape {getattr(arr, 'shape', None)}")
        if not np.isfinite(arr).all():
            r, c = np.argwhere(~np.isfinite(arr))[0]
            raise DataError(f"record {self.id!r}: non-finite value at lead {r}, sample {c}")
        arr.setflags(write=False)
        object.__setattr__(self, "leads", arr)

    @property
    def n_leads(self) -> int:
        return self.leads.shape[0]

    @property
    def n_samples(self) -> int:
        return self.leads.shape[1]


def load_record(path: str | Path, label: ClassId | None = None,
                record_id: str | None = None,
                expected_shape: tuple[int, int] | None = None) -> EcgRecord:
    """Read a CSV record.  The label always comes from the caller (i.e. the
    manifest); record files carry no metadata.

    Raises FormatError naming line/column for malformed text, DataError for
    non-finite values, and FormatError on an ``expected_shape`` mismatch.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"record file not found: {path}")
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError:
        _diagnose_csv(path)
        raise  # unreachable: _diagnose_csv always raises
    if expected_shape is not None and tuple(arr.shape) != tuple(expected_shape):
        raise FormatError(f"{path}: expected shape {tuple(expected_shape)}, got {arr.shape}")
    rid = record_id if record_id is not None else path.stem
    return EcgRecord(arr, label=label, id=rid)


def _diagnose_csv(path: Path) -> None:
    """Re-parse a rejected CSV line by line to name the offending cell."""
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.rstrip("\n").split(",")
            if width is None:
                width = len(tokens)
            elif len(tokens) != width:
                raise FormatError(f"{path}: line {lineno}: expected {width} columns, "
                                  f"got {len(tokens)}")
            for colno, tok in enumerate(tokens, start=1):
                try:
                    float(tok)
                except ValueError:
                    raise FormatError(f"{path}: line {lineno}, column {colno}: "
                                      f"not a decimal number: {tok!r}") from None
    raise FormatError(f"{path}: malformed CSV")


def save_record(record: EcgRecord, path: str | Path) -> None:
    """Write a record as decimal CSV with 17 significant digits, enough for
    load_record to reproduce it exactly."""
    path = Path(path)
    try:
        np.savetxt(path, record.leads, fmt="%.17g", delimiter=",")
    except OSError as exc:
        raise OutputError(f"cannot write record to {path}: {exc}") from exc


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the manifest's directory
    label: ClassId


@dataclass
class DatasetManifest:
    """Ordered collection of record references with labels and provenance."""

    entries: list[ManifestEntry]
    seed: int
    notes: str = ""
    base_dir: Path = field(default_factory=Path)

    def per_class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for e in self.entries:
            counts[e.label.index] = counts.get(e.label.index, 0) + 1
        return counts

    def class_ids(self) -> list[ClassId]:
        seen: dict[int, ClassId] = {}
        for e in self.entries:
            seen.setdefault(e.label.index, e.label)
        return [seen[i] for i in sorted(seen)]

    def record_path(self, entry: ManifestEntry) -> Path:
        return self.base_dir / entry.path

    def load_entry(self, entry: ManifestEntry) -> EcgRecord:
        return load_record(self.record_path(entry), label=entry.label)

    def iter_records(self) -> Iterator[EcgRecord]:
        for entry in self.entries:
            yield self.load_entry(entry)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        payload = {
            "seed": self.seed,
            "notes": self.notes,
            "entries": [
                {"path": e.path, "label": e.label.index, "name": e.label.name}
                for e in self.entries
            ],
        }
        try:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
                fh.write("\n")
        except OSError as exc:
            raise OutputError(f"cannot write manifest to {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise InputError(f"manifest not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from exc
        try:
            entries = [ManifestEntry(e["path"], ClassId(int(e["label"]), e.get("name", "")))
                       for e in payload["entries"]]
            seed = int(payload["seed"])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: missing manifest field: {exc}") from exc
        manifest = cls(entries=entries, seed=seed,
                       notes=str(payload.get("notes", "")), base_dir=path.parent)
        for entry in manifest.entries:
            if not manifest.record_path(entry).is_file():
                raise InputError(f"{path}: entry does not resolve to a file: {entry.path}")
        return manifest


# --- Synthetic data -------------------------------------------------------
#
# Each class is a periodic template (a sharp pulse plus a broad bump, both
# phase-locked at the start of the record) with per-lead gains and additive
# Gaussian noise.  Classes 0 and 1 share a pulse width and differ only in
# period, so they overlap in summary statistics while staying separable in
# the raw signal; this keeps rebalancing experiments non-trivial.

_PERIOD_BASE = 320          # samples between sharp pulses for class 0
_PERIOD_STEP = 36           # per-class period increment
_PULSE_WIDTHS = (20, 20, 26, 16, 30)    # sharp-pulse width cycle across classes
_BUMP_WIDTH_FACTOR = 3.2
_BUMP_AMPLITUDE = 0.45
_BUMP_PHASE = 0.38          # bump centre as a fraction of the period
_LEAD_GAIN_RANGE = (0.6, 1.4)
_NOISE_SIGMA = 0.8


def class_waveform_params(class_index: int) -> tuple[int, int]:
    """(pulse period, pulse width) in samples for a synthetic class."""
    period = _PERIOD_BASE + _PERIOD_STEP * class_index
    width = _PULSE_WIDTHS[class_index % len(_PULSE_WIDTHS)]
    return period, width


def synthetic_record(class_index: int, n_leads: int, n_samples: int,
                     rng: np.random.Generator) -> np.ndarray:
    """One synthetic multi-lead matrix for a class.

    Draw order (lead gains, then noise) is fixed so a record is fully
    determined by its own generator state.
    """
    period, width = class_waveform_params(class_index)
    t = np.arange(n_samples)
    phase = t % period
    dist = np.minimum(phase, period - phase)
    pulse = np.exp(-0.5 * (dist / width) ** 2)
    centre = _BUMP_PHASE * period
    bump_dist = np.abs((t - centre + period / 2.0) % period - period / 2.0)
    bump = _BUMP_AMPLITUDE * np.exp(-0.5 * (bump_dist / (width * _BUMP_WIDTH_FACTOR)) ** 2)
    template = pulse + bump
    gains = rng.uniform(*_LEAD_GAIN_RANGE, size=n_leads)
    noise = _NOISE_SIGMA * rng.standard_normal((n_leads, n_samples))
    return gains[:, None] * template[None, :] + noise


def synthesize_dataset(out_dir: str | Path, classes: int, per_class: Sequence[int],
                       length_range: tuple[int, int] = (3000, 6000),
                       seed: RngStream = RngStream(0),
                       class_names: Sequence[str] | None = None,
                       n_leads: int = CLEAN_LEADS) -> DatasetManifest:
    """Write a synthetic dataset (records plus manifest) and return its manifest.

    ``per_class`` must have exactly ``classes`` entries; record lengths are
    drawn uniformly in ``length_range``.  Identical seeds produce
    byte-identical records and manifests.
    """
    if classes < 2:
        raise ArgumentError(f"need at least 2 classes, got {classes}")
    if len(per_class) != classes:
        raise ArgumentError(f"per_class has {len(per_class)} entries for {classes} classes")
    if any(c < 1 for c in per_class):
        raise ArgumentError("every class needs at least one record")
    lo, hi = length_range
    if lo < 1 or hi < lo:
        raise ArgumentError(f"bad length range {length_range}")
    if class_names is not None and len(class_names) != classes:
        raise ArgumentError(f"class_names has {len(class_names)} entries for {classes} classes")

    out_dir = Path(out_dir)
    records_dir = out_dir / "records"
    try:
        records_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {records_dir}: {exc}") from exc

    labels = [ClassId(k, class_names[k] if class_names else "") for k in range(classes)]
    entries: list[ManifestEntry] = []
    index = 0
    for k in range(classes):
        for _ in range(per_class[k]):
            rng = seed.substream(f"synth/rec{index:05d}").generator()
            n_samples = int(rng.integers(lo, hi + 1))
            leads = synthetic_record(k, n_leads, n_samples, rng)
            rid = f"rec_{index:05d}"
            record = EcgRecord(leads, label=labels[k], id=rid)
            rel = f"records/{rid}.csv"
            save_record(record, out_dir / rel)
            entries.append(ManifestEntry(rel, labels[k]))
            index += 1

    manifest = DatasetManifest(entries=entries, seed=seed.seed,
                               notes=f"synthetic dataset, {classes} classes",
                               base_dir=out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest
