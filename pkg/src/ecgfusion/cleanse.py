"""Record cleansing: reject, truncate, or PCA-pad to a fixed shape.

Records with the wrong lead count or at most half the target length are
rejected.  Long records keep their first ``target`` columns.  Medium
records are extended with columns synthesized from their own principal
components, so the padding stays inside the record's dominant subspace.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_data import (CLEAN_LEADS, CLEAN_SAMPLES, DatasetManifest, EcgRecord,
                        ManifestEntry, save_record)
from .errors import ArgumentError, InputError, InternalError, OutputError

DEFAULT_COMPONENTS = 5


@dataclass(frozen=True)
class PcaModel:
    """Principal directions of a record's columns-as-observations.

    ``components`` has orthonormal columns (leads x r), eigenvalue-ordered;
    ``explained_variance`` is the matching non-increasing eigenvalue vector
    and ``total_variance`` the trace of the full covariance.
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    total_variance: float

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance <= 0.0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        """Project columns onto the component subspace and map back.

        No mean restoration: the output lies exactly in the span of the
        components, which is what the padding contract requires.
        """
        p = self.components
        return p @ (p.T @ x)


def fit_pca(record: EcgRecord, r: int) -> PcaModel:
    """PCA over time samples (columns) as observations in lead space.

    ``r`` is reduced with a warning when it exceeds the numerical rank of
    the column covariance.
    """
    x = record.leads
    rows, cols = x.shape
    if not 1 <= r <= rows:
        raise ArgumentError(f"need 1 <= r <= {rows}, got {r}")
    if cols < rows:
        raise ArgumentError(f"need at least {rows} samples to fit, got {cols}")
    mean = x.mean(axis=1)
    centered = x - mean[:, None]
    cov = centered @ centered.T / (cols - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    rank = int(np.sum(eigvals > eigvals[0] * 1e-12)) if eigvals[0] > 0 else 0
    if r > max(rank, 1):
        warnings.warn(f"record {record.id!r}: covariance rank {rank} < r={r}; "
                      f"reducing to {max(rank, 1)} components", stacklevel=2)
        r = max(rank, 1)
    return PcaModel(mean=mean, components=eigvecs[:, :r],
                    explained_variance=eigvals[:r],
                    total_variance=float(eigvals.sum()))


@dataclass(frozen=True)
class Rejection:
    record_id: str
    reason: str


def cleanse_record(record: EcgRecord, target: tuple[int, int] = (CLEAN_LEADS, CLEAN_SAMPLES),
                   r: int = DEFAULT_COMPONENTS) -> EcgRecord | Rejection:
    """Normalize one record to ``target`` shape, or reject it.

    Rejection rule: wrong lead count, or length at most half the target.
    Longer records are truncated to the target prefix; medium records are
    padded with the leading columns of their rank-``r`` reconstruction,
    read cyclically from column 0.
    """
    t_rows, t_cols = target
    rows, cols = record.leads.shape
    if rows != t_rows:
        return Rejection(record.id, f"expected {t_rows} leads, got {rows}")
    if cols <= t_cols // 2:
        return Rejection(record.id, f"too short: {cols} <= {t_cols // 2} samples")
    if cols >= t_cols:
        return EcgRecord(record.leads[:, :t_cols], label=record.label, id=record.id)
    model = fit_pca(record, r)
    recon = model.reconstruct(record.leads)
    need = t_cols - cols
    x_add = recon[:, np.arange(need) % cols]
    out = np.concatenate([record.leads, x_add], axis=1)
    if not np.isfinite(out).all():
        raise InternalError(f"record {record.id!r}: padding produced non-finite values")
    return EcgRecord(out, label=record.label, id=record.id)


@dataclass
class RejectionReport:
    rejected: list[Rejection] = field(default_factory=list)
    surviving_counts: dict[int, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "rejected": [{"id": r.record_id, "reason": r.reason} for r in self.rejected],
            "surviving_counts": {str(k): v for k, v in sorted(self.surviving_counts.items())},
        }


def cleanse_records(records, target=(CLEAN_LEADS, CLEAN_SAMPLES),
                    r: int = DEFAULT_COMPONENTS) -> tuple[list[EcgRecord], RejectionReport]:
    """In-memory cleansing of an iterable of records, in input order."""
    report = RejectionReport()
    kept: list[EcgRecord] = []
    for record in records:
        result = cleanse_record(record, target=target, r=r)
        if isinstance(result, Rejection):
            report.rejected.append(result)
        else:
            kept.append(result)
            idx = result.label.index if result.label else -1
            report.surviving_counts[idx] = report.surviving_counts.get(idx, 0) + 1
    return kept, report


def cleanse_dataset(manifest: DatasetManifest, out_dir: str | Path,
                    r: int = DEFAULT_COMPONENTS,
                    target: tuple[int, int] = (CLEAN_LEADS, CLEAN_SAMPLES),
                    ) -> tuple[DatasetManifest, RejectionReport]:
    """Cleanse every manifest entry, writing survivors under ``out_dir``.

    Raises InputError when a class loses all of its records: the fusion
    threshold would be undefined downstream.
    """
    out_dir = Path(out_dir)
    records_dir = out_dir / "records"
    try:
        records_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {records_dir}: {exc}") from exc

    report = RejectionReport()
    entries: list[ManifestEntry] = []
    for entry in manifest.entries:
        record = manifest.load_entry(entry)
        result = cleanse_record(record, target=target, r=r)
        if isinstance(result, Rejection):
            report.rejected.append(result)
            continue
        rel = f"records/{result.id}.csv"
        save_record(result, out_dir / rel)
        entries.append(ManifestEntry(rel, entry.label))
        report.surviving_counts[entry.label.index] = \
            report.surviving_counts.get(entry.label.index, 0) + 1

    for cid in manifest.class_ids():
        if report.surviving_counts.get(cid.index, 0) == 0:
            raise InputError(f"class {cid.name!r} has no surviving records after cleansing")

    cleansed = DatasetManifest(entries=entries, seed=manifest.seed,
                               notes=f"cleansed to {target}; {manifest.notes}",
                               base_dir=out_dir)
    cleansed.save(out_dir / "manifest.json")
    return cleansed, report
