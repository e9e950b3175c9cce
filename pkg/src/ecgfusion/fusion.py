"""Class-rebalancing pipeline: threshold selection, pairwise intra-class
fusion, feature-library construction, and train/test regeneration.

Every class is first trimmed to the size of the smallest class.  Pairs of
selected records are fused in the wavelet domain; the fused pool is grouped
into ``p`` train prototypes per class, averaged once more into a single
test prototype.  Originals are then split 80/20 and fused with the
prototypes of their own class, yielding a balanced dataset.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_data import (ClassId, DatasetManifest, EcgRecord, RngStream, load_record,
                        save_record)
from .errors import ArgumentError, InputError, InternalError, OutputError, ToolkitError
from .wavelet import FilterBank, analyze_2d, bior13, fuse_subbands, synthesize_2d

logger = logging.getLogger(__name__)

PAIR_BUDGET = 50_000        # default cap on per-class fused pairs
SMALL_CLASS_LIMIT = 256     # below this, all samples participate in pairing


@dataclass(frozen=True)
class FusionConfig:
    """Pipeline parameters.

    ``delta`` is the fraction of each class's selected records that join
    pairwise fusion; ``None`` means 1.0 for small classes and otherwise the
    largest value keeping the pair count within ``pair_budget``.  ``p`` is
    the number of train feature libraries per class; ``split`` the
    train+validation fraction.
    """

    delta: float | None = None
    p: int = 4
    split: float = 0.8
    seed: RngStream = field(default_factory=lambda: RngStream(0))
    pair_budget: int = PAIR_BUDGET

    def __post_init__(self):
        if self.delta is not None and not 0.0 < self.delta <= 1.0:
            raise ArgumentError(f"delta must lie in (0, 1], got {self.delta}")
        if self.p < 1:
            raise ArgumentError(f"p must be a positive integer, got {self.p}")
        if not 0.0 < self.split < 1.0:
            raise ArgumentError(f"split must lie in (0, 1), got {self.split}")
        if self.pair_budget < 1:
            raise ArgumentError(f"pair_budget must be positive, got {self.pair_budget}")

    def resolve_delta(self, n: int) -> float:
        if self.delta is not None:
            return self.delta
        if n <= SMALL_CLASS_LIMIT:
            return 1.0
        s = int((1 + math.isqrt(1 + 8 * self.pair_budget)) // 2)
        while s * (s - 1) // 2 > self.pair_budget:
            s -= 1
        return min(1.0, s / n)


@dataclass(frozen=True)
class FeatureLibrary:
    """Fused prototype records for one class, in either the train role
    (``p`` prototypes) or the test role (exactly one)."""

    class_id: ClassId
    prototypes: list[np.ndarray]
    role: str

    def __post_init__(self):
        if self.role not in ("train", "test"):
            raise ArgumentError(f"role must be 'train' or 'test', got {self.role!r}")
        if not self.prototypes:
            raise ArgumentError("a feature library needs at least one prototype")
        if self.role == "test" and len(self.prototypes) != 1:
            raise ArgumentError(f"test library must hold exactly one prototype, "
                                f"got {len(self.prototypes)}")
        shapes = {p.shape for p in self.prototypes}
        if len(shapes) != 1:
            raise ArgumentError(f"prototype shapes differ: {sorted(shapes)}")

    @property
    def p(self) -> int:
        return len(self.prototypes)


@dataclass(frozen=True)
class FusedSample:
    """One regenerated sample with its provenance."""

    matrix: np.ndarray
    label: ClassId
    source_id: str
    library_index: int
    id: str

    def __post_init__(self):
        arr = np.asarray(self.matrix, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "matrix", arr)


@dataclass
class PipelineReport:
    n: int
    delta: float
    p: int
    m: int
    leftover: int
    train_per_class: int
    test_per_class: int

    def to_json(self) -> dict:
        return {"n": self.n, "delta": self.delta, "p": self.p, "m": self.m,
                "leftover": self.leftover, "train_per_class": self.train_per_class,
                "test_per_class": self.test_per_class}


@dataclass
class RebalancedDataset:
    train: list[FusedSample]
    test: list[FusedSample]
    report: PipelineReport


@contextmanager
def _stage(name: str):
    """Tag toolkit errors with the pipeline stage that raised them."""
    try:
        yield
    except ToolkitError as exc:
        raise type(exc)(f"stage {name}: {exc}") from exc


def select_balanced(records_by_class: dict[int, list[EcgRecord]],
                    seed: RngStream) -> tuple[int, dict[int, list[EcgRecord]]]:
    """Trim every class to the smallest class size by uniform sampling.

    Classes already at the threshold keep all records; larger classes
    contribute a random subset in stable (input) order.
    """
    if not records_by_class:
        raise InputError("no classes to select from")
    counts = {k: len(v) for k, v in records_by_class.items()}
    n = min(counts.values())
    if n < 2:
        small = min(counts, key=counts.get)
        raise InputError(f"class {small} has {n} record(s); need at least 2 for fusion")
    selected: dict[int, list[EcgRecord]] = {}
    for k in sorted(records_by_class):
        records = records_by_class[k]
        if len(records) == n:
            selected[k] = list(records)
        else:
            rng = seed.substream(f"select/class{k}").generator()
            idx = np.sort(rng.choice(len(records), size=n, replace=False))
            selected[k] = [records[i] for i in idx]
    return n, selected


def select_threshold(manifest: DatasetManifest,
                     seed: RngStream) -> tuple[int, dict[int, list[EcgRecord]]]:
    """Load a balanced per-class sample of n = min(class count) records."""
    by_class: dict[int, list] = {}
    for entry in manifest.entries:
        by_class.setdefault(entry.label.index, []).append(entry)
    counts = {k: len(v) for k, v in by_class.items()}
    n = min(counts.values())
    if n < 2:
        small = min(counts, key=counts.get)
        raise InputError(f"class {small} has {n} record(s); need at least 2 for fusion")
    selected: dict[int, list[EcgRecord]] = {}
    for k in sorted(by_class):
        entries = by_class[k]
        if len(entries) > n:
            rng = seed.substream(f"select/class{k}").generator()
            keep = np.sort(rng.choice(len(entries), size=n, replace=False))
            entries = [entries[i] for i in keep]
        selected[k] = [manifest.load_entry(e) for e in entries]
    return n, selected


def enumerate_pairs(n: int, delta: float, seed: RngStream) -> list[tuple[int, int]]:
    """All unordered pairs over s = floor(n*delta) indices chosen without
    replacement (all n when delta is 1): exactly s(s-1)/2 pairs."""
    if not 0.0 < delta <= 1.0:
        raise ArgumentError(f"delta must lie in (0, 1], got {delta}")
    s = int(math.floor(n * delta))
    if s < 2:
        raise ArgumentError(f"floor(n*delta) = {s} < 2: nothing to pair "
                            f"(n={n}, delta={delta})")
    if s == n:
        chosen = np.arange(n)
    else:
        rng = seed.substream("pairs").generator()
        chosen = np.sort(rng.choice(n, size=s, replace=False))
    return list(itertools.combinations(chosen.tolist(), 2))


def intra_class_fuse(records: list[np.ndarray], pairs: list[tuple[int, int]],
                     fb: FilterBank) -> list[np.ndarray]:
    """Fuse each pair with equal weights.

    Each record is analyzed once and its subbands reused across pairs;
    this is bit-identical to calling fuse_signals per pair.
    """
    needed = {i for pair in pairs for i in pair}
    analyzed = {i: analyze_2d(records[i], fb) for i in sorted(needed)}
    half = np.array([0.5, 0.5])
    out = []
    for i, j in pairs:
        fused = fuse_subbands([analyzed[i], analyzed[j]], half)
        out.append(synthesize_2d(fused, fb))
    return out


def library_group_sizes(n_fused: int, p: int) -> tuple[int, int]:
    """(records per library, leftover) when grouping n_fused into p libraries."""
    m = n_fused // p
    return m, n_fused - p * m


def build_train_libraries(fused: list[np.ndarray], p: int, fb: FilterBank,
                          seed: RngStream, class_id: ClassId) -> FeatureLibrary:
    """Group the fused pool into p disjoint groups of m = floor(|fused|/p)
    by sampling without replacement, fusing each group into one prototype.

    Leftover items (fewer than m) are discarded; the discard count is
    logged and surfaces in the pipeline report.
    """
    if p > len(fused):
        raise ArgumentError(f"p={p} exceeds the fused pool size {len(fused)}")
    m, leftover = library_group_sizes(len(fused), p)
    rng = seed.substream("group").generator()
    perm = rng.permutation(len(fused))
    if leftover:
        logger.debug("class %s: discarding %d leftover fused records", class_id.name, leftover)
    weights = np.full(m, 1.0 / m)
    prototypes = []
    for g in range(p):
        group = perm[g * m:(g + 1) * m]
        if m == 1:
            prototypes.append(np.array(fused[group[0]], dtype=np.float64))
            continue
        parts = [analyze_2d(fused[i], fb) for i in group]
        prototypes.append(synthesize_2d(fuse_subbands(parts, weights), fb))
    return FeatureLibrary(class_id=class_id, prototypes=prototypes, role="train")


def build_test_library(train_lib: FeatureLibrary, fb: FilterBank) -> FeatureLibrary:
    """Average the train prototypes into the single test prototype."""
    if train_lib.role != "train":
        raise ArgumentError(f"expected a train library, got role {train_lib.role!r}")
    if train_lib.p == 1:
        prototype = train_lib.prototypes[0]
    else:
        weights = np.full(train_lib.p, 1.0 / train_lib.p)
        parts = [analyze_2d(x, fb) for x in train_lib.prototypes]
        prototype = synthesize_2d(fuse_subbands(parts, weights), fb)
    return FeatureLibrary(class_id=train_lib.class_id, prototypes=[prototype], role="test")


def regenerate_dataset(selected: dict[int, list[EcgRecord]],
                       libraries: dict[int, tuple[FeatureLibrary, FeatureLibrary]],
                       config: FusionConfig,
                       fb: FilterBank | None = None) -> tuple[list[FusedSample], list[FusedSample]]:
    """Split originals per class, fuse train originals with every train
    prototype and test originals with the test prototype.

    Per class this yields floor(split*n)*p train and n - floor(split*n)
    test samples, with per-sample provenance.
    """
    if fb is None:
        fb = bior13()
    half = np.array([0.5, 0.5])
    train: list[FusedSample] = []
    test: list[FusedSample] = []
    for k in sorted(selected):
        if k not in libraries:
            raise InputError(f"class {k} has no feature libraries")
        train_lib, test_lib = libraries[k]
        records = selected[k]
        n = len(records)
        n_train = int(math.floor(config.split * n))
        rng = config.seed.substream(f"split/class{k}").generator()
        perm = rng.permutation(n)
        train_idx = np.sort(perm[:n_train])
        test_idx = np.sort(perm[n_train:])
        proto_subbands = [analyze_2d(proto, fb) for proto in train_lib.prototypes]
        test_subband = analyze_2d(test_lib.prototypes[0], fb)
        for i in train_idx:
            rec = records[i]
            rec_subbands = analyze_2d(rec.leads, fb)
            for j, proto in enumerate(proto_subbands):
                fused = synthesize_2d(fuse_subbands([rec_subbands, proto], half), fb)
                train.append(FusedSample(matrix=fused, label=rec.label,
                                         source_id=rec.id, library_index=j,
                                         id=f"{rec.id}*lib{j}"))
        for i in test_idx:
            rec = records[i]
            fused = synthesize_2d(fuse_subbands([analyze_2d(rec.leads, fb), test_subband],
                                                half), fb)
            test.append(FusedSample(matrix=fused, label=rec.label,
                                    source_id=rec.id, library_index=0,
                                    id=f"{rec.id}*testlib"))
    return train, test


def rebalance_class(records: list[EcgRecord], config: FusionConfig,
                    fb: FilterBank, class_id: ClassId,
                    ) -> tuple[list[FusedSample], list[FusedSample], dict]:
    """Run pairing, library construction, and regeneration for one class."""
    n = len(records)
    delta = config.resolve_delta(n)
    class_seed = config.seed.substream(f"class{class_id.index}")
    pairs = enumerate_pairs(n, delta, class_seed)
    matrices = [r.leads for r in records]
    fused = intra_class_fuse(matrices, pairs, fb)
    m, leftover = library_group_sizes(len(fused), config.p)
    train_lib = build_train_libraries(fused, config.p, fb, class_seed, class_id)
    test_lib = build_test_library(train_lib, fb)
    train, test = regenerate_dataset({class_id.index: records},
                                     {class_id.index: (train_lib, test_lib)},
                                     config, fb)
    stats = {"n": n, "delta": delta, "s": int(math.floor(n * delta)),
             "fused": len(fused), "m": m, "leftover": leftover,
             "train": len(train), "test": len(test)}
    return train, test, stats


def run_pipeline(manifest: DatasetManifest, config: FusionConfig,
                 fb: FilterBank | None = None) -> RebalancedDataset:
    """Compose all stages over a cleansed manifest into a balanced dataset."""
    if fb is None:
        fb = bior13()
    with _stage("select-threshold"):
        n, selected = select_threshold(manifest, config.seed)
    class_ids = {k: recs[0].label for k, recs in selected.items()}
    train: list[FusedSample] = []
    test: list[FusedSample] = []
    stats_by_class: dict[int, dict] = {}
    for k in sorted(selected):
        with _stage(f"rebalance-class-{k}"):
            cls_train, cls_test, stats = rebalance_class(selected[k], config, fb, class_ids[k])
        train.extend(cls_train)
        test.extend(cls_test)
        stats_by_class[k] = stats
    first = stats_by_class[min(stats_by_class)]
    report = PipelineReport(n=n, delta=first["delta"], p=config.p, m=first["m"],
                            leftover=first["leftover"],
                            train_per_class=first["train"], test_per_class=first["test"])
    for k, stats in stats_by_class.items():
        if stats["train"] != report.train_per_class or stats["test"] != report.test_per_class:
            raise InternalError(f"class {k} produced unbalanced counts: {stats}")
    logger.info("rebalanced %d classes: n=%d, delta=%g, p=%d, m=%d, "
                "train/class=%d, test/class=%d", len(selected), n, report.delta,
                report.p, report.m, report.train_per_class, report.test_per_class)
    return RebalancedDataset(train=train, test=test, report=report)


def _sample_payload(split: str, i: int, sample: FusedSample) -> dict:
    return {"path": f"{split}/{split}_{i:05d}.csv", "label": sample.label.index,
            "name": sample.label.name, "source_id": sample.source_id,
            "library_index": sample.library_index, "id": sample.id}


def save_rebalanced(dataset: RebalancedDataset, out_dir: str | Path) -> None:
    """Persist a rebalanced dataset as CSV records plus a JSON index."""
    out_dir = Path(out_dir)
    payload = {"report": dataset.report.to_json(), "train": [], "test": []}
    for split, samples in (("train", dataset.train), ("test", dataset.test)):
        try:
            (out_dir / split).mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OutputError(f"cannot create {out_dir / split}: {exc}") from exc
        for i, sample in enumerate(samples):
            entry = _sample_payload(split, i, sample)
            save_record(EcgRecord(sample.matrix, label=sample.label, id=sample.id),
                        out_dir / entry["path"])
            payload[split].append(entry)
    try:
        with open(out_dir / "dataset.json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OutputError(f"cannot write {out_dir / 'dataset.json'}: {exc}") from exc


def load_rebalanced(out_dir: str | Path) -> RebalancedDataset:
    """Load a dataset previously written by save_rebalanced."""
    out_dir = Path(out_dir)
    index = out_dir / "dataset.json"
    if not index.is_file():
        raise InputError(f"no dataset.json under {out_dir}")
    with open(index, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    splits: dict[str, list[FusedSample]] = {}
    for split in ("train", "test"):
        samples = []
        for entry in payload[split]:
            label = ClassId(int(entry["label"]), entry.get("name", ""))
            record = load_record(out_dir / entry["path"], label=label)
            samples.append(FusedSample(matrix=record.leads, label=label,
                                       source_id=entry["source_id"],
                                       library_index=int(entry["library_index"]),
                                       id=entry["id"]))
        splits[split] = samples
    report = PipelineReport(**payload["report"])
    return RebalancedDataset(train=splits["train"], test=splits["test"], report=report)
