"""Parametric BW/EM/MA noise generators and SNR-calibrated injection.

Baseline wander (bw) is a sum of sub-0.5 Hz sinusoids, electrode motion
(em) is burst-gated white noise, and muscle artifact (ma) is white noise
band-limited to roughly 5-50 Hz by cascaded moving averages followed by
differencing.  Every generator emits unit RMS per lead; injection scales
the noise so the measured whole-matrix SNR equals the request exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core_data import SAMPLING_RATE_HZ, EcgRecord, RngStream, load_record
from .errors import ArgumentError, DataError
from .fusion import FusedSample

NOISE_KINDS = ("bw", "em", "ma")

# Standard 20-level SNR sweep, in dB, used by the robustness protocol.
SNR_SWEEP_DB = (-27.0, -18.0, -12.0, -10.0, -9.0, -8.0, -7.0, -6.0, -5.0,
                -4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 6.0, 9.0, 12.0)

SNR_GUARD_DB = 40.0

_BW_MIN_HZ, _BW_MAX_HZ = 0.05, 0.5
_BW_TONES = 3
_MA_WINDOW = 8          # moving-average window at the nominal rate
_MA_PASSES = 4
_MA_DIFFS = 2
_EM_FLOOR = 0.12
_EM_MAX_BURSTS = 5


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    snr_db: float
    seed: RngStream

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ArgumentError(f"unknown noise kind {self.kind!r}; "
                                f"expected one of {NOISE_KINDS}")
        if not -SNR_GUARD_DB <= self.snr_db <= SNR_GUARD_DB:
            raise ArgumentError(f"snr_db {self.snr_db} outside guard range "
                                f"[-{SNR_GUARD_DB}, {SNR_GUARD_DB}]")


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(x * x, axis=1, keepdims=True))
    return x / rms


def _baseline_wander(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    # Frequencies snap to the periodogram grid so the spectral mass stays
    # below the band edge exactly; fall back to the fundamental when the
    # record is too short to resolve the band.
    df = SAMPLING_RATE_HZ / cols
    bins = np.arange(1, cols // 2 + 1)
    candidates = bins[(bins * df >= _BW_MIN_HZ) & (bins * df <= _BW_MAX_HZ)]
    if candidates.size == 0:
        candidates = np.array([1])
    n_tones = min(_BW_TONES, candidates.size)
    # uniform without-replacement tone pick per lead
    pick = np.argsort(rng.random((rows, candidates.size)), axis=1)[:, :n_tones]
    tones = candidates[pick]
    amps = rng.uniform(0.5, 1.5, size=(rows, n_tones))
    phases = rng.uniform(0.0, 2 * np.pi, size=(rows, n_tones))
    t = np.arange(cols)
    freqs = tones * df
    waves = np.sin(2 * np.pi * freqs[:, :, None] * t[None, None, :] / SAMPLING_RATE_HZ
                   + phases[:, :, None])
    out = (amps[:, :, None] * waves).sum(axis=1)
    return _normalize_rows(out)


def _electrode_motion(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    white = rng.standard_normal(shape)
    n_bursts = rng.integers(2, _EM_MAX_BURSTS + 1, size=rows)
    centres = rng.uniform(0, cols, size=(rows, _EM_MAX_BURSTS))
    widths = rng.uniform(0.01 * cols, 0.05 * cols, size=(rows, _EM_MAX_BURSTS))
    heights = rng.uniform(0.5, 1.5, size=(rows, _EM_MAX_BURSTS))
    active = np.arange(_EM_MAX_BURSTS)[None, :] < n_bursts[:, None]
    t = np.arange(cols)
    bumps = np.exp(-0.5 * ((t[None, None, :] - centres[:, :, None]) / widths[:, :, None]) ** 2)
    envelope = _EM_FLOOR + ((heights * active)[:, :, None] * bumps).sum(axis=1)
    return _normalize_rows(white * envelope)


def _circular_moving_average(x: np.ndarray, window: int) -> np.ndarray:
    pad = np.concatenate([x[:, -(window - 1):], x], axis=1)
    csum = np.cumsum(pad, axis=1)
    out = np.empty_like(x)
    out[:, 0] = csum[:, window - 1]
    out[:, 1:] = csum[:, window:] - csum[:, :x.shape[1] - 1]
    return out / window


def _muscle_artifact(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal(shape)
    window = max(2, min(_MA_WINDOW, shape[1]))
    for _ in range(_MA_PASSES):
        x = _circular_moving_average(x, window)
    for _ in range(_MA_DIFFS):
        x = x - np.roll(x, 1, axis=1)
    return _normalize_rows(x)


def generate_noise(kind: str, shape: tuple[int, int], seed: RngStream) -> np.ndarray:
    """Unit-RMS-per-lead noise matrix of the requested kind, deterministic
    given the seed."""
    if kind not in NOISE_KINDS:
        raise ArgumentError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    rows, cols = shape
    if rows < 1 or cols < 2:
        raise ArgumentError(f"bad noise shape {shape}")
    rng = seed.substream(f"noise/{kind}").generator()
    if kind == "bw":
        return _baseline_wander(shape, rng)
    if kind == "em":
        return _electrode_motion(shape, rng)
    return _muscle_artifact(shape, rng)


def measure_snr_db(signal: np.ndarray, noise: np.ndarray) -> float:
    """10*log10 of mean-square signal power over mean-square noise power."""
    p_sig = float(np.mean(signal * signal))
    p_noise = float(np.mean(noise * noise))
    if p_noise == 0.0:
        raise DataError("noise power is zero; SNR undefined")
    return 10.0 * np.log10(p_sig / p_noise)


def _scale_and_add(record: EcgRecord, noise: np.ndarray, snr_db: float,
                   suffix: str) -> EcgRecord:
    x = record.leads
    p_sig = float(np.mean(x * x))
    if p_sig == 0.0:
        raise DataError(f"record {record.id!r} has zero power; SNR undefined")
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x.shape:
        raise ArgumentError(f"noise shape {noise.shape} does not match record "
                            f"shape {x.shape}")
    p_noise = float(np.mean(noise * noise))
    if p_noise == 0.0:
        raise DataError("noise matrix has zero power")
    alpha = np.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0)))
    return EcgRecord(x + alpha * noise, label=record.label, id=f"{record.id}+{suffix}")


def inject(record: EcgRecord, spec: NoiseSpec,
           noise: np.ndarray | None = None) -> EcgRecord:
    """Additively inject noise scaled to the requested SNR.

    The clean record is left untouched; pass ``noise`` to substitute an
    externally recorded matrix for the parametric generator.
    """
    if noise is None:
        noise = generate_noise(spec.kind, record.leads.shape, spec.seed)
    return _scale_and_add(record, noise, spec.snr_db, f"{spec.kind}{spec.snr_db:g}dB")


def inject_external(record: EcgRecord, noise: np.ndarray, snr_db: float) -> EcgRecord:
    """Inject an externally supplied noise matrix at the requested SNR."""
    if not -SNR_GUARD_DB <= snr_db <= SNR_GUARD_DB:
        raise ArgumentError(f"snr_db {snr_db} outside guard range "
                            f"[-{SNR_GUARD_DB}, {SNR_GUARD_DB}]")
    return _scale_and_add(record, noise, snr_db, f"file{snr_db:g}dB")


def load_noise_file(path: str | Path, shape: tuple[int, int]) -> np.ndarray:
    """Read an external noise record (core CSV format) and crop it to shape."""
    record = load_record(path)
    rows, cols = shape
    if record.n_leads < rows or record.n_samples < cols:
        raise ArgumentError(f"noise file {path} is {record.leads.shape}, smaller "
                            f"than the requested {shape}")
    return np.array(record.leads[:rows, :cols])


def sweep(test_samples: Sequence[FusedSample], kinds: Sequence[str],
          levels: Sequence[float], seed: RngStream,
          ) -> dict[tuple[str, float], list[FusedSample]]:
    """One noisy copy of the test split per (kind, level); deterministic.

    Seeds are derived per (kind, level, sample id), so the result does not
    depend on iteration order.
    """
    result: dict[tuple[str, float], list[FusedSample]] = {}
    for kind in kinds:
        for level in levels:
            noisy: list[FusedSample] = []
            for sample in test_samples:
                spec = NoiseSpec(kind=kind, snr_db=float(level),
                                 seed=seed.substream(f"{kind}/{level:g}/{sample.id}"))
                record = EcgRecord(sample.matrix, label=sample.label, id=sample.id)
                injected = inject(record, spec)
                noisy.append(FusedSample(matrix=injected.leads, label=sample.label,
                                         source_id=sample.source_id,
                                         library_index=sample.library_index,
                                         id=injected.id))
            result[(kind, float(level))] = noisy
    return result
