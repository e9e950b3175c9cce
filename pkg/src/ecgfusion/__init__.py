"""Wavelet-fusion rebalancing toolkit for imbalanced multi-lead ECG datasets.

Pipeline: cleanse records to a fixed shape, fuse same-class pairs in the
wavelet domain, build per-class feature libraries, regenerate balanced
train/test sets, optionally inject SNR-calibrated noise, and verify the
classification benefit with a small gradient-checked network.
"""

__version__ = "0.1.0"

from .cleanse import PcaModel, Rejection, RejectionReport, cleanse_dataset, \
    cleanse_record, cleanse_records, fit_pca
from .classify import Metrics, Model, NetConfig, compare_augmentation, cross_validate, \
    evaluate, featurize, featurize_batch, gradient_check, metrics_from_scores, train, \
    train_on_features
from .core_data import CLEAN_LEADS, CLEAN_SAMPLES, SAMPLING_RATE_HZ, ClassId, \
    DatasetManifest, EcgRecord, ManifestEntry, RngStream, load_record, save_record, \
    synthesize_dataset, synthetic_record
from .errors import ArgumentError, DataError, FormatError, InputError, InternalError, \
    OutputError, ToolkitError
from .fusion import FeatureLibrary, FusedSample, FusionConfig, PipelineReport, \
    RebalancedDataset, build_test_library, build_train_libraries, enumerate_pairs, \
    intra_class_fuse, load_rebalanced, regenerate_dataset, run_pipeline, save_rebalanced, \
    select_threshold
from .noise import NOISE_KINDS, SNR_SWEEP_DB, NoiseSpec, generate_noise, inject, \
    inject_external, measure_snr_db, sweep
from .wavelet import FilterBank, SubbandSet, analyze_2d, bior13, fuse_signals, \
    synthesize_2d

__all__ = [name for name in dir() if not name.startswith("_")]
