"""Cleansing: PCA fitting, the reject/truncate/pad branches, and reports."""

import json

import numpy as np
import pytest

import ecgfusion as ef
from ecgfusion.cleanse import Rejection, cleanse_record, fit_pca


def _record(matrix, k=0, rid="r"):
    return ef.EcgRecord(matrix, ef.ClassId(k), rid)


def _svd_oracle(x, r):
    """Independent eigen-solver route: SVD of the centered data matrix."""
    mean = x.mean(axis=1)
    centered = x - mean[:, None]
    u, s, _ = np.linalg.svd(centered, full_matrices=False)
    variances = s ** 2 / (x.shape[1] - 1)
    return u[:, :r], variances


class TestFitPca:
    def test_rank_one_record(self, rng):
        base = rng.normal(size=50)
        coeffs = rng.normal(size=12)
        record = _record(np.outer(coeffs, base))
        model = fit_pca(record, 1)
        assert model.explained_variance_ratio()[0] >= 0.999

    def test_complete_basis_reconstructs_exactly(self, rng):
        record = _record(rng.normal(size=(12, 40)))
        model = fit_pca(record, 12)
        recon = model.reconstruct(record.leads)
        assert np.abs(recon - record.leads).max() <= 1e-8

    def test_explained_variance_matches_svd_oracle(self):
        rng = np.random.default_rng(77)
        record = _record(rng.normal(size=(12, 300)) * np.linspace(1, 4, 12)[:, None])
        model = fit_pca(record, 3)
        _, oracle_var = _svd_oracle(record.leads, 3)
        oracle_ratio = oracle_var[:3] / oracle_var.sum()
        assert np.abs(model.explained_variance_ratio() - oracle_ratio).max() <= 1e-8

    def test_components_orthonormal(self, rng):
        record = _record(rng.normal(size=(12, 100)))
        model = fit_pca(record, 7)
        gram = model.components.T @ model.components
        assert np.abs(gram - np.eye(7)).max() <= 1e-8

    def test_variances_sorted_and_nonnegative(self, rng):
        model = fit_pca(_record(rng.normal(size=(12, 60))), 12)
        ev = model.explained_variance
        assert (ev >= 0).all()
        assert (np.diff(ev) <= 1e-12).all()

    def test_rank_deficient_reduces_r_with_warning(self, rng):
        low_rank = rng.normal(size=(12, 2)) @ rng.normal(size=(2, 80))
        with pytest.warns(UserWarning, match="rank"):
            model = fit_pca(_record(low_rank), 5)
        assert model.n_components == 2

    def test_preconditions(self, rng):
        record = _record(rng.normal(size=(12, 40)))
        with pytest.raises(ef.ArgumentError):
            fit_pca(record, 0)
        with pytest.raises(ef.ArgumentError):
            fit_pca(record, 13)
        with pytest.raises(ef.ArgumentError):
            fit_pca(_record(rng.normal(size=(12, 5))), 2)


class TestCleanseRecord:
    def test_truncates_long_record_to_prefix(self, rng):
        record = _record(rng.normal(size=(12, 6000)))
        out = cleanse_record(record)
        assert out.leads.shape == (12, 5000)
        assert np.array_equal(out.leads, record.leads[:, :5000])

    def test_rejects_short_record(self, rng):
        out = cleanse_record(_record(rng.normal(size=(12, 2400))))
        assert isinstance(out, Rejection)
        assert "short" in out.reason

    def test_rejects_boundary_length(self, rng):
        assert isinstance(cleanse_record(_record(rng.normal(size=(12, 2500)))), Rejection)

    def test_accepts_just_above_boundary(self, rng):
        out = cleanse_record(_record(rng.normal(size=(12, 2501))))
        assert out.leads.shape == (12, 5000)

    def test_rejects_wrong_lead_count(self, rng):
        out = cleanse_record(_record(rng.normal(size=(11, 5000))))
        assert isinstance(out, Rejection)
        assert "leads" in out.reason

    def test_exact_shape_unchanged(self, rng):
        record = _record(rng.normal(size=(12, 5000)))
        out = cleanse_record(record)
        assert np.array_equal(out.leads, record.leads)

    def test_padding_matches_oracle_reconstruction(self):
        rng = np.random.default_rng(5)
        record = _record(rng.normal(size=(12, 3000)) * np.linspace(0.5, 2, 12)[:, None])
        out = cleanse_record(record, r=5)
        assert out.leads.shape == (12, 5000)
        assert np.array_equal(out.leads[:, :3000], record.leads)
        u_r, _ = _svd_oracle(record.leads, 5)
        oracle = u_r @ (u_r.T @ record.leads)
        assert np.abs(out.leads[:, 3000:] - oracle[:, :2000]).max() <= 1e-8

    def test_padding_lies_in_component_span(self):
        rng = np.random.default_rng(6)
        for cols in (2600, 3333, 4999):
            record = _record(rng.normal(size=(12, cols)))
            out = cleanse_record(record, r=4)
            model = fit_pca(record, 4)
            x_add = out.leads[:, cols:]
            resid = x_add - model.components @ (model.components.T @ x_add)
            assert np.linalg.norm(resid) <= 1e-6 * np.linalg.norm(x_add)

    def test_cyclic_read_when_pad_exceeds_nothing(self):
        # padding needed is always < cols in the accepted range, but the
        # cyclic indexing must still start from column 0
        rng = np.random.default_rng(7)
        record = _record(rng.normal(size=(12, 2600)))
        out = cleanse_record(record, r=3)
        model = fit_pca(record, 3)
        recon = model.reconstruct(record.leads)
        assert np.array_equal(out.leads[:, 2600:], recon[:, :2400])

    def test_deterministic(self, rng):
        record = _record(rng.normal(size=(12, 3210)))
        a = cleanse_record(record, r=5)
        b = cleanse_record(record, r=5)
        assert np.array_equal(a.leads, b.leads)


class TestCleanseDataset:
    def _dataset(self, tmp_path, sizes, seed=3):
        rng = np.random.default_rng(seed)
        entries = []
        (tmp_path / "records").mkdir(parents=True)
        for i, (k, cols) in enumerate(sizes):
            label = ef.ClassId(k)
            rec = ef.EcgRecord(rng.normal(size=(12, cols)), label, f"r{i:03d}")
            rel = f"records/r{i:03d}.csv"
            ef.save_record(rec, tmp_path / rel)
            entries.append(ef.ManifestEntry(rel, label))
        manifest = ef.DatasetManifest(entries, seed=seed, base_dir=tmp_path)
        manifest.save(tmp_path / "manifest.json")
        return manifest

    def test_already_clean_passes_through(self, tmp_path):
        manifest = self._dataset(tmp_path / "in", [(0, 5000), (0, 5000), (1, 5000)])
        cleansed, report = ef.cleanse_dataset(manifest, tmp_path / "out")
        assert not report.rejected
        assert len(cleansed.entries) == 3
        for record in cleansed.iter_records():
            assert record.leads.shape == (12, 5000)

    def test_rejections_are_exactly_the_short_records(self, tmp_path):
        sizes = [(0, 2000), (0, 2500), (0, 2501), (0, 4000), (1, 2400), (1, 6000)]
        manifest = self._dataset(tmp_path / "in", sizes)
        cleansed, report = ef.cleanse_dataset(manifest, tmp_path / "out")
        rejected = {r.record_id for r in report.rejected}
        assert rejected == {"r000", "r001", "r004"}
        assert report.surviving_counts == {0: 2, 1: 1}
        assert len(cleansed.entries) == 3

    def test_class_wiped_out_is_hard_error(self, tmp_path):
        manifest = self._dataset(tmp_path / "in", [(0, 5000), (1, 2000)])
        with pytest.raises(ef.InputError, match="no surviving records"):
            ef.cleanse_dataset(manifest, tmp_path / "out")

    def test_report_json_schema(self, tmp_path):
        manifest = self._dataset(tmp_path / "in", [(0, 5000), (0, 2000), (1, 5000)])
        _, report = ef.cleanse_dataset(manifest, tmp_path / "out")
        payload = report.to_json()
        assert payload["rejected"] == [{"id": "r001", "reason": report.rejected[0].reason}]
        json.dumps(payload)  # serializable
