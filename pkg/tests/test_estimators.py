from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from defectinject.estimators import BatchBalancer, DefectInjector
from defectinject.model import Batch, class_histogram

from conftest import make_free


class TestBatchBalancer:
    def make(self, **kw):
        defaults = dict(
            uniformity_slack=0, rotation=20.0, scale_min=0.9, scale_max=1.1,
            random_state=5,
        )
        defaults.update(kw)
        return BatchBalancer(**defaults)

    def test_get_params_round_trip(self):
        est = self.make()
        params = est.get_params()
        assert params["uniformity_slack"] == 0
        cloned = clone(est)
        assert cloned.get_params() == params

    def test_requires_fit(self, rng):
        with pytest.raises(NotFittedError):
            self.make().transform([make_free(rng)])

    def test_fit_transform_balances(self, rng, small_index):
        est = self.make().fit(small_index)
        frees = [make_free(rng, name=f"f{i}") for i in range(4)]
        out = est.transform(frees)
        assert isinstance(out, Batch)
        assert class_histogram(out).as_list() == [2, 2]
        assert not est.last_outcome_.saturated

    def test_transform_is_deterministic(self, rng, small_index):
        est = self.make().fit(small_index)
        frees = [make_free(rng, name=f"f{i}") for i in range(4)]
        a = est.transform(frees)
        b = est.transform(frees)
        for s1, s2 in zip(a.samples, b.samples):
            assert np.array_equal(s1.image.data, s2.image.data)

    def test_fit_from_manifest_path(self, tmp_path, rng):
        from test_dataset import build_tree
        from defectinject.dataset import scan_directory_tree, write_manifest

        build_tree(tmp_path, rng, free=2, per_class={1: 2})
        write_manifest(scan_directory_tree(tmp_path), tmp_path / "manifest.jsonl")
        est = self.make().fit(tmp_path / "manifest.jsonl")
        assert est.index_.pool_sizes() == {0: 2, 1: 2}


class TestDefectInjector:
    def test_injects_every_free_sample(self, rng, small_index):
        est = DefectInjector(rotation=15.0, scale_min=0.9, scale_max=1.1,
                             random_state=3).fit(small_index)
        frees = [make_free(rng, name=f"f{i}") for i in range(3)]
        out = est.transform(frees)
        assert all(not s.is_defect_free() for s in out)
        assert all(r is not None for r in est.last_records_)

    def test_fixed_class(self, rng, small_index):
        est = DefectInjector(class_id=2, rotation=0.0, flip_h=0, flip_v=0,
                             scale_min=1.0, scale_max=1.0).fit(small_index)
        out = est.transform([make_free(rng)])
        assert out[0].defect_class == 2

    def test_defective_passthrough(self, rng, small_index):
        from conftest import make_defect

        defective = make_defect(rng, 1)
        est = DefectInjector().fit(small_index)
        out = est.transform([defective])
        assert out[0] is defective
        assert est.last_records_ == [None]

    def test_unknown_class_rejected_at_fit(self, small_index):
        with pytest.raises(ValueError, match="no donors for class 9"):
            DefectInjector(class_id=9).fit(small_index)
