"""scikit-learn style front door: fit on a dataset index, transform batches.

These wrappers expose the engine through the familiar estimator API
(``fit`` / ``transform`` / ``get_params``) so it drops into sklearn-flavored
pipelines and grid searches. ``fit`` binds the donor pools; ``transform`` is
deterministic in (input, params, random_state). The functional core stays in
:mod:`defectinject.balance` and :mod:`defectinject.inject`.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .balance import BalanceConfig, balance_batch
from .dataset import load_dataset
from .inject import InjectionConfig, inject
from .model import Batch, DatasetIndex, Sample
from .poisson import SolverConfig
from .transforms import TransformParams


def _as_index(X) -> DatasetIndex:
    if isinstance(X, DatasetIndex):
        return X
    if isinstance(X, (str, Path)):
        path = Path(X)
        layout = "directory" if path.is_dir() else "manifest"
        return load_dataset(path, layout=layout)
    raise TypeError(
        f"expected a DatasetIndex or a dataset path, got {type(X).__name__}"
    )


class _InjectionParamsMixin:
    """Shared flat-parameter surface mapped onto the config dataclasses."""

    def _injection_config(self) -> InjectionConfig:
        return InjectionConfig(
            poisson_probability=self.poisson_probability,
            transform=TransformParams(
                flip_h=self.flip_h,
                flip_v=self.flip_v,
                rotation=self.rotation,
                scale_range=(self.scale_min, self.scale_max),
                translate=self.translate,
            ),
            solver=SolverConfig(
                rel_tolerance=self.rel_tolerance,
                max_iterations=self.max_iterations,
                backend=self.solver_backend,
            ),
            max_placement_retries=self.max_placement_retries,
        )

    def _check_fitted(self):
        if getattr(self, "index_", None) is None:
            raise NotFittedError(
                f"{type(self).__name__} must be fitted on a dataset index first"
            )


class BatchBalancer(BaseEstimator, TransformerMixin, _InjectionParamsMixin):
    """Balance class counts in segmentation batches by injecting defects.

    ``fit(X)`` accepts a DatasetIndex or a dataset path (manifest file or
    directory layout); ``transform(X)`` accepts a Batch or a sequence of
    Samples and returns a Batch whose per-class counts differ by at most
    ``uniformity_slack`` (unless the frees ran out; see
    ``last_outcome_.saturated``).
    """

    def __init__(
        self,
        uniformity_slack: int = 1,
        max_rounds: int = 8,
        poisson_probability: float = 0.5,
        flip_h: float = 0.5,
        flip_v: float = 0.5,
        rotation: float = 180.0,
        scale_min: float = 0.8,
        scale_max: float = 1.25,
        translate: bool = True,
        rel_tolerance: float = 1e-8,
        max_iterations: int | None = None,
        solver_backend: str = "cg",
        max_placement_retries: int = 16,
        random_state: int = 0,
    ):
        self.uniformity_slack = uniformity_slack
        self.max_rounds = max_rounds
        self.poisson_probability = poisson_probability
        self.flip_h = flip_h
        self.flip_v = flip_v
        self.rotation = rotation
        self.scale_min = scale_min
        self.scale_max = scale_max
        self.translate = translate
        self.rel_tolerance = rel_tolerance
        self.max_iterations = max_iterations
        self.solver_backend = solver_backend
        self.max_placement_retries = max_placement_retries
        self.random_state = random_state

    def fit(self, X, y=None):
        self.index_ = _as_index(X)
        if not self.index_.class_pools:
            raise ValueError("dataset index has no donor pools to inject from")
        return self

    def transform(self, X) -> Batch:
        self._check_fitted()
        batch = self._as_batch(X)
        cfg = BalanceConfig(
            injection=self._injection_config(),
            uniformity_slack=self.uniformity_slack,
            max_rounds=self.max_rounds,
        )
        outcome = balance_batch(batch, self.index_, cfg, seed=self.random_state)
        self.last_outcome_ = outcome
        return outcome.batch

    def _as_batch(self, X) -> Batch:
        if isinstance(X, Batch):
            return X
        if isinstance(X, (list, tuple)) and X and isinstance(X[0], Sample):
            return Batch(samples=tuple(X), num_classes=self.index_.num_classes)
        raise TypeError(
            f"expected a Batch or a sequence of Samples, got {type(X).__name__}"
        )


class DefectInjector(BaseEstimator, TransformerMixin, _InjectionParamsMixin):
    """Inject one donor defect into each defect-free sample.

    ``class_id=None`` draws the donor class uniformly per sample; already
    defective samples pass through untouched. Provenance for the last
    transform is kept in ``last_records_`` (None for untouched samples).
    """

    def __init__(
        self,
        class_id: int | None = None,
        poisson_probability: float = 0.5,
        flip_h: float = 0.5,
        flip_v: float = 0.5,
        rotation: float = 180.0,
        scale_min: float = 0.8,
        scale_max: float = 1.25,
        translate: bool = True,
        rel_tolerance: float = 1e-8,
        max_iterations: int | None = None,
        solver_backend: str = "cg",
        max_placement_retries: int = 16,
        random_state: int = 0,
    ):
        self.class_id = class_id
        self.poisson_probability = poisson_probability
        self.flip_h = flip_h
        self.flip_v = flip_v
        self.rotation = rotation
        self.scale_min = scale_min
        self.scale_max = scale_max
        self.translate = translate
        self.rel_tolerance = rel_tolerance
        self.max_iterations = max_iterations
        self.solver_backend = solver_backend
        self.max_placement_retries = max_placement_retries
        self.random_state = random_state

    def fit(self, X, y=None):
        self.index_ = _as_index(X)
        if not self.index_.class_pools:
            raise ValueError("dataset index has no donor pools to inject from")
        if self.class_id is not None and self.class_id not in self.index_.class_pools:
            raise ValueError(f"no donors for class {self.class_id}")
        return self

    def transform(self, X) -> list[Sample]:
        self._check_fitted()
        samples = [X] if isinstance(X, Sample) else list(X)
        cfg = self._injection_config()
        class_ids = sorted(self.index_.class_pools)
        out: list[Sample] = []
        records = []
        for position, sample in enumerate(samples):
            if not sample.is_defect_free():
                out.append(sample)
                records.append(None)
                continue
            rng = np.random.default_rng(
                np.random.SeedSequence(self.random_state, spawn_key=(position,))
            )
            class_id = (
                self.class_id
                if self.class_id is not None
                else class_ids[int(rng.integers(len(class_ids)))]
            )
            pool = self.index_.class_pools[class_id]
            donor = pool[int(rng.integers(len(pool)))]
            injected, record = inject(
                sample.image,
                donor,
                cfg,
                rng,
                seed=self.random_state,
                target_id=sample.source_id,
            )
            out.append(injected)
            records.append(record)
        self.last_records_ = records
        return out
