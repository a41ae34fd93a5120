"""Batch balancing: convert defect-free samples into minority-class defective
ones until the per-class counts are uniform.

The loop walks the batch's defect-free samples in order. Before each
injection it recomputes the minority class (smallest count, ties to the
lowest id) and stops as soon as the histogram gap (max - min) is within the
configured slack, so remaining free samples stay untouched. A batch that
contains no defects at all would be "uniform" vacuously; such batches instead
receive one full pass of injections over every free sample, which water-fills
the classes as evenly as possible. Already-defective samples are never
modified, and an injected sample counts as defective from that moment on.

Injection attempts that fail (no valid placement, solver non-convergence) are
skipped for the round and retried on the next pass, up to ``max_rounds``
passes. If the frees run out (or every attempt keeps failing) while the batch
is still imbalanced, the result carries a ``saturated`` flag instead of
raising.

Each free position owns an independent RNG stream derived from the master
seed and its batch position, so results do not depend on scheduling order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InjectionError, UnbalanceableError
from .inject import InjectionConfig, inject
from .model import Batch, ClassHistogram, DatasetIndex, class_histogram

__all__ = [
    "BalanceConfig",
    "BalanceOutcome",
    "InjectionEvent",
    "balance_batch",
    "is_balanced",
    "batch_seed",
    "compose_batches",
    "iter_balanced_batches",
    "select_minority_class",
]


@dataclass(frozen=True)
class BalanceConfig:
    """Termination knobs around the per-injection loop."""

    injection: InjectionConfig = field(default_factory=InjectionConfig)
    uniformity_slack: int = 1
    max_rounds: int = 8

    def __post_init__(self):
        if self.uniformity_slack < 0:
            raise ValueError("uniformity_slack must be >= 0")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


@dataclass(frozen=True)
class InjectionEvent:
    """One step of a balancing trace, for auditing the loop's behavior."""

    position: int
    class_id: int
    method: str
    gap_before: int
    gap_after: int
    counts_before: tuple[int, ...]
    counts_after: tuple[int, ...]
    bootstrap: bool  # batch had no defects when this injection was chosen


@dataclass(frozen=True)
class BalanceOutcome:
    """Balanced batch plus the flag and trace the caller needs to audit it."""

    batch: Batch
    saturated: bool
    trace: tuple[InjectionEvent, ...]

    @property
    def histogram(self) -> ClassHistogram:
        return class_histogram(self.batch)


def select_minority_class(hist: ClassHistogram) -> int:
    """Class with the smallest count; ties break to the smallest id."""
    if not hist.counts:
        raise ValueError("histogram has no classes")
    return min(sorted(hist.counts), key=lambda c: hist.counts[c])


def is_balanced(hist: ClassHistogram, cfg: BalanceConfig) -> bool:
    """True iff max count minus min count is within the slack."""
    return hist.gap() <= cfg.uniformity_slack


def _position_rng(seed: int, position: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(position,)))


def balance_batch(
    batch: Batch,
    index: DatasetIndex,
    cfg: BalanceConfig,
    seed: int,
) -> BalanceOutcome:
    """Run the balancing loop over one batch. See the module docstring for
    the exact loop semantics."""
    samples = list(batch.samples)
    provenance = list(batch.provenance)
    hist = class_histogram(batch)
    free = batch.free_positions()
    bootstrap = hist.total() == 0 and bool(free)
    # A defectless batch gets one full fill pass; quota tracks its frees.
    bootstrap_quota = len(free) if bootstrap else 0

    streams: dict[int, np.random.Generator] = {}
    trace: list[InjectionEvent] = []

    def wants_injection() -> bool:
        if bootstrap:
            return bootstrap_quota > 0
        return not is_balanced(hist, cfg)

    rounds = 0
    while free and rounds < cfg.max_rounds and wants_injection():
        failed: list[int] = []
        for position in free:
            if not wants_injection():
                break
            class_id = select_minority_class(hist)
            pool = index.class_pools.get(class_id, ())
            if not pool:
                raise UnbalanceableError(
                    f"no donors for class {class_id} in the index", class_id
                )
            rng = streams.setdefault(position, _position_rng(seed, position))
            donor = pool[int(rng.integers(len(pool)))]
            try:
                injected, record = inject(
                    samples[position].image,
                    donor,
                    cfg.injection,
                    rng,
                    seed=seed,
                    target_id=samples[position].source_id,
                )
            except InjectionError:
                failed.append(position)
                continue
            counts_before = tuple(hist.as_list())
            gap_before = hist.gap()
            hist = hist.bump(class_id)
            samples[position] = injected
            provenance[position] = record
            if bootstrap:
                bootstrap_quota -= 1
            trace.append(
                InjectionEvent(
                    position=position,
                    class_id=class_id,
                    method=record.method,
                    gap_before=gap_before,
                    gap_after=hist.gap(),
                    counts_before=counts_before,
                    counts_after=tuple(hist.as_list()),
                    bootstrap=bootstrap,
                )
            )
        else:
            # full pass completed; only failed positions remain free
            free = failed
            rounds += 1
            continue
        # broke out because the batch became balanced mid-pass
        break

    # saturated covers both an imbalanced exit and an unfinished fill pass
    saturated = wants_injection() or not is_balanced(hist, cfg)
    out = Batch(
        samples=tuple(samples),
        num_classes=batch.num_classes,
        provenance=tuple(provenance),
    )
    return BalanceOutcome(batch=out, saturated=saturated, trace=tuple(trace))


def compose_batches(
    index: DatasetIndex,
    batch_size: int,
    seed: int,
    num_batches: int | None = None,
):
    """Yield raw batches by chunking seeded per-epoch shuffles of the index.

    With ``num_batches=None`` a single epoch is emitted (including a final
    partial chunk); otherwise exactly ``num_batches`` full-size batches are
    produced, reshuffling at each epoch boundary.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if num_batches is not None and num_batches <= 0:
        return
    samples = index.all_samples()
    if num_batches is not None and batch_size > len(samples):
        raise ValueError(
            f"batch_size {batch_size} exceeds the dataset size {len(samples)}; "
            "no full batch can be formed"
        )
    num_classes = max(index.num_classes, 1)
    single_epoch = num_batches is None
    produced = 0
    epoch = 0
    while True:
        rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(0xE90C, epoch))
        )
        order = rng.permutation(len(samples))
        for start in range(0, len(samples), batch_size):
            chunk = [samples[int(i)] for i in order[start:start + batch_size]]
            if not chunk:
                continue
            if len(chunk) < batch_size and not single_epoch:
                break  # partial tail rolls into the next epoch's shuffle
            yield Batch(samples=tuple(chunk), num_classes=num_classes)
            produced += 1
            if not single_epoch and produced >= num_batches:
                return
        if single_epoch:
            return
        epoch += 1


def batch_seed(master_seed: int, batch_index: int) -> int:
    state = np.random.SeedSequence(
        master_seed, spawn_key=(batch_index,)
    ).generate_state(2, np.uint64)
    return int(state[0])


def iter_balanced_batches(
    index: DatasetIndex,
    batch_size: int,
    cfg: BalanceConfig,
    seed: int,
    num_batches: int | None = None,
):
    """Compose and balance batches; yields (batch_index, BalanceOutcome).

    Per-batch seeds derive from the master seed and the batch index, so
    results are independent of how callers schedule the work.
    """
    for batch_index, batch in enumerate(
        compose_batches(index, batch_size, seed, num_batches)
    ):
        yield batch_index, balance_batch(
            batch, index, cfg, seed=batch_seed(seed, batch_index)
        )
