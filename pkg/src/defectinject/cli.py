"""Command-line front end.

Subcommands: ``index``, ``stats``, ``inject``, ``balance``, ``verify``,
``print-config``. Every command is deterministic given its inputs, the config
document, and the seed. Exit codes: 0 on success; ingestion errors 2, mask
validation 3, solver convergence 4, unbalanceable class 5, other engine
errors 6, verification failure 1.

The only environment variable honored is ``DEFECTINJECT_LOG`` (log level).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .balance import balance_batch, batch_seed, compose_batches
from .config import RunConfig
from .dataset import (
    load_records,
    parse_manifest,
    read_image,
    read_manifest,
    read_mask,
    resize_sample,
    scan_directory_tree,
    write_image,
    write_manifest,
    write_mask,
)
from .errors import EngineError
from .inject import METHOD_CUT_PASTE, METHOD_POISSON, inject
from .model import DatasetIndex, Sample, class_histogram
from .verify import run_all

logger = logging.getLogger("defectinject")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = RunConfig(
            seed=args.seed,
            output_dir=cfg.output_dir,
            dataset=cfg.dataset,
            balance=cfg.balance,
        )
    return cfg


def _summary_line(index: DatasetIndex) -> str:
    classes = [len(index.class_pools.get(c, ())) for c in
               range(1, index.num_classes + 1)]
    return f"free={len(index.free_pool)} classes={classes}"


def cmd_print_config(args) -> int:
    cfg = _load_config(args)
    sys.stdout.write(cfg.dump())
    return 0


def cmd_index(args) -> int:
    root = Path(args.root)
    if args.layout == "directory":
        base = root
        records = scan_directory_tree(root)
    else:
        manifest_path = root / "manifest.jsonl" if root.is_dir() else root
        base = manifest_path.parent
        records = parse_manifest(manifest_path)
    index = load_records(base, records)
    out = Path(args.output) if args.output else Path("manifest.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    # manifest paths resolve against the manifest's own directory
    rebased = [
        {
            "image": os.path.relpath(base / rec["image"], out.parent),
            "mask": None if rec["mask"] is None
            else os.path.relpath(base / rec["mask"], out.parent),
            "class": rec["class"],
        }
        for rec in records
    ]
    write_manifest(rebased, out)
    print(_summary_line(index))
    print(f"manifest written to {out} ({len(records)} samples)")
    return 0


def cmd_stats(args) -> int:
    manifest = Path(args.manifest)
    index = read_manifest(manifest)
    rows = []
    for class_id in range(1, index.num_classes + 1):
        pool = index.class_pools.get(class_id, ())
        areas = [
            100.0 * np.count_nonzero(s.mask.labels) / s.mask.labels.size
            for s in pool
        ]
        mean_area = float(np.mean(areas)) if areas else 0.0
        std_area = float(np.std(areas)) if areas else 0.0
        rows.append((class_id, len(pool), mean_area, std_area))

    print(f"{'class':>6} {'images':>7} {'area %':>8} {'std':>7}")
    print(f"{'free':>6} {len(index.free_pool):>7} {'-':>8} {'-':>7}")
    for class_id, count, mean_area, std_area in rows:
        print(f"{class_id:>6} {count:>7} {mean_area:>8.2f} {std_area:>7.2f}")

    hist_path = (
        Path(args.histogram)
        if args.histogram
        else manifest.with_name(manifest.stem + "_histogram.png")
    )
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = ["free"] + [str(r[0]) for r in rows]
    counts = [len(index.free_pool)] + [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(labels, counts)
    ax.set_xlabel("class")
    ax.set_ylabel("images")
    ax.set_title("per-class image counts")
    fig.tight_layout()
    fig.savefig(hist_path)
    plt.close(fig)
    print(f"histogram written to {hist_path}")
    return 0


def _overlay_panel(target, result, mask) -> np.ndarray:
    """Side-by-side (target | injected | injected with mask tint)."""
    tinted = result.data.copy()
    support = mask.labels > 0
    tinted[0][support] = np.minimum(1.0, 0.5 * tinted[0][support] + 0.5)
    tinted[1][support] *= 0.5
    tinted[2][support] *= 0.5
    return np.concatenate([target.data, result.data, tinted], axis=2)


def cmd_inject(args) -> int:
    cfg = _load_config(args)
    target = read_image(args.target)
    donor_image = read_image(args.donor_image)
    donor_mask = read_mask(args.donor_mask, args.donor_class)
    donor = Sample(image=donor_image, mask=donor_mask,
                   source_id=str(args.donor_image))

    override = {
        "poisson": METHOD_POISSON,
        "cut-paste": METHOD_CUT_PASTE,
        "auto": None,
    }[args.method]
    rng = np.random.default_rng(cfg.seed)
    sample, record = inject(
        target,
        donor,
        cfg.injection,
        rng,
        seed=cfg.seed,
        method_override=override,
        target_id=str(args.target),
    )

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_image(sample.image, out / "image.png")
    write_mask(sample.mask, out / "mask.png")
    (out / "provenance.json").write_text(
        json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    if args.overlay:
        from .model import ImageBuffer

        panel = ImageBuffer(_overlay_panel(target, sample.image, sample.mask))
        write_image(panel, out / "overlay.png")
    print(f"injected via {record.method} at offset {record.placement}; "
          f"outputs in {out}")
    return 0


def _emit_batch(out_root: Path, batch_index: int, outcome) -> list[dict]:
    """Write one balanced batch to disk; returns its manifest records."""
    batch_dir = out_root / f"batch_{batch_index:04d}"
    batch_dir.mkdir(parents=True, exist_ok=True)
    records = []
    provenance = []
    for i, (sample, record) in enumerate(
        zip(outcome.batch.samples, outcome.batch.provenance)
    ):
        image_rel = f"batch_{batch_index:04d}/image_{i:03d}.png"
        write_image(sample.image, out_root / image_rel)
        class_id = sample.defect_class
        mask_rel = None
        if class_id > 0:
            mask_rel = f"batch_{batch_index:04d}/mask_{i:03d}.png"
            write_mask(sample.mask, out_root / mask_rel)
        records.append({"image": image_rel, "mask": mask_rel, "class": class_id})
        provenance.append(None if record is None else record.to_dict())
    hist = class_histogram(outcome.batch)
    (batch_dir / "histogram.json").write_text(
        json.dumps(
            {
                "counts": {str(c): n for c, n in sorted(hist.counts.items())},
                "saturated": outcome.saturated,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    (batch_dir / "provenance.json").write_text(
        json.dumps(provenance, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return records


def cmd_balance(args) -> int:
    cfg = _load_config(args)
    index = read_manifest(Path(args.manifest))
    if cfg.dataset.resize is not None:
        h, w = cfg.dataset.resize
        index = DatasetIndex(
            free_pool=tuple(resize_sample(s, h, w) for s in index.free_pool),
            class_pools={
                c: tuple(resize_sample(s, h, w) for s in pool)
                for c, pool in index.class_pools.items()
            },
        )
    if args.batch_size < index.num_classes:
        logger.warning(
            "batch_size %d is below the class count %d; exact uniformity is "
            "unreachable", args.batch_size, index.num_classes,
        )
    out_root = Path(args.output) if args.output else Path(cfg.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)

    batches = list(
        compose_batches(index, args.batch_size, cfg.seed, args.num_batches)
    )

    def work(item):
        batch_index, batch = item
        outcome = balance_batch(
            batch, index, cfg.balance, seed=batch_seed(cfg.seed, batch_index)
        )
        return batch_index, outcome

    jobs = max(1, args.jobs)
    if jobs == 1:
        outcomes = [work(item) for item in enumerate(batches)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(work, enumerate(batches)))

    all_records: list[dict] = []
    method_counts = {METHOD_POISSON: 0, METHOD_CUT_PASTE: 0}
    saturated_batches = []
    for batch_index, outcome in outcomes:
        all_records.extend(_emit_batch(out_root, batch_index, outcome))
        for event in outcome.trace:
            method_counts[event.method] += 1
        if outcome.saturated:
            saturated_batches.append(batch_index)

    if all_records:
        write_manifest(all_records, out_root / "manifest.jsonl")
    total = sum(method_counts.values())
    summary = {
        "batches": len(batches),
        "batch_size": args.batch_size,
        "injections": total,
        "method_mix": {
            m: (n / total if total else 0.0) for m, n in method_counts.items()
        },
        "saturated_batches": saturated_batches,
        "seed": cfg.seed,
    }
    (out_root / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    mix = summary["method_mix"]
    print(
        f"balanced {len(batches)} batches, {total} injections "
        f"(poisson {mix[METHOD_POISSON]:.3f} / cut-paste "
        f"{mix[METHOD_CUT_PASTE]:.3f}), {len(saturated_batches)} saturated"
    )
    return 0


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    results = run_all(
        solver_cfg=cfg.solver,
        balance_cfg=cfg.balance,
        solver_instances=args.instances,
        gradient_instances=args.instances,
        balancer_batches=max(10, args.instances // 4),
        seed=cfg.seed if cfg.seed else 20240,
    )
    failed = 0
    for result in results:
        print(result.line())
        failed += not result.passed
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="defectinject",
        description="Balance defect-segmentation batches by injecting "
        "minority-class defects via Poisson seamless cloning and cut-paste.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("print-config", help="emit the full default config")
    p.add_argument("--config", help="base config to echo with defaults filled")
    p.set_defaults(func=cmd_print_config)

    p = sub.add_parser("index", help="scan a dataset and write its manifest")
    p.add_argument("root", help="dataset root (or manifest path)")
    p.add_argument("--layout", choices=["directory", "manifest"],
                   default="directory")
    p.add_argument("--output", help="manifest output path")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("stats", help="per-class counts and defect areas")
    p.add_argument("manifest")
    p.add_argument("--histogram",
                   help="bar-chart PNG path (default: next to the manifest)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("inject", help="inject one donor defect into one image")
    p.add_argument("--target", required=True)
    p.add_argument("--donor-image", required=True)
    p.add_argument("--donor-mask", required=True)
    p.add_argument("--donor-class", type=int, default=1)
    p.add_argument("--method", choices=["poisson", "cut-paste", "auto"],
                   default="auto")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", default="injected")
    p.add_argument("--overlay", action="store_true",
                   help="also write a side-by-side comparison panel")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("balance", help="emit balanced batches to disk")
    p.add_argument("manifest")
    p.add_argument("--batch-size", type=int, required=True)
    p.add_argument("--num-batches", type=int, required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output")
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("verify", help="run the self-verification suites")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--instances", type=int, default=100,
                   help="instances per randomized suite")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("DEFECTINJECT_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
