"""Declarative run configuration: one YAML document drives every command.

The document merges the balancing, injection, and solver knobs with the
dataset layout, master seed, and output directory. ``print-config`` emits the
full default document; unknown keys are rejected so a config file always
means what it says.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .balance import BalanceConfig
from .inject import InjectionConfig
from .poisson import SolverConfig
from .transforms import TransformParams


@dataclass(frozen=True)
class DatasetConfig:
    root: str = "."
    layout: str = "manifest"  # manifest | directory
    resize: tuple[int, int] | None = None  # optional (H, W) applied at load

    def __post_init__(self):
        if self.layout not in ("manifest", "directory"):
            raise ValueError(f"unknown layout '{self.layout}'")
        if self.resize is not None:
            h, w = self.resize
            if h < 3 or w < 3:
                raise ValueError("resize target must be at least 3x3")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, reproducible from this one artifact."""

    seed: int = 0
    output_dir: str = "out"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    balance: BalanceConfig = field(default_factory=BalanceConfig)

    @property
    def injection(self) -> InjectionConfig:
        return self.balance.injection

    @property
    def solver(self) -> SolverConfig:
        return self.balance.injection.solver

    def to_dict(self) -> dict:
        transform = self.injection.transform
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "dataset": {
                "root": self.dataset.root,
                "layout": self.dataset.layout,
                "resize": None if self.dataset.resize is None
                else list(self.dataset.resize),
            },
            "balance": {
                "uniformity_slack": self.balance.uniformity_slack,
                "max_rounds": self.balance.max_rounds,
            },
            "injection": {
                "poisson_probability": self.injection.poisson_probability,
                "max_placement_retries": self.injection.max_placement_retries,
                "transform": {
                    "flip_h": transform.flip_h,
                    "flip_v": transform.flip_v,
                    "rotation": transform.rotation,
                    "scale": list(transform.scale_range),
                    "translate": transform.translate,
                },
            },
            "solver": {
                "rel_tolerance": self.solver.rel_tolerance,
                "max_iterations": self.solver.max_iterations,
                "backend": self.solver.backend,
            },
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        defaults = cls().to_dict()
        merged = _merge(defaults, raw or {}, path="")
        transform = TransformParams(
            flip_h=float(merged["injection"]["transform"]["flip_h"]),
            flip_v=float(merged["injection"]["transform"]["flip_v"]),
            rotation=float(merged["injection"]["transform"]["rotation"]),
            scale_range=tuple(merged["injection"]["transform"]["scale"]),
            translate=bool(merged["injection"]["transform"]["translate"]),
        )
        solver = SolverConfig(
            rel_tolerance=float(merged["solver"]["rel_tolerance"]),
            max_iterations=(
                None
                if merged["solver"]["max_iterations"] is None
                else int(merged["solver"]["max_iterations"])
            ),
            backend=str(merged["solver"]["backend"]),
        )
        injection = InjectionConfig(
            poisson_probability=float(merged["injection"]["poisson_probability"]),
            transform=transform,
            solver=solver,
            max_placement_retries=int(merged["injection"]["max_placement_retries"]),
        )
        balance = BalanceConfig(
            injection=injection,
            uniformity_slack=int(merged["balance"]["uniformity_slack"]),
            max_rounds=int(merged["balance"]["max_rounds"]),
        )
        if merged["seed"] is None:
            raise ValueError("config must pin a seed; silent nondeterminism "
                             "is not allowed")
        resize = merged["dataset"]["resize"]
        return cls(
            seed=int(merged["seed"]),
            output_dir=str(merged["output_dir"]),
            dataset=DatasetConfig(
                root=str(merged["dataset"]["root"]),
                layout=str(merged["dataset"]["layout"]),
                resize=None if resize is None else (int(resize[0]), int(resize[1])),
            ),
            balance=balance,
        )

    @classmethod
    def load(cls, path: Path | str) -> "RunConfig":
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ValueError(f"config root must be a mapping, got {type(raw)}")
        return cls.from_dict(raw)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def _merge(defaults: dict, override: dict, path: str) -> dict:
    out = dict(defaults)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ValueError(f"unknown config key '{where}'")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ValueError(f"config key '{where}' must be a mapping")
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out
