"""JSON run manifests: the single configuration source for the CLI.

Example::

    {
      "schema_version": 1,
      "generator": {"kind": "diagonal", "params": {"eigenvalues": [1, 2, 3]}, "seed": 0},
      "start": {"kind": "admissible", "gap_fraction": 0.5, "seed": 0},
      "run": {"eta": 0.5, "solver_mode": "perturbed",
              "policy": {"kind": "worst-of-N", "n_candidates": 16, "seed": 0},
              "max_steps": 500, "stop_tol": 1e-10},
      "sweep": {"eta": [0.1, 0.5, 0.9], "gap_fraction": [0.1, 0.5, 0.9], "seeds": 10},
      "output_dir": "out",
      "formats": ["csv", "json"],
      "workers": 1
    }
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import mmio
from .forms import Eigenproblem, m_normalize
from .iteration import RunConfig
from .problems import GeneratorSpec, admissible_start

FORMATS = ("csv", "json")
START_KINDS = ("admissible", "eigenvector", "file")
TOP_LEVEL_KEYS = {
    "schema_version", "generator", "start", "run", "sweep", "output_dir", "formats", "workers",
}


@dataclass
class StartSpec:
    kind: str = "admissible"
    gap_fraction: float = 0.5
    seed: Optional[int] = None
    path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in START_KINDS:
            raise ValueError(f"unknown start kind {self.kind!r}; expected {START_KINDS}")
        if self.kind == "admissible" and not 0 < self.gap_fraction < 1:
            raise ValueError(f"start.gap_fraction must lie in (0, 1), got {self.gap_fraction}")
        if self.kind == "file" and not self.path:
            raise ValueError("start kind 'file' needs a 'path'")

    def build(self, p: Eigenproblem, default_seed: int, base_dir=None, gap_fraction=None, seed=None):
        if self.kind == "eigenvector":
            return m_normalize(p, p.require_metadata().e1_basis[:, 0])
        if self.kind == "file":
            path = Path(self.path)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            return mmio.read_vector(path)
        g = self.gap_fraction if gap_fraction is None else gap_fraction
        s = seed if seed is not None else (self.seed if self.seed is not None else default_seed)
        return admissible_start(p, g, s)


@dataclass
class SweepSpec:
    eta: List[float]
    gap_fraction: List[float]
    seeds: List[int]

    def __post_init__(self):
        for name in ("eta", "gap_fraction", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"sweep.{name} must be a non-empty list")
        if any(not 0 <= e < 1 for e in self.eta):
            raise ValueError("every sweep eta must lie in [0, 1)")
        if any(not 0 < g < 1 for g in self.gap_fraction):
            raise ValueError("every sweep gap_fraction must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d):
        seeds = d.get("seeds", [0])
        if isinstance(seeds, int):
            seeds = list(range(seeds))
        return cls([float(x) for x in d.get("eta", [])],
                   [float(x) for x in d.get("gap_fraction", [])],
                   [int(x) for x in seeds])

    def cells(self):
        return [(e, g, s) for e in self.eta for g in self.gap_fraction for s in self.seeds]


@dataclass
class RunManifest:
    generator: GeneratorSpec
    run: RunConfig
    start: StartSpec = field(default_factory=StartSpec)
    sweep: Optional[SweepSpec] = None
    output_dir: str = "out"
    formats: List[str] = field(default_factory=lambda: list(FORMATS))
    workers: int = 1
    base_dir: Optional[str] = None
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d: Dict[str, Any], base_dir=None) -> "RunManifest":
        if not isinstance(d, dict):
            raise ValueError("manifest must be a JSON object")
        unknown = set(d) - TOP_LEVEL_KEYS
        if unknown:
            raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
        if d.get("schema_version", 1) != 1:
            raise ValueError(f"unsupported schema_version {d.get('schema_version')!r}")
        if "generator" not in d:
            raise ValueError("manifest needs a 'generator' block")
        formats = list(d.get("formats", FORMATS))
        if not formats or any(f not in FORMATS for f in formats):
            raise ValueError(f"formats must be a non-empty subset of {FORMATS}")
        workers = int(d.get("workers", 1))
        if workers < 1:
            raise ValueError("workers must be >= 1")
        try:
            return cls(
                generator=GeneratorSpec.from_dict(d["generator"]),
                run=RunConfig.from_dict(dict(d.get("run", {}))),
                start=StartSpec(**d.get("start", {})),
                sweep=SweepSpec.from_dict(d["sweep"]) if d.get("sweep") is not None else None,
                output_dir=str(d.get("output_dir", "out")),
                formats=formats,
                workers=workers,
                base_dir=None if base_dir is None else str(base_dir),
                raw=copy.deepcopy(d),
            )
        except TypeError as exc:
            raise ValueError(f"malformed manifest: {exc}") from None

    @classmethod
    def load(cls, path, overrides=()) -> "RunManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from None
        apply_overrides(doc, overrides)
        return cls.from_dict(doc, base_dir=path.parent)

    def build_problem(self) -> Eigenproblem:
        return self.generator.build(self.base_dir)

    def start_vector(self, p: Eigenproblem, gap_fraction=None, seed=None) -> np.ndarray:
        return self.start.build(p, self.generator.seed, self.base_dir, gap_fraction, seed)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: Dict[str, Any], overrides) -> None:
    """Apply ``dotted.key=value`` overrides in place; values parse as JSON when possible."""
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = _parse_value(value)
