"""Run configuration: one serializable object whose hash pins a run."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .consistency import NUMERIC_TOLERANT
from .execution import SamplingPlan


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"  # mock | http
    base_url: str = ""
    model: str = "mock"
    auth_env: Optional[str] = None
    retry_attempts: int = 3
    concurrency: int = 1


@dataclass(frozen=True)
class Config:
    backend: BackendConfig = field(default_factory=BackendConfig)
    plan: SamplingPlan = field(default_factory=lambda: SamplingPlan(k=4))
    equivalence_mode: str = NUMERIC_TOLERANT
    numeric_rel_tol: float = 1e-6
    region_t: float = 0.5
    majority_scope: str = "all"  # all | above_gmc
    quality_filter_scope: str = "per-question"  # per-question | per-dataset
    dot_highlight: str = "any-disagreement"  # any-disagreement | below-majority
    exploration_template: str = "exploration"
    exploitation_template: str = "exploitation"
    step1_template: str = "step1_reasoning"
    leakage_template: str = "leakage_judge"
    output_root: str = "out"
    cache_dir: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["plan"] = self.plan.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        d = dict(d)
        if "backend" in d:
            d["backend"] = BackendConfig(**d["backend"])
        if "plan" in d:
            d["plan"] = SamplingPlan.from_dict(d["plan"])
        return cls(**d)

    @classmethod
    def load(cls, path: Path | str) -> "Config":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def save(self, path: Path | str) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
