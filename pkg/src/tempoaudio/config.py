"""Pipeline configuration: one YAML/JSON file, validated, unknown keys rejected."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field

from .bank import BankConfig
from .grounding import DetectorParams
from .simulate import SimConfig
from .diffusion.training import TrainConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathsSection(_Strict):
    bank: str = "runs/bank"
    dataset: str = "runs/dataset"
    checkpoint: str = "runs/checkpoint"
    generated: str = "runs/generated"
    reports: str = "runs/reports"


class SourceEntry(_Strict):
    path: str
    event: str


class BankSection(_Strict):
    per_class: int = Field(5, ge=1)
    sources: list[SourceEntry] = []
    segment_threshold: float = Field(0.5, gt=0, le=1)
    filter_threshold: float = Field(0.3, ge=0, le=1)


class SimulateSection(_Strict):
    clip_length: float = Field(10.0, ge=4.0)
    sample_rate: int = 16000
    split_sizes: tuple[int, int, int] = (500, 40, 20)
    occurrence_weights: tuple[float, float, float] = (2.0, 2.0, 1.0)
    events_per_clip: dict[str, tuple[int, int]] = {"train": (1, 3), "test_single": (1, 1), "test_multi": (2, 3)}
    allow_cross_overlap: bool = True
    min_gap: float = Field(0.5, gt=0)


class TrainSection(_Strict):
    steps: int = Field(50, ge=2)
    beta_start: float = 1e-4
    beta_end: float = 0.2
    epochs: int = Field(40, ge=0)
    batch_size: int = Field(16, ge=1)
    lr: float = Field(2e-3, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    cond_dropout: float = Field(0.1, ge=0, lt=1)
    use_timestamp: bool = True
    snr_gamma: float = Field(5.0, gt=0)
    hidden: tuple[int, ...] = (64, 64)
    embed_dim: int = Field(16, ge=1)
    keep_checkpoints: int = Field(2, ge=1)


class DetectorSection(_Strict):
    frame: float = 0.04
    threshold_factor: float = 4.0
    median_smooth: int = 3
    merge_gap: float = 0.3
    min_region: float = 0.08


class MetricsSection(_Strict):
    segment_length: float = Field(1.0, gt=0)


class GenerateSection(_Strict):
    guidance_scale: float = 3.0


class LLMSection(_Strict):
    endpoint: Optional[str] = None
    model: Optional[str] = None
    token_env: str = "TEMPOAUDIO_LLM_TOKEN"
    examples_manifest: Optional[str] = None
    n_examples: int = Field(300, ge=1)


class PipelineConfig(_Strict):
    seed: int = 0
    jobs: int = Field(1, ge=1)
    paths: PathsSection = PathsSection()
    bank: BankSection = BankSection()
    simulate: SimulateSection = SimulateSection()
    train: TrainSection = TrainSection()
    detector: DetectorSection = DetectorSection()
    metrics: MetricsSection = MetricsSection()
    generate: GenerateSection = GenerateSection()
    llm: LLMSection = LLMSection()

    # --- adapters to the library types ---------------------------------

    def sim_config(self) -> SimConfig:
        s = self.simulate
        return SimConfig(s.clip_length, s.sample_rate, dict(s.events_per_clip), s.occurrence_weights,
                         s.split_sizes, self.seed, s.allow_cross_overlap, s.min_gap)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train.model_dump(), seed=self.seed)

    def detector_params(self) -> DetectorParams:
        return DetectorParams(**self.detector.model_dump())

    def bank_config(self) -> BankConfig:
        return BankConfig(self.bank.segment_threshold, self.bank.filter_threshold, self.jobs)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    text = Path(path).read_text()
    data = yaml.safe_load(text) if str(path).endswith((".yaml", ".yml")) else json.loads(text)
    return PipelineConfig.model_validate(data or {})
