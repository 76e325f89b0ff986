"""Pipeline configuration: one YAML or JSON document, validated before any work.

Unknown keys anywhere in the document are rejected.  A minimal synthetic run::

    data:
      synthetic: {subjects: 3, trials_per_level: 2}
    learn:
      train: {folds: 5}
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticData(_Strict):
    subjects: int = Field(3, ge=1)
    trials_per_level: int = Field(2, ge=1)
    n_samples: int = Field(4096, ge=256)

    @model_validator(mode="after")
    def _power_of_two(self):
        if self.n_samples & (self.n_samples - 1):
            raise ValueError("n_samples must be a power of two")
        return self


class DataConfig(_Strict):
    paths: list[str] = Field(default_factory=list)
    column_map: Optional[str | dict] = None
    synthetic: Optional[SyntheticData] = None

    @model_validator(mode="after")
    def _one_source(self):
        if bool(self.paths) == (self.synthetic is not None):
            raise ValueError("give exactly one of data.paths or data.synthetic")
        return self


class WindowConfig(_Strict):
    length: int = Field(512, ge=64)
    stride: int = Field(256, ge=1)
    channels: Optional[list[str]] = None


class MultifractalOptions(_Strict):
    family: str = "db3"
    q_min: float = -5.0
    q_max: float = 5.0
    q_step: float = Field(0.5, gt=0)
    j1: Optional[int] = Field(None, ge=1)
    j2: Optional[int] = Field(None, ge=1)
    weighted: bool = True
    dq_convention: Literal["partition", "hurst"] = "partition"
    bootstrap_resamples: int = Field(0, ge=0)
    bootstrap_level: float = Field(0.95, gt=0, lt=1)

    def qgrid(self) -> np.ndarray:
        qs = np.arange(self.q_min, self.q_max + self.q_step / 2, self.q_step)
        return np.round(qs[np.abs(qs) > 1e-9], 10)


class FracnetOptions(_Strict):
    p: int = Field(1, ge=0)
    tol: float = Field(1e-6, gt=0)
    max_iter: int = Field(200, ge=1)
    J_mem: Optional[int] = Field(None, ge=1)
    ridge: float = Field(1e-6, ge=0)
    max_invalid_fraction: float = Field(0.2, ge=0, le=1)


class DistanceOptions(_Strict):
    granularity: Literal["trial", "window"] = "trial"
    scalar_q: float = 2.0


class EncoderOptions(_Strict):
    embedding_dim: int = Field(32, ge=8)
    raw_widths: list[int] = [8, 16]
    raw_kernels: list[int] = [7, 5]
    feature_widths: list[int] = [8, 16]
    feature_kernels: list[int] = [5, 3]
    head_widths: list[int] = [8, 16]
    head_kernel: int = 3
    dropout: float = Field(0.3, ge=0, lt=1)
    batch_norm: bool = True


class TrainOptions(_Strict):
    temperature: float = Field(0.2, gt=0)
    lr: float = Field(1e-3, gt=0)
    weight_decay: float = Field(1e-5, ge=0)
    batch_size: int = Field(32, ge=2)
    pretrain_epochs: int = Field(100, ge=1)
    epochs: int = Field(300, ge=1)
    patience: int = Field(20, ge=1)
    val_fraction: float = Field(0.2, gt=0, lt=1)
    fine_tune: bool = True
    folds: int = Field(5, ge=2)
    unit: Literal["window", "trial"] = "window"


class LearnOptions(_Strict):
    enabled: bool = True
    encoder: EncoderOptions = EncoderOptions()
    train: TrainOptions = TrainOptions()


class PipelineConfig(_Strict):
    data: DataConfig
    window: WindowConfig = WindowConfig()
    multifractal: MultifractalOptions = MultifractalOptions()
    fracnet: FracnetOptions = FracnetOptions()
    distance: DistanceOptions = DistanceOptions()
    learn: LearnOptions = LearnOptions()
    seed: int = Field(0, ge=0, lt=2**64)
    output_dir: str = "fdnml_out"

    def digest(self) -> str:
        """Hash of everything that affects results (the output location does not)."""
        blob = json.dumps(self.model_dump(mode="json", exclude={"output_dir"}), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path=None, overrides: dict | None = None, base_dir=None) -> PipelineConfig:
    """Read and validate a config file; schema errors raise :class:`ConfigError`.

    Relative data paths and column maps are resolved against the config
    file's directory.
    """
    doc: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config not found: {path}")
        text = path.read_text()
        try:
            doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path} is not a key-value document")
        base_dir = base_dir or path.parent
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    try:
        cfg = PipelineConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    if base_dir is not None:
        base = Path(base_dir)
        cfg.data.paths = [p if Path(p).is_absolute() else str(base / p) for p in cfg.data.paths]
        if isinstance(cfg.data.column_map, str) and not Path(cfg.data.column_map).is_absolute():
            cfg.data.column_map = str(base / cfg.data.column_map)
    return cfg


def split_seed(master: int, names) -> dict:
    """Independent per-stage seeds from one master seed (NumPy SeedSequence spawning)."""
    children = np.random.SeedSequence(master).spawn(len(names))
    return {name: int(child.generate_state(1, dtype=np.uint32)[0])
            for name, child in zip(names, children)}
