"""Run configuration: documented defaults, JSON file + flag overrides.

Every field has a default, every key is mirrored by a CLI flag (flags win
over the file), and unknown keys are rejected with their name so scripted
ablations fail loudly instead of silently ignoring a typo.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    # dataset
    dataset_root: str = "data/synthetic"
    split: str = "test"
    pairing: str = "paired"
    category: str = "upper_body"
    image_height: int = 64
    image_width: int = 48
    n_train: int = 8
    n_test: int = 4
    # captioning
    lmm_mode: str = "mock"              # mock | http
    lmm_endpoint: str = ""
    lmm_model_id: str = "mock-lmm"
    lmm_api_key_env: str = "TRYONLAB_API_KEY"
    exemplar_count: int = 3
    caption_retries: int = 2
    max_in_flight: int = 4
    # toy model
    latent_factor: int = 8
    latent_channels: int = 4
    base_channels: int = 8
    text_dim: int = 16
    head_dim: int = 32
    # schedule
    schedule_T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # masks
    n_max: int = -1                     # -1 -> ceil(max(H, W) / 16)
    element_radius: int = 1
    # training
    train_steps: int = 200
    batch_size: int = 4
    optimizer: str = "adam"
    learning_rate: float = 0.005
    # inference
    steps: int = 30
    sigma: float = 0.5
    composit: bool = True
    # run control
    seed: int = 0
    workers: int = 1
    output_dir: str = "out"
    checkpoint: str = ""

    def validate(self) -> "RunConfig":
        if self.split not in ("train", "test"):
            raise ConfigError(f"split: must be train|test, got {self.split!r}")
        if self.pairing not in ("paired", "unpaired"):
            raise ConfigError(f"pairing: must be paired|unpaired, got {self.pairing!r}")
        if self.lmm_mode not in ("mock", "http"):
            raise ConfigError(f"lmm_mode: must be mock|http, got {self.lmm_mode!r}")
        if not 0.0 <= self.sigma < 1.0:
            raise ConfigError(f"sigma: must lie in [0, 1), got {self.sigma}")
        if self.steps < 2:
            raise ConfigError(f"steps: must be >= 2, got {self.steps}")
        if self.workers < 1:
            raise ConfigError(f"workers: must be >= 1, got {self.workers}")
        return self

    def effective_n_max(self) -> int:
        if self.n_max >= 0:
            return self.n_max
        import math
        return math.ceil(max(self.image_height, self.image_width) / 16)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        from .evaluation import config_fingerprint
        return config_fingerprint(self.to_dict())


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def config_from_sources(file_path: str | None = None,
                        overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file, then explicit overrides (flags win)."""
    values: dict = {}
    if file_path:
        path = Path(file_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {file_path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update(doc)
    values.update(overrides or {})

    unknown = [k for k in values if k not in _FIELDS]
    if unknown:
        raise ConfigError(f"unknown config key: {unknown[0]}")
    coerced = {}
    for key, raw in values.items():
        want = _FIELDS[key].type
        try:
            if want in ("int", int):
                coerced[key] = int(raw)
            elif want in ("float", float):
                coerced[key] = float(raw)
            elif want in ("bool", bool):
                coerced[key] = raw if isinstance(raw, bool) else \
                    str(raw).lower() in ("1", "true", "yes", "on")
            else:
                coerced[key] = str(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: cannot coerce {raw!r}: {exc}") from exc
    return RunConfig(**coerced).validate()
