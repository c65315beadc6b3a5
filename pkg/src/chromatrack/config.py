"""Run configuration: a JSON document with ``network``, ``train``, ``tracker``
and ``data`` sections, each mapping onto a dataclass. Unknown keys are errors."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .embednet import NetworkConfig
from .errors import ValidationError
from .synth import PRESETS
from .tracker import TrackerConfig
from .trainer import TrainConfig


@dataclass
class DataConfig:
    preset: str = "plain"
    n_clips: int = 2000
    seed: int = 0
    size: int = 64
    num_frames: int = 20

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValidationError(f"unknown preset {self.preset!r}")
        if self.n_clips < 1 or self.size < 1 or self.num_frames < 1:
            raise ValidationError("n_clips, size and num_frames must be positive")


SECTIONS = {"network": NetworkConfig, "train": TrainConfig, "tracker": TrackerConfig, "data": DataConfig}


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ValidationError("run config must be a JSON object")
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ValidationError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for name, klass in SECTIONS.items():
            section = doc.get(name, {})
            if not isinstance(section, dict):
                raise ValidationError(f"config section {name!r} must be an object")
            known = {f.name for f in dataclasses.fields(klass)}
            bad = set(section) - known
            if bad:
                raise ValidationError(f"unknown keys in {name!r}: {sorted(bad)}")
            try:
                parts[name] = klass(**section)
            except TypeError as exc:
                raise ValidationError(f"bad value in {name!r}: {exc}") from None
        return cls(**parts)

    def to_dict(self):
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def with_seed(self, seed):
        """Apply one global seed to every seeded section."""
        self.network.seed = seed
        self.train.seed = seed
        self.data.seed = seed
        return self


def load_run_config(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(doc)
