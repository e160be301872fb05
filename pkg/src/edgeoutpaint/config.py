"""Declarative run configuration (YAML) shared by every CLI command."""

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import DEFAULT_CANNY
from .errors import ConfigError
from .losses import LossConfig
from .networks import STAGES, NetworkConfig, config_hash
from .training import StageConfig

ENV_DATA_ROOT = "EDGEOUTPAINT_DATA_ROOT"
ENV_OUTPUT_ROOT = "EDGEOUTPAINT_OUTPUT_ROOT"
ENV_DEVICE = "EDGEOUTPAINT_DEVICE"

STAGE_FIELDS = ("iterations", "batch_size", "learning_rate", "d_to_g_lr_ratio", "checkpoint_every")


def _default_stages():
    return {s: {"iterations": 300, "batch_size": 4, "learning_rate": 1e-4,
                "d_to_g_lr_ratio": 0.1, "checkpoint_every": 100} for s in STAGES}


@dataclass
class RunConfig:
    data_root: str
    output_root: str
    side: int = 128
    mask_ratio: float = 0.25
    fractions: tuple = (0.8, 0.1, 0.1)
    canny: dict = field(default_factory=lambda: dict(DEFAULT_CANNY))
    seed: int = 0
    device: str = "cpu"
    deterministic: bool = True
    networks: NetworkConfig = field(default_factory=NetworkConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    stages: dict = field(default_factory=_default_stages)
    metrics: dict = field(default_factory=lambda: {"split": "test"})

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if not 0 < self.mask_ratio < 1:
            raise ConfigError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if self.side < 8 or self.side % 4:
            raise ConfigError(f"side must be >= 8 and divisible by 4, got {self.side}")
        self.canny = dict(DEFAULT_CANNY, **self.canny)
        unknown = set(self.stages) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown stage section(s): {sorted(unknown)}")
        merged = _default_stages()
        for s, block in self.stages.items():
            bad = set(block) - set(STAGE_FIELDS)
            if bad:
                raise ConfigError(f"unknown key(s) in stage {s}: {sorted(bad)}")
            merged[s].update(block)
        self.stages = merged
        for s in STAGES:
            self.stage_config(s)

    @property
    def data_dir(self):
        return Path(self.output_root) / "data"

    @property
    def checkpoint_dir(self):
        return Path(self.output_root) / "checkpoints"

    def stage_config(self, stage):
        return StageConfig(stage=stage, seed=self.seed, loss_config=self.losses, **self.stages[stage])

    def fingerprint(self):
        """Hash of everything that must agree between checkpoints being compared."""
        return config_hash({
            "side": self.side, "mask_ratio": self.mask_ratio, "fractions": list(self.fractions),
            "canny": self.canny, "seed": self.seed, "networks": self.networks.to_dict(),
        })

    def to_dict(self):
        return {
            "data": {"root": self.data_root, "side": self.side, "mask_ratio": self.mask_ratio,
                     "fractions": list(self.fractions), "canny": dict(self.canny)},
            "output_root": self.output_root,
            "seed": self.seed,
            "device": self.device,
            "deterministic": self.deterministic,
            "networks": self.networks.to_dict(),
            "losses": self.losses.to_dict(),
            "stages": {s: dict(v) for s, v in self.stages.items()},
            "metrics": dict(self.metrics),
        }

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d, base_dir=None, check_paths=True):
        d = dict(d)
        try:
            data = dict(d.pop("data"))
            root = data.pop("root")
            out = d.pop("output_root")
        except KeyError as exc:
            raise ConfigError(f"config is missing required key {exc}") from exc
        base = Path(base_dir) if base_dir else Path.cwd()
        root = str((base / root).resolve()) if not Path(root).is_absolute() else root
        out = str((base / out).resolve()) if not Path(out).is_absolute() else out
        if check_paths and not Path(root).is_dir():
            raise ConfigError(f"data root {root} does not exist")
        try:
            networks = NetworkConfig(**d.pop("networks", {}))
            losses = LossConfig(**d.pop("losses", {}))
            return cls(data_root=root, output_root=out, networks=networks, losses=losses, **data, **d)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path, env=None, check_paths=True):
    """Parse a YAML config; relative paths resolve against the config's directory."""
    env = os.environ if env is None else env
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if env.get(ENV_DATA_ROOT):
        raw.setdefault("data", {})["root"] = env[ENV_DATA_ROOT]
    if env.get(ENV_OUTPUT_ROOT):
        raw["output_root"] = env[ENV_OUTPUT_ROOT]
    if env.get(ENV_DEVICE):
        raw["device"] = env[ENV_DEVICE]
    return RunConfig.from_dict(raw, base_dir=path.parent, check_paths=check_paths)


def parse_config_text(text, base_dir=None, check_paths=True):
    return RunConfig.from_dict(yaml.safe_load(text), base_dir=base_dir, check_paths=check_paths)
