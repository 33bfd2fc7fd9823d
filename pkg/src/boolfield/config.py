"""Run configuration: network, training and task sections in one JSON file.

Every key has a default; unknown keys are rejected. ``emit(parse(text))``
reproduces a canonical form of the file.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import gates
from .errors import ConfigError
from .manifold import Neighborhood
from .network import ZERO_PAD, build_network
from .tasks import TaskSpec
from .training import TrainConfig


@dataclass
class NetworkConfig:
    grid: tuple = (16, 16)
    neighborhood: dict = field(default_factory=lambda: Neighborhood().to_dict())
    m: int = 1
    d: int = 4
    n_layers: int = 1
    kernel_widths: tuple = (32, 16)
    steps: int = 1
    upscale: str = ZERO_PAD
    upscale_widths: tuple | None = None
    tau: float = 0.5
    bias: float = 0.0
    lam: float = 2.0
    use_position: bool = True
    temperature: float = 1.0
    pass_bias: float = 1.0
    noise: float = 0.01
    residual_init: int = gates.PASS_B
    residual_bias: float | None = None
    readout_threshold: int = 1
    readout_scale: float = 1.0

    def __post_init__(self):
        self.grid = tuple(self.grid)
        self.kernel_widths = tuple(self.kernel_widths)
        if self.upscale_widths is not None:
            self.upscale_widths = tuple(self.upscale_widths)
        Neighborhood.from_dict(self.neighborhood)

    def build(self, seed=0):
        kw = asdict(self)
        kw["neighborhood"] = Neighborhood.from_dict(self.neighborhood)
        return build_network(seed=seed, **kw)


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    task: TaskSpec = field(default_factory=TaskSpec)

    def build_network(self):
        return self.network.build(self.seed)

    def train_config(self):
        kw = self.train.to_dict()
        kw.update(seed=self.seed, threads=self.threads)
        return TrainConfig(**kw)

    def task_spec(self):
        kw = self.task.to_dict()
        kw["seed"] = self.seed
        return TaskSpec(**kw)

    def to_dict(self):
        train = self.train.to_dict()
        task = self.task.to_dict()
        for d in (train, task):
            d.pop("seed")
        train.pop("threads")
        net = asdict(self.network)
        net["grid"] = list(net["grid"])
        net["kernel_widths"] = list(net["kernel_widths"])
        if net["upscale_widths"] is not None:
            net["upscale_widths"] = list(net["upscale_widths"])
        return {"seed": self.seed, "threads": self.threads, "network": net,
                "train": train, "task": task}


_SECTIONS = {"network": NetworkConfig, "train": TrainConfig, "task": TaskSpec}
_HIDDEN = {"train": {"seed", "threads"}, "task": {"seed"}}


def _section(name, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    allowed = {f.name for f in fields(cls)} - _HIDDEN.get(name, set())
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def from_dict(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(data) - {"seed", "threads"} - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kw = {name: _section(name, cls, data.get(name, {})) for name, cls in _SECTIONS.items()}
    seed, threads = data.get("seed", 0), data.get("threads", 1)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError("threads must be a positive integer")
    return RunConfig(seed=seed, threads=threads, **kw)


def parse(text) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration is not valid JSON: {exc}") from None
    return from_dict(data)


def emit(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2) + "\n"


def load_config(path) -> RunConfig:
    return parse(Path(path).read_text())
