"""Synthetic tasks: cellular-automaton transitions and denoising, plus
dataset persistence as PBM pairs indexed by a manifest."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, UsageError
from .pbm import read_pbm, write_pbm
from .training import Dataset

CA_RULE = "ca_rule"
DENOISE = "denoise"
EXHAUSTIVE = "exhaustive_rule_table"
KINDS = (CA_RULE, DENOISE, EXHAUSTIVE)

MANIFEST = "manifest.txt"
MANIFEST_HEADER = "# boolfield dataset v1"

# 3x3 window offsets in table-index order: row-major, top-left is the most
# significant of the 9 bits and the center is bit 4.
WINDOW = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


def neighborhood_index(field):
    """Per-pixel 9-bit index of the toroidal 3x3 window, shape like ``field``."""
    f = np.asarray(field).astype(np.int64)
    idx = np.zeros_like(f)
    for dy, dx in WINDOW:
        idx = (idx << 1) | np.roll(f, (-dy, -dx), axis=(-2, -1))
    return idx


def apply_rule_table(field, table):
    """One synchronous step of an arbitrary Moore-neighborhood rule."""
    table = validate_table(table)
    return table[neighborhood_index(field)]


def life_step(field):
    """Conway's Life (B3/S23) on the torus, by neighbor counting."""
    f = np.asarray(field).astype(np.uint8)
    n = sum(np.roll(f, (dy, dx), axis=(-2, -1)) for dy, dx in WINDOW if (dy, dx) != (0, 0))
    return ((n == 3) | ((f == 1) & (n == 2))).astype(np.uint8)


def _life_table():
    idx = np.arange(512)
    center = (idx >> 4) & 1
    count = np.array([bin(i).count("1") for i in idx]) - center
    return ((count == 3) | ((center == 1) & (count == 2))).astype(np.uint8)


LIFE_TABLE = _life_table()
IDENTITY_TABLE = ((np.arange(512) >> 4) & 1).astype(np.uint8)
NAMED_RULES = {"life": LIFE_TABLE, "b3s23": LIFE_TABLE, "identity": IDENTITY_TABLE}


def validate_table(table):
    t = np.asarray(table)
    if t.shape != (512,):
        raise ConfigError(f"rule table must have exactly 512 entries, got shape {t.shape}")
    if not np.isin(t, (0, 1)).all():
        raise ConfigError("rule table entries must be 0 or 1")
    return t.astype(np.uint8)


def resolve_rule(rule):
    if isinstance(rule, str):
        key = rule.lower()
        if key not in NAMED_RULES:
            raise ConfigError(f"unknown rule {rule!r}; named rules: {sorted(NAMED_RULES)}")
        return NAMED_RULES[key]
    return validate_table(rule)


@dataclass
class TaskSpec:
    kind: str = CA_RULE
    grid: tuple = (16, 16)
    samples: int = 256
    seed: int = 0
    rule: object = "life"
    flip_prob: float = 0.1
    density: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}")
        self.grid = tuple(int(g) for g in self.grid)
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise ConfigError("grid must be two positive integers")
        if self.samples < 0:
            raise ConfigError("samples must be non-negative")
        if not 0.0 <= self.flip_prob < 0.5:
            raise ConfigError("flip_prob must lie in [0, 0.5)")
        if not 0.0 <= self.density <= 1.0:
            raise ConfigError("density must lie in [0, 1]")
        if self.kind != DENOISE:
            resolve_rule(self.rule)

    def to_dict(self):
        rule = self.rule if isinstance(self.rule, str) else [int(v) for v in self.rule]
        return {"kind": self.kind, "grid": list(self.grid), "samples": self.samples,
                "seed": self.seed, "rule": rule, "flip_prob": self.flip_prob,
                "density": self.density}


def gen_ca_pairs(spec: TaskSpec) -> Dataset:
    if spec.kind != CA_RULE:
        raise UsageError("gen_ca_pairs needs a ca_rule task")
    table = resolve_rule(spec.rule)
    rng = np.random.default_rng(spec.seed)
    x = (rng.random((spec.samples,) + spec.grid) < spec.density).astype(np.uint8)
    return Dataset(x, apply_rule_table(x, table))


def exhaustive_rule_table(rule="life") -> Dataset:
    """All 512 3x3 configurations, each once; on the 3x3 torus every pixel
    sees the whole field, so the center target is the table entry."""
    table = resolve_rule(rule)
    idx = np.arange(512)
    x = ((idx[:, None] >> (8 - np.arange(9))) & 1).astype(np.uint8).reshape(512, 3, 3)
    return Dataset(x, apply_rule_table(x, table))


def _shapes(rng, h, w):
    out = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[:h, :w]
    for _ in range(int(rng.integers(1, 4))):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        if rng.random() < 0.5:
            rh, rw = rng.integers(1, max(2, h // 2) + 1), rng.integers(1, max(2, w // 2) + 1)
            out[y0:y0 + rh, x0:x0 + rw] = True
        else:
            r = rng.uniform(1.0, max(1.5, min(h, w) / 4))
            out |= (yy - y0) ** 2 + (xx - x0) ** 2 <= r * r
    return out.astype(np.uint8)


def gen_denoise_pairs(spec: TaskSpec) -> Dataset:
    """Targets are random rectangles and disks; inputs flip each pixel
    independently with probability ``flip_prob``."""
    if spec.kind != DENOISE:
        raise UsageError("gen_denoise_pairs needs a denoise task")
    rng = np.random.default_rng(spec.seed)
    h, w = spec.grid
    y = np.stack([_shapes(rng, h, w) for _ in range(spec.samples)]) if spec.samples else \
        np.zeros((0, h, w), dtype=np.uint8)
    flips = (rng.random(y.shape) < spec.flip_prob).astype(np.uint8)
    return Dataset(y ^ flips, y)


def generate(spec: TaskSpec) -> Dataset:
    if spec.kind == CA_RULE:
        return gen_ca_pairs(spec)
    if spec.kind == DENOISE:
        return gen_denoise_pairs(spec)
    return exhaustive_rule_table(spec.rule)


# ---------------------------------------------------------------- storage

def save_dataset(ds: Dataset, directory, binary=True):
    """Write PBM pairs and a manifest; returns the manifest path.

    Manifest lines are ``input.pbm target.pbm`` for field targets and
    ``input.pbm label`` for scalar labels, relative to the directory.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    digits = max(5, len(str(max(len(ds) - 1, 0))))
    lines = [MANIFEST_HEADER]
    for i in range(len(ds)):
        name = f"input_{i:0{digits}d}.pbm"
        write_pbm(ds.inputs[i], d / name, binary)
        if ds.labels:
            lines.append(f"{name} {int(ds.targets[i])}")
        else:
            tname = f"target_{i:0{digits}d}.pbm"
            write_pbm(ds.targets[i], d / tname, binary)
            lines.append(f"{name} {tname}")
    path = d / MANIFEST
    path.write_text("\n".join(lines) + "\n")
    return path


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    path = d / MANIFEST if d.is_dir() else d
    if not path.exists():
        raise UsageError(f"no dataset manifest at {path}")
    base = path.parent
    inputs, targets = [], []
    for n, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(f"{path}:{n}: expected two entries, got {len(parts)}")
        inputs.append(read_pbm(base / parts[0]))
        targets.append(int(parts[1]) if parts[1] in ("0", "1") else read_pbm(base / parts[1]))
    if not inputs:
        raise UsageError(f"{path}: dataset is empty")
    if len({x.shape for x in inputs}) > 1:
        raise UsageError(f"{path}: inputs differ in size")
    kinds = {isinstance(t, int) for t in targets}
    if len(kinds) > 1:
        raise ConfigError(f"{path}: mixes scalar labels and target fields")
    return Dataset(np.stack(inputs), np.array(targets) if kinds == {True} else np.stack(targets))
