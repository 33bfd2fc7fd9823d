"""Versioned JSON model files.

Floats are written with their shortest round-trip representation, so
``save(load(text)) == text`` and loaded logits equal the saved ones bit for
bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .attention import KEY, QUERY, AttentionConfig, ProjectionHead
from .errors import ConfigError
from .kernel import HardCircuit, KernelCircuit, WiringPlan
from .manifold import Neighborhood, PositionCode, TorusGrid
from .network import LayerParams, NetworkParams

FORMAT = "boolfield-model"
VERSION = 1


def circuit_to_dict(c):
    d = {"input_arity": int(c.input_arity),
         "wiring_seed": None if c.wiring.seed is None else int(c.wiring.seed),
         "wiring": [p.tolist() for p in c.wiring.pairs],
         "taps": c.output_taps.tolist()}
    if isinstance(c, HardCircuit):
        d["gate_ids"] = [g.tolist() for g in c.gate_ids]
    else:
        d["logits"] = [l.tolist() for l in c.logits]
    return d


def circuit_from_dict(d):
    wiring = WiringPlan(d["wiring_seed"], [np.asarray(p, dtype=np.int64).reshape(-1, 2)
                                           for p in d["wiring"]])
    if "gate_ids" in d:
        return HardCircuit(int(d["input_arity"]), wiring, d["gate_ids"], d["taps"])
    if "logits" in d:
        return KernelCircuit(int(d["input_arity"]), wiring, d["logits"], d["taps"])
    raise ConfigError("circuit entry has neither logits nor gate_ids")


def network_to_dict(net: NetworkParams):
    layers = []
    for lp in net.layers:
        layers.append({
            "attention": lp.attn.to_dict(),
            "query": circuit_to_dict(lp.q_head.circuit),
            "key": circuit_to_dict(lp.k_head.circuit),
            "kernel": circuit_to_dict(lp.kernel),
            "residual": np.asarray(lp.residual).tolist(),
        })
    up = net.upscale_circuit
    return {
        "format": FORMAT, "version": VERSION, "hard": net.is_hard,
        "grid": list(net.grid.shape), "neighborhood": net.neighborhood.to_dict(),
        "m": net.m, "position_bits": net.position.bits_per_axis, "steps": net.steps,
        "upscale": net.upscale, "upscale_circuit": None if up is None else circuit_to_dict(up),
        "temperature": net.temperature, "readout_threshold": net.readout_threshold,
        "readout_scale": net.readout_scale, "seed": net.seed,
        "kernel_widths": [int(w) for w in net.kernel_widths], "layers": layers,
    }


def network_from_dict(d) -> NetworkParams:
    if d.get("format") != FORMAT:
        raise ConfigError("not a boolfield model file")
    if d.get("version") != VERSION:
        raise ConfigError(f"unsupported model file version {d.get('version')!r}")
    try:
        hard = bool(d["hard"])
        layers = []
        for ld in d["layers"]:
            res = np.asarray(ld["residual"], dtype=np.uint8 if hard else np.float64)
            layers.append(LayerParams(
                q_head=ProjectionHead(circuit_from_dict(ld["query"]), QUERY),
                k_head=ProjectionHead(circuit_from_dict(ld["key"]), KEY),
                attn=AttentionConfig.from_dict(ld["attention"]),
                kernel=circuit_from_dict(ld["kernel"]), residual=res))
        up = d["upscale_circuit"]
        net = NetworkParams(
            grid=TorusGrid(*d["grid"]), neighborhood=Neighborhood.from_dict(d["neighborhood"]),
            m=int(d["m"]), layers=layers, position=PositionCode(int(d["position_bits"])),
            steps=int(d["steps"]), upscale=d["upscale"],
            upscale_circuit=None if up is None else circuit_from_dict(up),
            temperature=float(d["temperature"]), readout_threshold=int(d["readout_threshold"]),
            readout_scale=float(d["readout_scale"]), seed=int(d["seed"]),
            kernel_widths=[int(w) for w in d["kernel_widths"]])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed model file: {exc!r}") from None
    if net.is_hard != hard or any(lp.is_hard != hard for lp in layers):
        raise ConfigError("model file 'hard' flag disagrees with its contents")
    return net.validate()


def dumps(net: NetworkParams) -> str:
    return json.dumps(network_to_dict(net), indent=1) + "\n"


def loads(text: str) -> NetworkParams:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("model file must hold a JSON object")
    return network_from_dict(data)


def save_model(net: NetworkParams, path):
    Path(path).write_text(dumps(net))


def load_model(path) -> NetworkParams:
    return loads(Path(path).read_text())
