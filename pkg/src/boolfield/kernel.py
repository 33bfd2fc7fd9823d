"""Layered logic-gate circuits with fixed seeded wiring.

A circuit takes ``input_arity`` wires; every gate of layer ``l`` reads two
wires of layer ``l - 1`` (layer 0 is the input). Output taps index into the
last layer. The relaxed form (:class:`KernelCircuit`) keeps a 16-way logit
vector per gate; the hardened form (:class:`HardCircuit`) keeps a gate id.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import gates
from .errors import ConfigError, UsageError

INIT_NOISE = 0.01
PASS_BIAS = 1.0


@dataclass
class WiringPlan:
    seed: int | None
    pairs: list  # one (width, 2) int64 array per layer

    @property
    def widths(self):
        return [len(p) for p in self.pairs]

    def equals(self, other):
        return len(self.pairs) == len(other.pairs) and all(
            np.array_equal(a, b) for a, b in zip(self.pairs, other.pairs))


def _sample_layer(rng, n_prev, width, require_cover):
    slots = 2 * width
    if n_prev == 1:
        return np.zeros((width, 2), dtype=np.int64)
    if require_cover and slots < n_prev:
        raise ConfigError(
            f"first layer has {width} gates ({slots} input slots) but {n_prev} input wires; "
            "every input wire must feed a gate")
    cover = rng.permutation(n_prev)[:min(n_prev, slots)]
    fill = rng.integers(0, n_prev, size=slots - len(cover))
    pairs = rng.permutation(np.concatenate([cover, fill])).reshape(width, 2)
    # Redraw the second input of any gate reading one wire twice; the wire
    # stays covered through the first input.
    for i in np.flatnonzero(pairs[:, 0] == pairs[:, 1]):
        pairs[i, 1] = (pairs[i, 0] + 1 + rng.integers(0, n_prev - 1)) % n_prev
    return pairs.astype(np.int64)


def sample_wiring(input_arity, layer_widths, seed) -> WiringPlan:
    rng = np.random.default_rng(seed)
    pairs = []
    n_prev = input_arity
    for li, width in enumerate(layer_widths):
        pairs.append(_sample_layer(rng, n_prev, width, require_cover=(li == 0)))
        n_prev = width
    return WiringPlan(seed, pairs)


def _scatter_matrix(idx, n_prev):
    """Sparse (n_prev, width) matrix summing gate gradients back onto wires."""
    width = len(idx)
    return sp.csr_matrix((np.ones(width), (idx, np.arange(width))), shape=(n_prev, width))


@dataclass
class KernelTrace:
    owner: int
    fingerprint: int
    temperature: float
    lead_shape: tuple
    coefs: list
    a: list
    b: list


class _CircuitShape:
    input_arity: int
    wiring: WiringPlan
    output_taps: np.ndarray

    @property
    def layer_widths(self):
        return self.wiring.widths

    @property
    def m_out(self):
        return len(self.output_taps)

    @property
    def n_gates(self):
        return sum(self.layer_widths)

    def _check_inputs(self, x):
        if x.shape[-1] != self.input_arity:
            raise UsageError(f"circuit expects {self.input_arity} inputs, got {x.shape[-1]}")

    def _validate(self):
        n_prev = self.input_arity
        for li, p in enumerate(self.wiring.pairs):
            p = np.asarray(p)
            if p.ndim != 2 or p.shape[1] != 2 or len(p) == 0:
                raise ConfigError(f"layer {li}: wiring must be a nonempty (width, 2) array")
            if p.min() < 0 or p.max() >= n_prev:
                raise ConfigError(f"layer {li}: wire index out of range [0, {n_prev})")
            n_prev = len(p)
        taps = np.asarray(self.output_taps)
        if len(taps) == 0 or taps.min() < 0 or taps.max() >= n_prev:
            raise ConfigError("output taps must index the last layer")


@dataclass(eq=False)
class KernelCircuit(_CircuitShape):
    """Relaxed circuit: one row of 16 logits per gate, per layer."""

    input_arity: int
    wiring: WiringPlan
    logits: list
    output_taps: np.ndarray
    _scatter: list = field(default=None, repr=False)

    def __post_init__(self):
        self.output_taps = np.asarray(self.output_taps, dtype=np.int64)
        self.logits = [np.asarray(l, dtype=np.float64) for l in self.logits]
        self._validate()
        for l, p in zip(self.logits, self.wiring.pairs):
            if l.shape != (len(p), gates.N_GATES):
                raise ConfigError(f"logit block shape {l.shape} does not match {len(p)} gates")

    def distributions(self, temperature=1.0):
        return [gates.GateDistribution(row, temperature) for l in self.logits for row in l]

    def fingerprint(self):
        return hash(b"".join(l.tobytes() for l in self.logits))

    def _scatters(self):
        if self._scatter is None:
            n_prev = self.input_arity
            mats = []
            for p in self.wiring.pairs:
                mats.append((_scatter_matrix(p[:, 0], n_prev), _scatter_matrix(p[:, 1], n_prev)))
                n_prev = len(p)
            self._scatter = mats
        return self._scatter

    def forward(self, x, temperature=1.0, keep_trace=True):
        x = np.asarray(x, dtype=np.float64)
        self._check_inputs(x)
        lead = x.shape[:-1]
        h = x.reshape(-1, self.input_arity)
        trace = KernelTrace(id(self), self.fingerprint(), temperature, lead, [], [], [])
        for logits, p in zip(self.logits, self.wiring.pairs):
            coef = gates.mixture_coefficients(logits, temperature)
            a = h[:, p[:, 0]]
            b = h[:, p[:, 1]]
            h = gates.mix_forward(coef, a, b)
            if keep_trace:
                trace.coefs.append(coef)
                trace.a.append(a)
                trace.b.append(b)
        out = h[:, self.output_taps].reshape(lead + (self.m_out,))
        return (out, trace) if keep_trace else out

    def backward(self, trace: KernelTrace, upstream):
        """Reverse-mode gradients: (list of dlogits blocks, dinputs)."""
        if trace.owner != id(self) or trace.fingerprint != self.fingerprint() or not trace.coefs:
            raise UsageError("trace does not belong to the current circuit parameters")
        g_out = np.asarray(upstream, dtype=np.float64).reshape(-1, self.m_out)
        width = self.layer_widths[-1]
        g = np.zeros((g_out.shape[0], width))
        np.add.at(g.T, self.output_taps, g_out.T)
        dlogits = [None] * len(self.logits)
        scat = self._scatters()
        for li in range(len(self.logits) - 1, -1, -1):
            coef, a, b = trace.coefs[li], trace.a[li], trace.b[li]
            dcoef, da, db = gates.mix_backward(coef, a, b, g)
            dlogits[li] = gates.coef_to_logit_grad(dcoef, self.logits[li], trace.temperature)
            sa, sb = scat[li]
            g = np.asarray(sa @ da.T + sb @ db.T).T
        return dlogits, g.reshape(trace.lead_shape + (self.input_arity,))

    def harden(self) -> "HardCircuit":
        ids = [np.argmax(l, axis=1).astype(np.uint8) for l in self.logits]
        return HardCircuit(self.input_arity, self.wiring, ids, self.output_taps.copy())

    def copy(self):
        return KernelCircuit(self.input_arity, self.wiring, [l.copy() for l in self.logits],
                             self.output_taps.copy())


@dataclass(eq=False)
class HardCircuit(_CircuitShape):
    """Hardened circuit: one gate id per gate."""

    input_arity: int
    wiring: WiringPlan
    gate_ids: list
    output_taps: np.ndarray

    def __post_init__(self):
        self.output_taps = np.asarray(self.output_taps, dtype=np.int64)
        self.gate_ids = [np.asarray(g, dtype=np.uint8) for g in self.gate_ids]
        self._validate()
        for g, p in zip(self.gate_ids, self.wiring.pairs):
            if g.shape != (len(p),):
                raise ConfigError("gate id block does not match wiring")
            if g.size and g.max() >= gates.N_GATES:
                raise ConfigError("gate ids must lie in [0, 16)")

    def forward(self, x):
        x = np.asarray(x)
        self._check_inputs(x)
        if x.size and x.max() > 1:
            raise UsageError("hard circuit inputs must be bits")
        lead = x.shape[:-1]
        h = x.reshape(-1, self.input_arity).astype(np.uint8)
        for ids, p in zip(self.gate_ids, self.wiring.pairs):
            h = gates.hard_lookup(ids, h[:, p[:, 0]], h[:, p[:, 1]])
        return h[:, self.output_taps].reshape(lead + (self.m_out,))

    @cached_property
    def layer_groups(self):
        """Per layer: list of (gate id, gate indices, input a wires, input b wires)."""
        out = []
        for ids, p in zip(self.gate_ids, self.wiring.pairs):
            groups = []
            for g in np.unique(ids):
                sel = np.flatnonzero(ids == g)
                groups.append((int(g), sel, p[sel, 0], p[sel, 1]))
            out.append(groups)
        return out

    def to_soft(self, temperature=1.0) -> KernelCircuit:
        """One-hot relaxed circuit with identical hard semantics."""
        logits = []
        for ids in self.gate_ids:
            l = np.zeros((len(ids), gates.N_GATES))
            l[np.arange(len(ids)), ids] = gates.ONE_HOT_GAP * temperature
            logits.append(l)
        return KernelCircuit(self.input_arity, self.wiring, logits, self.output_taps.copy())

    def equals(self, other):
        return (self.input_arity == other.input_arity and self.wiring.equals(other.wiring)
                and all(np.array_equal(a, b) for a, b in zip(self.gate_ids, other.gate_ids))
                and np.array_equal(self.output_taps, other.output_taps))

    def to_netlist(self) -> str:
        lines = [f"boolnet v1 {self.input_arity} {self.m_out}"]
        for li, (ids, p) in enumerate(zip(self.gate_ids, self.wiring.pairs)):
            for gi in range(len(ids)):
                lines.append(f"g {li} {gi} {int(ids[gi])} {int(p[gi, 0])} {int(p[gi, 1])}")
        lines.extend(f"t {int(t)}" for t in self.output_taps)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_netlist(cls, text) -> "HardCircuit":
        lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines or lines[0][:2] != ["boolnet", "v1"] or len(lines[0]) != 4:
            raise ConfigError("netlist must start with 'boolnet v1 <input_arity> <m_out>'")
        try:
            arity, m_out = int(lines[0][2]), int(lines[0][3])
            layers = {}
            taps = []
            for n, parts in enumerate(lines[1:], start=2):
                if parts[0] == "g" and len(parts) == 6:
                    li, gi, gid, a, b = map(int, parts[1:])
                    layers.setdefault(li, []).append((gi, gid, a, b))
                elif parts[0] == "t" and len(parts) == 2:
                    taps.append(int(parts[1]))
                else:
                    raise ConfigError(f"netlist line {n}: unrecognised record {' '.join(parts)!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"netlist: malformed integer field ({exc})") from None
        if sorted(layers) != list(range(len(layers))):
            raise ConfigError("netlist layers must be numbered 0..L-1")
        if len(taps) != m_out:
            raise ConfigError(f"netlist declares {m_out} outputs but lists {len(taps)} taps")
        pairs, ids = [], []
        for li in range(len(layers)):
            rows = sorted(layers[li])
            if [r[0] for r in rows] != list(range(len(rows))):
                raise ConfigError(f"netlist layer {li}: gate indices must be 0..n-1")
            ids.append(np.array([r[1] for r in rows], dtype=np.uint8))
            pairs.append(np.array([[r[2], r[3]] for r in rows], dtype=np.int64))
        return cls(arity, WiringPlan(None, pairs), ids, np.array(taps))


def build_kernel(input_arity, layer_widths, m_out, seed, pass_bias=PASS_BIAS,
                 noise=INIT_NOISE) -> KernelCircuit:
    """Circuit with seeded random wiring, initialised near pass-through.

    Logits are uniform noise in ``[-noise, noise]`` plus ``pass_bias`` on the
    gate that forwards its first input.
    """
    layer_widths = [int(w) for w in layer_widths]
    if not layer_widths or min(layer_widths) < 1:
        raise ConfigError("layer_widths must be a nonempty list of positive integers")
    if m_out < 1 or m_out > layer_widths[-1]:
        raise ConfigError(f"m_out={m_out} exceeds the last layer width {layer_widths[-1]}")
    wiring = sample_wiring(int(input_arity), layer_widths, seed)
    rng = np.random.default_rng([seed, 1])
    logits = []
    for w in layer_widths:
        l = rng.uniform(-noise, noise, size=(w, gates.N_GATES))
        l[:, gates.PASS_A] += pass_bias
        logits.append(l)
    return KernelCircuit(int(input_arity), wiring, logits, np.arange(m_out))


def kernel_forward_soft(c: KernelCircuit, inputs, temperature=1.0):
    return c.forward(inputs, temperature)


def kernel_forward_hard(c: HardCircuit, inputs):
    return c.forward(inputs)


def kernel_backward(c: KernelCircuit, trace, upstream):
    return c.backward(trace, upstream)


def harden_kernel(c: KernelCircuit) -> HardCircuit:
    return c.harden()


class CircuitBuilder:
    """Schedules a DAG of two-input gates into a layered :class:`HardCircuit`.

    Wires that skip layers are carried by PASS_A buffers. Outputs occupy the
    first slots of the last layer, so taps are ``0..m-1``.

    >>> b = CircuitBuilder(2)
    >>> x, y = b.inputs
    >>> c = b.build([b.gate(gates.XOR, x, y)])
    >>> c.forward(np.array([1, 0], dtype=np.uint8)).tolist()
    [1]
    """

    def __init__(self, n_inputs):
        self.n_inputs = n_inputs
        self.inputs = list(range(n_inputs))
        self._nodes = []  # (gate, a, b)
        self._level = [0] * n_inputs

    def gate(self, gate_id, a, b):
        self._nodes.append((gate_id, a, b))
        self._level.append(max(self._level[a], self._level[b]) + 1)
        return self.n_inputs + len(self._nodes) - 1

    def xor(self, a, b):
        return self.gate(gates.XOR, a, b)

    def and_(self, a, b):
        return self.gate(gates.AND, a, b)

    def or_(self, a, b):
        return self.gate(gates.OR, a, b)

    def build(self, outputs) -> HardCircuit:
        if len(set(outputs)) != len(outputs):
            raise ConfigError("outputs must be distinct nodes")
        level = self._level
        depth = max(1, max(level[o] for o in outputs))
        last_use = list(level)
        for k, (_, a, b) in enumerate(self._nodes):
            n = self.n_inputs + k
            for src in (a, b):
                last_use[src] = max(last_use[src], level[n] - 1)
        for o in outputs:
            last_use[o] = depth
        prev = {w: w for w in range(self.n_inputs)}  # node -> wire index in previous layer
        pairs, ids = [], []
        for l in range(1, depth + 1):
            live = [n for n in range(len(level)) if level[n] <= l <= last_use[n]
                    and (level[n] == l or n in prev)]
            if l == depth:
                live = list(outputs) + [n for n in live if n not in outputs]
            row_pairs, row_ids, here = [], [], {}
            for n in live:
                if level[n] == l:
                    g, a, b = self._nodes[n - self.n_inputs]
                    row_pairs.append((prev[a], prev[b]))
                    row_ids.append(g)
                else:
                    row_pairs.append((prev[n], prev[n]))
                    row_ids.append(gates.PASS_A)
                here[n] = len(here)
            pairs.append(np.array(row_pairs, dtype=np.int64))
            ids.append(np.array(row_ids, dtype=np.uint8))
            prev = here
        return HardCircuit(self.n_inputs, WiringPlan(None, pairs), ids, np.arange(len(outputs)))
