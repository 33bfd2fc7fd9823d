"""Two-input Boolean gates: hard truth tables, the multilinear relaxation,
softmax mixtures over all 16 gates and their gradients.

A gate id is a 4-bit truth table: ``T(u, v)`` is bit ``2*u + v`` of the id.
Values use the {0, 1} convention throughout (the {-1, +1} convention would
turn XNOR counts into dot products; nothing here relies on it).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_GATES = 16

FALSE = 0b0000
NOR = 0b0001
NOT_A_AND_B = 0b0010
NOT_A = 0b0011
A_AND_NOT_B = 0b0100
NOT_B = 0b0101
XOR = 0b0110
NAND = 0b0111
AND = 0b1000
XNOR = 0b1001
PASS_B = 0b1010
A_IMPLIES_B = 0b1011
PASS_A = 0b1100
B_IMPLIES_A = 0b1101
OR = 0b1110
TRUE = 0b1111

GATE_NAMES = {
    FALSE: "FALSE", NOR: "NOR", NOT_A_AND_B: "NOT_A_AND_B", NOT_A: "NOT_A",
    A_AND_NOT_B: "A_AND_NOT_B", NOT_B: "NOT_B", XOR: "XOR", NAND: "NAND",
    AND: "AND", XNOR: "XNOR", PASS_B: "PASS_B", A_IMPLIES_B: "A_IMPLIES_B",
    PASS_A: "PASS_A", B_IMPLIES_A: "B_IMPLIES_A", OR: "OR", TRUE: "TRUE",
}

# TRUTH[g, 2*u + v] = T_g(u, v); columns ordered 00, 01, 10, 11.
TRUTH = np.array([[(g >> k) & 1 for k in range(4)] for g in range(N_GATES)], dtype=np.float64)


def hard_gate(g, a, b):
    """Truth-table bit ``T_g(a, b)``."""
    if a not in (0, 1) or b not in (0, 1):
        raise ValueError(f"hard gate inputs must be bits, got ({a}, {b})")
    return (int(g) >> (2 * int(a) + int(b))) & 1


def corner_basis(a, b):
    """Multilinear weights of the four corners 00, 01, 10, 11."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.stack([(1 - a) * (1 - b), (1 - a) * b, a * (1 - b), a * b], axis=-1)


def soft_gate(g, a, b):
    """Multilinear extension of gate ``g`` at real inputs in [0, 1].

    XOR becomes a + b - 2ab, AND becomes ab, OR becomes a + b - ab.
    """
    return corner_basis(a, b) @ TRUTH[g]


def softmax(logits, temperature=1.0):
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class GateDistribution:
    """A relaxed gate: 16 logits and the shared softmax temperature."""

    logits: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.shape != (N_GATES,):
            raise ValueError(f"expected 16 logits, got shape {self.logits.shape}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    @property
    def probs(self):
        return softmax(self.logits, self.temperature)

    @classmethod
    def from_probs(cls, probs, temperature=1.0):
        """Logits reproducing ``probs``; zero entries map to a -1e4 gap,
        which underflows to exactly zero probability."""
        probs = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            logits = np.where(probs > 0, np.log(np.where(probs > 0, probs, 1.0)), -1e4)
        return cls(logits * temperature, temperature)

    @classmethod
    def one_hot(cls, g, temperature=1.0):
        logits = np.zeros(N_GATES)
        logits[g] = ONE_HOT_GAP
        return cls(logits, temperature)


# Logit gap after which exp underflows to exactly 0.0 in float64.
ONE_HOT_GAP = 1e4


def mixture_coefficients(logits, temperature=1.0):
    """Expected truth table under the softmax: shape (..., 4)."""
    return softmax(logits, temperature) @ TRUTH


def soft_mixture(dist: GateDistribution, a, b):
    return corner_basis(a, b) @ mixture_coefficients(dist.logits, dist.temperature)


def mixture_gradients(dist: GateDistribution, a, b, upstream=1.0):
    """Gradients of ``soft_mixture`` w.r.t. (logits, a, b), scaled by ``upstream``."""
    p = dist.probs
    f = np.array([soft_gate(g, a, b) for g in range(N_GATES)])
    out = p @ f
    dlogits = upstream * p * (f - out) / dist.temperature
    c = p @ TRUTH
    da = upstream * ((1 - b) * (c[2] - c[0]) + b * (c[3] - c[1]))
    db = upstream * ((1 - a) * (c[1] - c[0]) + a * (c[3] - c[2]))
    return dlogits, float(da), float(db)


def harden(dist) -> int:
    """Argmax gate id; ties go to the lowest id."""
    logits = dist.logits if isinstance(dist, GateDistribution) else np.asarray(dist)
    return int(np.argmax(logits))


def distribution_entropy(dist) -> float:
    """Shannon entropy of the softmax, in nats."""
    if isinstance(dist, GateDistribution):
        p = dist.probs
    else:
        p = softmax(dist)
    return float(entropy_rows(p))


def entropy_rows(p):
    p = np.asarray(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def entropy_grad(logits, temperature=1.0):
    """Entropies of each row of ``logits`` and their gradients."""
    p = softmax(logits, temperature)
    h = entropy_rows(p)
    with np.errstate(divide="ignore"):
        logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
    return h, -p * (logp + h[..., None]) / temperature


# Vectorised layer primitives used by circuits. ``coef`` has shape (..., 4)
# and broadcasts against the last axis of ``a`` and ``b``.

def mix_forward(coef, a, b):
    c00, c01, c10, c11 = coef[..., 0], coef[..., 1], coef[..., 2], coef[..., 3]
    return c00 + (c10 - c00) * a + (c01 - c00) * b + (c00 - c01 - c10 + c11) * (a * b)


def mix_backward(coef, a, b, g):
    """Gradients (dcoef summed over leading axes, da, db) for ``mix_forward``."""
    c00, c01, c10, c11 = coef[..., 0], coef[..., 1], coef[..., 2], coef[..., 3]
    k = c00 - c01 - c10 + c11
    da = g * ((c10 - c00) + k * b)
    db = g * ((c01 - c00) + k * a)
    lead = tuple(range(g.ndim - 1))
    ga = g * a
    gb = g * b
    gab = g * (a * b)
    s1 = g.sum(axis=lead)
    sa = ga.sum(axis=lead)
    sb = gb.sum(axis=lead)
    sab = gab.sum(axis=lead)
    # basis: (1-a)(1-b), (1-a)b, a(1-b), ab
    dcoef = np.stack([s1 - sa - sb + sab, sb - sab, sa - sab, sab], axis=-1)
    return dcoef, da, db


def coef_to_logit_grad(dcoef, logits, temperature=1.0):
    """Chain ``d loss / d coef`` back through ``softmax(logits) @ TRUTH``."""
    p = softmax(logits, temperature)
    dp = dcoef @ TRUTH.T
    return p * (dp - (p * dp).sum(axis=-1, keepdims=True)) / temperature


def hard_lookup(ids, a, b):
    """Elementwise gate evaluation on uint8 bit arrays; ``ids`` broadcasts
    against the last axis."""
    return ((np.asarray(ids, dtype=np.uint8) >> ((a << 1) | b)) & 1).astype(np.uint8)
