"""Boolean query/key attention.

Codes are compared by XNOR agreement; a neighbor is admitted when the
agreement fraction plus a bias reaches the threshold. The relaxed form
replaces the step by a sigmoid of sharpness ``lam`` and the AND gating by a
product.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, UsageError
from .kernel import HardCircuit, KernelCircuit, build_kernel
from .manifold import position_code

QUERY = "query"
KEY = "key"


@dataclass
class AttentionConfig:
    d: int = 4
    tau: float = 0.5
    bias: float = 0.0
    lam: float = 2.0
    use_position: bool = True

    def __post_init__(self):
        if self.d < 2 or self.d % 2:
            raise ConfigError(f"code length d must be a positive even integer, got {self.d}")
        if not self.lam > 0:
            raise ConfigError("lam must be positive")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau must lie in [0, 1]")

    def to_dict(self):
        return {"d": self.d, "tau": self.tau, "bias": self.bias, "lam": self.lam,
                "use_position": self.use_position}

    @classmethod
    def from_dict(cls, d):
        return cls(d=int(d["d"]), tau=float(d["tau"]), bias=float(d["bias"]),
                   lam=float(d["lam"]), use_position=bool(d["use_position"]))


@dataclass(eq=False)
class ProjectionHead:
    """Single-layer circuit mapping an m-bit state to a d-bit code."""

    circuit: KernelCircuit | HardCircuit
    role: str = QUERY

    def __post_init__(self):
        if self.role not in (QUERY, KEY):
            raise ConfigError(f"unknown head role {self.role!r}")

    @property
    def d(self):
        return self.circuit.m_out

    @property
    def is_hard(self):
        return isinstance(self.circuit, HardCircuit)

    def harden(self):
        return ProjectionHead(self.circuit.harden(), self.role) if not self.is_hard else self


def build_head(m, d, seed, role=QUERY, **kw) -> ProjectionHead:
    return ProjectionHead(build_kernel(m, [d], d, seed, **kw), role)


def combine_position(content, pos):
    """XOR a crisp position code into a (possibly soft) content code."""
    if np.issubdtype(np.asarray(content).dtype, np.integer):
        return np.bitwise_xor(content, pos).astype(np.uint8)
    return content + pos - 2.0 * content * pos


def _make_code(head, state, p, pc, use_position, temperature, role):
    if head.role != role:
        raise UsageError(f"expected a {role} head, got {head.role}")
    state = np.asarray(state)
    if head.is_hard:
        content = head.circuit.forward(state.astype(np.uint8))
    else:
        content = head.circuit.forward(state.astype(np.float64), temperature, keep_trace=False)
    if not use_position:
        return content
    return combine_position(content, position_code(pc, p).astype(content.dtype))


def make_query(head, state, p=None, pc=None, use_position=True, temperature=1.0):
    return _make_code(head, state, p, pc, use_position, temperature, QUERY)


def make_key(head, state, p=None, pc=None, use_position=True, temperature=1.0):
    return _make_code(head, state, p, pc, use_position, temperature, KEY)


def xnor_similarity(q, k):
    """Fraction of agreeing bits.

    Integer codes take the popcount route; real codes use the relaxed
    agreement ``1 - (q + k - 2qk)`` per bit. Both agree on Boolean input.
    """
    # Bits are 0/1 here; mapped to +-1 the agreement count is (d + q.k) / 2.
    q = np.asarray(q)
    k = np.asarray(k)
    if q.shape[-1] != k.shape[-1]:
        raise UsageError(f"code lengths differ: {q.shape[-1]} vs {k.shape[-1]}")
    d = q.shape[-1]
    if np.issubdtype(q.dtype, np.integer) and np.issubdtype(k.dtype, np.integer):
        return (q == k).sum(axis=-1) / d
    q = q.astype(np.float64)
    k = k.astype(np.float64)
    return (1.0 - (q + k - 2.0 * q * k)).sum(axis=-1) / d


def attention_hard(s, cfg: AttentionConfig):
    """1 where ``s + bias >= tau`` (inclusive boundary)."""
    return (np.asarray(s) + cfg.bias >= cfg.tau).astype(np.uint8)


def attention_soft(s, cfg: AttentionConfig):
    return expit(cfg.lam * (np.asarray(s, dtype=np.float64) + cfg.bias - cfg.tau))


def attention_soft_grad(s, cfg: AttentionConfig):
    """d alpha / d s; the derivative w.r.t. the bias is identical."""
    a = attention_soft(s, cfg)
    return cfg.lam * a * (1.0 - a)


def gated_neighbor(alpha, x):
    """``alpha AND x``: bitwise on the hard path, a product on the soft path."""
    alpha = np.asarray(alpha)
    x = np.asarray(x)
    if alpha.ndim:
        alpha = alpha[..., None]
    if np.issubdtype(alpha.dtype, np.integer) and np.issubdtype(x.dtype, np.integer):
        return (alpha & x).astype(np.uint8)
    return alpha * x
