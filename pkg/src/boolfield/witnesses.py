"""Hand-built circuits and networks with known behavior."""
from __future__ import annotations

import numpy as np

from . import gates
from .attention import KEY, QUERY, AttentionConfig, ProjectionHead
from .kernel import CircuitBuilder, HardCircuit, WiringPlan
from .manifold import MOORE8, Neighborhood, PositionCode, TorusGrid
from .network import ZERO_PAD, LayerParams, NetworkParams


def majority_circuit() -> HardCircuit:
    b = CircuitBuilder(3)
    x, y, z = b.inputs
    t = b.xor(x, y)
    return b.build([b.or_(b.and_(x, y), b.and_(z, t))])


def _full_adder(b, x, y, z):
    t = b.xor(x, y)
    return b.xor(t, z), b.or_(b.and_(x, y), b.and_(t, z))


def life_circuit() -> HardCircuit:
    """B3/S23 on inputs (own, n1..n8).

    The eight neighbors are compressed to a weight-1 bit and four weight-2
    carries; the cell lives when exactly one carry is set and either the
    weight-1 bit or the cell itself is set.
    """
    b = CircuitBuilder(9)
    own, *n = b.inputs
    s_a, c_a = _full_adder(b, n[0], n[1], n[2])
    s_b, c_b = _full_adder(b, n[3], n[4], n[5])
    s_c, c_c = b.xor(n[6], n[7]), b.and_(n[6], n[7])
    s0, c_d = _full_adder(b, s_a, s_b, s_c)
    x1, a1 = b.xor(c_a, c_b), b.and_(c_a, c_b)
    x2, a2 = b.xor(c_c, c_d), b.and_(c_c, c_d)
    exactly_one = b.gate(gates.A_AND_NOT_B, b.xor(x1, x2), b.or_(a1, a2))
    return b.build([b.and_(exactly_one, b.or_(s0, own))])


def constant_head(m, d, gate_id=gates.FALSE, role=QUERY) -> ProjectionHead:
    pairs = np.zeros((d, 2), dtype=np.int64)
    if m > 1:
        pairs[:, 1] = 1
    ids = np.full(d, gate_id, dtype=np.uint8)
    return ProjectionHead(HardCircuit(m, WiringPlan(None, [pairs]), [ids], np.arange(d)), role)


def life_network(grid=(16, 16), d=2, steps=1) -> NetworkParams:
    """Hardened one-layer network computing one Life generation per step:
    attention held open by a large bias, residual passes the kernel output."""
    grid = grid if isinstance(grid, TorusGrid) else TorusGrid(*grid)
    layer = LayerParams(
        q_head=constant_head(1, d, role=QUERY),
        k_head=constant_head(1, d, role=KEY),
        attn=AttentionConfig(d=d, tau=0.5, bias=2.0, lam=50.0, use_position=False),
        kernel=life_circuit(),
        residual=np.array([gates.PASS_B], dtype=np.uint8),
    )
    return NetworkParams(grid=grid, neighborhood=Neighborhood(MOORE8), m=1, layers=[layer],
                         position=PositionCode(d // 2), steps=steps, upscale=ZERO_PAD).validate()
