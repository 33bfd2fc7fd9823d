"""Word-parallel hard inference on bit-plane packed fields.

Each bit position of the pixel state is stored as its own plane; a plane row
is packed little-endian into 64-bit words (pixel ``x`` is bit ``x % 64`` of
word ``x // 64``) and padded to a whole number of words. Padding bits are
kept at zero after every operation.

Neighbor gathers are whole-plane cyclic rotations. Attention similarity
needs a per-pixel popcount of d XNOR planes, done with a bit-sliced ripple
counter followed by a bit-sliced ``>=`` comparison against a constant.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .kernel import HardCircuit
from .manifold import TorusGrid, neighbor_offsets
from .network import (HARD, LOCAL_CIRCUIT, REPLICATE, ZERO_PAD, LayerParams, NetworkParams,
                      as_batch, harden_network, network_forward)

WORD = 64
ALL = np.uint64(0xFFFFFFFFFFFFFFFF)
ZERO = np.uint64(0)

# Word-wise lowering of every gate id; results may set padding bits, so
# callers mask.
WORD_GATES = (
    lambda a, b: np.zeros_like(a),   # FALSE
    lambda a, b: ~(a | b),           # NOR
    lambda a, b: ~a & b,
    lambda a, b: ~a,                 # NOT_A
    lambda a, b: a & ~b,
    lambda a, b: ~b,                 # NOT_B
    lambda a, b: a ^ b,              # XOR
    lambda a, b: ~(a & b),           # NAND
    lambda a, b: a & b,              # AND
    lambda a, b: ~(a ^ b),           # XNOR
    lambda a, b: b.copy(),           # PASS_B
    lambda a, b: ~a | b,             # A implies B
    lambda a, b: a.copy(),           # PASS_A
    lambda a, b: a | ~b,             # B implies A
    lambda a, b: a | b,              # OR
    lambda a, b: np.full_like(a, ALL),  # TRUE
)


def n_words(width):
    return -(-width // WORD)


def row_mask(width):
    """Validity mask for one packed row."""
    mask = np.zeros(n_words(width), dtype=np.uint64)
    full, rem = divmod(width, WORD)
    mask[:full] = ALL
    if rem:
        mask[full] = np.uint64((1 << rem) - 1)
    return mask


@dataclass
class PackedField:
    """``planes`` has shape (m, N, H, words)."""

    height: int
    width: int
    planes: np.ndarray

    @property
    def m(self):
        return self.planes.shape[0]

    @property
    def mask(self):
        return row_mask(self.width)

    def padding_clean(self):
        return not np.any(self.planes & ~self.mask)


def pack(field) -> PackedField:
    """Pack a hard field (H, W), (H, W, m) or (N, H, W, m)."""
    x = np.asarray(field)
    if np.issubdtype(x.dtype, np.floating):
        raise UsageError("only hard (integer) fields can be packed")
    if x.ndim == 2:
        x = x[None, :, :, None]
    elif x.ndim == 3:
        x = x[None]
    if x.size and x.max() > 1:
        raise UsageError("packed fields hold bits only")
    n, h, w, m = x.shape
    nw = n_words(w)
    padded = np.zeros((m, n, h, nw * WORD), dtype=np.uint8)
    padded[..., :w] = np.moveaxis(x, -1, 0)
    packed = np.packbits(padded, axis=-1, bitorder="little")
    planes = np.ascontiguousarray(packed).view("<u8").astype(np.uint64, copy=False)
    return PackedField(h, w, planes.reshape(m, n, h, nw))


def unpack(pf: PackedField, batched=False):
    """Inverse of :func:`pack`; returns (H, W, m) or (N, H, W, m)."""
    raw = np.ascontiguousarray(pf.planes.astype("<u8")).view(np.uint8)
    bits = np.unpackbits(raw, axis=-1, bitorder="little")[..., :pf.width]
    out = np.moveaxis(bits, 0, -1)
    return out if batched or out.shape[0] != 1 else out[0]


def _shr(words, s):
    """Big-integer right shift of each row (last axis, little-endian words)."""
    q, b = divmod(s, WORD)
    nw = words.shape[-1]
    out = np.zeros_like(words)
    if q >= nw:
        return out
    src = words[..., q:]
    out[..., :nw - q] = src >> np.uint64(b) if b else src
    if b and nw - q > 1:
        out[..., :nw - q - 1] |= src[..., 1:] << np.uint64(WORD - b)
    return out


def _shl(words, s):
    q, b = divmod(s, WORD)
    nw = words.shape[-1]
    out = np.zeros_like(words)
    if q >= nw:
        return out
    src = words[..., :nw - q]
    out[..., q:] = src << np.uint64(b) if b else src
    if b and nw - q > 1:
        out[..., q + 1:] |= src[..., :-1] >> np.uint64(WORD - b)
    return out


def rotate(words, dy, dx, width, mask):
    """``out[r, x] = in[r + dy, x + dx]`` on the torus, for planes (..., H, words)."""
    out = np.roll(words, -dy, axis=-2) if dy else words
    s = dx % width
    if s:
        out = (_shr(out, s) | _shl(out, width - s)) & mask
    return out


def shifted_plane(pf: PackedField, plane, offset):
    if not 0 <= plane < pf.m:
        raise UsageError(f"plane {plane} outside [0, {pf.m})")
    dy, dx = offset
    return rotate(pf.planes[plane], dy, dx, pf.width, pf.mask)


def apply_gate(g, a, b, mask):
    return WORD_GATES[int(g)](a, b) & mask


def circuit_words(circuit: HardCircuit, wires, mask):
    """Evaluate a hard circuit on stacked planes ``wires`` (arity, ...)."""
    h = wires
    for width, groups in zip(circuit.layer_widths, circuit.layer_groups):
        out = np.empty((width,) + h.shape[1:], dtype=h.dtype)
        for g, sel, ia, ib in groups:
            out[sel] = WORD_GATES[g](h[ia], h[ib]) & mask
        h = out
    return h[circuit.output_taps]


def bitsliced_count(planes):
    """Per-pixel number of set planes, as little-endian count bit-planes."""
    nb = max(1, len(planes).bit_length())
    counter = [np.zeros_like(planes[0]) for _ in range(nb)]
    for p in planes:
        carry = p
        for i in range(nb):
            t = counter[i] & carry
            counter[i] = counter[i] ^ carry
            carry = t
    return counter


def bitsliced_ge(counter, k, mask):
    """Plane of pixels whose count is >= the constant ``k``."""
    if k <= 0:
        return np.broadcast_to(mask, counter[0].shape).copy()
    if k >= 1 << len(counter):
        return np.zeros_like(counter[0])
    gt = np.zeros_like(counter[0])
    eq = np.broadcast_to(mask, counter[0].shape).copy()
    for i in range(len(counter) - 1, -1, -1):
        c = counter[i]
        if (k >> i) & 1:
            eq = eq & c
        else:
            gt = gt | (eq & c)
            eq = eq & ~c
    return (gt | eq) & mask


def attention_min_count(d, bias, tau):
    """Smallest agreeing-bit count admitted by ``count/d + bias >= tau``
    (``d + 1`` if none), evaluated exactly as the scalar path does."""
    for c in range(d + 1):
        if c / d + bias >= tau:
            return c
    return d + 1


def _position_planes(net, h, w):
    pos = net.position.table(TorusGrid(h, w))
    return pack(pos[None]).planes  # (d, 1, H, words)


def packed_layer_forward(pf: PackedField, lp: LayerParams, net: NetworkParams) -> PackedField:
    """One hardened layer, bit-identical to the scalar hard path."""
    if not lp.is_hard:
        raise UsageError("packed execution needs hardened parameters")
    mask = pf.mask
    w = pf.width
    x = pf.planes
    cfg = lp.attn
    kmin = attention_min_count(cfg.d, cfg.bias, cfg.tau)
    if 0 < kmin <= cfg.d:
        q = circuit_words(lp.q_head.circuit, x, mask)
        k = circuit_words(lp.k_head.circuit, x, mask)
        if cfg.use_position:
            pos = _position_planes(net, pf.height, w)
            q = q ^ pos
            k = k ^ pos
    pieces = [x]
    for dy, dx in neighbor_offsets(pf.height, w, net.neighborhood):
        xs = rotate(x, dy, dx, w, mask)
        if kmin <= 0:  # every neighbor admitted
            pieces.append(xs)
            continue
        if kmin > cfg.d:
            pieces.append(np.zeros_like(xs))
            continue
        ks = rotate(k, dy, dx, w, mask)
        agree = ~(q ^ ks) & mask
        alpha = bitsliced_ge(bitsliced_count(agree), kmin, mask)
        pieces.append(xs & alpha)
    new = circuit_words(lp.kernel, np.concatenate(pieces, axis=0), mask)
    out = np.empty_like(x)
    for b in range(len(x)):
        out[b] = apply_gate(lp.residual[b], x[b], new[b], mask)
    return PackedField(pf.height, w, out)


def packed_upscale(pf: PackedField, net: NetworkParams) -> PackedField:
    x = pf.planes
    if net.upscale == ZERO_PAD:
        planes = np.concatenate([x, np.zeros((net.m - 1,) + x.shape[1:], dtype=np.uint64)])
    elif net.upscale == REPLICATE:
        planes = np.repeat(x, net.m, axis=0)
    else:
        wires = [x] + [rotate(x, dy, dx, pf.width, pf.mask)
                       for dy, dx in neighbor_offsets(pf.height, pf.width, net.neighborhood)]
        planes = circuit_words(net.upscale_circuit, np.concatenate(wires), pf.mask)
    return PackedField(pf.height, pf.width, planes)


def packed_evolve(pf: PackedField, net: NetworkParams, steps=None) -> PackedField:
    """Run layers ``steps`` times on an already upscaled packed field."""
    steps = net.steps if steps is None else steps
    for _ in range(steps):
        for lp in net.layers:
            pf = packed_layer_forward(pf, lp, net)
    return pf


def packed_network_forward(field, net: NetworkParams, steps=None):
    """Packed counterpart of hard-mode ``network_forward``."""
    if not net.is_hard:
        raise UsageError("packed execution needs a hardened network")
    steps = net.steps if steps is None else steps
    if steps < 1:
        raise UsageError("steps must be >= 1")
    x, squeeze = as_batch(np.asarray(field))
    if x.shape[-1] != 1:
        raise UsageError("network input must be a single-bit field")
    pf = packed_upscale(pack(x.astype(np.uint8)), net)
    out = unpack(packed_evolve(pf, net, steps), batched=True)
    return out[0] if squeeze else out


def benchmark(net: NetworkParams, size=(256, 256), steps=100, runs=5, seed=0):
    """Median throughput of the scalar hard path and the packed engine.

    Both paths are checked for equality before timing; a mismatch raises.
    """
    net = harden_network(net)
    h, w = size
    field = np.random.default_rng(seed).integers(0, 2, size=(h, w), dtype=np.uint8)
    ref = network_forward(field, net, HARD, steps=steps)
    got = packed_network_forward(field, net, steps=steps)
    if not np.array_equal(ref, got):
        raise RuntimeError("packed and scalar paths disagree; refusing to benchmark")

    def timed(fn):
        times = []
        for _ in range(runs):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return statistics.median(times)

    t_scalar = timed(lambda: network_forward(field, net, HARD, steps=steps))
    t_packed = timed(lambda: packed_network_forward(field, net, steps=steps))
    updates = h * w * steps * len(net.layers)
    return {
        "height": h, "width": w, "steps": steps, "runs": runs,
        "scalar_seconds": t_scalar, "packed_seconds": t_packed,
        "scalar_updates_per_s": updates / t_scalar,
        "packed_updates_per_s": updates / t_packed,
        "ratio": t_scalar / t_packed,
    }
