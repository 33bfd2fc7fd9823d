"""The stacked attention/reaction network.

Fields are numpy arrays of shape ``(N, H, W, m)``: ``uint8`` bits on the hard
path, ``float64`` values in [0, 1] on the soft path. A layer computes, for
every pixel at once, Q/K codes, XNOR attention over the neighborhood,
attention-gated neighbor states, the shared logic kernel and a per-bit
residual gate. All pixels read the same time-t snapshot.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import gates
from .attention import KEY, QUERY, AttentionConfig, ProjectionHead, build_head
from .errors import ConfigError, UsageError
from .kernel import HardCircuit, KernelCircuit, build_kernel
from .manifold import Neighborhood, PositionCode, TorusGrid, neighbor_offsets

ZERO_PAD = "zero_pad"
REPLICATE = "replicate"
LOCAL_CIRCUIT = "local_circuit"
UPSCALE_MODES = (ZERO_PAD, REPLICATE, LOCAL_CIRCUIT)

SOFT = "soft"
HARD = "hard"


@dataclass(eq=False)
class LayerParams:
    q_head: ProjectionHead
    k_head: ProjectionHead
    attn: AttentionConfig
    kernel: KernelCircuit | HardCircuit
    residual: np.ndarray  # (m, 16) logits, or (m,) gate ids once hardened

    @property
    def is_hard(self):
        return isinstance(self.kernel, HardCircuit)


@dataclass(eq=False)
class NetworkParams:
    grid: TorusGrid
    neighborhood: Neighborhood
    m: int
    layers: list
    position: PositionCode
    steps: int = 1
    upscale: str = ZERO_PAD
    upscale_circuit: KernelCircuit | HardCircuit | None = None
    temperature: float = 1.0
    readout_threshold: int = 1
    readout_scale: float = 1.0
    seed: int = 0
    kernel_widths: list = field(default_factory=list)

    @property
    def d(self):
        return self.layers[0].attn.d

    @property
    def is_hard(self):
        return self.layers[0].is_hard

    def offsets(self, shape=None):
        h, w = shape if shape is not None else self.grid.shape
        return neighbor_offsets(h, w, self.neighborhood)

    def validate(self):
        if self.m < 1 or not self.layers:
            raise ConfigError("network needs m >= 1 and at least one layer")
        if self.upscale not in UPSCALE_MODES:
            raise ConfigError(f"unknown upscale mode {self.upscale!r}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        n = len(self.offsets())
        for i, lp in enumerate(self.layers):
            if lp.attn.d != self.d or lp.q_head.d != self.d or lp.k_head.d != self.d:
                raise ConfigError(f"layer {i}: code length disagrees with the network")
            if lp.kernel.input_arity != self.m * (n + 1) or lp.kernel.m_out != self.m:
                raise ConfigError(
                    f"layer {i}: kernel must map {self.m * (n + 1)} inputs to {self.m} outputs")
            if lp.q_head.circuit.input_arity != self.m or lp.k_head.circuit.input_arity != self.m:
                raise ConfigError(f"layer {i}: Q/K heads must read the {self.m}-bit state")
            if len(lp.residual) != self.m:
                raise ConfigError(f"layer {i}: need one residual gate per state bit")
            if lp.is_hard != self.is_hard:
                raise ConfigError("layers mix hardened and relaxed parameters")
        if self.position.d != self.d:
            raise ConfigError("position code length must equal d")
        if self.upscale == LOCAL_CIRCUIT:
            c = self.upscale_circuit
            if c is None or c.input_arity != n + 1 or c.m_out != self.m:
                raise ConfigError(f"upscale circuit must map {n + 1} inputs to {self.m} bits")
        return self


def build_network(grid=(8, 8), neighborhood=None, m=1, d=4, n_layers=1, kernel_widths=(32, 16),
                  seed=0, steps=1, upscale=ZERO_PAD, upscale_widths=None, tau=0.5, bias=0.0,
                  lam=2.0, use_position=True, temperature=1.0, pass_bias=1.0, noise=0.01,
                  residual_init=gates.PASS_B, residual_bias=None, readout_threshold=1,
                  readout_scale=1.0):
    """Fresh relaxed network; every circuit gets its own seed stream.

    ``residual_bias`` (default ``pass_bias``) is added to the ``residual_init``
    logit; a value of ``gates.ONE_HOT_GAP`` pins the residual to that gate.
    """
    grid = grid if isinstance(grid, TorusGrid) else TorusGrid(*grid)
    neighborhood = neighborhood or Neighborhood()
    n = len(neighborhood.offsets(grid))
    seeds = np.random.SeedSequence(seed).generate_state(4 * n_layers + 1, dtype=np.uint64)
    kernel_widths = list(kernel_widths) + ([m] if kernel_widths[-1] < m else [])
    layers = []
    rng = np.random.default_rng([seed, 2])
    for i in range(n_layers):
        s = [int(x) for x in seeds[4 * i:4 * i + 4]]
        res = rng.uniform(-noise, noise, size=(m, gates.N_GATES))
        res[:, residual_init] += pass_bias if residual_bias is None else residual_bias
        layers.append(LayerParams(
            q_head=build_head(m, d, s[0], QUERY, pass_bias=pass_bias, noise=noise),
            k_head=build_head(m, d, s[1], KEY, pass_bias=pass_bias, noise=noise),
            attn=AttentionConfig(d=d, tau=tau, bias=bias, lam=lam, use_position=use_position),
            kernel=build_kernel(m * (n + 1), kernel_widths, m, s[2], pass_bias=pass_bias,
                                noise=noise),
            residual=res,
        ))
    up = None
    if upscale == LOCAL_CIRCUIT:
        widths = list(upscale_widths or [max(2 * m, -(-(n + 1) // 2))])
        widths += [m] if widths[-1] < m else []
        up = build_kernel(n + 1, widths, m, int(seeds[-1]), pass_bias=pass_bias, noise=noise)
    net = NetworkParams(grid=grid, neighborhood=neighborhood, m=m, layers=layers,
                        position=PositionCode(d // 2), steps=steps, upscale=upscale,
                        upscale_circuit=up, temperature=temperature,
                        readout_threshold=readout_threshold, readout_scale=readout_scale,
                        seed=seed, kernel_widths=kernel_widths)
    return net.validate()


def as_batch(x, m=1):
    """Normalise a field to (N, H, W, m).

    Accepts (H, W), (H, W, m), (N, H, W) or (N, H, W, m); a 3-D array is read
    as a single field when its last axis equals ``m``. Returns the 4-D array
    and whether a batch axis was added.
    """
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None, :, :, None], True
    if x.ndim == 3:
        if x.shape[-1] == m:
            return x[None], True
        return x[..., None], False
    if x.ndim == 4:
        return x, False
    raise UsageError(f"field must be 2-, 3- or 4-dimensional, got shape {x.shape}")


def _roll(a, dy, dx):
    """``out[i] = a[i + (dy, dx)]`` on the torus."""
    return np.roll(a, (-dy, -dx), axis=(1, 2))


def _unroll(a, dy, dx):
    return np.roll(a, (dy, dx), axis=(1, 2))


def _is_soft(x):
    return np.issubdtype(x.dtype, np.floating)


# ----------------------------------------------------------------- upscaling

def upscale(field, mode=ZERO_PAD, m=1, circuit=None, neighborhood=None, temperature=1.0):
    """Expand a 1-bit field (N, H, W, 1) to m bits per pixel."""
    out, _ = _upscale(np.asarray(field), mode, m, circuit, neighborhood, temperature)
    return out


def _upscale(x, mode, m, circuit, neighborhood, temperature, keep_trace=False):
    if x.shape[-1] != 1:
        raise UsageError("upscaling expects a single-bit field")
    if mode == ZERO_PAD:
        pad = np.zeros(x.shape[:-1] + (m - 1,), dtype=x.dtype)
        return np.concatenate([x, pad], axis=-1), None
    if mode == REPLICATE:
        return np.repeat(x, m, axis=-1), None
    if mode != LOCAL_CIRCUIT:
        raise ConfigError(f"unknown upscale mode {mode!r}")
    offsets = neighbor_offsets(x.shape[1], x.shape[2], neighborhood)
    inp = np.concatenate([x] + [_roll(x, dy, dx) for dy, dx in offsets], axis=-1)
    if isinstance(circuit, HardCircuit):
        return circuit.forward(inp), None
    if keep_trace:
        return circuit.forward(inp, temperature)
    return circuit.forward(inp, temperature, keep_trace=False), None


# --------------------------------------------------------------- soft layer

@dataclass
class LayerTrace:
    x: np.ndarray
    q: np.ndarray
    k: np.ndarray
    alphas: list
    new: np.ndarray
    res_coef: np.ndarray
    q_trace: object
    k_trace: object
    kernel_trace: object
    pos: np.ndarray | None
    hard_attention: bool


def _position(net, shape, dtype):
    return net.position.table(TorusGrid(*shape)).astype(dtype)


def layer_forward_soft(x, lp: LayerParams, net: NetworkParams, hard_attention=False):
    """Relaxed layer on a float field; returns (new field, trace)."""
    t = net.temperature
    cfg = lp.attn
    d = cfg.d
    shape = x.shape[1:3]
    qc, q_tr = lp.q_head.circuit.forward(x, t)
    kc, k_tr = lp.k_head.circuit.forward(x, t)
    pos = _position(net, shape, np.float64) if cfg.use_position else None
    if pos is not None:
        q = qc + pos - 2.0 * qc * pos
        k = kc + pos - 2.0 * kc * pos
    else:
        q, k = qc, kc
    pieces = [x]
    alphas = []
    for dy, dx in net.offsets(shape):
        ks = _roll(k, dy, dx)
        s = (1.0 - (q + ks - 2.0 * q * ks)).sum(axis=-1) / d
        if hard_attention:
            alpha = (s + cfg.bias >= cfg.tau).astype(np.float64)
        else:
            alpha = expit(cfg.lam * (s + cfg.bias - cfg.tau))
        alphas.append(alpha)
        pieces.append(alpha[..., None] * _roll(x, dy, dx))
    new, kern_tr = lp.kernel.forward(np.concatenate(pieces, axis=-1), t)
    res_coef = gates.mixture_coefficients(lp.residual, t)
    out = gates.mix_forward(res_coef, x, new)
    return out, LayerTrace(x, q, k, alphas, new, res_coef, q_tr, k_tr, kern_tr, pos, hard_attention)


def layer_backward_soft(tr: LayerTrace, lp: LayerParams, net: NetworkParams, dout):
    """Gradients of a relaxed layer: (dx, dict of parameter gradients)."""
    t = net.temperature
    cfg = lp.attn
    d = cfg.d
    m = net.m
    x = tr.x
    shape = x.shape[1:3]
    dres_coef, dx, dnew = gates.mix_backward(tr.res_coef, x, tr.new, dout)
    grads = {"residual": gates.coef_to_logit_grad(dres_coef, lp.residual, t)}
    dkern, dkin = lp.kernel.backward(tr.kernel_trace, dnew)
    grads["kernel"] = dkern
    dx = dx + dkin[..., :m]
    dq = np.zeros_like(tr.q)
    dk = np.zeros_like(tr.k)
    dbias = 0.0
    for j, (dy, dx_) in enumerate(net.offsets(shape)):
        dg = dkin[..., m * (j + 1):m * (j + 2)]
        alpha = tr.alphas[j]
        xs = _roll(x, dy, dx_)
        dx += _unroll(alpha[..., None] * dg, dy, dx_)
        if tr.hard_attention:
            continue
        ds = (dg * xs).sum(axis=-1) * cfg.lam * alpha * (1.0 - alpha)
        dbias += ds.sum()
        ks = _roll(tr.k, dy, dx_)
        w = ds[..., None] / d
        dq += w * (2.0 * ks - 1.0)
        dk += _unroll(w * (2.0 * tr.q - 1.0), dy, dx_)
    if tr.pos is not None:
        flip = 1.0 - 2.0 * tr.pos
        dq = dq * flip
        dk = dk * flip
    grads["q"], dxq = lp.q_head.circuit.backward(tr.q_trace, dq)
    grads["k"], dxk = lp.k_head.circuit.backward(tr.k_trace, dk)
    grads["bias"] = np.float64(dbias)
    return dx + dxq + dxk, grads


# --------------------------------------------------------------- hard layer

def layer_forward_hard(x, lp: LayerParams, net: NetworkParams):
    cfg = lp.attn
    d = cfg.d
    shape = x.shape[1:3]
    q = lp.q_head.circuit.forward(x)
    k = lp.k_head.circuit.forward(x)
    if cfg.use_position:
        pos = _position(net, shape, np.uint8)
        q = q ^ pos
        k = k ^ pos
    pieces = [x]
    for dy, dx in net.offsets(shape):
        s = (q == _roll(k, dy, dx)).sum(axis=-1) / d
        alpha = (s + cfg.bias >= cfg.tau).astype(np.uint8)
        pieces.append(alpha[..., None] & _roll(x, dy, dx))
    new = lp.kernel.forward(np.concatenate(pieces, axis=-1))
    return gates.hard_lookup(lp.residual, x, new)


def layer_forward_pixelwise(field, lp: LayerParams, net: NetworkParams, order=None):
    """Per-pixel reference for one hard layer on an (H, W, m) field.

    Pixels are visited in ``order`` (default row-major), each reading the
    untouched input snapshot.
    """
    field = np.asarray(field, dtype=np.uint8)
    h, w, m = field.shape
    cfg = lp.attn
    offsets = net.offsets((h, w))
    pos = _position(net, (h, w), np.uint8)
    out = np.empty_like(field)
    order = order if order is not None else [(i, j) for i in range(h) for j in range(w)]

    def code(head, p):
        c = head.circuit.forward(field[p])
        return c ^ pos[p] if cfg.use_position else c

    for p in order:
        p = tuple(p)
        q = code(lp.q_head, p)
        inputs = [field[p]]
        for dy, dx in offsets:
            nb = ((p[0] + dy) % h, (p[1] + dx) % w)
            s = np.count_nonzero(q == code(lp.k_head, nb)) / cfg.d
            alpha = 1 if s + cfg.bias >= cfg.tau else 0
            inputs.append(field[nb] & alpha)
        new = lp.kernel.forward(np.concatenate(inputs))
        out[p] = [gates.hard_gate(int(lp.residual[b]), int(field[p][b]), int(new[b]))
                  for b in range(m)]
    return out


def layer_forward(field, lp: LayerParams, net: NetworkParams, mode=SOFT, hard_attention=False):
    """One layer in Soft (returns field, trace) or Hard (returns field) mode."""
    x, squeeze = as_batch(field, net.m)
    if x.shape[-1] != net.m:
        raise UsageError(f"field has {x.shape[-1]} bits per pixel, layer expects {net.m}")
    if mode == HARD:
        if not lp.is_hard:
            raise UsageError("hard mode needs hardened layer parameters")
        out = layer_forward_hard(x.astype(np.uint8), lp, net)
        return out[0] if squeeze else out
    out, tr = layer_forward_soft(x.astype(np.float64), lp, net, hard_attention)
    return (out[0] if squeeze else out), tr


# ------------------------------------------------------------ whole network

@dataclass
class NetworkTrace:
    up_trace: object
    layer_traces: list
    squeeze: bool


def _check_input(x, net):
    if x.shape[-1] != 1:
        raise UsageError("network input must be a single-bit field")
    n = len(net.offsets(x.shape[1:3]))
    if net.layers[0].kernel.input_arity != net.m * (n + 1):
        raise UsageError(f"grid {x.shape[1:3]} gives {n} neighbors; "
                         f"the kernel was built for {net.layers[0].kernel.input_arity // net.m - 1}")


def network_forward(field, net: NetworkParams, mode=SOFT, steps=None, hard_attention=False,
                    ste=False):
    """Upscale once, then apply the L layers ``steps`` times.

    Soft mode returns ``(output, trace)``; hard mode returns the output.
    With ``ste`` the soft state is binarised at 0.5 between steps.
    """
    steps = net.steps if steps is None else steps
    if steps < 1:
        raise UsageError("steps must be >= 1")
    x, squeeze = as_batch(field)
    _check_input(x, net)
    if mode == HARD:
        if not net.is_hard:
            raise UsageError("hard mode needs a hardened network")
        x = x.astype(np.uint8)
        if x.size and x.max() > 1:
            raise UsageError("hard input must be bits")
        x, _ = _upscale(x, net.upscale, net.m, net.upscale_circuit, net.neighborhood, 1.0)
        for _ in range(steps):
            for lp in net.layers:
                x = layer_forward_hard(x, lp, net)
        return x[0] if squeeze else x
    if net.is_hard:
        raise UsageError("soft mode needs relaxed parameters; use soften_network")
    x = x.astype(np.float64)
    x, up_tr = _upscale(x, net.upscale, net.m, net.upscale_circuit, net.neighborhood,
                        net.temperature, keep_trace=True)
    traces = []
    for step in range(steps):
        if ste and step > 0:
            x = (x >= 0.5).astype(np.float64)
        for lp in net.layers:
            x, tr = layer_forward_soft(x, lp, net, hard_attention)
            traces.append(tr)
    return (x[0] if squeeze else x), NetworkTrace(up_tr, traces, squeeze)


def network_backward(net: NetworkParams, trace: NetworkTrace, dout):
    """Reverse pass; returns a gradient dict keyed like :func:`get_parameters`.

    The straight-through binarisation between steps passes gradients
    unchanged, so the step boundaries need no special handling here.
    """
    g = np.asarray(dout, dtype=np.float64)
    if trace.squeeze:
        g = g[None]
    grads = {}
    n_layers = len(net.layers)
    for idx in range(len(trace.layer_traces) - 1, -1, -1):
        li = idx % n_layers
        lp = net.layers[li]
        g, lg = layer_backward_soft(trace.layer_traces[idx], lp, net, g)
        _accumulate(grads, f"layers.{li}.residual", lg["residual"])
        _accumulate(grads, f"layers.{li}.bias", lg["bias"])
        for name, blocks in (("kernel", lg["kernel"]), ("q", lg["q"]), ("k", lg["k"])):
            for bi, block in enumerate(blocks):
                _accumulate(grads, f"layers.{li}.{name}.{bi}", block)
    if net.upscale == LOCAL_CIRCUIT:
        dblocks, _ = net.upscale_circuit.backward(trace.up_trace, g)
        for bi, block in enumerate(dblocks):
            grads[f"upscale.{bi}"] = block
    return grads


def _accumulate(grads, key, value):
    grads[key] = grads[key] + value if key in grads else np.array(value, dtype=np.float64)


# -------------------------------------------------------------- parameters

def get_parameters(net: NetworkParams):
    """Trainable arrays by name. Logit blocks are returned by reference;
    biases as fresh 0-d arrays (write them back with :func:`set_parameters`)."""
    params = {}
    for li, lp in enumerate(net.layers):
        for name, circ in (("kernel", lp.kernel), ("q", lp.q_head.circuit), ("k", lp.k_head.circuit)):
            for bi, block in enumerate(circ.logits):
                params[f"layers.{li}.{name}.{bi}"] = block
        params[f"layers.{li}.residual"] = lp.residual
        params[f"layers.{li}.bias"] = np.array(lp.attn.bias, dtype=np.float64)
    if net.upscale == LOCAL_CIRCUIT:
        for bi, block in enumerate(net.upscale_circuit.logits):
            params[f"upscale.{bi}"] = block
    return params


def set_parameters(net: NetworkParams, params):
    current = get_parameters(net)
    for key, value in params.items():
        if key not in current:
            raise UsageError(f"unknown parameter {key!r}")
        if key.endswith(".bias"):
            net.layers[int(key.split(".")[1])].attn.bias = float(value)
        else:
            current[key][...] = value


def all_logit_blocks(net: NetworkParams):
    return [v for k, v in get_parameters(net).items() if not k.endswith(".bias")]


# ------------------------------------------------------- harden / soften

def harden_network(net: NetworkParams) -> NetworkParams:
    """Argmax every gate; attention becomes the ``s + b >= tau`` threshold."""
    if net.is_hard:
        return net
    layers = [LayerParams(
        q_head=lp.q_head.harden(), k_head=lp.k_head.harden(),
        attn=AttentionConfig(**lp.attn.to_dict()), kernel=lp.kernel.harden(),
        residual=np.argmax(lp.residual, axis=1).astype(np.uint8)) for lp in net.layers]
    up = net.upscale_circuit.harden() if net.upscale_circuit is not None else None
    return _replace(net, layers, up)


def soften_network(net: NetworkParams, temperature=None) -> NetworkParams:
    """One-hot relaxed copy of a hardened network (exact on Boolean inputs
    when run with ``hard_attention=True``)."""
    if not net.is_hard:
        return net
    t = net.temperature if temperature is None else temperature
    layers = []
    for lp in net.layers:
        res = np.zeros((len(lp.residual), gates.N_GATES))
        res[np.arange(len(lp.residual)), lp.residual] = gates.ONE_HOT_GAP * t
        layers.append(LayerParams(
            q_head=ProjectionHead(lp.q_head.circuit.to_soft(t), lp.q_head.role),
            k_head=ProjectionHead(lp.k_head.circuit.to_soft(t), lp.k_head.role),
            attn=AttentionConfig(**lp.attn.to_dict()), kernel=lp.kernel.to_soft(t),
            residual=res))
    up = net.upscale_circuit.to_soft(t) if net.upscale_circuit is not None else None
    out = _replace(net, layers, up)
    out.temperature = t
    return out


def _replace(net, layers, up):
    return NetworkParams(grid=net.grid, neighborhood=net.neighborhood, m=net.m, layers=layers,
                         position=net.position, steps=net.steps, upscale=net.upscale,
                         upscale_circuit=up, temperature=net.temperature,
                         readout_threshold=net.readout_threshold,
                         readout_scale=net.readout_scale, seed=net.seed,
                         kernel_widths=list(net.kernel_widths))


def copy_network(net: NetworkParams) -> NetworkParams:
    def circ(c):
        if isinstance(c, HardCircuit):
            return HardCircuit(c.input_arity, c.wiring, [g.copy() for g in c.gate_ids],
                               c.output_taps.copy())
        return c.copy()

    layers = [LayerParams(
        q_head=ProjectionHead(circ(lp.q_head.circuit), lp.q_head.role),
        k_head=ProjectionHead(circ(lp.k_head.circuit), lp.k_head.role),
        attn=AttentionConfig(**lp.attn.to_dict()), kernel=circ(lp.kernel),
        residual=lp.residual.copy()) for lp in net.layers]
    up = circ(net.upscale_circuit) if net.upscale_circuit is not None else None
    return _replace(net, layers, up)


# ------------------------------------------------------------------ readout

def readout_count(field):
    """Number of set pixels in bit-plane 0.

    (H, W) and (H, W, m) fields give an int; (N, H, W, m) gives one count per
    sample.
    """
    x = np.asarray(field)
    if _is_soft(x):
        raise UsageError("readout needs a hard field")
    if x.ndim == 2:
        return int(x.sum(dtype=np.int64))
    if x.ndim == 3:
        return int(x[..., 0].sum(dtype=np.int64))
    return x[..., 0].reshape(len(x), -1).sum(axis=1, dtype=np.int64)


def readout_threshold(field, t):
    """1 when the bit-plane-0 count reaches ``t``."""
    c = readout_count(field)
    return int(c >= t) if np.isscalar(c) else (c >= t).astype(np.uint8)


def soft_readout(field, net: NetworkParams):
    """Relaxed readout: sigmoid of (soft count - threshold + 1/2)."""
    count = field[..., 0].reshape(len(field), -1).sum(axis=1)
    return expit(net.readout_scale * (count - net.readout_threshold + 0.5)), count
