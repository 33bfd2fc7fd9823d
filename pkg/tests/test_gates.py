import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boolfield import gates
from boolfield.gates import GateDistribution

unit = st.floats(0.0, 1.0, allow_nan=False)
logit_vectors = st.lists(st.floats(-8, 8, allow_nan=False), min_size=16, max_size=16)


def test_named_truth_tables():
    assert gates.hard_gate(gates.AND, 1, 1) == 1
    assert gates.hard_gate(gates.AND, 1, 0) == 0
    assert gates.hard_gate(gates.XOR, 1, 1) == 0
    assert gates.hard_gate(gates.PASS_A, 1, 0) == 1
    assert gates.hard_gate(gates.PASS_B, 1, 0) == 0


def test_all_64_cases_follow_id_bits():
    for g in range(16):
        for u in (0, 1):
            for v in (0, 1):
                assert gates.hard_gate(g, u, v) == (g >> (2 * u + v)) & 1
    # the 16 ids are 16 distinct functions
    tables = {tuple(gates.hard_gate(g, u, v) for u in (0, 1) for v in (0, 1)) for g in range(16)}
    assert len(tables) == 16


def test_hard_gate_rejects_non_bits():
    with pytest.raises(ValueError):
        gates.hard_gate(gates.AND, 2, 0)


def test_soft_gate_corners_and_formulas():
    for g in range(16):
        for u in (0, 1):
            for v in (0, 1):
                assert gates.soft_gate(g, u, v) == gates.hard_gate(g, u, v)
    assert gates.soft_gate(gates.XOR, 0.5, 0.5) == pytest.approx(0.5)
    assert gates.soft_gate(gates.AND, 1.0, 1.0) == 1.0
    assert gates.soft_gate(gates.OR, 0.3, 0.4) == pytest.approx(0.3 + 0.4 - 0.12)


def test_mixture_examples():
    assert gates.soft_mixture(GateDistribution.one_hot(gates.AND), 1.0, 1.0) == 1.0
    uniform = GateDistribution(np.zeros(16))
    for a, b in [(0, 0), (0.2, 0.9), (1, 1)]:
        assert gates.soft_mixture(uniform, a, b) == pytest.approx(0.5)
    p = np.zeros(16)
    p[gates.AND] = p[gates.OR] = 0.5
    assert gates.soft_mixture(GateDistribution.from_probs(p), 1.0, 0.0) == pytest.approx(0.5)


@settings(max_examples=200, deadline=None)
@given(logit_vectors, unit, unit, st.floats(0.05, 5))
def test_mixture_stays_in_unit_interval(logits, a, b, t):
    y = gates.soft_mixture(GateDistribution(np.array(logits), t), a, b)
    assert -1e-12 <= y <= 1 + 1e-12


def test_softmax_normalised(rng):
    for _ in range(50):
        p = GateDistribution(rng.normal(0, 5, 16), rng.uniform(0.01, 3)).probs
        assert abs(p.sum() - 1) < 1e-9


def _fd_mixture(logits, a, b, t, h=1e-5):
    f = lambda l, x, y: gates.soft_mixture(GateDistribution(l, t), x, y)
    dl = np.array([(f(logits + h * e, a, b) - f(logits - h * e, a, b)) / (2 * h)
                   for e in np.eye(16)])
    da = (f(logits, a + h, b) - f(logits, a - h, b)) / (2 * h)
    db = (f(logits, a, b + h) - f(logits, a, b - h)) / (2 * h)
    return dl, da, db


def test_mixture_gradient_examples():
    _, da, db = gates.mixture_gradients(GateDistribution.one_hot(gates.AND), 0.7, 0.4)
    assert da == pytest.approx(0.4) and db == pytest.approx(0.7)
    logits = np.random.default_rng(1).normal(size=16)
    _, da, db = gates.mixture_gradients(GateDistribution(logits), 0.0, 0.0)
    _, fa, fb = _fd_mixture(logits, 0.0, 0.0, 1.0)
    assert abs(da - fa) < 1e-6 and abs(db - fb) < 1e-6


def test_uniform_distribution_logit_gradient_structure():
    # At uniformity the logit gradient is p_g (f_g - 1/2): it sums to zero and
    # complementary gates g, 15 - g receive opposite gradients.
    dl, _, _ = gates.mixture_gradients(GateDistribution(np.zeros(16)), 0.3, 0.8)
    fd, _, _ = _fd_mixture(np.zeros(16), 0.3, 0.8, 1.0)
    assert np.allclose(dl, fd, atol=1e-9)
    assert abs(dl.sum()) < 1e-12
    assert np.allclose(dl, -dl[::-1])


def test_mixture_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        logits = rng.normal(0, 2, 16)
        t = rng.uniform(0.3, 2)
        a, b = rng.uniform(0, 1, 2)
        dl, da, db = gates.mixture_gradients(GateDistribution(logits, t), a, b)
        fl, fa, fb = _fd_mixture(logits, a, b, t)
        got = np.concatenate([dl, [da, db]])
        ref = np.concatenate([fl, [fa, fb]])
        scale = np.maximum(np.maximum(abs(got), abs(ref)), 1e-6)
        worst = max(worst, float(np.max(abs(got - ref) / scale)))
    assert worst < 1e-4


def test_harden_and_tie_break():
    l = np.zeros(16)
    l[gates.XOR] = 3
    assert gates.harden(GateDistribution(l)) == gates.XOR
    l = np.zeros(16)
    l[3] = l[9] = 2.0
    assert gates.harden(GateDistribution(l)) == 3


def test_entropy_values():
    assert gates.distribution_entropy(GateDistribution.one_hot(5)) == pytest.approx(0, abs=1e-12)
    assert gates.distribution_entropy(GateDistribution(np.zeros(16))) == pytest.approx(math.log(16))
    p = np.zeros(16)
    p[[2, 7]] = 0.5
    assert gates.distribution_entropy(GateDistribution.from_probs(p)) == pytest.approx(math.log(2))


def test_entropy_gradient_finite_differences(rng):
    logits = rng.normal(size=(3, 16))
    _, g = gates.entropy_grad(logits, 0.7)
    h = 1e-6
    for i in range(16):
        e = np.zeros(16)
        e[i] = h
        fd = (gates.entropy_rows(gates.softmax(logits[0] + e, 0.7))
              - gates.entropy_rows(gates.softmax(logits[0] - e, 0.7))) / (2 * h)
        assert g[0, i] == pytest.approx(fd, abs=1e-7)


def test_lower_temperature_approaches_argmax_gate(rng):
    logits = rng.normal(size=16)
    g = int(np.argmax(logits))
    pts = rng.uniform(0, 1, (50, 2))
    devs = []
    for t in (1.0, 0.1, 0.01):
        dist = GateDistribution(logits, t)
        devs.append(max(abs(gates.soft_mixture(dist, a, b) - gates.soft_gate(g, a, b)) for a, b in pts))
    assert devs[0] > devs[1] > devs[2]


def test_vectorised_primitives_match_scalar(rng):
    logits = rng.normal(size=(5, 16))
    coef = gates.mixture_coefficients(logits)
    a, b = rng.uniform(size=(2, 7, 5))
    y = gates.mix_forward(coef, a, b)
    for j in range(5):
        ref = gates.soft_mixture(GateDistribution(logits[j]), a[:, j], b[:, j])
        assert np.allclose(y[:, j], ref)
    ids = rng.integers(0, 16, 5).astype(np.uint8)
    x = rng.integers(0, 2, (2, 9, 5)).astype(np.uint8)
    got = gates.hard_lookup(ids, x[0], x[1])
    for j in range(5):
        for i in range(9):
            assert got[i, j] == gates.hard_gate(ids[j], x[0, i, j], x[1, i, j])
