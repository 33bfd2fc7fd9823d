import io
import math

import numpy as np
import pytest

from conftest import finite_difference_errors, life_reference, random_soft_network

from boolfield import gates
from boolfield.errors import ConfigError, TrainingDiverged, UsageError
from boolfield.manifold import Neighborhood
from boolfield.network import HARD, SOFT, build_network, get_parameters, network_forward
from boolfield.tasks import exhaustive_rule_table
from boolfield.training import (METRIC_COLUMNS, Dataset, Optimizer, TrainConfig, compute_gradients,
                                evaluate, loss, mean_entropy, train, write_metric_log)
from boolfield.witnesses import life_network


class TestLoss:
    def test_exact_prediction(self):
        y = np.array([[0, 1], [1, 0]], dtype=float)
        assert loss(y, y) <= 1e-6

    def test_half(self):
        assert loss(np.full((3, 4, 4, 1), 0.5), np.ones((3, 4, 4))) == pytest.approx(math.log(2))

    def test_entropy_term(self):
        net = build_network(grid=(3, 3), noise=0.0, pass_bias=0.0, kernel_widths=(8, 4))
        y = np.zeros((1, 3, 3))
        got = loss(np.zeros((1, 3, 3, 1)), y, net, entropy_weight=0.1)
        assert got == pytest.approx(0.1 * math.log(16), abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(UsageError):
            loss(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_clamped_extremes_finite(self):
        p = np.array([0.0, 1.0, 0.0, 1.0])
        y = np.array([1.0, 0.0, 0.0, 1.0])
        v = loss(p, y)
        assert math.isfinite(v) and v >= 0


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    net = random_soft_network(seed)
    r = np.random.default_rng(seed + 100)
    x, y = r.integers(0, 2, (2, 4, 4)), r.integers(0, 2, (2, 4, 4))
    err = finite_difference_errors(net, x, y)
    assert np.mean(err < 1e-3) >= 0.99


def test_gradients_with_entropy_and_labels():
    net = random_soft_network(7, grid=(3, 3), m=1, d=2, widths=(6, 3))
    net.readout_threshold = 3
    r = np.random.default_rng(0)
    x, labels = r.integers(0, 2, (3, 3, 3)), np.array([0, 1, 1])
    from boolfield import training
    orig = training.compute_gradients

    def with_entropy(n, a, b, *args, **kw):
        return orig(n, a, b, entropy_weight=0.05)

    training.compute_gradients = with_entropy
    try:
        err = finite_difference_errors(net, x, labels)
    finally:
        training.compute_gradients = orig
    assert np.mean(err < 1e-3) >= 0.99


def test_constant_prediction_has_zero_gradient():
    net = build_network(grid=(4, 4), kernel_widths=(8, 4), noise=0.5)
    net.layers[0].residual[:] = 0.0
    net.layers[0].residual[:, gates.FALSE] = gates.ONE_HOT_GAP
    _, grads = compute_gradients(net, np.ones((2, 4, 4)), np.zeros((2, 4, 4)))
    assert max(np.abs(g).max() for g in grads.values()) < 1e-9


def test_duplicated_sample_doubles_contribution(rng):
    net = random_soft_network(2)
    a, b = rng.integers(0, 2, (2, 1, 4, 4))
    ya, yb = rng.integers(0, 2, (2, 1, 4, 4))
    _, g_aab = compute_gradients(net, np.concatenate([a, a, b]), np.concatenate([ya, ya, yb]))
    _, g_a = compute_gradients(net, a, ya)
    _, g_b = compute_gradients(net, b, yb)
    for k in g_a:
        np.testing.assert_allclose(3 * g_aab[k], 2 * g_a[k] + g_b[k], rtol=1e-10, atol=1e-14)


def _params_bytes(net):
    return b"".join(np.ascontiguousarray(v).tobytes() for _, v in sorted(get_parameters(net).items()))


def test_threads_do_not_change_results(rng):
    x = rng.integers(0, 2, (80, 4, 4))
    y = np.array([life_reference(f) for f in x])
    runs = []
    for threads in (1, 3):
        net = random_soft_network(5, m=1, d=2)
        cfg = TrainConfig(epochs=3, batch_size=80, seed=1, threads=threads)
        net, hist = train(net, Dataset(x, y), cfg)
        runs.append((_params_bytes(net), [tuple(r.values()) for r in hist]))
    assert runs[0] == runs[1]


def test_seed_determinism(rng):
    x = rng.integers(0, 2, (12, 4, 4))
    y = rng.integers(0, 2, (12, 4, 4))
    out = []
    for _ in range(2):
        net, _ = train(random_soft_network(0, m=1, d=2), Dataset(x, y),
                       TrainConfig(epochs=2, batch_size=5, seed=9))
        out.append(_params_bytes(net))
    assert out[0] == out[1]


def test_divergence_is_reported():
    net = random_soft_network(0, m=1, d=2)
    net.layers[0].residual[0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="epoch 0"):
        train(net, Dataset(np.zeros((2, 4, 4)), np.zeros((2, 4, 4))), TrainConfig(epochs=1))


def test_empty_dataset():
    net = random_soft_network(0, m=1, d=2)
    empty = Dataset(np.zeros((0, 4, 4)), np.zeros((0, 4, 4)))
    with pytest.raises(UsageError):
        train(net, empty, TrainConfig(epochs=1))
    with pytest.raises(UsageError):
        evaluate(net, empty)


def test_frozen_parameters_stay_put(rng):
    net = random_soft_network(1, m=1, d=2)
    before = {k: np.array(v) for k, v in get_parameters(net).items()}
    x = rng.integers(0, 2, (4, 4, 4))
    train(net, Dataset(x, x), TrainConfig(epochs=2, frozen=("*.q.*", "*.bias")))
    after = get_parameters(net)
    for k in before:
        same = np.array_equal(before[k], after[k])
        assert same == (".q." in k or k.endswith(".bias")), k


def test_entropy_weight_sweep_non_increasing():
    # temperature held at 1 so the regularizer is the only thing that differs
    ds = exhaustive_rule_table("life").subset(np.arange(0, 512, 4))
    finals = []
    for w in (0.0, 0.01, 0.03, 0.1):
        net = build_network(grid=(3, 3), d=2, kernel_widths=(16, 8, 4, 2, 1), bias=5.0,
                            use_position=False, noise=0.5, pass_bias=0.0,
                            residual_bias=gates.ONE_HOT_GAP, seed=0)
        _, hist = train(net, ds, TrainConfig(epochs=15, batch_size=64, learning_rate=0.05,
                                             temperature_end=1.0, entropy_weight=w, frozen=("*.bias", "*.residual")))
        finals.append(hist[-1]["entropy_mean"])
    assert all(b <= a for a, b in zip(finals, finals[1:])), finals


def test_evaluate_life_witness(rng):
    net = life_network((8, 8))
    x = rng.integers(0, 2, (20, 8, 8))
    ds = Dataset(x, [life_reference(f) for f in x])
    for mode in (HARD, SOFT, "packed"):
        m = evaluate(net, ds, mode)
        assert m["bit_accuracy"] == 1.0 and m["exact_match"] == 1.0, mode


def test_evaluate_untrained_in_range(rng):
    x = rng.integers(0, 2, (5, 4, 4))
    m = evaluate(random_soft_network(3, m=1, d=2), Dataset(x, 1 - x))
    assert 0.0 <= m["bit_accuracy"] <= 1.0 and m["loss"] >= 0


def test_history_and_metric_log(rng):
    x = rng.integers(0, 2, (6, 4, 4))
    cfg = TrainConfig(epochs=4, lambda_start=2, lambda_end=32, temperature_start=1,
                      temperature_end=0.125)
    _, hist = train(random_soft_network(0, m=1, d=2), Dataset(x, x), cfg)
    assert [h["epoch"] for h in hist] == [0, 1, 2, 3]
    assert [h["lambda"] for h in hist] == pytest.approx([2 * 16 ** (k / 3) for k in range(4)])
    assert [h["temperature"] for h in hist] == pytest.approx([1, 0.5, 0.25, 0.125])
    buf = io.StringIO()
    write_metric_log(hist, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(METRIC_COLUMNS)
    assert len(lines) == 5
    row = lines[2].split(",")
    assert row[0] == "1" and float(row[1]) == hist[1]["loss"]


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ConfigError):
        TrainConfig(lambda_start=10, lambda_end=1)
    with pytest.raises(ConfigError):
        TrainConfig(temperature_start=0.1, temperature_end=1)
    with pytest.raises(ConfigError):
        TrainConfig(entropy_weight=-1)


def test_sgd_step():
    opt = Optimizer(TrainConfig(optimizer="sgd", learning_rate=0.5))
    out = opt.step({"w": np.array([1.0, 2.0])}, {"w": np.array([2.0, -2.0])})
    assert out["w"].tolist() == [0.0, 3.0]


def test_adam_first_step_moves_by_lr():
    opt = Optimizer(TrainConfig(learning_rate=0.1))
    out = opt.step({"w": np.array([0.0, 0.0])}, {"w": np.array([3.0, -0.01])})
    np.testing.assert_allclose(out["w"], [-0.1, 0.1], rtol=1e-5)


def test_mean_entropy_uniform():
    net = build_network(grid=(3, 3), noise=0.0, pass_bias=0.0, kernel_widths=(8, 4))
    assert mean_entropy(net) == pytest.approx(math.log(16))


def test_cannot_train_hard_network():
    from boolfield.network import harden_network
    with pytest.raises(UsageError):
        train(harden_network(random_soft_network(0)), Dataset(np.zeros((1, 4, 4)),
                                                              np.zeros((1, 4, 4))), TrainConfig())


def test_label_dataset():
    net = build_network(grid=(3, 3), d=2, kernel_widths=(8, 4), readout_threshold=2)
    x = np.zeros((2, 3, 3), dtype=np.uint8)
    x[1, :2, 0] = 1
    ds = Dataset(x, [0, 1])
    assert ds.labels
    out, _ = network_forward(x, net, SOFT)
    assert out.shape == (2, 3, 3, 1)
    assert 0 <= evaluate(net, ds, SOFT)["bit_accuracy"] <= 1
