import numpy as np
import pytest

from optg import baselines, masking, nn
from optg.baselines import SaliencyScore
from optg.datasets import BatchIterator, synthetic_blobs
from optg.errors import ConfigError, InputError, StateError
from optg.masking import MaskedParameter
from optg.schedules import LrSchedule, SparsitySchedule


def test_one_shot_example():
    params = [MaskedParameter(0, np.ones(3))]
    masks = baselines.one_shot_prune(SaliencyScore({0: np.array([3.0, 1.0, 2.0])}), params, 1 / 3)
    np.testing.assert_array_equal(masks[0], [1, 0, 1])


def test_first_order_saliency_values():
    model = nn.Sequential([nn.Linear(3, 2, np.random.default_rng(0))], (3,))
    params = masking.attach_masks(model)
    x, y = np.random.default_rng(1).standard_normal((4, 3)), np.array([0, 1, 1, 0])
    s = baselines.first_order_saliency(model, params, (x, y))
    model.loss_and_grads(x, y)
    np.testing.assert_allclose(s.values[0], np.abs(model.layers[0].grads["weight"] * model.layers[0].weight))
    params[0].mask[0, 0] = 0
    with pytest.raises(StateError):
        baselines.first_order_saliency(model, params, (x, y))


def test_erk_example():
    dens = baselines.erk_densities({0: (100, 10), 1: (10, 10)}, 0.5)
    eps = 550 / 130
    assert dens[0] == pytest.approx(0.11 * eps, rel=1e-12)
    assert dens[1] == pytest.approx(0.2 * eps, rel=1e-12)
    kept = dens[0] * 1000 + dens[1] * 100
    assert kept == pytest.approx(550, rel=1e-12)


def test_erk_caps_small_layers():
    dens = baselines.erk_densities({0: (1000, 1000), 1: (2, 2)}, 0.5)
    assert dens[1] == 1.0
    assert dens[0] == pytest.approx((500_002 - 4) / 1_000_000, rel=1e-12)


def test_layer_budget_modes():
    params = [MaskedParameter(0, np.arange(1.0, 9.0)), MaskedParameter(1, -np.arange(1.0, 3.0))]
    assert baselines.layer_budget("uniform", 0.4, params) == {0: 0.4, 1: 0.4}
    gm = baselines.layer_budget("global_magnitude", 0.3, params)
    # |w| sorted: 1,1,2,2,... -> three smallest are layer0 w=1, layer1 w=1, layer0 w=2 (ties by position)
    assert gm == {0: 2 / 8, 1: 1 / 2}
    with pytest.raises(ConfigError):
        baselines.layer_budget("bogus", 0.3, params)


def test_gmp_never_revives_and_zeroes():
    data = synthetic_blobs(0, 96, classes=4, dim=8)
    model = nn.build_model("mlp:10", (8,), 4, np.random.default_rng(0))
    params = masking.attach_masks(model)
    tr = baselines.GMPTrainer(model, params, LrSchedule(0.1, 6), BatchIterator(data, 32), data,
                              sparsity=SparsitySchedule(0.8, tau=6, variant="zhu-cubic", k_final=4))
    prev = [np.ones_like(p.mask) for p in params]
    for k in range(1, 7):
        tr.train_epoch(k)
        for p, before in zip(params, prev):
            assert np.all(p.mask <= before)
            assert np.all(p.weights[p.mask == 0] == 0.0)
        prev = [p.mask.copy() for p in params]
    assert masking.sparsity_summary(params)["pruned"] == masking.prune_count(0.8, 120)


def test_prune_once_keeps_pruned():
    model = nn.build_model("mlp:6", (4,), 3, np.random.default_rng(0))
    params = masking.attach_masks(model)
    x, y = np.random.default_rng(1).standard_normal((8, 4)), np.arange(8) % 3
    baselines.prune_once(model, params, 0.3, "magnitude", x, y)
    first = [p.mask.copy() for p in params]
    baselines.prune_once(model, params, 0.6, "first_order", x, y)
    for p, m in zip(params, first):
        assert np.all(p.mask <= m)
    with pytest.raises(ConfigError):
        baselines.prune_once(model, params, 0.7, "random", x, y)


def test_cycle_epochs_must_divide():
    data = synthetic_blobs(0, 32, classes=2, dim=4)
    model = nn.build_model("mlp:", (4,), 2, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        baselines.cycle_experiment(model, masking.attach_masks(model), BatchIterator(data, 8), data,
                                   cycles=3, total_epochs=10, P=0.5)


def test_cycle_experiment_reaches_target():
    data = synthetic_blobs(0, 64, classes=3, dim=6)
    model = nn.build_model("mlp:8", (6,), 3, np.random.default_rng(0))
    params = masking.attach_masks(model)
    acc, records = baselines.cycle_experiment(model, params, BatchIterator(data, 16), data,
                                              cycles=2, total_epochs=4, P=0.5)
    assert [r.epoch for r in records] == [1, 2, 3, 4]
    assert records[1].sparsity == pytest.approx(masking.prune_count(0.25, 72) / 72)
    assert records[-1].sparsity == pytest.approx(masking.prune_count(0.5, 72) / 72)
    assert 0 <= acc <= 100


def quadratic(a):
    def loss_grad(w, mask):
        v = w * mask
        return float(np.sum(a * v * v) / 2), a * v
    return loss_grad


def test_quadratic_gap_closed_form():
    rng = np.random.default_rng(0)
    a, w = rng.uniform(0.5, 2.0, 20), rng.standard_normal(20)
    rep = baselines.paradox_gap(quadratic(a), w, [0.0, 0.25, 0.5, 0.9])
    order = np.argsort(a * w * w, kind="stable")
    for f, gap, k in zip(rep.fractions, rep.gap, rep.removed):
        expected = np.sum((a * w * w)[order[:k]]) / 2
        assert gap == pytest.approx(expected, rel=1e-12, abs=1e-15)
    assert rep.gap[0] == 0.0 and rep.removed[0] == 0


def test_exact_independent_quadratic():
    a, w = np.array([1.0, 2.0, 3.0]), np.array([1.0, -1.0, 0.5])
    rep = baselines.paradox_gap(quadratic(a), w, [0.5], exact_independent=True)
    np.testing.assert_allclose(rep.independent_delta, -a * w * w / 2)


def test_fraction_out_of_range():
    with pytest.raises(InputError):
        baselines.paradox_gap(quadratic(np.ones(3)), np.ones(3), [1.0])


def test_measure_gap_restores_model():
    data = synthetic_blobs(0, 40, classes=3, dim=5)
    model = nn.build_model("mlp:4", (5,), 3, np.random.default_rng(0))
    params = masking.attach_masks(model)
    before = [(p.weights.copy(), p.mask.copy()) for p in params]
    rep = baselines.measure_paradox_gap(model, params, (data.inputs, data.labels), [0.0, 0.5],
                                        finetune_steps=3)
    for p, (w, m) in zip(params, before):
        np.testing.assert_array_equal(p.weights, w)
        np.testing.assert_array_equal(p.mask, m)
    assert rep.gap[0] == 0.0
    assert len(rep.predicted_independent) == 2
