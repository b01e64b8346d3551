"""Tests for dataset-level estimators and the robustness bound formulas."""

import math

import numpy as np
import pytest

from towercert.aggregator import (
    adversarial_metrics,
    dc_accuracy,
    estimate_pra,
    pr_bounds,
    summarize,
    test_accuracy as plain_accuracy,
    tower_lower_bound,
    tower_upper_bound,
)
from towercert.certifier import Decision, PerInputResult, certify_dataset
from towercert.core import Dataset, DcCertificateSet, NeighbourhoodSpec, TestConfig, ValidationError
from towercert.models import LinearModel, linear_dc_certificates, predict
from towercert.oracle import LocalOracle
from towercert.sampler import Rng, sample_convolved_batch
from towercert.stats import ParameterError

INF = math.inf


def fake_result(decision, index=0):
    return PerInputResult(
        item_index=index, n=10, k=0, p_left=0.01, p_right=1.0, decision=decision
    )


# ---------------------------------------------------------------------------
# certified-fraction estimate


def test_estimate_pra_all_certified():
    results = [fake_result(Decision.CERTIFIED, i) for i in range(5)]
    assert estimate_pra(results) == 1.0


def test_estimate_pra_counts_only_certified():
    results = (
        [fake_result(Decision.CERTIFIED, i) for i in range(3)]
        + [fake_result(Decision.REFUTED, 3)]
        + [fake_result(Decision.INCONCLUSIVE, 4)]
    )
    assert estimate_pra(results) == 0.6


def test_estimate_pra_errored_items_count_against():
    results = [fake_result(Decision.CERTIFIED, i) for i in range(3)]
    assert estimate_pra(results, n_items=4) == 0.75


def test_estimate_pra_binomial_oracle():
    rng = np.random.default_rng(77)
    n = 10_000
    flags = rng.random(n) < 0.8
    results = [
        fake_result(Decision.CERTIFIED if f else Decision.REFUTED, i)
        for i, f in enumerate(flags)
    ]
    sigma = math.sqrt(0.8 * 0.2 / n)
    assert estimate_pra(results) == pytest.approx(0.8, abs=3 * sigma)


def test_estimate_pra_empty_rejected():
    with pytest.raises(ParameterError):
        estimate_pra([])


# ---------------------------------------------------------------------------
# bound formulas


def test_pr_bounds_direct_substitution():
    lower, upper = pr_bounds(0.5, 0.1)
    assert lower == pytest.approx((0.5 - 0.1) / 1.1, abs=1e-12)
    assert upper == pytest.approx(0.5 / 0.9, abs=1e-12)
    assert lower == pytest.approx(0.36363636, abs=1e-6)
    assert upper == pytest.approx(0.55555555, abs=1e-6)


def test_pr_bounds_clamping():
    lower, _ = pr_bounds(0.0, 0.3)
    assert lower == 0.0
    _, upper = pr_bounds(1.0, 0.01)
    assert upper == 1.0  # raw value 1.0101... clamps


def test_pr_bounds_sandwich_on_grid():
    for pra in np.linspace(0.0, 1.0, 21):
        for alpha in np.linspace(0.01, 0.99, 20):
            lower, upper = pr_bounds(float(pra), float(alpha))
            assert 0.0 <= lower <= upper <= 1.0


def test_tower_lower_bound_values():
    assert tower_lower_bound(1.0, 0.1, 1e-12) == pytest.approx(0.9, abs=1e-9)
    assert tower_lower_bound(0.95, 0.1, 0.1) == pytest.approx(
        0.9 * 0.85 / 1.1, abs=1e-12
    )
    assert tower_lower_bound(0.95, 0.1, 0.1) == pytest.approx(0.6954545, abs=1e-6)
    assert tower_lower_bound(0.05, 0.1, 0.1) == 0.0  # clamps


def test_tower_upper_bound_values():
    assert tower_upper_bound(1.0, 0.1, 1e-12) == pytest.approx(1.0, abs=1e-9)
    assert tower_upper_bound(0.0, 0.1, 0.3) == pytest.approx(0.9, abs=1e-12)
    assert tower_upper_bound(0.0, 0.25, 0.1) == pytest.approx(0.75, abs=1e-12)


def test_bound_parameter_errors():
    with pytest.raises(ParameterError):
        tower_lower_bound(0.5, 0.6, 0.1)
    with pytest.raises(ParameterError):
        tower_upper_bound(0.5, 0.1, 0.0)
    with pytest.raises(ParameterError):
        pr_bounds(1.5, 0.1)


# ---------------------------------------------------------------------------
# accuracies


class FnOracle:
    def __init__(self, fn):
        self.fn = fn

    def predict_labels(self, batch):
        return self.fn(batch)


def test_test_accuracy_constant_correct():
    ds = Dataset(
        features=np.random.default_rng(1).random((20, 2), dtype=np.float32),
        labels=np.zeros(20, dtype=np.int64),
        n_classes=2,
    )
    oracle = FnOracle(lambda b: np.zeros(b.shape[0], dtype=np.int64))
    assert plain_accuracy(oracle, ds) == 1.0


def test_test_accuracy_majority_class_on_balanced_set():
    labels = np.array([0, 1] * 10)
    ds = Dataset(
        features=np.random.default_rng(2).random((20, 2), dtype=np.float32),
        labels=labels,
        n_classes=2,
    )
    oracle = FnOracle(lambda b: np.zeros(b.shape[0], dtype=np.int64))
    assert plain_accuracy(oracle, ds) == 0.5


def test_test_accuracy_of_model_on_its_own_decision_rule():
    rng = np.random.default_rng(3)
    model = LinearModel(weights=rng.normal(size=(3, 4)), biases=rng.normal(size=3))
    feats = rng.random((100, 4)).astype(np.float32)
    ds = Dataset(features=feats, labels=predict(model, feats), n_classes=3)
    assert plain_accuracy(LocalOracle(model), ds) == 1.0


def test_dc_accuracy_values():
    assert dc_accuracy(DcCertificateSet(flags=np.zeros(4, dtype=bool))) == 0.0
    assert dc_accuracy(DcCertificateSet(flags=np.array([True, False, True, False]))) == 0.5


# ---------------------------------------------------------------------------
# attack metrics


def center_dataset(n=10):
    return Dataset(
        features=np.full((n, 2), 0.5, dtype=np.float32),
        labels=np.zeros(n, dtype=np.int64),
        n_classes=2,
    )


def test_vacuous_attack_equals_test_accuracy():
    ds = center_dataset()
    oracle = FnOracle(lambda b: (b[:, 0] < 0.45).astype(np.int64))
    spec = NeighbourhoodSpec(p=INF, eps=0.1)
    adv_acc, fail_rate = adversarial_metrics(oracle, lambda x, y, i: None, ds, spec)
    assert fail_rate == 1.0
    assert adv_acc == plain_accuracy(oracle, ds)


def test_constant_wrong_oracle_zeroes_adversarial_accuracy():
    ds = center_dataset()
    oracle = FnOracle(lambda b: np.ones(b.shape[0], dtype=np.int64))
    spec = NeighbourhoodSpec(p=INF, eps=0.1)
    adv_acc, _ = adversarial_metrics(oracle, lambda x, y, i: None, ds, spec)
    assert adv_acc == 0.0


def test_out_of_ball_candidate_is_rejected():
    ds = center_dataset(2)
    oracle = FnOracle(lambda b: np.zeros(b.shape[0], dtype=np.int64))
    spec = NeighbourhoodSpec(p=INF, eps=0.1)
    bad = lambda x, y, i: np.array([[0.9, 0.9]])
    with pytest.raises(ValidationError, match="ball"):
        adversarial_metrics(oracle, bad, ds, spec)


def test_random_search_attack_failure_rate_geometric():
    # misprediction measure exactly 0.01 within the ball (verified by a
    # 10^6-draw brute-force check below); with budget 1000 the per-item
    # success probability is 1 - 0.99^1000 = 0.99996
    from towercert.models import random_search_attack

    spec = NeighbourhoodSpec(p=INF, eps=0.1)
    ds = center_dataset(300)
    threshold = 0.4 + 0.01 * 0.2

    def fn(batch):
        return (batch[:, 0] < threshold).astype(np.int64)

    oracle = FnOracle(fn)
    probe = sample_convolved_batch(ds, spec, 1_000_000, Rng(123, 0))[0]
    measured = float(np.mean(fn(probe.astype(np.float32)) != 0))
    assert measured == pytest.approx(0.01, abs=3 * math.sqrt(0.01 * 0.99 / 1e6))

    def attack(x, y, i):
        hit = random_search_attack(
            oracle.predict_labels, x, y, spec, 1000, Rng(9, i), batch_size=500
        )
        return None if hit is None else hit.reshape(1, -1)

    _, fail_rate = adversarial_metrics(oracle, attack, ds, spec)
    # expected failure rate 0.99^1000 = 4.3e-5; 3-sigma over 300 items
    assert fail_rate <= 3 * math.sqrt(4.3e-5 / 300) + 1e-4


# ---------------------------------------------------------------------------
# end-to-end ordering chain on a small synthetic model


def synthetic_linear_setup(seed, n_items=200, dim=3):
    rng = np.random.default_rng(seed)
    model = LinearModel(
        weights=rng.normal(size=(3, dim)), biases=0.1 * rng.normal(size=3)
    )
    feats = rng.uniform(0.1, 0.9, size=(n_items, dim)).astype(np.float32)
    ds = Dataset(features=feats, labels=predict(model, feats), n_classes=3)
    return model, ds


def monte_carlo_tower(model, ds, spec, draws, stream=7):
    xs, ys = sample_convolved_batch(ds, spec, draws, Rng(2_000, stream))
    correct = predict(model, xs) == ys
    tr = float(np.mean(correct))
    sigma = math.sqrt(max(tr * (1 - tr), 1e-12) / draws)
    return tr, sigma


def test_ordering_chain_lower_tr_upper():
    model, ds = synthetic_linear_setup(seed=5)
    spec = NeighbourhoodSpec(p=INF, eps=0.05)
    cfg = TestConfig(kappa=0.1, alpha=0.1, max_samples=4_000, batch_size=4_000, seed=6)
    results, failures = certify_dataset(LocalOracle(model), ds, spec, cfg)
    assert not failures
    pra = estimate_pra(results, n_items=ds.n_items)
    tr, sigma = monte_carlo_tower(model, ds, spec, 300_000)
    lower = tower_lower_bound(pra, cfg.kappa, cfg.alpha)
    upper = tower_upper_bound(pra, cfg.kappa, cfg.alpha)
    assert lower <= tr + 3 * sigma
    assert tr - 3 * sigma <= upper


def test_dc_accuracy_lower_bounds_tower_robustness():
    model, ds = synthetic_linear_setup(seed=8)
    spec = NeighbourhoodSpec(p=INF, eps=0.05)
    flags = linear_dc_certificates(model, ds, spec)
    dc_rate = dc_accuracy(DcCertificateSet(flags=flags))
    tr, sigma = monte_carlo_tower(model, ds, spec, 300_000, stream=9)
    assert dc_rate <= tr + 3 * sigma


def test_summarize_assembles_all_fields():
    results = (
        [fake_result(Decision.CERTIFIED, i) for i in range(8)]
        + [fake_result(Decision.REFUTED, 8)]
        + [fake_result(Decision.INCONCLUSIVE, 9)]
    )
    summary = summarize(
        results, n_items=10, kappa=0.1, alpha=0.1, test_acc=0.9,
        dc=DcCertificateSet(flags=np.array([True] * 2 + [False] * 8)),
    )
    assert summary.pra_hat == 0.8
    assert summary.n_certified == 8
    assert summary.n_refuted == 1
    assert summary.n_inconclusive == 1
    assert summary.n_errored == 0
    assert summary.dc_accuracy == 0.2
    assert summary.tower_lower == pytest.approx(0.9 * 0.7 / 1.1, abs=1e-12)
    assert summary.tower_upper == pytest.approx(0.1 * 0.8 / 0.9 + 0.9, abs=1e-12)
    doc = summary.to_dict()
    assert doc["adversarial_accuracy"] is None
    assert doc["kappa"] == 0.1
