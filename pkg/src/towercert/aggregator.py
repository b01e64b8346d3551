"""Dataset-level estimators and the certified robustness bounds.

The certified fraction is a maximum-likelihood estimate of the probability
that an item passes the per-input test. Two eliminations turn it into
distribution-level statements: dividing out the per-test failure rate alpha
brackets the probability that the misprediction proportion is truly within
tolerance, and trading the tolerance kappa against the trivial cap of 1
brackets Tower robustness itself (the expected in-neighbourhood accuracy
under the perturbed data distribution). Raw formula values can leave [0, 1];
they are clamped, which only ever loosens a bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .certifier import Decision, ItemFailure, PerInputResult
from .core import Dataset, DcCertificateSet, NeighbourhoodSpec, ValidationError
from .sampler import ball_contains
from .stats import ParameterError


def _clamp01(value: float) -> float:
    return min(1.0, max(0.0, float(value)))


def estimate_pra(results: list[PerInputResult], n_items: int | None = None) -> float:
    """Certified fraction: #CertifiedPR / n_items.

    Inconclusive, refuted, and errored items all count as not certified,
    which keeps the downstream lower bound conservative under finite
    budgets. n_items defaults to len(results); pass the dataset size when
    some items errored out.
    """
    total = len(results) if n_items is None else int(n_items)
    if total < 1:
        raise ParameterError("cannot estimate over an empty result list")
    certified = sum(1 for r in results if r.decision is Decision.CERTIFIED)
    return certified / total


def pr_bounds(pra: float, alpha: float) -> tuple[float, float]:
    """Bracket the probability that the misprediction proportion is truly
    within tolerance, given the certified fraction and the per-test failure
    rate: ((pra - alpha)/(1 + alpha), pra/(1 - alpha)), clamped to [0, 1]."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0.0 <= pra <= 1.0:
        raise ParameterError(f"pra must lie in [0, 1], got {pra}")
    return _clamp01((pra - alpha) / (1.0 + alpha)), _clamp01(pra / (1.0 - alpha))


def tower_lower_bound(pra: float, kappa: float, alpha: float) -> float:
    """(1 - kappa) * (pra - alpha) / (1 + alpha), clamped to [0, 1].

    Sound lower bound on Tower robustness: certified items have
    misprediction proportion at most kappa, so their in-ball accuracy is at
    least 1 - kappa; everything else is bounded below by zero.
    """
    _check_bound_params(kappa, alpha, pra)
    return _clamp01((1.0 - kappa) * (pra - alpha) / (1.0 + alpha))


def tower_upper_bound(pra: float, kappa: float, alpha: float) -> float:
    """kappa * pra / (1 - alpha) - kappa + 1, clamped to [0, 1].

    Upper bound on Tower robustness via the Markov direction: uncertified
    mass can be perfectly accurate, certified mass still errs up to kappa.
    """
    _check_bound_params(kappa, alpha, pra)
    return _clamp01(kappa * pra / (1.0 - alpha) - kappa + 1.0)


def _check_bound_params(kappa: float, alpha: float, pra: float) -> None:
    if not 0.0 < kappa < 0.5:
        raise ParameterError(f"kappa must lie in (0, 1/2), got {kappa}")
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0.0 <= pra <= 1.0:
        raise ParameterError(f"pra must lie in [0, 1], got {pra}")


def test_accuracy(oracle, dataset: Dataset, batch_size: int = 4096) -> float:
    """Plain accuracy of the oracle on the unperturbed items."""
    correct = 0
    for start in range(0, dataset.n_items, batch_size):
        rows = dataset.features[start : start + batch_size]
        labels = np.asarray(oracle.predict_labels(rows.astype(np.float32)))
        correct += int(np.sum(labels == dataset.labels[start : start + batch_size]))
    return correct / dataset.n_items


def dc_accuracy(dc: DcCertificateSet) -> float:
    """Fraction of items holding a deterministic certificate."""
    return float(np.mean(dc.flags))


def adversarial_metrics(
    oracle,
    attack: Callable[[np.ndarray, int, int], Optional[np.ndarray]],
    dataset: Dataset,
    spec: NeighbourhoodSpec,
    ball_rtol: float = 1e-6,
) -> tuple[float, float]:
    """Attack-based baselines over the dataset.

    attack(x, y, item_index) returns candidate neighbours: an array of
    rows, a single row, or None. Per item, the attack fails when no
    candidate flips the label away from y; adversarial accuracy additionally
    requires a correct prediction on x itself. Candidates outside the ball
    or the domain box void the run (soundness guard); the tolerance covers
    binary32 rounding of otherwise-interior candidates.
    """
    failed = 0  # attacks that found nothing
    accurate = 0  # correct on x and attack found nothing
    for i in range(dataset.n_items):
        x = dataset.features[i].astype(np.float64)
        y = int(dataset.labels[i])
        candidates = attack(x, y, i)
        if candidates is None:
            candidates = np.zeros((0, dataset.dim))
        candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
        flipped = False
        if candidates.shape[0]:
            for candidate in candidates:
                if not ball_contains(x, candidate, spec, rtol=ball_rtol):
                    raise ValidationError(
                        f"attack candidate outside the perturbation ball at item {i}"
                    )
                if candidate.min() < dataset.domain_lo - 1e-9 or (
                    candidate.max() > dataset.domain_hi + 1e-9
                ):
                    raise ValidationError(
                        f"attack candidate outside the domain box at item {i}"
                    )
            labels = np.asarray(
                oracle.predict_labels(candidates.astype(np.float32))
            )
            flipped = bool(np.any(labels != y))
        if not flipped:
            failed += 1
            pred = int(
                np.asarray(
                    oracle.predict_labels(
                        dataset.features[i : i + 1].astype(np.float32)
                    )
                )[0]
            )
            if pred == y:
                accurate += 1
    return accurate / dataset.n_items, failed / dataset.n_items


@dataclass(frozen=True)
class DatasetSummary:
    """Everything a certification run publishes about one dataset."""

    n_items: int
    pra_hat: float
    pr_lower: float
    pr_upper: float
    tower_lower: float
    tower_upper: float
    dc_accuracy: float
    test_accuracy: float
    n_inconclusive: int
    n_certified: int
    n_refuted: int
    n_errored: int
    kappa: float
    alpha: float
    adversarial_accuracy: Optional[float] = None
    attack_failure_rate: Optional[float] = None

    def to_dict(self) -> dict:
        out = {
            "n_items": self.n_items,
            "pra_hat": self.pra_hat,
            "pr_lower": self.pr_lower,
            "pr_upper": self.pr_upper,
            "tower_lower": self.tower_lower,
            "tower_upper": self.tower_upper,
            "dc_accuracy": self.dc_accuracy,
            "test_accuracy": self.test_accuracy,
            "n_inconclusive": self.n_inconclusive,
            "n_certified": self.n_certified,
            "n_refuted": self.n_refuted,
            "n_errored": self.n_errored,
            "kappa": self.kappa,
            "alpha": self.alpha,
            "adversarial_accuracy": self.adversarial_accuracy,
            "attack_failure_rate": self.attack_failure_rate,
        }
        return out


def summarize(
    results: list[PerInputResult],
    n_items: int,
    kappa: float,
    alpha: float,
    test_acc: float,
    dc: DcCertificateSet | None = None,
    failures: list[ItemFailure] | None = None,
    adversarial: tuple[float, float] | None = None,
) -> DatasetSummary:
    """Assemble the published summary from per-item outcomes."""
    pra = estimate_pra(results, n_items=n_items)
    lower, upper = pr_bounds(pra, alpha)
    adv_acc, att_fail = adversarial if adversarial is not None else (None, None)
    return DatasetSummary(
        n_items=n_items,
        pra_hat=pra,
        pr_lower=lower,
        pr_upper=upper,
        tower_lower=tower_lower_bound(pra, kappa, alpha),
        tower_upper=tower_upper_bound(pra, kappa, alpha),
        dc_accuracy=dc_accuracy(dc) if dc is not None else 0.0,
        test_accuracy=test_acc,
        n_inconclusive=sum(
            1 for r in results if r.decision is Decision.INCONCLUSIVE
        ),
        n_certified=sum(1 for r in results if r.decision is Decision.CERTIFIED),
        n_refuted=sum(1 for r in results if r.decision is Decision.REFUTED),
        n_errored=len(failures) if failures else 0,
        kappa=kappa,
        alpha=alpha,
        adversarial_accuracy=adv_acc,
        attack_failure_rate=att_fail,
    )
