"""Per-input probabilistic-robustness decisions.

For each (x, y) the procedure samples the neighbourhood, counts
mispredictions against y, and runs both one-sided exact binomial tests
against the tolerance kappa. The decision is three-way: certified, refuted,
or inconclusive once the sample budget is exhausted.

Test validity is the point of the design, so the staging is strict about
what may depend on what:

  * pilot draws only size the test (via the separation formula); they never
    enter the tested tally, which keeps the tally's law exactly binomial
    under any fixed misprediction probability;
  * a preliminary test below the budget may decide early, but only at the
    reduced threshold alpha/10;
  * the budget-exhausting test at max_samples uses the full alpha.

The certify-side error at the kappa boundary is then bounded by
alpha + alpha/10 outright, which keeps the dataset-level bounds honest. A
single full-alpha test with data-dependent n and a second full-alpha retry
(the obvious alternative) measures out at roughly 1.9x alpha there.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import Dataset, DcCertificateSet, NeighbourhoodSpec, TestConfig
from .sampler import Rng, make_stream_id, sample_neighbours
from .stats import (
    binom_left_pvalue,
    binom_right_pvalue,
    min_left_rejection_n,
    required_sample_size,
)

# Fraction of alpha a preliminary (below-budget) test may spend.
PRELIMINARY_SPEND = 0.1

CERTIFY_STREAM = 0


class Decision(str, enum.Enum):
    CERTIFIED = "CertifiedPR"
    REFUTED = "RefutedPR"
    INCONCLUSIVE = "Inconclusive"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class PerInputResult:
    """Evidence and decision for one dataset item.

    n and k are the tally the reported p-values were computed from, so the
    decision can be re-checked from the result alone. A deterministic
    certificate short-circuits the sampling entirely (n = k = 0, p-values
    pinned at the no-adversarial-measure limit).
    """

    item_index: int
    n: int
    k: int
    p_left: float
    p_right: float
    decision: Decision
    dc_short_circuit: bool = False
    wall_time: float = 0.0


@dataclass(frozen=True)
class ItemFailure:
    """A transport-level casualty: the item is dropped, the run continues."""

    item_index: int
    message: str
    n_partial: int = 0
    k_partial: int = 0


class OracleFailure(RuntimeError):
    """An oracle query could not be answered; carries the partial tally."""

    def __init__(self, message: str, n_partial: int = 0, k_partial: int = 0):
        super().__init__(message)
        self.n_partial = n_partial
        self.k_partial = k_partial


def _count_mispredictions(
    oracle, center, y, spec, cfg, rng, count, domain
) -> int:
    """Draw `count` neighbours in batches and tally oracle mispredictions."""
    from .oracle import TransportError

    lo, hi = domain
    k = 0
    done = 0
    while done < count:
        chunk = min(cfg.batch_size, count - done)
        batch = sample_neighbours(center, spec, chunk, rng, lo, hi)
        try:
            labels = np.asarray(oracle.predict_labels(batch.astype(np.float32)))
        except TransportError as exc:
            raise OracleFailure(str(exc), n_partial=done, k_partial=k) from exc
        k += int(np.sum(labels != int(y)))
        done += chunk
    return k


def certify_input(
    oracle,
    x,
    y: int,
    spec: NeighbourhoodSpec,
    cfg: TestConfig,
    rng: Rng,
    dc_flag: bool = False,
    item_index: int = 0,
    domain: tuple = (0.0, 1.0),
) -> PerInputResult:
    """Certify, refute, or give up on probabilistic robustness at one input.

    Mispredictions are counted against the paired label y whether or not the
    model is right on x itself. A true dc_flag is accepted as ground truth
    (zero adversarial measure, hence misprediction probability 0 <= kappa)
    and skips sampling.
    """
    start = time.perf_counter()
    if dc_flag:
        return PerInputResult(
            item_index=item_index,
            n=0,
            k=0,
            p_left=0.0,
            p_right=1.0,
            decision=Decision.CERTIFIED,
            dc_short_circuit=True,
            wall_time=time.perf_counter() - start,
        )
    x = np.asarray(x, dtype=np.float64)
    alpha_pre = cfg.alpha * PRELIMINARY_SPEND

    # stage 1: pilot, for sizing only
    k_pilot = _count_mispredictions(
        oracle, x, y, spec, cfg, rng, cfg.pilot_size, domain
    )
    p_hat = k_pilot / cfg.pilot_size

    # stage 2: how many samples can separate p_hat from kappa
    if p_hat == cfg.kappa:
        n_test = cfg.max_samples
    else:
        wanted = required_sample_size(cfg.kappa, alpha_pre, p_hat)
        floor = max(cfg.pilot_size, min_left_rejection_n(cfg.kappa, alpha_pre))
        n_test = min(max(wanted, floor), cfg.max_samples)

    # stage 3: fresh tally, preliminary test, escalation to the budget
    n = n_test
    k = _count_mispredictions(oracle, x, y, spec, cfg, rng, n, domain)
    if n < cfg.max_samples:
        p_left = binom_left_pvalue(n, k, cfg.kappa)
        p_right = binom_right_pvalue(n, k, cfg.kappa)
        if p_left <= alpha_pre:
            return _decided(item_index, n, k, p_left, p_right, Decision.CERTIFIED, start)
        if p_right <= alpha_pre:
            return _decided(item_index, n, k, p_left, p_right, Decision.REFUTED, start)
        k += _count_mispredictions(
            oracle, x, y, spec, cfg, rng, cfg.max_samples - n, domain
        )
        n = cfg.max_samples

    p_left = binom_left_pvalue(n, k, cfg.kappa)
    p_right = binom_right_pvalue(n, k, cfg.kappa)
    if p_left <= cfg.alpha:
        decision = Decision.CERTIFIED
    elif p_right <= cfg.alpha:
        decision = Decision.REFUTED
    else:
        decision = Decision.INCONCLUSIVE
    return _decided(item_index, n, k, p_left, p_right, decision, start)


def _decided(item_index, n, k, p_left, p_right, decision, start) -> PerInputResult:
    return PerInputResult(
        item_index=item_index,
        n=n,
        k=k,
        p_left=p_left,
        p_right=p_right,
        decision=decision,
        dc_short_circuit=False,
        wall_time=time.perf_counter() - start,
    )


def certify_dataset(
    oracle,
    dataset: Dataset,
    spec: NeighbourhoodSpec,
    cfg: TestConfig,
    dc: DcCertificateSet | None = None,
    workers: int = 1,
    stream_context: int = CERTIFY_STREAM,
) -> tuple[list[PerInputResult], list[ItemFailure]]:
    """Certify every dataset item; failures are contained per item.

    Each item draws from its own substream keyed by (seed, item index), so
    the result list is bit-identical for any worker count. Returns the
    successful results in item order plus the per-item failures.
    """
    if dc is not None:
        dc.check_length(dataset)
    domain = (dataset.domain_lo, dataset.domain_hi)

    def one(i: int):
        rng = Rng(cfg.seed, make_stream_id(stream_context, i))
        flag = bool(dc.flags[i]) if dc is not None else False
        try:
            return certify_input(
                oracle,
                dataset.features[i].astype(np.float64),
                int(dataset.labels[i]),
                spec,
                cfg,
                rng,
                dc_flag=flag,
                item_index=i,
                domain=domain,
            )
        except OracleFailure as exc:
            return ItemFailure(
                item_index=i,
                message=str(exc),
                n_partial=exc.n_partial,
                k_partial=exc.k_partial,
            )

    if workers <= 1:
        outcomes = [one(i) for i in range(dataset.n_items)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, range(dataset.n_items)))

    results = [o for o in outcomes if isinstance(o, PerInputResult)]
    failures = [o for o in outcomes if isinstance(o, ItemFailure)]
    return results, failures
