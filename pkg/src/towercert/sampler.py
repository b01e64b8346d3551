"""Uniform sampling of (p, eps)-neighbourhoods and of the blurred dataset
distribution obtained by perturbing a uniformly chosen item.

Randomness comes from counter-based Philox streams keyed by (seed,
stream_id), so any (seed, stream, draw index) triple yields the same value on
every platform and certification runs are reproducible regardless of how
items are scheduled across workers. A single Rng must not be shared between
concurrent workers; hand each worker its own substream instead.
"""

from __future__ import annotations

import math

import numpy as np

from .stats import ParameterError
from .core import Dataset, NeighbourhoodSpec

# A center sitting exactly on the domain boundary keeps roughly half of each
# coordinate's draws, so (1/2)^rounds bounds the stall probability per batch.
_MAX_REJECTION_ROUNDS = 10_000


class Rng:
    """Deterministic substreamed generator (Philox, keyed by seed and stream).

    Substreams are statistically independent; deriving one is cheap and does
    not disturb the parent's state.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def substream(self, stream_id: int) -> "Rng":
        return Rng(self.seed, stream_id)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream_id={self.stream_id})"


def make_stream_id(context: int, item_index: int) -> int:
    """Compose a 64-bit stream id from a context tag and an item index.

    Contexts keep certification draws, attack draws and any auxiliary
    sampling on disjoint streams even when they touch the same item.
    """
    if not 0 <= item_index < (1 << 48):
        raise ParameterError(f"item index {item_index} outside 48-bit range")
    return (int(context) << 48) | int(item_index)


def _check_center(center: np.ndarray, spec: NeighbourhoodSpec) -> np.ndarray:
    center = np.asarray(center, dtype=np.float64)
    if center.ndim != 1:
        raise ParameterError(f"center must be a vector, got shape {center.shape}")
    if spec.eps < 0:
        raise ParameterError(f"eps must be nonnegative, got {spec.eps}")
    return center


def _finite_p_offsets(
    n: int, dim: int, p: float, eps: float, gen: np.random.Generator
) -> np.ndarray:
    # Generalized-normal direction, then a beta-law radius: |g|_i ~ Gamma(1/p)
    # to the power 1/p with random signs is uniform on the unit p-sphere after
    # normalisation, and scaling by eps * U^(1/dim) fills the ball uniformly.
    g = gen.standard_gamma(1.0 / p, size=(n, dim)) ** (1.0 / p)
    signs = gen.integers(0, 2, size=(n, dim)).astype(np.float64) * 2.0 - 1.0
    g *= signs
    norms = np.sum(np.abs(g) ** p, axis=1) ** (1.0 / p)
    norms[norms == 0.0] = 1.0
    radii = eps * gen.random(size=n) ** (1.0 / dim)
    return g * (radii / norms)[:, None]


def sample_neighbours(
    center,
    spec: NeighbourhoodSpec,
    n: int,
    rng: Rng,
    domain_lo: float = 0.0,
    domain_hi: float = 1.0,
) -> np.ndarray:
    """Draw n uniform points from the (p, eps)-ball around center.

    With clip_to_domain (the default) every coordinate is clamped into
    [domain_lo, domain_hi]; clamping moves coordinates toward the center, so
    the ball constraint survives it for every p >= 1. The clamped law is
    uniform with atoms on the box faces. Setting reject_out_of_domain
    instead redraws out-of-box points, which keeps the law exactly uniform
    on the intersection but can stall for centers pinned to a face.
    """
    center = _check_center(center, spec)
    dim = center.shape[0]
    if n < 0:
        raise ParameterError(f"sample count must be nonnegative, got {n}")
    if spec.eps == 0.0 or n == 0:
        return np.tile(center, (n, 1))

    gen = rng.generator
    if spec.clip_to_domain and spec.reject_out_of_domain:
        out = np.empty((n, dim), dtype=np.float64)
        filled = 0
        for _ in range(_MAX_REJECTION_ROUNDS):
            need = n - filled
            batch = center + _raw_offsets(need, dim, spec, gen)
            ok = np.all((batch >= domain_lo) & (batch <= domain_hi), axis=1)
            taken = batch[ok]
            out[filled : filled + taken.shape[0]] = taken
            filled += taken.shape[0]
            if filled == n:
                return out
        raise ParameterError(
            f"rejection sampling stalled after {_MAX_REJECTION_ROUNDS} rounds; "
            "the ball may lie almost entirely outside the domain box"
        )

    samples = center + _raw_offsets(n, dim, spec, gen)
    if spec.clip_to_domain:
        np.clip(samples, domain_lo, domain_hi, out=samples)
    return samples


def _raw_offsets(
    n: int, dim: int, spec: NeighbourhoodSpec, gen: np.random.Generator
) -> np.ndarray:
    if math.isinf(spec.p):
        return gen.uniform(-spec.eps, spec.eps, size=(n, dim))
    return _finite_p_offsets(n, dim, spec.p, spec.eps, gen)


def sample_neighbour(
    center,
    spec: NeighbourhoodSpec,
    rng: Rng,
    domain_lo: float = 0.0,
    domain_hi: float = 1.0,
) -> np.ndarray:
    """Draw one uniform point from the (p, eps)-ball around center."""
    return sample_neighbours(center, spec, 1, rng, domain_lo, domain_hi)[0]


def sample_convolved_batch(
    dataset: Dataset, spec: NeighbourhoodSpec, n: int, rng: Rng
) -> tuple[np.ndarray, np.ndarray]:
    """Draw n pairs (x', y): pick items uniformly, perturb each feature
    vector within its ball, keep the item's own label.

    This samples the dataset distribution convolved with the perturbation
    law; at eps = 0 it degenerates to plain resampling of the dataset.
    """
    if dataset.n_items < 1:
        raise ParameterError("dataset is empty")
    gen = rng.generator
    idx = gen.integers(0, dataset.n_items, size=n)
    centers = dataset.features[idx].astype(np.float64)
    labels = dataset.labels[idx].copy()
    if spec.eps == 0.0:
        return centers, labels
    dim = dataset.dim
    if spec.clip_to_domain and spec.reject_out_of_domain:
        out = np.empty((n, dim), dtype=np.float64)
        for i in range(n):
            out[i] = sample_neighbours(
                centers[i], spec, 1, rng, dataset.domain_lo, dataset.domain_hi
            )[0]
        return out, labels
    samples = centers + _raw_offsets(n, dim, spec, gen)
    if spec.clip_to_domain:
        np.clip(samples, dataset.domain_lo, dataset.domain_hi, out=samples)
    return samples, labels


def sample_convolved(
    dataset: Dataset, spec: NeighbourhoodSpec, rng: Rng
) -> tuple[np.ndarray, int]:
    """Draw one (x', y) pair from the convolved dataset distribution."""
    xs, ys = sample_convolved_batch(dataset, spec, 1, rng)
    return xs[0], int(ys[0])


def ball_contains(
    center, point, spec: NeighbourhoodSpec, rtol: float = 1e-9
) -> bool:
    """Whether point lies in the (p, eps)-ball around center, with a small
    relative tolerance on the radius for floating-point slack."""
    center = np.asarray(center, dtype=np.float64)
    point = np.asarray(point, dtype=np.float64)
    diff = np.abs(point - center)
    if math.isinf(spec.p):
        norm = float(diff.max()) if diff.size else 0.0
    else:
        norm = float(np.sum(diff**spec.p) ** (1.0 / spec.p))
    return norm <= spec.eps * (1.0 + rtol) + 1e-15
