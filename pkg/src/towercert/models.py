"""Built-in white-box models, an analytic robustness certificate for the
linear case, and two baseline attacks.

Models are immutable once constructed; prediction is pure and safe to call
from any number of workers. Logits accumulate in float64 regardless of the
binary32 storage precision so that local prediction and any faithful
re-implementation behind the wire protocol agree bit for bit.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import NeighbourhoodSpec, ParseError, ValidationError
from .sampler import Rng, sample_neighbours
from .stats import ParameterError


@dataclass(frozen=True)
class LinearModel:
    """Affine scorer: label = argmax of weights @ x + biases."""

    weights: np.ndarray  # (n_classes, dim)
    biases: np.ndarray  # (n_classes,)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float32)
        b = np.ascontiguousarray(self.biases, dtype=np.float32)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValidationError(
                f"weights {w.shape} and biases {b.shape} are inconsistent"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValidationError("model parameters must be finite")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class MlpModel:
    """Stack of affine layers with rectifier activations, argmax readout."""

    layers: tuple  # ((W1, b1), (W2, b2), ...), each W: (d_out, d_in)

    def __post_init__(self):
        clean = []
        for i, (w, b) in enumerate(self.layers):
            w = np.ascontiguousarray(w, dtype=np.float32)
            b = np.ascontiguousarray(b, dtype=np.float32)
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValidationError(f"layer {i}: weights {w.shape} vs biases {b.shape}")
            if clean and w.shape[1] != clean[-1][0].shape[0]:
                raise ValidationError(
                    f"layer {i}: input width {w.shape[1]} does not chain with "
                    f"previous output {clean[-1][0].shape[0]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError(f"layer {i}: parameters must be finite")
            clean.append((w, b))
        if not clean:
            raise ValidationError("model needs at least one layer")
        object.__setattr__(self, "layers", tuple(clean))

    @property
    def n_classes(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def dim(self) -> int:
        return self.layers[0][0].shape[1]


Model = LinearModel | MlpModel


def logits(model: Model, batch: np.ndarray) -> np.ndarray:
    """Class scores for a batch of rows, accumulated in float64."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ParameterError(
            f"batch shape {x.shape} does not match model input width {model.dim}"
        )
    if isinstance(model, LinearModel):
        return x @ model.weights.astype(np.float64).T + model.biases.astype(np.float64)
    for i, (w, b) in enumerate(model.layers):
        x = x @ w.astype(np.float64).T + b.astype(np.float64)
        if i + 1 < len(model.layers):
            x = np.maximum(x, 0.0)
    return x


def predict(model: Model, batch: np.ndarray) -> np.ndarray:
    """Arg-max labels per row; ties resolve to the lowest class index."""
    return np.argmax(logits(model, batch), axis=1)


def _dual_norm(vec: np.ndarray, p: float) -> float:
    # Hoelder conjugate: q = 1 for p = inf, q = inf for p = 1, p/(p-1) otherwise.
    if math.isinf(p):
        return float(np.sum(np.abs(vec)))
    if p == 1.0:
        return float(np.max(np.abs(vec))) if vec.size else 0.0
    q = p / (p - 1.0)
    return float(np.sum(np.abs(vec) ** q) ** (1.0 / q))


def linear_dc_certificate(
    model: LinearModel, x, y: int, spec: NeighbourhoodSpec
) -> bool:
    """Margin certificate: no point of the (p, eps)-ball can outscore class y.

    True iff the prediction on x is y and, for every other class j, the
    logit gap exceeds eps times the dual norm of the weight difference --
    the worst logit swing any in-ball perturbation can produce. The full
    ball is a superset of its domain-clipped version, so the certificate
    stays sound when samples are clamped.
    """
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    scores = logits(model, x)[0]
    if int(np.argmax(scores)) != int(y):
        return False
    w64 = model.weights.astype(np.float64)
    for j in range(model.n_classes):
        if j == int(y):
            continue
        gap = scores[int(y)] - scores[j]
        swing = spec.eps * _dual_norm(w64[int(y)] - w64[j], spec.p)
        if not gap > swing:
            return False
    return True


def linear_dc_certificates(model, dataset, spec) -> np.ndarray:
    """Vectorised certificate flags for a whole dataset."""
    flags = np.zeros(dataset.n_items, dtype=bool)
    for i in range(dataset.n_items):
        flags[i] = linear_dc_certificate(
            model, dataset.features[i], int(dataset.labels[i]), spec
        )
    return flags


def random_search_attack(
    oracle: Callable[[np.ndarray], np.ndarray],
    x,
    y: int,
    spec: NeighbourhoodSpec,
    budget: int,
    rng: Rng,
    domain_lo: float = 0.0,
    domain_hi: float = 1.0,
    batch_size: int = 256,
) -> Optional[np.ndarray]:
    """Uniform search: the first of at most `budget` ball samples that the
    oracle mislabels, or None. The oracle sees binary32 rows, exactly as the
    certification path queries it."""
    if budget < 0:
        raise ParameterError(f"budget must be nonnegative, got {budget}")
    x = np.asarray(x, dtype=np.float64)
    remaining = budget
    while remaining > 0:
        chunk = min(batch_size, remaining)
        candidates = sample_neighbours(x, spec, chunk, rng, domain_lo, domain_hi)
        queried = candidates.astype(np.float32)
        labels = np.asarray(oracle(queried))
        hits = np.nonzero(labels != int(y))[0]
        if hits.size:
            return queried[hits[0]].astype(np.float64)
        remaining -= chunk
    return None


class UnsupportedNormError(ParameterError):
    """The attack only handles the max-norm ball."""


def gradient_sign_attack(
    model: Model,
    x,
    y: int,
    spec: NeighbourhoodSpec,
    domain_lo: float = 0.0,
    domain_hi: float = 1.0,
) -> np.ndarray:
    """One-step white-box candidate x + eps*sign(grad margin loss), clamped.

    The margin loss is (strongest rival logit - true logit); its gradient is
    computed analytically through the affine/rectifier stack. sign(0) is 0,
    so a zero-gradient point maps to itself. Max-norm balls only.
    """
    if not math.isinf(spec.p):
        raise UnsupportedNormError(
            f"gradient sign attack needs p = infinity, got p = {spec.p}"
        )
    x = np.asarray(x, dtype=np.float64)
    grad = _margin_gradient(model, x, int(y))
    candidate = x + spec.eps * np.sign(grad)
    return np.clip(candidate, domain_lo, domain_hi)


def _margin_gradient(model: Model, x: np.ndarray, y: int) -> np.ndarray:
    scores = logits(model, x.reshape(1, -1))[0]
    rival_scores = scores.copy()
    rival_scores[y] = -np.inf
    rival = int(np.argmax(rival_scores))
    if isinstance(model, LinearModel):
        w64 = model.weights.astype(np.float64)
        return w64[rival] - w64[y]
    # forward pass keeping each layer's activation mask
    acts = np.asarray(x, dtype=np.float64)
    masks = []
    for i, (w, b) in enumerate(model.layers):
        acts = acts @ w.astype(np.float64).T + b.astype(np.float64)
        if i + 1 < len(model.layers):
            masks.append(acts > 0.0)
            acts = np.maximum(acts, 0.0)
    w_last = model.layers[-1][0].astype(np.float64)
    grad = w_last[rival] - w_last[y]
    for (w, _), mask in zip(reversed(model.layers[:-1]), reversed(masks)):
        grad = (grad * mask) @ w.astype(np.float64)
    return grad


# ---------------------------------------------------------------------------
# model files: JSON header + one base64 line per tensor (row-major <f4)


def save_model(model: Model, path) -> None:
    if isinstance(model, LinearModel):
        kind = "linear"
        dims = [model.dim, model.n_classes]
        tensors = [model.weights, model.biases]
    else:
        kind = "mlp"
        dims = [model.dim] + [w.shape[0] for w, _ in model.layers]
        tensors = [t for pair in model.layers for t in pair]
    header = {"kind": kind, "dims": dims, "n_classes": model.n_classes}
    lines = [json.dumps(header, separators=(",", ":"))]
    lines += [base64.b64encode(t.astype("<f4").tobytes()).decode("ascii") for t in tensors]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> Model:
    with open(path, "r", encoding="ascii") as fh:
        lines = [line.strip() for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise ParseError(f"{path}: file is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: bad JSON header at byte {exc.pos}: {exc.msg}") from exc
    kind = header.get("kind")
    dims = header.get("dims")
    if kind not in ("linear", "mlp") or not isinstance(dims, list) or len(dims) < 2:
        raise ParseError(f"{path}: header must carry kind linear|mlp and dims chain")
    n_layers = len(dims) - 1
    if len(lines) - 1 != 2 * n_layers:
        raise ParseError(
            f"{path}: expected {2 * n_layers} tensor lines, found {len(lines) - 1}"
        )

    def tensor(idx: int, shape: tuple, what: str) -> np.ndarray:
        count = int(np.prod(shape))
        try:
            raw = base64.b64decode(lines[1 + idx], validate=True)
        except Exception as exc:
            raise ParseError(f"{path}: {what}: invalid base64 ({exc})") from exc
        if len(raw) != 4 * count:
            raise ParseError(f"{path}: {what}: {len(raw)} bytes, expected {4 * count}")
        return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()

    pairs = []
    for layer in range(n_layers):
        w = tensor(2 * layer, (dims[layer + 1], dims[layer]), f"W{layer + 1}")
        b = tensor(2 * layer + 1, (dims[layer + 1],), f"b{layer + 1}")
        pairs.append((w, b))
    if kind == "linear":
        if n_layers != 1:
            raise ParseError(f"{path}: linear model must have exactly one layer")
        return LinearModel(weights=pairs[0][0], biases=pairs[0][1])
    return MlpModel(layers=tuple(pairs))
