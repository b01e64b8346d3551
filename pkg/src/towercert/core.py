"""Domain types and dataset / certificate file I/O.

All types validate their invariants on construction and are immutable
afterwards, so they can be shared freely across concurrent workers.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass

import numpy as np

from .stats import ParameterError


class ValidationError(ValueError):
    """Input data violates a documented invariant."""


class ParseError(ValueError):
    """A file does not match any supported format."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with integer labels inside an axis-aligned domain box.

    Features are held as binary32 (the on-disk and on-wire precision), one
    row per item; labels are dense class ids starting at 0.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    domain_lo: float = 0.0
    domain_hi: float = 1.0

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if features.ndim != 2:
            raise ValidationError(f"features must be 2-D, got shape {features.shape}")
        n_items, dim = features.shape
        if n_items < 1 or dim < 1:
            raise ValidationError(f"need n_items >= 1 and dim >= 1, got {features.shape}")
        if labels.shape != (n_items,):
            raise ValidationError(
                f"labels shape {labels.shape} does not match {n_items} items"
            )
        if self.n_classes < 1:
            raise ValidationError(f"n_classes must be positive, got {self.n_classes}")
        if not self.domain_lo < self.domain_hi:
            raise ValidationError(
                f"domain_lo {self.domain_lo} must be below domain_hi {self.domain_hi}"
            )
        if not np.all(np.isfinite(features)):
            bad = int(np.argwhere(~np.isfinite(features).all(axis=1))[0][0])
            raise ValidationError(f"non-finite feature coordinate at item {bad}")
        in_box = (features >= np.float32(self.domain_lo)) & (
            features <= np.float32(self.domain_hi)
        )
        if not np.all(in_box):
            bad = int(np.argwhere(~in_box.all(axis=1))[0][0])
            raise ValidationError(
                f"feature coordinate outside [{self.domain_lo}, {self.domain_hi}] "
                f"at item {bad}"
            )
        if np.any(labels < 0) or np.any(labels >= self.n_classes):
            bad = int(np.argwhere((labels < 0) | (labels >= self.n_classes))[0][0])
            raise ValidationError(
                f"label {int(labels[bad])} at item {bad} outside [0, {self.n_classes})"
            )

    @property
    def n_items(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class NeighbourhoodSpec:
    """The (p, eps) perturbation ball plus how the domain box is enforced.

    p is a norm order >= 1 or math.inf; eps is the ball radius in [0, 1].
    clip_to_domain clamps samples into the box (default); setting
    reject_out_of_domain as well switches to rejection sampling.
    """

    p: float
    eps: float
    clip_to_domain: bool = True
    reject_out_of_domain: bool = False

    def __post_init__(self):
        if not (math.isinf(self.p) or self.p >= 1.0):
            raise ParameterError(f"norm order p must be >= 1 or infinity, got {self.p}")
        if not 0.0 <= self.eps <= 1.0:
            raise ParameterError(f"eps must lie in [0, 1], got {self.eps}")


@dataclass(frozen=True)
class TestConfig:
    """Hypothesis-test parameters for per-input certification.

    kappa is the misprediction-proportion tolerance, alpha the per-test
    significance level (and conclusion failure rate). max_samples caps the
    test tally per input; pilot_size draws are spent up front to size the
    test and are not part of the tally.
    """

    __test__ = False  # name looks like a pytest class; it is not one

    kappa: float
    alpha: float
    pilot_size: int = 50
    max_samples: int = 20_000
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.kappa < 0.5:
            raise ParameterError(f"kappa must lie in (0, 1/2), got {self.kappa}")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.pilot_size < 1:
            raise ParameterError(f"pilot_size must be positive, got {self.pilot_size}")
        if self.max_samples < 1:
            raise ParameterError(f"max_samples must be positive, got {self.max_samples}")
        if self.pilot_size > self.max_samples:
            raise ParameterError(
                f"pilot_size {self.pilot_size} exceeds max_samples {self.max_samples}"
            )
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be positive, got {self.batch_size}")
        if not 0 <= int(self.seed) < (1 << 64):
            raise ParameterError(f"seed must fit an unsigned 64-bit value, got {self.seed}")


@dataclass(frozen=True)
class DcCertificateSet:
    """Per-item flags: true where a deterministic certificate rules out every
    adversarial neighbour, so the statistical test can be skipped."""

    flags: np.ndarray

    def __post_init__(self):
        flags = np.ascontiguousarray(self.flags, dtype=bool)
        object.__setattr__(self, "flags", flags)
        if flags.ndim != 1:
            raise ValidationError(f"flags must be a vector, got shape {flags.shape}")

    def check_length(self, dataset: Dataset) -> None:
        if self.flags.shape[0] != dataset.n_items:
            raise ValidationError(
                f"certificate count {self.flags.shape[0]} does not match "
                f"dataset items {dataset.n_items}"
            )


# ---------------------------------------------------------------------------
# dataset files: CSV for small hand-written cases, a base64 container at scale


_HEADER_KEYS = ("dim", "n_items", "n_classes", "domain_lo", "domain_hi")


def _b64_encode(arr: np.ndarray) -> str:
    return base64.b64encode(arr.tobytes()).decode("ascii")


def _b64_decode(line: str, dtype: str, count: int, what: str) -> np.ndarray:
    try:
        raw = base64.b64decode(line.strip(), validate=True)
    except Exception as exc:
        raise ParseError(f"{what}: invalid base64 payload ({exc})") from exc
    expect = count * np.dtype(dtype).itemsize
    if len(raw) != expect:
        raise ParseError(f"{what}: payload is {len(raw)} bytes, expected {expect}")
    return np.frombuffer(raw, dtype=dtype).copy()


def load_dataset(path) -> Dataset:
    """Read a dataset from CSV or from the binary container format.

    The container starts with a JSON header line, so the first byte
    disambiguates the two formats.
    """
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines or not any(line.strip() for line in lines):
        raise ParseError(f"{path}: file is empty")
    if lines[0].lstrip().startswith("{"):
        return _load_container(path, lines)
    return _load_csv(path, lines)


def _load_container(path, lines) -> Dataset:
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: bad JSON header at byte {exc.pos}: {exc.msg}") from exc
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise ParseError(f"{path}: header missing keys {missing}")
    n_items, dim = int(header["n_items"]), int(header["dim"])
    if len(lines) < 3:
        raise ParseError(f"{path}: container needs header + 2 payload lines, got {len(lines)}")
    features = _b64_decode(lines[1], "<f4", n_items * dim, f"{path}: features")
    labels = _b64_decode(lines[2], "<u4", n_items, f"{path}: labels")
    try:
        return Dataset(
            features=features.reshape(n_items, dim),
            labels=labels.astype(np.int64),
            n_classes=int(header["n_classes"]),
            domain_lo=float(header["domain_lo"]),
            domain_hi=float(header["domain_hi"]),
        )
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _load_csv(path, lines) -> Dataset:
    rows = []
    labels = []
    dim = None
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        cells = line.split(",")
        if len(cells) < 2:
            raise ParseError(f"{path}: record {lineno}: needs features and a label")
        if dim is None:
            dim = len(cells) - 1
        elif len(cells) - 1 != dim:
            raise ParseError(
                f"{path}: record {lineno}: {len(cells) - 1} feature columns, expected {dim}"
            )
        try:
            rows.append([np.float32(c) for c in cells[:-1]])
        except ValueError as exc:
            raise ParseError(f"{path}: record {lineno}: bad feature value ({exc})") from exc
        try:
            labels.append(int(cells[-1]))
        except ValueError as exc:
            raise ParseError(f"{path}: record {lineno}: bad label ({exc})") from exc
    if any(lab < 0 for lab in labels):
        bad = next(i for i, lab in enumerate(labels) if lab < 0)
        raise ValidationError(f"{path}: negative label at item {bad}")
    try:
        return Dataset(
            features=np.array(rows, dtype=np.float32),
            labels=np.array(labels, dtype=np.int64),
            n_classes=max(labels) + 1,
        )
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset; .csv paths get CSV, anything else the container.

    Loading the written file reproduces the dataset bit-exactly.
    """
    if str(path).endswith(".csv"):
        out = []
        for row, label in zip(dataset.features, dataset.labels):
            cells = [np.format_float_positional(v, unique=True, trim="0") for v in row]
            cells.append(str(int(label)))
            out.append(",".join(cells))
        payload = "\n".join(out) + "\n"
    else:
        header = {
            "dim": dataset.dim,
            "n_items": dataset.n_items,
            "n_classes": dataset.n_classes,
            "domain_lo": dataset.domain_lo,
            "domain_hi": dataset.domain_hi,
        }
        payload = "\n".join(
            [
                json.dumps(header, separators=(",", ":")),
                _b64_encode(dataset.features.astype("<f4")),
                _b64_encode(dataset.labels.astype("<u4")),
            ]
        ) + "\n"
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc


def load_dc_certificates(path, dataset: Dataset) -> DcCertificateSet:
    """Read newline-delimited 0/1 flags, one per dataset item, same order."""
    flags = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line not in ("0", "1"):
                raise ParseError(f"{path}: record {lineno}: expected '0' or '1', got {line!r}")
            flags.append(line == "1")
    if len(flags) != dataset.n_items:
        raise ValidationError(
            f"{path}: expected {dataset.n_items} certificate records, found {len(flags)}"
        )
    return DcCertificateSet(flags=np.array(flags, dtype=bool))


def save_dc_certificates(certs: DcCertificateSet, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for flag in certs.flags:
            fh.write("1\n" if flag else "0\n")
