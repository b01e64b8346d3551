"""Command-line surface: run a certification, sweep the (kappa, alpha) grid,
or self-test the statistical kernels.

Outputs are written for machines first: summary.json mirrors the dataset
summary, per_item.csv carries one row per item, sweep.csv one row per grid
point. Given the same config (seed included) the files are byte-identical
across platforms and worker counts; per-item wall times are therefore
suppressed (written as 0) unless record_timing is set.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .aggregator import adversarial_metrics, summarize, test_accuracy
from .certifier import ItemFailure, PerInputResult, certify_dataset
from .core import (
    Dataset,
    NeighbourhoodSpec,
    ParseError,
    TestConfig,
    ValidationError,
    load_dataset,
    load_dc_certificates,
)
from .models import gradient_sign_attack, load_model, random_search_attack
from .oracle import LocalOracle, ModelOracle, RemoteOracle, TransportError
from .sampler import Rng, make_stream_id
from .stats import (
    ParameterError,
    agresti_coull_lower,
    binom_left_pvalue,
    tower_expectation,
)

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_VALIDATION = 2
EXIT_TRANSPORT = 3

ATTACK_STREAM = 1
SWEEP_STREAM_BASE = 16


@dataclass(frozen=True)
class RunConfig:
    """One certification run, as read from a JSON config file."""

    dataset: str
    model_file: Optional[str] = None
    model_command: Optional[list] = None
    model_tcp: Optional[str] = None
    neighbourhood: NeighbourhoodSpec = field(
        default_factory=lambda: NeighbourhoodSpec(p=math.inf, eps=0.1)
    )
    test: TestConfig = field(default_factory=lambda: TestConfig(kappa=0.1, alpha=0.1))
    dc: Optional[str] = None
    attack_kind: Optional[str] = None
    attack_budget: int = 1000
    sweep_kappa: Optional[list] = None
    sweep_alpha: Optional[list] = None
    output_dir: str = "out"
    workers: int = 1
    record_timing: bool = False
    error_threshold: float = 0.01

    def __post_init__(self):
        sources = [
            s for s in (self.model_file, self.model_command, self.model_tcp) if s
        ]
        if len(sources) != 1:
            raise ParameterError(
                "config must name exactly one model source "
                "(model.file, model.command, or model.tcp)"
            )
        if self.attack_kind not in (None, "random_search", "gradient_sign"):
            raise ParameterError(f"unknown attack kind {self.attack_kind!r}")
        for name, grid in (("kappa", self.sweep_kappa), ("alpha", self.sweep_alpha)):
            if grid is None:
                continue
            for v in grid:
                hi = 0.5 if name == "kappa" else 1.0
                if not 0.0 < float(v) < hi:
                    raise ParameterError(f"sweep {name} value {v} out of range")
        if self.workers < 1:
            raise ParameterError(f"workers must be positive, got {self.workers}")
        if not 0.0 <= self.error_threshold <= 1.0:
            raise ParameterError(
                f"error_threshold must lie in [0, 1], got {self.error_threshold}"
            )


def _parse_p(raw) -> float:
    if isinstance(raw, str):
        if raw.lower() in ("inf", "infinity"):
            return math.inf
        return float(raw)
    return float(raw)


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: bad JSON at byte {exc.pos}: {exc.msg}") from exc

    model = doc.get("model", {})
    nb = doc.get("neighbourhood", {})
    spec = NeighbourhoodSpec(
        p=_parse_p(nb.get("p", "inf")),
        eps=float(nb.get("eps", 0.1)),
        clip_to_domain=bool(nb.get("clip_to_domain", True)),
        reject_out_of_domain=bool(nb.get("reject_out_of_domain", False)),
    )
    ts = doc.get("test", {})
    cfg = TestConfig(
        kappa=float(ts.get("kappa", 0.1)),
        alpha=float(ts.get("alpha", 0.1)),
        pilot_size=int(ts.get("pilot_size", 50)),
        max_samples=int(ts.get("max_samples", 20_000)),
        batch_size=int(ts.get("batch_size", 256)),
        seed=int(ts.get("seed", 0)),
    )
    attack = doc.get("attack") or {}
    sweep = doc.get("sweep") or {}
    return RunConfig(
        dataset=doc["dataset"],
        model_file=model.get("file"),
        model_command=model.get("command"),
        model_tcp=model.get("tcp"),
        neighbourhood=spec,
        test=cfg,
        dc=doc.get("dc"),
        attack_kind=attack.get("kind"),
        attack_budget=int(attack.get("budget", 1000)),
        sweep_kappa=sweep.get("kappa"),
        sweep_alpha=sweep.get("alpha"),
        output_dir=doc.get("output_dir", "out"),
        workers=int(doc.get("workers", 1)),
        record_timing=bool(doc.get("record_timing", False)),
        error_threshold=float(doc.get("error_threshold", 0.01)),
    )


def build_oracle(config: RunConfig) -> ModelOracle:
    if config.model_file:
        return LocalOracle(load_model(config.model_file))
    if config.model_command:
        command = config.model_command
        if isinstance(command, str):
            command = command.split()
        return RemoteOracle(command=list(command))
    host, _, port = config.model_tcp.rpartition(":")
    return RemoteOracle(tcp=(host, int(port)))


def _json_dump(doc: dict, path: Path) -> None:
    path.write_text(
        json.dumps(doc, sort_keys=True, separators=(",", ": "), indent=2) + "\n",
        encoding="ascii",
    )


def _format_float(value: float) -> str:
    return repr(float(value))


def write_per_item_csv(
    path: Path,
    results: list[PerInputResult],
    failures: list[ItemFailure],
    record_timing: bool,
) -> None:
    rows: dict[int, str] = {}
    for r in results:
        ms = r.wall_time * 1e3 if record_timing else 0.0
        rows[r.item_index] = ",".join(
            [
                str(r.item_index),
                str(r.n),
                str(r.k),
                _format_float(r.p_left),
                _format_float(r.p_right),
                r.decision.value,
                "1" if r.dc_short_circuit else "0",
                f"{ms:.3f}",
            ]
        )
    for f in failures:
        rows[f.item_index] = ",".join(
            [str(f.item_index), "0", "0", "1.0", "1.0", "Errored", "0", "0.000"]
        )
    header = "item_index,n,k,p_left,p_right,decision,dc_short_circuit,wall_time_ms"
    body = "\n".join(rows[i] for i in sorted(rows))
    path.write_text(header + "\n" + body + "\n", encoding="ascii")


def _make_attack(config: RunConfig, oracle: ModelOracle, dataset: Dataset):
    spec = config.neighbourhood
    if config.attack_kind == "random_search":

        def attack(x, y, item_index):
            rng = Rng(config.test.seed, make_stream_id(ATTACK_STREAM, item_index))
            hit = random_search_attack(
                oracle.predict_labels,
                x,
                y,
                spec,
                config.attack_budget,
                rng,
                dataset.domain_lo,
                dataset.domain_hi,
                batch_size=config.test.batch_size,
            )
            return None if hit is None else hit.reshape(1, -1)

        return attack
    if config.attack_kind == "gradient_sign":
        if not isinstance(oracle, LocalOracle):
            raise ParameterError(
                "gradient_sign attack needs a built-in model file, not a remote oracle"
            )
        model = oracle.model

        def attack(x, y, item_index):
            return gradient_sign_attack(
                model, x, y, spec, dataset.domain_lo, dataset.domain_hi
            ).reshape(1, -1)

        return attack
    return None


def run(config: RunConfig) -> int:
    """Execute one certification run; returns the process exit code."""
    try:
        dataset = load_dataset(config.dataset)
        oracle = build_oracle(config)
    except (ParseError, ValidationError, ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT

    try:
        if isinstance(oracle, RemoteOracle):
            oracle.check_dataset(dataset)
        dc = (
            load_dc_certificates(config.dc, dataset) if config.dc else None
        )
        out_dir = Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        results, failures = certify_dataset(
            oracle,
            dataset,
            config.neighbourhood,
            config.test,
            dc=dc,
            workers=config.workers,
        )
        if len(failures) > config.error_threshold * dataset.n_items:
            print(
                f"transport error: {len(failures)} of {dataset.n_items} items "
                f"errored (threshold {config.error_threshold:.0%})",
                file=sys.stderr,
            )
            write_per_item_csv(
                out_dir / "per_item.csv", results, failures, config.record_timing
            )
            return EXIT_TRANSPORT

        adversarial = None
        attack = _make_attack(config, oracle, dataset)
        if attack is not None:
            adversarial = adversarial_metrics(
                oracle, attack, dataset, config.neighbourhood
            )

        summary = summarize(
            results,
            n_items=dataset.n_items,
            kappa=config.test.kappa,
            alpha=config.test.alpha,
            test_acc=test_accuracy(oracle, dataset),
            dc=dc,
            failures=failures,
            adversarial=adversarial,
        )
        _json_dump(summary.to_dict(), out_dir / "summary.json")
        write_per_item_csv(
            out_dir / "per_item.csv", results, failures, config.record_timing
        )

        if config.sweep_kappa or config.sweep_alpha:
            _run_sweep(config, oracle, dataset, dc, out_dir)

        print(
            f"certified {summary.n_certified}/{summary.n_items} "
            f"(pra={summary.pra_hat:.4f}, "
            f"tower bounds [{summary.tower_lower:.4f}, {summary.tower_upper:.4f}])"
        )
        return EXIT_OK
    except (ParseError, ValidationError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    finally:
        oracle.close()


def _run_sweep(config, oracle, dataset, dc, out_dir: Path) -> None:
    kappas = [float(v) for v in (config.sweep_kappa or [config.test.kappa])]
    alphas = [float(v) for v in (config.sweep_alpha or [config.test.alpha])]
    lines = ["kappa,alpha,pra_hat,tower_lower,tower_upper,n_inconclusive,n_errored"]
    grid_index = 0
    for kappa in kappas:
        for alpha in alphas:
            cfg = TestConfig(
                kappa=kappa,
                alpha=alpha,
                pilot_size=config.test.pilot_size,
                max_samples=config.test.max_samples,
                batch_size=config.test.batch_size,
                seed=config.test.seed,
            )
            results, failures = certify_dataset(
                oracle,
                dataset,
                config.neighbourhood,
                cfg,
                dc=dc,
                workers=config.workers,
                stream_context=SWEEP_STREAM_BASE + grid_index,
            )
            summary = summarize(
                results,
                n_items=dataset.n_items,
                kappa=kappa,
                alpha=alpha,
                test_acc=0.0,
                dc=dc,
                failures=failures,
            )
            lines.append(
                ",".join(
                    [
                        _format_float(kappa),
                        _format_float(alpha),
                        _format_float(summary.pra_hat),
                        _format_float(summary.tower_lower),
                        _format_float(summary.tower_upper),
                        str(summary.n_inconclusive),
                        str(summary.n_errored),
                    ]
                )
            )
            grid_index += 1
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="ascii")


# ---------------------------------------------------------------------------
# selftest: precomputed reference values for the statistical kernels


def selftest_checks() -> list[tuple[str, float, float, float]]:
    """(name, actual, expected, tolerance) for each embedded check."""
    return [
        (
            "exact left-tail p-value, 2 of 30 at tolerance 0.01",
            binom_left_pvalue(30, 2, 0.01),
            0.9967,
            1e-4,
        ),
        (
            "Agresti-Coull lower limit, 2 of 30 at alpha 0.05",
            agresti_coull_lower(30, 2, 0.05),
            0.0153,
            5e-4,
        ),
        (
            "mixture expectation (0.4, 0.6) x (5, 4)",
            tower_expectation((0.4, 0.6), (5.0, 4.0)),
            4.40,
            1e-12,
        ),
    ]


def selftest() -> int:
    ok = True
    for name, actual, expected, tol in selftest_checks():
        good = abs(actual - expected) <= tol
        ok = ok and good
        status = "pass" if good else "FAIL"
        print(f"[{status}] {name}: expected {expected}, actual {actual:.6f}")
    return EXIT_OK if ok else EXIT_SELFTEST


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="towercert",
        description="statistical robustness certification of black-box classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="certify a dataset per a JSON config")
    p_run.add_argument("--config", required=True)
    p_sweep = sub.add_parser("sweep", help="run with a (kappa, alpha) grid")
    p_sweep.add_argument("--config", required=True)
    sub.add_parser("selftest", help="check the statistical kernels")
    args = parser.parse_args(argv)

    if args.command == "selftest":
        return selftest()
    try:
        config = load_run_config(args.config)
    except (ParseError, ParameterError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.command == "sweep" and not (config.sweep_kappa or config.sweep_alpha):
        print("config error: sweep requires a sweep grid", file=sys.stderr)
        return EXIT_VALIDATION
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
