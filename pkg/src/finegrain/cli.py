"""Command line entry points: synth, validate, eval, gradcheck.

Exit codes form a contract scripts can rely on: 0 success, 1 validation or
accuracy failure, 2 configuration error, 3 backend or transport error.  All
randomness flows from the --seed flag; re-running a command with identical
inputs overwrites its outputs bit-identically.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .backends import (
    BACKEND_URL_ENV,
    Backend,
    BackendError,
    HttpBackendClient,
    ProceduralBackend,
)
from .core import COCO_CLASSES, ValidationError, derive_seed
from .dataset import MANIFEST_NAME, ManifestError, validate_dataset, write_dataset
from .evaluation import (
    EmbeddingScorer,
    EvaluationError,
    OracleScorer,
    RandomScorer,
    Scorer,
    TableScorer,
    evaluate,
    load_eval_cases,
)
from .hardneg import gradcheck
from .semantics import SubsetKind
from .synthesis import (
    SynthesisInfeasibleError,
    build_sprite_library,
    execute_case,
    plan_case,
)

__all__ = ["EXIT_BACKEND", "EXIT_CONFIG", "EXIT_CONTRACT", "EXIT_OK", "RunConfig", "main"]

EXIT_OK = 0
EXIT_CONTRACT = 1
EXIT_CONFIG = 2
EXIT_BACKEND = 3

_SUBSET_CHOICES = tuple(s.value for s in SubsetKind) + ("all",)
_SCORER_CHOICES = ("random", "oracle", "embedding", "table")


class ConfigError(RuntimeError):
    """Bad flags or config file contents."""


@dataclass(frozen=True)
class RunConfig:
    """Merged view of flags, config file, and environment for one command."""

    command: str
    subset: str = "all"
    cases: int = 10
    seed: int | None = None
    backend: str = "procedural"
    out: Path | None = None
    dataset: Path | None = None
    scorer: str = "random"
    scores: Path | None = None
    report: Path | None = None
    jobs: int = 1
    size: int = 512
    lam: float = 0.2
    batches: int = 100
    tolerance: float = 1e-5
    inject_sign_flip: bool = False
    either_category: bool = False


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finegrain",
        description="Synthesize, validate, and evaluate attribute-probe candidate sets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="JSON config file; flags win")
        p.add_argument("--jobs", type=int, default=None, help="parallel case workers")

    p_synth = sub.add_parser("synth", help="generate a dataset of candidate sets")
    common(p_synth)
    p_synth.add_argument("--seed", type=int, required=True, help="root seed for all randomness")
    p_synth.add_argument("--subset", choices=_SUBSET_CHOICES, default=None)
    p_synth.add_argument("--cases", type=int, default=None, help="cases per subset")
    p_synth.add_argument("--backend", default=None, help="'procedural' or a server URL")
    p_synth.add_argument("--out", type=Path, default=None, help="output dataset directory")
    p_synth.add_argument("--size", type=int, default=None, help="canvas edge in pixels")

    p_val = sub.add_parser("validate", help="check a dataset directory")
    common(p_val)
    p_val.add_argument("--dataset", type=Path, default=None, help="dataset directory")

    p_eval = sub.add_parser("eval", help="score a dataset and report accuracies")
    common(p_eval)
    p_eval.add_argument("--dataset", type=Path, default=None, help="dataset directory")
    p_eval.add_argument("--scorer", choices=_SCORER_CHOICES, default=None)
    p_eval.add_argument("--seed", type=int, default=None, help="seed for the random scorer")
    p_eval.add_argument("--scores", type=Path, default=None, help="JSON table for --scorer table")
    p_eval.add_argument("--backend", default=None, help="backend for --scorer embedding")
    p_eval.add_argument("--report", type=Path, default=None, help="where to write the JSON report")
    p_eval.add_argument(
        "--either-category",
        action="store_true",
        default=None,
        dest="either_category",
        help="credit classification for any category of a two-object case",
    )

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    common(p_grad)
    p_grad.add_argument("--seed", type=int, default=None)
    p_grad.add_argument("--batches", type=int, default=None)
    p_grad.add_argument("--lam", type=float, default=None, help="hard-negative loss weight")
    p_grad.add_argument("--tolerance", type=float, default=None)
    p_grad.add_argument(
        "--inject-sign-flip",
        action="store_true",
        default=None,
        dest="inject_sign_flip",
        help="self-test: corrupt one gradient and expect the check to fail",
    )
    return parser


def _load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _merge(args: argparse.Namespace, file_config: dict) -> RunConfig:
    """Resolve each setting: flag, then env (backend only), then config file,
    then the RunConfig default."""
    defaults = RunConfig(command=args.command)
    merged: dict = {"command": args.command}
    casts = {
        "subset": str,
        "cases": int,
        "seed": int,
        "backend": str,
        "out": Path,
        "dataset": Path,
        "scorer": str,
        "scores": Path,
        "report": Path,
        "jobs": int,
        "size": int,
        "lam": float,
        "batches": int,
        "tolerance": float,
        "inject_sign_flip": bool,
        "either_category": bool,
    }
    for key, cast in casts.items():
        value = getattr(args, key, None)
        if value is None and key == "backend" and os.environ.get(BACKEND_URL_ENV):
            value = os.environ[BACKEND_URL_ENV]
        if value is None and key in file_config:
            raw = file_config[key]
            if cast is bool:
                if not isinstance(raw, bool):
                    raise ConfigError(f"config key {key!r} must be a boolean")
                value = raw
            else:
                try:
                    value = cast(raw)
                except (TypeError, ValueError):
                    raise ConfigError(f"config key {key!r} has invalid value {raw!r}") from None
        if value is None:
            value = getattr(defaults, key)
        merged[key] = value
    config = RunConfig(**merged)
    if config.subset not in _SUBSET_CHOICES:
        raise ConfigError(f"unknown subset: {config.subset!r}")
    if config.scorer not in _SCORER_CHOICES:
        raise ConfigError(f"unknown scorer: {config.scorer!r}")
    if config.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    if config.cases < 1:
        raise ConfigError("--cases must be at least 1")
    return config


def _make_backend(spec: str) -> Backend:
    if spec == "procedural":
        return ProceduralBackend()
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpBackendClient(spec)
    raise ConfigError(f"backend must be 'procedural' or an http(s) URL, got {spec!r}")


def _subsets(config: RunConfig) -> list[SubsetKind]:
    if config.subset == "all":
        return list(SubsetKind)
    return [SubsetKind(config.subset)]


def cmd_synth(config: RunConfig) -> int:
    if config.seed is None:
        raise ConfigError("synth requires --seed")
    if config.out is None:
        raise ConfigError("synth requires --out")
    backend = _make_backend(config.backend)
    library = build_sprite_library(
        backend,
        COCO_CLASSES,
        per_category=1,
        seed=derive_seed(config.seed, ("library",)),
        size=config.size,
    )

    plans = []
    for subset in _subsets(config):
        for index in range(config.cases):
            try:
                plans.append(
                    plan_case(
                        library,
                        subset,
                        index,
                        run_seed=config.seed,
                        width=config.size,
                        height=config.size,
                    )
                )
            except SynthesisInfeasibleError as exc:
                print(f"infeasible: {subset.value} case {index}: {exc}", file=sys.stderr)
                return EXIT_CONTRACT

    def run(plan):
        return execute_case(plan, library, backend)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            executed = list(pool.map(run, plans))
    else:
        executed = [run(plan) for plan in plans]

    write_dataset(executed, config.out, run_seed=config.seed)
    report = validate_dataset(config.out)
    print(report.to_text())
    return EXIT_OK if report.valid else EXIT_CONTRACT


def cmd_validate(config: RunConfig) -> int:
    if config.dataset is None:
        raise ConfigError("validate requires --dataset")
    report = validate_dataset(config.dataset)
    print(report.to_text())
    return EXIT_OK if report.valid else EXIT_CONTRACT


def _make_scorer(config: RunConfig) -> Scorer:
    if config.scorer == "random":
        if config.seed is None:
            raise ConfigError("the random scorer requires --seed")
        return RandomScorer(config.seed)
    if config.scorer == "oracle":
        return OracleScorer()
    if config.scorer == "embedding":
        return EmbeddingScorer(_make_backend(config.backend))
    if config.scores is None:
        raise ConfigError("the table scorer requires --scores")
    return TableScorer.load_json(config.scores)


def cmd_eval(config: RunConfig) -> int:
    if config.dataset is None:
        raise ConfigError("eval requires --dataset")
    pre = validate_dataset(config.dataset, verify_images=False)
    if not pre.valid:
        print(pre.to_text(), file=sys.stderr)
        return EXIT_CONTRACT

    scorer = _make_scorer(config)
    cases = load_eval_cases(config.dataset, load_images=config.scorer == "embedding")
    manifest_bytes = (Path(config.dataset) / MANIFEST_NAME).read_bytes()
    checksum = hashlib.sha256(manifest_bytes).hexdigest()
    report = evaluate(
        cases, scorer, either_category=config.either_category, checksum=checksum
    )

    report_path = config.report or Path(config.dataset) / "eval_report.json"
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    report_path.with_suffix(".txt").write_text(report.to_text() + "\n", encoding="utf-8")
    print(report.to_text())
    return EXIT_OK


def cmd_gradcheck(config: RunConfig) -> int:
    report = gradcheck(
        batches=config.batches,
        seed=config.seed if config.seed is not None else 0,
        lam=config.lam,
        tolerance=config.tolerance,
        inject_sign_flip=config.inject_sign_flip,
    )
    print(
        f"batches={report.batches} max_rel_err={report.max_rel_err:.3e} "
        f"tolerance={report.tolerance:.1e} failures={report.failures}"
    )
    if config.inject_sign_flip:
        caught = report.failures > 0
        print("sign-flip self-test:", "caught" if caught else "MISSED")
        return EXIT_OK if caught else EXIT_CONTRACT
    return EXIT_OK if report.failures == 0 else EXIT_CONTRACT


_HANDLERS = {
    "synth": cmd_synth,
    "validate": cmd_validate,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _merge(args, _load_config_file(args.config))
        return _HANDLERS[args.command](config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ValidationError, ManifestError, EvaluationError, SynthesisInfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
