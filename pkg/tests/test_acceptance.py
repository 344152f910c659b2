"""Acceptance gate: one test per headline guarantee, one verdict line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines;
each test prints PASS/FAIL with its measured numbers before asserting.
"""

import math
import time

import numpy as np
import pytest

from finegrain.cli import EXIT_OK, main
from finegrain.evaluation import EvalCase, OracleScorer, RandomScorer, evaluate
from finegrain.hardneg import (
    EmbeddingBatch,
    gradcheck,
    loss_clip,
    loss_hn,
    loss_hn_i2t,
    loss_hn_t2i,
    loss_total,
    random_batch,
)
from finegrain.semantics import (
    SubsetKind,
    canonical_labels,
    classify_absolute_size,
    classify_relative_size,
)
from finegrain.synthesis import (
    background_consistency,
    execute_case,
    measure_candidate,
    plan_case,
)

CHANCE_CASES_PER_SUBSET = 5000
CONSISTENCY_CASES_PER_SUBSET = 100
CHANCE_I2T = {
    SubsetKind.ABSOLUTE_SIZE: 33.3,
    SubsetKind.RELATIVE_SIZE: 33.3,
    SubsetKind.ABSOLUTE_POSITION: 11.1,
    SubsetKind.RELATIVE_POSITION: 25.0,
    SubsetKind.EXISTENCE: 50.0,
    SubsetKind.COUNT: 11.1,
}


def _verdict(ok, name, detail):
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_chance_level_reproduction(library):
    started = time.monotonic()
    cases = []
    for subset in SubsetKind:
        for index in range(CHANCE_CASES_PER_SUBSET):
            plan = plan_case(library, subset, index, run_seed=2024, width=192, height=192)
            cases.append(EvalCase.from_plan(plan))
    report = evaluate(cases, RandomScorer(7))
    elapsed = time.monotonic() - started

    worst = []
    ok = True
    for result in report.results:
        target = CHANCE_I2T[result.subset]
        i2t = 100.0 * result.i2t
        t2i = 100.0 * result.t2i
        cls = 100.0 * result.cls
        ok &= abs(i2t - target) <= 1.5
        ok &= abs(t2i - target) <= 1.5
        ok &= abs(cls - 1.25) <= 0.5
        worst.append(
            f"{result.subset.value} i2t={i2t:.2f} t2i={t2i:.2f} cls={cls:.2f} (target {target})"
        )
    ok &= elapsed < 300.0
    _verdict(
        ok,
        "chance-level reproduction",
        f"{CHANCE_CASES_PER_SUBSET}/subset in {elapsed:.0f}s; " + "; ".join(worst),
    )


def test_oracle_ceiling(library):
    cases = []
    for subset in SubsetKind:
        for index in range(100):
            plan = plan_case(library, subset, index, run_seed=2024, width=192, height=192)
            cases.append(EvalCase.from_plan(plan))
    report = evaluate(cases, OracleScorer())
    ok = all(r.i2t == 1.0 and r.t2i == 1.0 and r.cls == 1.0 for r in report.results)
    _verdict(
        ok,
        "oracle ceiling",
        "100.0% i2t/t2i/cls on every subset"
        if ok
        else report.to_text().replace("\n", " | "),
    )


def test_consistency_suite(library, backend):
    violations = []
    for subset in SubsetKind:
        for index in range(CONSISTENCY_CASES_PER_SUBSET):
            plan = plan_case(library, subset, index, run_seed=909, width=192, height=192)

            # non-varied placements: identical across candidates
            if subset in (SubsetKind.RELATIVE_SIZE, SubsetKind.RELATIVE_POSITION):
                fixed = {cand.layout.placements[0] for cand in plan.candidates}
                if len(fixed) != 1:
                    violations.append(f"{plan.case_id}: fixed slot varies")
            if subset is SubsetKind.ABSOLUTE_SIZE:
                if len({c.layout.placements[0].center for c in plan.candidates}) != 1:
                    violations.append(f"{plan.case_id}: center varies")
            if subset is SubsetKind.ABSOLUTE_POSITION:
                if len({c.layout.placements[0].scale for c in plan.candidates}) != 1:
                    violations.append(f"{plan.case_id}: scale varies")
            if subset is SubsetKind.COUNT:
                layouts = [c.layout.placements for c in plan.candidates]
                for prev, cur in zip(layouts, layouts[1:]):
                    if cur[: len(prev)] != prev:
                        violations.append(f"{plan.case_id}: prefixes not nested")
                        break

            # measured labels enumerate the subset's full label set
            measured = tuple(
                measure_candidate(subset, cand.layout, library)
                for cand in plan.candidates
            )
            if measured != canonical_labels(subset):
                violations.append(f"{plan.case_id}: labels {measured}")
                continue

            # shared-tile regions bit-identical across candidates
            executed = execute_case(plan, library, backend)
            worst = background_consistency(executed)
            if worst != 0.0:
                violations.append(f"{plan.case_id}: tile diff {worst}")
    total = 6 * CONSISTENCY_CASES_PER_SUBSET
    _verdict(
        not violations,
        "consistency suite",
        f"{total} cases, {len(violations)} violations"
        + (f"; first: {violations[0]}" if violations else ""),
    )


def test_semantics_round_trip(library):
    # measure(plan(...)) equals the canonical enumeration on feasible probes
    mismatches = 0
    for subset in SubsetKind:
        for index in range(50):
            plan = plan_case(library, subset, index, run_seed=311, width=192, height=192)
            measured = tuple(
                measure_candidate(subset, cand.layout, library)
                for cand in plan.candidates
            )
            if measured != canonical_labels(subset):
                mismatches += 1

    # every gap-band input stays unclassified
    eps = 1e-9
    gaps_ok = True
    for p in np.concatenate(
        [np.linspace(0.2 + eps, 0.4 - eps, 500), np.linspace(0.6 + eps, 0.8 - eps, 500)]
    ):
        gaps_ok &= classify_absolute_size(float(p)) is None
    for r in np.concatenate(
        [np.linspace(0.5 + eps, 0.9 - eps, 500), np.linspace(1.1 + eps, 2.0 - eps, 500)]
    ):
        gaps_ok &= classify_relative_size(float(r) * 100.0, 100.0) is None

    _verdict(
        mismatches == 0 and gaps_ok,
        "semantics round-trip",
        f"300 planned cases re-measured, {mismatches} mismatches; gap bands unclassified: {bool(gaps_ok)}",
    )


def test_loss_correctness():
    # (a) analytic vs central finite differences on 100 random batches
    report = gradcheck(batches=100, seed=2024, h=1e-4, tolerance=1e-5)
    fd_ok = report.failures == 0

    # (b) uniform-similarity batches: per-query loss ln(n_t + n_hn) to 1e-12
    uniform_ok = True
    for n_t, n_hn in ((4, 3), (6, 0), (2, 7), (8, 5)):
        dim = 5
        row = np.full(dim, 1.0 / math.sqrt(dim))
        batch = EmbeddingBatch(
            np.tile(row, (n_t + n_hn, 1)),
            np.tile(row, (n_t + n_hn, 1)),
            n_t,
            tuple(range(n_t)),
            tuple(f"c{i}" for i in range(n_hn)),
        )
        expected = math.log(n_t + n_hn)
        uniform_ok &= abs(loss_hn_i2t(batch, 3.0) / n_t - expected) <= 1e-12
        uniform_ok &= abs(loss_hn_t2i(batch, 3.0) / n_t - expected) <= 1e-12

    # (c) adding a hard negative never decreases the hard-negative loss
    rng = np.random.default_rng(404)
    mono_ok = True
    for _ in range(100):
        base = random_batch(rng, int(rng.integers(2, 7)), int(rng.integers(0, 5)), 6)
        grown = EmbeddingBatch(
            np.vstack([base.images, rng.standard_normal(6)]),
            np.vstack([base.texts, rng.standard_normal(6)]),
            base.n_trivial,
            base.pairing,
            base.hn_case_ids + ("extra",),
        )
        tau = float(rng.uniform(0.5, 10.0))
        mono_ok &= loss_hn(grown, tau) >= loss_hn(base, tau) - 1e-12

    # (d) lambda = 0 reduces to the plain contrastive loss bit-for-bit
    lam0_ok = True
    for seed in range(20):
        batch = random_batch(np.random.default_rng(seed), 5, 3, 6)
        lam0_ok &= loss_total(batch, 2.0 + seed, 0.0) == loss_clip(batch, 2.0 + seed)

    _verdict(
        fd_ok and uniform_ok and mono_ok and lam0_ok,
        "loss correctness",
        f"fd max_rel_err={report.max_rel_err:.2e} (<=1e-5: {fd_ok}); "
        f"uniform ln(n_t+n_hn): {bool(uniform_ok)}; hn monotone: {bool(mono_ok)}; "
        f"lambda=0 bitwise: {bool(lam0_ok)}",
    )


def test_synthesis_determinism(tmp_path):
    args = ["synth", "--seed", "77", "--subset", "all", "--cases", "2", "--size", "160"]
    root_a = tmp_path / "run_a"
    root_b = tmp_path / "run_b"
    assert main([*args, "--out", str(root_a)]) == EXIT_OK
    assert main([*args, "--out", str(root_b)]) == EXIT_OK
    files_a = sorted(p.relative_to(root_a) for p in root_a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(root_b) for p in root_b.rglob("*") if p.is_file())
    identical = files_a == files_b and all(
        (root_a / rel).read_bytes() == (root_b / rel).read_bytes() for rel in files_a
    )
    _verdict(
        identical,
        "synthesis determinism",
        f"two identical-seed runs over {len(files_a)} files byte-identical: {identical}",
    )
