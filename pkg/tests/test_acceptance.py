"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
import time

import numpy as np
import pytest

from kronattn import costmodel, profiler, verify
from kronattn.nn import builtin_arch
from kronattn.nn.train import toytrain


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def targets():
    return profiler.load_targets()


def test_1_operator_madd_and_cost_savings(report, targets):
    t0 = time.perf_counter()
    rows = profiler.operator_table([14, 28, 56], channels=8, batch=8, timed=False)
    checks = [c for c in profiler.table2_checks(rows, targets) if not c.key.endswith("memory_saving")]
    elapsed = time.perf_counter() - t0
    failed = [c.line() for c in checks if not c.passed]
    ok = len(checks) == 21 and not failed and elapsed < 1.0
    report(1, "operator MAdd within 10% and cost savings within 1 pp", ok,
           f"{len(checks) - len(failed)}/{len(checks)} checks in {elapsed * 1e3:.1f} ms" + "".join(failed))


def test_2_memory_savings(report, targets):
    rows = profiler.operator_table([14, 28, 56], channels=8, batch=8, timed=False)
    checks = [c for c in profiler.table2_checks(rows, targets) if c.key.endswith("memory_saving")]
    worst = max(abs(c.measured - c.target.value) for c in checks)
    ok = len(checks) == 9 and all(c.passed for c in checks)
    report(2, "memory savings within 5 pp", ok, f"{len(checks)} checks, worst deviation {worst:.2f} pp")


def test_3_wall_clock_ordering(report):
    t0 = time.perf_counter()
    rows = profiler.operator_table([28, 56], channels=8, batch=8, repeats=10, seed=0)
    elapsed = time.perf_counter() - t0
    by = {(r.shape[1], r.op): r for r in rows}
    ordered = all(
        by[(s, "kao_qkv")].wall_ms < by[(s, "kao_kv")].wall_ms < by[(s, "pooled")].wall_ms < by[(s, "regular")].wall_ms
        for s in (28, 56)
    )
    speedup = by[(56, "kao_qkv")].speedup
    ok = ordered and speedup > 10 and elapsed < 120
    times = ", ".join(f"{s}^2 {op}={by[(s, op)].wall_ms:.1f}ms" for s in (28, 56) for op in profiler.TABLE2_OPS)
    report(3, "KAO_QKV < KAO_KV < Attn+Pool < Attn, QKV speedup > 10x at 56^2", ok,
           f"{times}; speedup {speedup:.1f}x; {elapsed:.1f} s")


def test_4_complexity_exponents(report):
    hs = np.array([8, 16, 32, 64])
    slopes = {}
    for op in ("regular", "kao_kv", "kao_qkv"):
        madd = [costmodel.madd_of(op, (h, h, 8)) for h in hs]
        slopes[op] = float(np.polyfit(np.log(hs), np.log(madd), 1)[0])
    expected = {"regular": 4.0, "kao_kv": 3.0, "kao_qkv": 2.0}
    ok = all(abs(slopes[k] - v) <= 0.1 for k, v in expected.items())
    report(4, "log-log MAdd slopes 4 / 3 / 2", ok, ", ".join(f"{k}={v:.3f}" for k, v in slopes.items()))


def test_5_architecture_audit(report, targets):
    t0 = time.perf_counter()
    checks = []
    for kind in ("kao_kv", "kao_qkv", "regular", "pooled"):
        rep = profiler.audit_network(builtin_arch("kanet", attention=kind))
        assert rep.madd == sum(r.madd for r in rep.layers)
        checks += profiler.audit_checks(rep, "kanet", kind, targets)
    elapsed = time.perf_counter() - t0
    ok = len(checks) == 5 and all(c.passed for c in checks) and elapsed < 5
    detail = "; ".join(f"{c.key}={c.measured:.3f}" for c in checks)
    report(5, "KANet / AttnNet params and MAdd", ok, f"{detail}; {elapsed:.2f} s")


def test_6_trace_identity_and_moments(report):
    t0 = time.perf_counter()
    sweep = verify.trace_sweep(range(2, 17), draws=50, seed=0)
    worst = max(r.max_abs_diff for r in sweep)
    rng = np.random.default_rng(0)
    moments = []
    for h, w in ((4, 4), (3, 5)):
        checks = verify.monte_carlo_moments(verify.random_model(rng, h, w), n=100_000, seed=h * 100 + w)
        moments += [m for m in checks if m.name in ("row_average", "column_average", "reconstruction")]
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and all(m.passed(3.0, 0.05) for m in moments) and elapsed < 60
    max_z = max(m.max_z for m in moments)
    max_var = max(m.max_var_rel for m in moments)
    report(6, "trace identity and Monte Carlo moments", ok,
           f"max |lhs-rhs| {worst:.2e}, max z {max_z:.2f}, max variance error {max_var:.2%}, {elapsed:.1f} s")


def test_7_oracle_equivalence(report):
    results = verify.oracle_sweep(seeds=20, max_side=4, max_channels=3)
    ok = len(results) == 4 and all(r.max_abs_diff < 1e-10 for r in results)
    report(7, "operators match brute-force oracles", ok,
           ", ".join(f"{r.kind}: {r.cases} cases max {r.max_abs_diff:.1e}" for r in results))


def test_8_gradient_suite(report):
    results = verify.gradcheck_suite(seeds=10, epsilon=1e-5, threshold=1e-5)
    worst = max(results, key=lambda r: r.worst.max_rel_error)
    ok = all(r.passed for r in results)
    report(8, "central-difference gradient checks", ok,
           f"{len(results)} ops x 10 seeds, worst {worst.op} {worst.worst.max_rel_error:.2e}")


def test_9_toy_training(report):
    t0 = time.perf_counter()
    results = [toytrain(kind, steps=200, batch=16, momentum=0.9, seed=0) for kind in ("kao_kv", "kao_qkv")]
    elapsed = time.perf_counter() - t0
    ok = all(r.ratio < 0.5 for r in results) and elapsed < 180
    report(9, "toy training halves the loss", ok,
           ", ".join(f"{r.attention}: {r.initial_loss:.3f} -> {r.final_loss:.4f} (ratio {r.ratio:.3f})" for r in results)
           + f"; {elapsed:.1f} s")
