import numpy as np
import pytest

from kronattn import costmodel as cm
from kronattn import profiler as pf
from kronattn.nn import builtin_arch


def test_madd_examples():
    assert cm.madd_of("regular", (14, 14, 8)) == 614_656
    assert cm.madd_of("kao_qkv", (56, 56, 8)) == 200_704
    assert cm.madd_of("kao_kv", (28, 28, 8)) == 702_464
    assert cm.madd_of("pooled", (14, 14, 8)) == 153_664
    assert cm.madd_of("kao_kv", (14, 14, 8)) == 87_808


def test_madd_layers():
    assert cm.madd_of("conv1x1", (7, 7, 16), c_out=32) == 49 * 16 * 32
    assert cm.madd_of("dwconv3x3", (8, 8, 4), stride=2) == 16 * 9 * 4
    assert cm.madd_of("conv3x3", (224, 224, 3), c_out=32, stride=2) == 112 * 112 * 27 * 32
    assert cm.madd_of("batchnorm", (4, 4, 4)) == 0
    with pytest.raises(ValueError):
        cm.madd_of("conv1x1", (4, 4, 4))
    with pytest.raises(cm.UnsupportedOperator):
        cm.madd_of("transformer", (4, 4, 4))


def test_value_transform_term():
    base = cm.madd_of("kao_kv", (14, 14, 8))
    assert cm.madd_of("kao_kv", (14, 14, 8), value_transform=True) - base == 28 * 64


def test_memory_examples():
    coeff = 196 ** 2 * 8 * 4
    assert coeff == pytest.approx(1.23e6, rel=0.01)
    assert cm.memory_of("regular", (14, 14, 8), 8) > coeff
    assert cm.saving_pct(cm.memory_of("kao_kv", (56, 56, 8)), cm.memory_of("regular", (56, 56, 8))) == pytest.approx(96.4, abs=0.2)
    assert cm.saving_pct(cm.memory_of("kao_qkv", (28, 28, 8)), cm.memory_of("regular", (28, 28, 8))) == pytest.approx(99.5, abs=0.6)
    with pytest.raises(cm.UnsupportedOperator):
        cm.memory_of("conv1x1", (4, 4, 4))


@pytest.mark.parametrize("op,slope", [("regular", 4.0), ("pooled", 4.0), ("kao_kv", 3.0), ("kao_qkv", 2.0)])
def test_scaling_exponents(op, slope):
    hs = np.array([8, 16, 32, 64])
    madd = [cm.madd_of(op, (h, h, 8)) for h in hs]
    fitted = np.polyfit(np.log(hs), np.log(madd), 1)[0]
    assert fitted == pytest.approx(slope, abs=0.1)


def test_cost_report_invariants():
    with pytest.raises(ValueError):
        pf.CostReport("regular", (1, 2, 2, 1), madd=0, memory_bytes=4)
    base = pf.analytic_report("regular", (14, 14, 8))
    rep = pf.analytic_report("kao_kv", (14, 14, 8)).relative_to(base)
    assert rep.madd_saving_pct == pytest.approx(100 * (1 - rep.madd / base.madd))
    assert rep.input_label == "8x14^2x8"


def test_benchmark_fields():
    rep = pf.benchmark("kao_qkv", (8, 8, 4), batch=2, repeats=10, seed=1)
    assert rep.madd == cm.madd_of("kao_qkv", (8, 8, 4), value_transform=True)
    assert rep.memory_bytes == cm.memory_of("kao_qkv", (8, 8, 4), 2)
    assert rep.wall_ms > 0
    again = pf.benchmark("kao_qkv", (8, 8, 4), batch=2, repeats=10, seed=1)
    assert (again.madd, again.memory_bytes) == (rep.madd, rep.memory_bytes)


def test_benchmark_requires_repeats():
    with pytest.raises(ValueError):
        pf.benchmark("regular", (4, 4, 2), repeats=9)


def test_operator_table_rows():
    rows = pf.operator_table([14, 28, 56], timed=False)
    assert len(rows) == 12
    assert [r.op for r in rows[:4]] == list(pf.TABLE2_OPS)
    assert rows[0].madd_saving_pct == 0.0


def test_csv_layout():
    text = pf.to_csv(pf.operator_table([8], timed=False), seed=3)
    lines = text.splitlines()
    assert lines[0].startswith("# model=kronattn-cost-v1") and "seed=3" in lines[0]
    assert lines[1] == ",".join(pf.CSV_COLUMNS)
    assert len(lines) == 6


def test_markdown_layout():
    text = pf.to_markdown(pf.operator_table([14], timed=False), seed=0)
    assert "| 8x14^2x8 | KAO_QKV | 0.01m | 97.71% |" in text


def test_targets_file():
    targets = pf.load_targets()
    assert targets["table2.kao_kv.14.madd_m"].value == 0.09
    assert targets["kanet.kao_kv.params_m"].tolerance == 0.02
    t = targets["table2.kao_qkv.14.madd_m"]
    assert t.check(0.014336) and not t.check(0.016)


def test_audit_totals_are_row_sums():
    rep = pf.audit_network(builtin_arch("toy", num_classes=4))
    assert rep.madd == sum(r.madd for r in rep.layers)
    assert rep.params == sum(r.params for r in rep.layers)


def test_compare_backends_restores_kernels():
    from kronattn import _backend, tensor

    before = tensor.kernels
    rows = pf.compare_backends([4], channels=2, repeats=2)
    assert tensor.kernels is before is _backend.kernels
    assert {r["backend"] for r in rows} == set(_backend.available_backends())
