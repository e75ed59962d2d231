import csv

import pytest

from kronattn import cli
from kronattn.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, RunConfig, UsageError, main, parse_shapes


def _rows(text):
    return list(csv.reader(line for line in text.splitlines() if not line.startswith("#")))


def test_default_bench_table_has_twelve_rows(tmp_path):
    out = tmp_path / "ops.csv"
    assert main(["bench-ops", "--no-time", "--out", str(out)]) == EXIT_OK
    rows = _rows(out.read_text())
    assert rows[0] == list(cli.profiler.CSV_COLUMNS)
    assert len(rows) == 13
    assert out.read_text().startswith("# model=kronattn-cost-v1")


def test_single_shape_four_rows(capsys):
    assert main(["bench-ops", "--shapes", "8x8", "--repeats", "10"]) == EXIT_OK
    rows = _rows(capsys.readouterr().out)
    assert len(rows) == 5
    assert all(float(r[6]) > 0 for r in rows[1:])


@pytest.mark.parametrize("argv", [
    ["bench-ops", "--repeats", "0"],
    ["bench-ops", "--repeats", "5"],
    ["bench-ops", "--shapes", "abc"],
    ["bench-ops", "--format", "xml"],
    ["audit-arch", "--attention", "linear"],
    ["audit-arch", "--arch", "no_such_arch"],
    ["audit-arch", "--tolerance", "kanet.kao_kv.madd_m"],
    ["audit-arch", "--tolerance", "unknown.key=1"],
    ["frobnicate"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_tolerance_failure_exit_code(capsys):
    assert main(["audit-arch", "--attention", "pooled"]) == EXIT_OK
    assert main(["audit-arch", "--attention", "pooled", "--tolerance", "kanet.pooled.madd_m=0.001"]) == EXIT_FAIL
    assert "[FAIL]" in capsys.readouterr().err


def test_audit_arch_markdown(capsys):
    assert main(["audit-arch", "--attention", "kao_qkv", "--format", "markdown"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.splitlines()[-1].startswith("| total |")


def test_audit_arch_from_file(tmp_path, capsys):
    from kronattn.nn import builtin_arch

    path = tmp_path / "mini.arch"
    path.write_text(builtin_arch("toy", num_classes=4).to_text())
    assert main(["audit-arch", "--arch", str(path)]) == EXIT_OK


def test_invalid_arch_file(tmp_path, capsys):
    path = tmp_path / "bad.arch"
    path.write_text("8^2x3 | Conv2D 3x3 | - | 8 | 1 | 5\n8^2x8 | AvgPool + FC | - | k | 1 | -\n")
    assert main(["audit-arch", "--arch", str(path)]) == EXIT_USAGE


def test_verify_theorem(capsys):
    assert main(["verify-theorem", "--seed", "2"]) == EXIT_OK
    captured = capsys.readouterr()
    rows = _rows(captured.out)
    assert [int(r[0]) for r in rows[1:]] == list(range(2, 17))
    assert all(float(r[4]) < 1e-9 for r in rows[1:])
    assert "z =" in captured.err


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == EXIT_OK
    assert all(r[3] == "pass" for r in _rows(capsys.readouterr().out)[1:])


def test_toytrain_command(capsys):
    assert main(["toytrain", "--steps", "20", "--attention", "kao_kv"]) in (EXIT_OK, EXIT_FAIL)
    assert len(_rows(capsys.readouterr().out)) == 21


def test_bench_backends_command(capsys):
    assert main(["bench-backends", "--shapes", "4", "--repeats", "2"]) == EXIT_OK
    assert "python" in capsys.readouterr().out


def test_deterministic_except_wall_time(capsys):
    outputs = []
    for _ in range(2):
        main(["bench-ops", "--shapes", "8,12", "--repeats", "10", "--seed", "4"])
        outputs.append([r[:6] for r in _rows(capsys.readouterr().out)])
    assert outputs[0] == outputs[1]


def test_run_config_rejects_unknown_fields():
    with pytest.raises(UsageError):
        RunConfig.from_dict({"command": "bench-ops", "colour": "blue"})
    cfg = RunConfig.from_dict({"command": "gradcheck", "seed": 9})
    assert cfg.seed == 9


def test_parse_shapes():
    assert parse_shapes("14, 28x20,56^2") == ((14, 14), (28, 20), (56, 56))
    with pytest.raises(UsageError):
        parse_shapes("14x")
