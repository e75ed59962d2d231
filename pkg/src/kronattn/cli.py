"""``kronattn`` command line: operator benchmarks, audits and verification suites.

Exit codes: 0 when every check passes, 1 when a tolerance check fails,
2 on a usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import profiler, verify
from ._backend import BACKEND
from .costmodel import MODEL_VERSION
from .nn.arch import ATTENTION_KINDS, ArchError, builtin_arch, load_arch

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
COMMANDS = ("bench-ops", "audit-arch", "verify-theorem", "gradcheck", "toytrain", "bench-backends")
DEFAULT_SHAPES = ((14, 14), (28, 28), (56, 56))


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    shapes: tuple = DEFAULT_SHAPES
    channels: int = 8
    batch: int = 8
    repeats: int = 10
    seed: int = 0
    format: str = "csv"
    out: Optional[str] = None
    arch: Optional[str] = None
    attention: str = "kao_kv"
    steps: int = 200
    timed: bool = True
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.format not in ("csv", "markdown"):
            raise UsageError(f"--format must be csv or markdown, got {self.format!r}")
        if self.attention not in ATTENTION_KINDS:
            raise UsageError(f"--attention must be one of {', '.join(ATTENTION_KINDS)}")
        for name in ("channels", "batch", "repeats", "steps"):
            if getattr(self, name) < 1:
                raise UsageError(f"--{name} must be a positive integer")
        if self.command == "bench-ops" and self.timed and self.repeats < 10:
            raise UsageError("--repeats must be at least 10 for timed runs")
        if not self.shapes or any(h < 1 or w < 1 for h, w in self.shapes):
            raise UsageError("--shapes needs at least one positive size")

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown config fields: {', '.join(unknown)}")
        return cls(**values)


def parse_shapes(text: str) -> tuple:
    """``"14,28x20,56^2"`` -> ``((14, 14), (28, 20), (56, 56))``."""
    shapes = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        m = re.fullmatch(r"(\d+)(?:\^2|[x×](\d+))?", item)
        if not m:
            raise UsageError(f"cannot parse shape {item!r}; use N, N^2 or HxW")
        h = int(m.group(1))
        shapes.append((h, int(m.group(2)) if m.group(2) else h))
    return tuple(shapes)


def _parse_tolerance(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        try:
            out[key] = float(value)
        except ValueError:
            sep = ""
        if not sep:
            raise UsageError(f"--tolerance expects KEY=VALUE, got {item!r}")
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kronattn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--format", choices=("csv", "markdown"), default="csv")
        p.add_argument("--out", help="write the report here instead of stdout")
        p.add_argument("--tolerance", action="append", default=[], metavar="KEY=VALUE",
                       help="override the tolerance of one target in targets.csv")
        return p

    p = common(sub.add_parser("bench-ops", help="compare the four attention operators"))
    p.add_argument("--shapes", default="14,28,56", help="comma-separated spatial sizes, N or HxW")
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--no-time", action="store_true", help="analytic columns only")

    p = common(sub.add_parser("audit-arch", help="parameters and MAdd of a network"))
    p.add_argument("--arch", default="kanet", help="arch file, or a built-in name (kanet, mobilenetv2, toy)")
    p.add_argument("--attention", choices=ATTENTION_KINDS, default="kao_kv")

    common(sub.add_parser("verify-theorem", help="trace identity sweep and Monte Carlo moments"))
    common(sub.add_parser("gradcheck", help="finite-difference checks of every backward pass"))

    p = common(sub.add_parser("toytrain", help="train a reduced network on synthetic textures"))
    p.add_argument("--attention", choices=ATTENTION_KINDS, default="kao_kv")
    p.add_argument("--steps", type=int, default=200)

    p = common(sub.add_parser("bench-backends", help="time compiled and fallback kernels"))
    p.add_argument("--shapes", default="14,28")
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--repeats", type=int, default=10)
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    values = {"command": ns.command, "seed": ns.seed, "format": ns.format, "out": ns.out,
              "tolerances": _parse_tolerance(ns.tolerance)}
    if hasattr(ns, "shapes"):
        values["shapes"] = parse_shapes(ns.shapes)
    for name in ("channels", "batch", "repeats", "attention", "steps", "arch"):
        if hasattr(ns, name):
            values[name] = getattr(ns, name)
    if getattr(ns, "no_time", False):
        values["timed"] = False
    return RunConfig.from_dict(values)


# -- commands ----------------------------------------------------------------------

def _targets(cfg: RunConfig) -> dict:
    targets = profiler.load_targets()
    for key, tol in cfg.tolerances.items():
        if key not in targets:
            raise UsageError(f"no target named {key!r}")
        targets[key] = dataclasses.replace(targets[key], tolerance=tol)
    return targets


def _table(header: Sequence[str], rows: list, fmt: str, cfg: RunConfig) -> str:
    if fmt == "markdown":
        lines = [f"<!-- model={MODEL_VERSION} backend={BACKEND} seed={cfg.seed} -->",
                 "| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(str(v) for v in row) + " |" for row in rows]
    else:
        lines = [f"# model={MODEL_VERSION} backend={BACKEND} seed={cfg.seed}", ",".join(header)]
        lines += [",".join(str(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def cmd_bench_ops(cfg: RunConfig) -> tuple[str, list[str], bool]:
    rows = []
    for h, w in cfg.shapes:
        shape = (h, w, cfg.channels)
        if cfg.timed:
            group = [profiler.benchmark(op, shape, cfg.batch, cfg.repeats, cfg.seed) for op in profiler.TABLE2_OPS]
        else:
            group = [profiler.analytic_report(op, shape, cfg.batch) for op in profiler.TABLE2_OPS]
        rows.extend(r.relative_to(group[0]) for r in group)
    report = profiler.to_markdown(rows, cfg.seed) if cfg.format == "markdown" else profiler.to_csv(rows, cfg.seed)
    checks = profiler.table2_checks(rows, _targets(cfg)) if cfg.channels == 8 else []
    lines = [c.line() for c in checks]
    return report, lines, all(c.passed for c in checks)


def _load_arch(cfg: RunConfig):
    name = cfg.arch or "kanet"
    if Path(name).is_file():
        return load_arch(name, attention=cfg.attention)
    try:
        return builtin_arch(name, attention=cfg.attention)
    except FileNotFoundError:
        raise UsageError(f"no arch file or built-in arch named {name!r}") from None


def cmd_audit_arch(cfg: RunConfig) -> tuple[str, list[str], bool]:
    arch = _load_arch(cfg)
    report = profiler.audit_network(arch, cfg.seed)
    rows = [(r.name, r.kind, "x".join(map(str, r.in_shape)), r.params, r.madd) for r in report.layers]
    rows.append(("total", "", "", report.params, report.madd))
    text = _table(("layer", "kind", "input", "params", "madd"), rows, cfg.format, cfg)
    checks = profiler.audit_checks(report, arch.name, cfg.attention, _targets(cfg))
    lines = [f"{arch.name} [{cfg.attention}]: params {report.params:,} MAdd {report.madd:,}"]
    lines += [c.line() for c in checks]
    return text, lines, all(c.passed for c in checks)


def cmd_verify_theorem(cfg: RunConfig) -> tuple[str, list[str], bool]:
    sweep = verify.trace_sweep(seed=cfg.seed)
    rows = [(r.h, r.draws, f"{r.lhs:.12g}", f"{r.rhs:.12g}", f"{r.max_abs_diff:.3e}") for r in sweep]
    text = _table(("h", "draws", "lhs", "rhs", "max_abs_diff"), rows, cfg.format, cfg)
    ok = all(r.max_abs_diff < 1e-9 for r in sweep)
    lines = [f"[{'PASS' if ok else 'FAIL'}] trace identity, h=w in 2..16: "
             f"max |lhs - rhs| = {max(r.max_abs_diff for r in sweep):.3e}"]
    model = verify.random_model(np.random.default_rng(cfg.seed), 4, 5)
    for m in verify.monte_carlo_moments(model, seed=cfg.seed):
        passed = m.passed()
        ok &= passed
        lines.append(f"[{'PASS' if passed else 'FAIL'}] Monte Carlo {m.name}: max z = {m.max_z:.2f}, "
                     f"max variance error = {m.max_var_rel:.2%}")
    return text, lines, ok


def cmd_gradcheck(cfg: RunConfig) -> tuple[str, list[str], bool]:
    results = verify.gradcheck_suite(seed=cfg.seed)
    rows = [(r.op, r.seeds, f"{r.worst.max_rel_error:.3e}", "pass" if r.passed else "fail") for r in results]
    text = _table(("op", "seeds", "max_rel_error", "status"), rows, cfg.format, cfg)
    failed = [r.op for r in results if not r.passed]
    lines = [f"[{'FAIL' if failed else 'PASS'}] gradcheck over {len(results)} ops"
             + (f": {', '.join(failed)}" if failed else "")]
    return text, lines, not failed


def cmd_toytrain(cfg: RunConfig) -> tuple[str, list[str], bool]:
    from .nn.train import toytrain

    result = toytrain(cfg.attention, steps=cfg.steps, seed=cfg.seed)
    rows = [(i, f"{loss:.6f}") for i, loss in enumerate(result.losses)]
    text = _table(("step", "loss"), rows, cfg.format, cfg)
    ok = result.ratio < 0.5
    lines = [f"[{'PASS' if ok else 'FAIL'}] toytrain {cfg.attention}: initial loss {result.initial_loss:.4f}, "
             f"final loss {result.final_loss:.4f} (ratio {result.ratio:.3f})"]
    return text, lines, ok


def cmd_bench_backends(cfg: RunConfig) -> tuple[str, list[str], bool]:
    sizes = [h for h, w in cfg.shapes if h == w]
    if len(sizes) != len(cfg.shapes):
        raise UsageError("bench-backends takes square sizes only")
    results = profiler.compare_backends(sizes, cfg.channels, cfg.repeats, cfg.seed)
    rows = [(r["backend"], r["kernel"], r["size"], f"{r['ms']:.3f}") for r in results]
    return _table(("backend", "kernel", "size", "wall_ms"), rows, cfg.format, cfg), [], True


HANDLERS = {
    "bench-ops": cmd_bench_ops,
    "audit-arch": cmd_audit_arch,
    "verify-theorem": cmd_verify_theorem,
    "gradcheck": cmd_gradcheck,
    "toytrain": cmd_toytrain,
    "bench-backends": cmd_bench_backends,
}


def run(cfg: RunConfig) -> int:
    text, lines, ok = HANDLERS[cfg.command](cfg)
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)
    for line in lines:
        print(line, file=sys.stderr if cfg.out is None else sys.stdout)
    return EXIT_OK if ok else EXIT_FAIL


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg = config_from_args(build_parser().parse_args(argv))
        return run(cfg)
    except UsageError as exc:
        print(f"kronattn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArchError as exc:
        print(f"kronattn: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
