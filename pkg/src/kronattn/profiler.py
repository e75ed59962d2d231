"""Cost reports: analytic MAdd/memory, wall-clock timing, and network audits."""
from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _backend
from .attention import AttnConfig, get_operator
from .costmodel import MODEL_VERSION, canonical_op, madd_of, memory_of, saving_pct
from .nn.arch import ArchSpec
from .nn.network import build_network, count_madd, count_params

TABLE2_OPS = ("regular", "pooled", "kao_kv", "kao_qkv")
OP_LABELS = {"regular": "Attn", "pooled": "Attn+Pool", "kao_kv": "KAO_KV", "kao_qkv": "KAO_QKV"}
CSV_COLUMNS = ("operator", "input", "madd", "madd_saving_pct", "memory_bytes", "memory_saving_pct", "wall_ms", "speedup")
WARMUPS = 3


@dataclass
class CostReport:
    op: str
    shape: tuple  # (batch, h, w, c)
    madd: int
    memory_bytes: int
    params: int = 0
    wall_ms: Optional[float] = None
    madd_saving_pct: float = 0.0
    memory_saving_pct: float = 0.0
    speedup: Optional[float] = None
    layers: list = field(default_factory=list)

    def __post_init__(self):
        if self.madd <= 0 or self.memory_bytes <= 0:
            raise ValueError("madd and memory must be strictly positive")

    @property
    def input_label(self) -> str:
        b, h, w, c = self.shape
        size = f"{h}^2" if h == w else f"{h}x{w}"
        return f"{b}x{size}x{c}"

    def relative_to(self, baseline: "CostReport") -> "CostReport":
        self.madd_saving_pct = saving_pct(self.madd, baseline.madd)
        self.memory_saving_pct = saving_pct(self.memory_bytes, baseline.memory_bytes)
        if self.wall_ms is not None and baseline.wall_ms is not None and self.wall_ms > 0:
            self.speedup = baseline.wall_ms / self.wall_ms
        return self


def analytic_report(op: str, shape: tuple, batch: int = 8, value_transform: bool = True) -> CostReport:
    """Per-sample MAdd and batch memory of an attention operator on ``(h, w, c)``."""
    op = canonical_op(op)
    h, w, c = shape
    return CostReport(
        op=op,
        shape=(batch, h, w, c),
        madd=madd_of(op, shape, value_transform=value_transform),
        memory_bytes=memory_of(op, shape, batch),
        params=c * c if value_transform else 0,
    )


def time_call(fn, repeats: int, warmups: int = WARMUPS) -> float:
    """Median wall time of ``fn()`` in milliseconds after ``warmups`` untimed calls."""
    if repeats < 1:
        raise ValueError("repeats must be positive")
    for _ in range(warmups):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(samples)


def benchmark(op: str, shape: tuple, batch: int = 8, repeats: int = 10, seed: int = 0,
              value_transform: bool = True, dtype=np.float64) -> CostReport:
    """Time one attention operator on a random batch and attach the analytic costs.

    The median is taken over ``repeats`` runs after three warm-up runs. The
    kernels are single-threaded, so timings are single-core.
    """
    if repeats < 10:
        raise ValueError("benchmark needs repeats >= 10")
    op = canonical_op(op)
    h, w, c = shape
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, h, w, c)).astype(dtype)
    cfg = AttnConfig(wv=rng.standard_normal((c, c)) / np.sqrt(c)) if value_transform else AttnConfig()
    fn = get_operator(op)
    report = analytic_report(op, shape, batch, value_transform)
    report.wall_ms = time_call(lambda: [fn(sample, cfg) for sample in x], repeats)
    return report


def operator_table(sizes: Sequence[int], channels: int = 8, batch: int = 8, repeats: int = 10, seed: int = 0,
                   timed: bool = True, ops: Iterable[str] = TABLE2_OPS) -> list[CostReport]:
    """Operator comparison rows per spatial size, savings relative to regular attention."""
    rows = []
    for size in sizes:
        shape = (size, size, channels)
        if timed:
            group = [benchmark(op, shape, batch, repeats, seed) for op in ops]
        else:
            group = [analytic_report(op, shape, batch) for op in ops]
        base = next((r for r in group if r.op == "regular"), None) or analytic_report("regular", shape, batch)
        if timed and base.wall_ms is None:
            base = benchmark("regular", shape, batch, repeats, seed)
        rows.extend(r.relative_to(base) for r in group)
    return rows


def audit_network(arch: ArchSpec, seed: int = 0) -> CostReport:
    """Total MAdd and parameters of a network, with its per-layer rows in ``layers``.

    ``memory_bytes`` is the sum of every layer's input activation at 4 bytes
    per element, for one sample.
    """
    net = build_network(arch, seed)
    ptally = count_params(net)
    ctally = count_madd(net)
    memory = sum(int(np.prod(r.in_shape)) for r in ctally.rows) * 4
    h, w, c = arch.input_shape
    return CostReport(
        op=f"{arch.name}[{arch.attention}]",
        shape=(1, h, w, c),
        madd=ctally.total,
        memory_bytes=memory,
        params=ptally.total,
        layers=list(ctally.rows),
    )


# -- report emitters ------------------------------------------------------------

def _fmt_ms(v):
    return "" if v is None else f"{v:.3f}"


def _fmt_x(v):
    return "" if v is None else f"{v:.2f}"


def to_csv(rows: Sequence[CostReport], seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# model={MODEL_VERSION} backend={_backend.BACKEND} seed={seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([OP_LABELS.get(r.op, r.op), r.input_label, r.madd, f"{r.madd_saving_pct:.2f}",
                         r.memory_bytes, f"{r.memory_saving_pct:.2f}", _fmt_ms(r.wall_ms), _fmt_x(r.speedup)])
    return buf.getvalue()


def to_markdown(rows: Sequence[CostReport], seed: int) -> str:
    lines = [
        f"<!-- model={MODEL_VERSION} backend={_backend.BACKEND} seed={seed} -->",
        "| Input | Operator | MAdd | Cost Saving | Memory | Memory Saving | Time | Speedup |",
        "|---|---|---|---|---|---|---|---|",
    ]
    for r in rows:
        time_cell = "" if r.wall_ms is None else f"{r.wall_ms:.1f}ms"
        speed_cell = "" if r.speedup is None else f"{r.speedup:.1f}x"
        lines.append(
            f"| {r.input_label} | {OP_LABELS.get(r.op, r.op)} | {r.madd / 1e6:.2f}m | {r.madd_saving_pct:.2f}% "
            f"| {r.memory_bytes / 1e6:.1f}MB | {r.memory_saving_pct:.2f}% | {time_cell} | {speed_cell} |"
        )
    return "\n".join(lines) + "\n"


# -- reference targets ------------------------------------------------------------

@dataclass(frozen=True)
class Target:
    key: str
    value: float
    tolerance: float
    kind: str  # "rel" (fraction of value) or "abs" (same unit as value)
    resolution: float  # half a unit in the last reported digit
    source: str

    def check(self, measured: float) -> bool:
        allowed = self.tolerance * abs(self.value) if self.kind == "rel" else self.tolerance
        return abs(measured - self.value) <= max(allowed, self.resolution)


def load_targets() -> dict[str, Target]:
    text = resources.files("kronattn").joinpath("data", "targets.csv").read_text()
    reader = csv.DictReader(line for line in text.splitlines() if line and not line.startswith("#"))
    return {
        row["key"]: Target(row["key"], float(row["value"]), float(row["tolerance"]), row["kind"],
                           float(row["resolution"]), row["source"])
        for row in reader
    }


@dataclass(frozen=True)
class CheckResult:
    key: str
    measured: float
    target: Target

    @property
    def passed(self) -> bool:
        return self.target.check(self.measured)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        t = self.target
        tol = f"{t.tolerance:.0%}" if t.kind == "rel" else f"±{t.tolerance:g}"
        return f"[{status}] {self.key}: measured {self.measured:.4g} vs target {t.value:g} ({tol}, {t.source})"


def table2_checks(rows: Sequence[CostReport], targets: dict[str, Target]) -> list[CheckResult]:
    out = []
    for r in rows:
        size = r.shape[1]
        for metric, measured in (("madd_m", r.madd / 1e6), ("madd_saving", r.madd_saving_pct),
                                 ("memory_saving", r.memory_saving_pct)):
            key = f"table2.{r.op}.{size}.{metric}"
            if key in targets:
                out.append(CheckResult(key, measured, targets[key]))
    return out


def audit_checks(report: CostReport, arch_name: str, attention: str, targets: dict[str, Target]) -> list[CheckResult]:
    out = []
    for metric, measured in (("params_m", report.params / 1e6), ("madd_m", report.madd / 1e6)):
        key = f"{arch_name}.{attention}.{metric}"
        if key in targets:
            out.append(CheckResult(key, measured, targets[key]))
    return out


def compare_backends(sizes: Sequence[int] = (14, 28), channels: int = 8, repeats: int = 10,
                     seed: int = 0) -> list[dict]:
    """Time matmul, column softmax and every attention operator on each available backend."""
    from . import tensor

    rng = np.random.default_rng(seed)
    results = []
    original = _backend.kernels
    try:
        for name, module in _backend.available_backends().items():
            tensor.kernels = module
            for size in sizes:
                hw = size * size
                a = rng.standard_normal((channels, hw))
                e = rng.standard_normal((hw, hw))
                results.append({"backend": name, "kernel": "matmul", "size": size,
                                "ms": time_call(lambda: tensor.matmul(a.T, a), repeats)})
                results.append({"backend": name, "kernel": "softmax_columns", "size": size,
                                "ms": time_call(lambda: tensor.softmax_columns(e), repeats)})
                x = rng.standard_normal((size, size, channels))
                for op in TABLE2_OPS:
                    fn = get_operator(op)
                    results.append({"backend": name, "kernel": op, "size": size,
                                    "ms": time_call(lambda: fn(x), repeats)})
    finally:
        tensor.kernels = original
    return results
