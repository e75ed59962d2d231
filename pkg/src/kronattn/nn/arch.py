"""Declarative network descriptions and their text format.

An arch file is a pipe-separated table with one stage per line::

    # input    | operator       | r | c  | n | s
    224^2x3    | Conv2D 3x3     | - | 32 | 1 | 2
    112^2x32   | BaseSkipModule | 1 | 16 | 1 | 1
    ...
    7^2x1280   | AvgPool + FC   | - | k  | 1 | -

``input`` is ``H^2xC`` or ``HxWxC``. Blank lines and ``#`` comments are
ignored. ``c = k`` in the classifier row stands for the class count chosen
when the file is loaded. Within a stage of ``n`` operators only the first
uses stride ``s``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional

from .modules import ModuleSpec

OPERATORS = {
    "conv2d 3x3": "stem",
    "conv2d 1x1": "head",
    "avgpool + fc": "classifier",
    "basemodule": "base",
    "baseskipmodule": "base_skip",
    "attnmodule": "attn",
    "attnskipmodule": "attn_skip",
}
DISPLAY = {
    "stem": "Conv2D 3x3",
    "head": "Conv2D 1x1",
    "classifier": "AvgPool + FC",
    "base": "BaseModule",
    "base_skip": "BaseSkipModule",
    "attn": "AttnModule",
    "attn_skip": "AttnSkipModule",
}
ATTENTION_KINDS = ("regular", "pooled", "kao_kv", "kao_qkv")


class ArchError(ValueError):
    """Invalid architecture description; ``problems`` lists every offending stage."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid architecture:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class StageSpec:
    h: int
    w: int
    c_in: int
    operator: str
    r: Optional[int]
    c: int
    n: int
    s: Optional[int]

    @property
    def display_input(self) -> str:
        size = f"{self.h}^2" if self.h == self.w else f"{self.h}x{self.w}"
        return f"{size}x{self.c_in}"

    def repeats(self) -> list[tuple[int, int, int, int]]:
        """``(h_in, w_in, c_in, stride)`` for each operator of the stage."""
        out = []
        h, w, c = self.h, self.w, self.c_in
        for i in range(self.n):
            stride = (self.s or 1) if i == 0 else 1
            out.append((h, w, c, stride))
            h, w, c = -(-h // stride), -(-w // stride), self.c
        return out

    def output(self) -> tuple[int, int, int]:
        if self.operator == "classifier":
            return (1, 1, self.c)
        h, w, _, stride = self.repeats()[-1]
        return (-(-h // stride), -(-w // stride), self.c)

    def module_specs(self, attention_kind: str) -> list[ModuleSpec]:
        return [ModuleSpec(self.operator, self.r, c_in, self.c, stride, attention_kind)
                for (_, _, c_in, stride) in self.repeats()]


@dataclass(frozen=True)
class ArchSpec:
    stages: tuple[StageSpec, ...]
    num_classes: int = 1000
    attention: str = "kao_kv"
    name: str = "network"
    coeff_norm: bool = False

    @property
    def input_shape(self) -> tuple[int, int, int]:
        first = self.stages[0]
        return (first.h, first.w, first.c_in)

    def with_attention(self, kind: str) -> "ArchSpec":
        return replace(self, attention=kind)

    def module_count(self) -> int:
        return sum(st.n for st in self.stages if st.operator in ("base", "base_skip", "attn", "attn_skip"))

    def validate(self) -> "ArchSpec":
        validate_arch(self)
        return self

    def to_text(self) -> str:
        lines = ["# input | operator | r | c | n | s"]
        for st in self.stages:
            c = "k" if st.operator == "classifier" else str(st.c)
            lines.append(" | ".join([st.display_input, DISPLAY[st.operator], "-" if st.r is None else str(st.r),
                                     c, str(st.n), "-" if st.s is None else str(st.s)]))
        return "\n".join(lines) + "\n"


_INPUT_RE = re.compile(r"^\s*(\d+)\s*(?:\^2|x\s*(\d+))\s*x\s*(\d+)\s*$")


def _parse_input(text: str, where: str) -> tuple[int, int, int]:
    m = _INPUT_RE.match(text.replace("×", "x").replace("²", "^2"))
    if not m:
        raise ArchError([f"{where}: cannot parse input size {text!r}"])
    h = int(m.group(1))
    w = int(m.group(2)) if m.group(2) else h
    return h, w, int(m.group(3))


def _parse_opt_int(text: str, where: str, field_name: str) -> Optional[int]:
    text = text.strip()
    if text in ("-", ""):
        return None
    try:
        return int(text)
    except ValueError:
        raise ArchError([f"{where}: field {field_name} must be an integer or '-', got {text!r}"]) from None


def parse_arch(text: str, num_classes: int = 1000, attention: str = "kao_kv", name: str = "network",
               coeff_norm: bool = False) -> ArchSpec:
    stages = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}"
        fields = [f.strip() for f in line.split("|")]
        if len(fields) != 6:
            raise ArchError([f"{where}: expected 6 fields (input | operator | r | c | n | s), got {len(fields)}"])
        h, w, c_in = _parse_input(fields[0], where)
        op_key = re.sub(r"\s+", " ", fields[1].lower().replace("×", "x"))
        if op_key not in OPERATORS:
            raise ArchError([f"{where}: unknown operator {fields[1]!r}"])
        operator = OPERATORS[op_key]
        c = num_classes if fields[3].strip().lower() == "k" else _parse_opt_int(fields[3], where, "c")
        n = _parse_opt_int(fields[4], where, "n")
        stages.append(StageSpec(h, w, c_in, operator, _parse_opt_int(fields[2], where, "r"), c, n,
                                _parse_opt_int(fields[5], where, "s")))
    return ArchSpec(tuple(stages), num_classes, attention, name, coeff_norm).validate()


def load_arch(path, num_classes: int = 1000, attention: str = "kao_kv", coeff_norm: bool = False) -> ArchSpec:
    path = Path(path)
    return parse_arch(path.read_text(), num_classes, attention, path.stem, coeff_norm)


def builtin_arch(name: str, num_classes: int = 1000, attention: str = "kao_kv", coeff_norm: bool = False) -> ArchSpec:
    """Load one of the shipped arch files: ``kanet``, ``mobilenetv2`` or ``toy``."""
    text = resources.files("kronattn").joinpath("data", f"{name}.arch").read_text()
    return parse_arch(text, num_classes, attention, name, coeff_norm)


def validate_arch(arch: ArchSpec) -> None:
    problems = []
    stages = arch.stages
    if not stages:
        raise ArchError(["architecture has no stages"])
    if arch.attention not in ATTENTION_KINDS:
        problems.append(f"unknown attention kind {arch.attention!r}")
    if stages[0].operator != "stem":
        problems.append(f"stage 1 ({DISPLAY[stages[0].operator]}): the first stage must be Conv2D 3x3")
    if stages[-1].operator != "classifier":
        problems.append(f"stage {len(stages)}: the last stage must be AvgPool + FC")
    prev = None
    for i, st in enumerate(stages, 1):
        label = f"stage {i} ({st.display_input} {DISPLAY[st.operator]})"
        if prev is not None and (st.h, st.w, st.c_in) != prev:
            problems.append(f"{label}: input {st.h}x{st.w}x{st.c_in} does not match previous output "
                            f"{prev[0]}x{prev[1]}x{prev[2]}")
        # an invalid stage has no well-defined output, so chaining restarts after it
        prev = None
        if st.n is None or st.n < 1:
            problems.append(f"{label}: n must be a positive integer")
            continue
        if st.c is None or st.c < 1:
            problems.append(f"{label}: c must be a positive integer")
            continue
        if st.operator == "classifier":
            if st.s is not None:
                problems.append(f"{label}: classifier takes no stride")
        elif st.s not in (1, 2):
            problems.append(f"{label}: stride must be 1 or 2, got {st.s}")
            continue
        if st.operator in ("base", "base_skip", "attn", "attn_skip"):
            if st.r is None or st.r < 1:
                problems.append(f"{label}: expansion factor r must be a positive integer")
            elif st.operator in ("attn", "attn_skip") and st.r < 2:
                problems.append(f"{label}: attention modules need r >= 2")
        elif st.r is not None:
            problems.append(f"{label}: r only applies to modules")
        if st.operator in ("stem", "head", "classifier") and st.n != 1:
            problems.append(f"{label}: n must be 1")
        prev = st.output()
    if problems:
        raise ArchError(problems)
