"""STL abstract syntax and the canonical printer."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple, Union


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError("interval bounds must be finite")
        if not 0 <= self.lo < self.hi:
            raise ValueError(f"interval [{self.lo}, {self.hi}] must satisfy 0 <= lo < hi")


@dataclass(frozen=True)
class Pred:
    """``sum(coef * signal) + constant < 0`` (strict) or ``<= 0``."""

    terms: Tuple[Tuple[str, float], ...]
    constant: float
    strict: bool

    @property
    def signals(self) -> frozenset:
        return frozenset(name for name, _ in self.terms)


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Eventually:
    interval: Interval
    arg: "Formula"


@dataclass(frozen=True)
class Globally:
    interval: Interval
    arg: "Formula"


@dataclass(frozen=True)
class Until:
    interval: Interval
    left: "Formula"
    right: "Formula"


Formula = Union[Pred, Const, Not, And, Or, Eventually, Globally, Until]


def signals_of(phi: Formula) -> frozenset:
    if isinstance(phi, Pred):
        return phi.signals
    if isinstance(phi, Const):
        return frozenset()
    if isinstance(phi, (Not, Eventually, Globally)):
        return signals_of(phi.arg)
    return signals_of(phi.left) | signals_of(phi.right)


def horizon(phi: Formula) -> float:
    """Time span past ``t`` that evaluating ``phi`` at ``t`` looks at."""
    if isinstance(phi, (Pred, Const)):
        return 0.0
    if isinstance(phi, Not):
        return horizon(phi.arg)
    if isinstance(phi, (And, Or)):
        return max(horizon(phi.left), horizon(phi.right))
    if isinstance(phi, (Eventually, Globally)):
        return phi.interval.hi + horizon(phi.arg)
    return phi.interval.hi + max(horizon(phi.left), horizon(phi.right))


def depth(phi: Formula) -> int:
    if isinstance(phi, (Pred, Const)):
        return 0
    if isinstance(phi, (Not, Eventually, Globally)):
        return 1 + depth(phi.arg)
    return 1 + max(depth(phi.left), depth(phi.right))


def fmt_number(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _linear(terms) -> str:
    if not terms:
        return "0"
    parts = []
    for i, (name, coef) in enumerate(terms):
        neg = math.copysign(1.0, coef) < 0
        mag = abs(coef)
        body = name if mag == 1.0 else f"{fmt_number(mag)}*{name}"
        if i == 0:
            parts.append(("-" if neg else "") + body)
        else:
            parts.append(("- " if neg else "+ ") + body)
    return " ".join(parts)


def _interval(iv: Interval) -> str:
    return f"[{fmt_number(iv.lo)},{fmt_number(iv.hi)}]"


def _wrap(phi: Formula) -> str:
    return f"({to_text(phi)})"


def to_text(phi: Formula) -> str:
    """Print ``phi`` in the concrete syntax accepted by :func:`parse_stl`."""
    if isinstance(phi, Pred):
        op = "<" if phi.strict else "<="
        return f"{_linear(phi.terms)} {op} {fmt_number(-phi.constant)}"
    if isinstance(phi, Const):
        return "true" if phi.value else "false"
    if isinstance(phi, Not):
        if isinstance(phi.arg, Pred):
            p = phi.arg
            op = ">=" if p.strict else ">"
            return f"{_linear(p.terms)} {op} {fmt_number(-p.constant)}"
        return f"!{_wrap(phi.arg)}"
    if isinstance(phi, And):
        return f"{_wrap(phi.left)} & {_wrap(phi.right)}"
    if isinstance(phi, Or):
        return f"{_wrap(phi.left)} | {_wrap(phi.right)}"
    if isinstance(phi, Eventually):
        return f"F{_interval(phi.interval)}{_wrap(phi.arg)}"
    if isinstance(phi, Globally):
        return f"G{_interval(phi.interval)}{_wrap(phi.arg)}"
    if isinstance(phi, Until):
        return f"{_wrap(phi.left)} U{_interval(phi.interval)} {_wrap(phi.right)}"
    raise TypeError(f"not a formula: {phi!r}")
