"""Offline monitoring of sampled traces.

Signals are piecewise constant on a uniform grid starting at t=0 and all
temporal quantifiers range over grid points. A window that reaches past the
last sample is an error rather than a truncated answer.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np

from .. import kernels
from .formula import (And, Const, Eventually, Formula, Globally, Interval, Not, Or, Pred,
                      Until, signals_of)

GRID_TOL = 1e-9


class STLDomainError(ValueError):
    pass


@dataclass(frozen=True)
class Trace:
    signals: Mapping[str, np.ndarray]
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        sigs: Dict[str, np.ndarray] = {}
        lengths = set()
        for name, v in self.signals.items():
            arr = np.asarray(v, dtype=np.float64).copy()
            arr.setflags(write=False)
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise ValueError(f"signal {name!r} must be a finite 1-D array")
            sigs[name] = arr
            lengths.add(arr.shape[0])
        if len(lengths) != 1 or 0 in lengths:
            raise ValueError("all signals must share one non-empty grid")
        object.__setattr__(self, "signals", sigs)

    @property
    def n(self) -> int:
        return next(iter(self.signals.values())).shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n) * self.dt

    @property
    def duration(self) -> float:
        return (self.n - 1) * self.dt

    def __getitem__(self, name: str) -> np.ndarray:
        return self.signals[name]

    def equals(self, other: "Trace") -> bool:
        return (self.dt == other.dt and list(self.signals) == list(other.signals)
                and all(np.array_equal(self[k], other[k]) for k in self.signals))


def save_trace_csv(trace: Trace, path) -> None:
    names = list(trace.signals)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + names)
        for i, t in enumerate(trace.times):
            w.writerow([repr(float(t))] + [repr(float(trace[k][i])) for k in names])


def load_trace_csv(path) -> Trace:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0].strip() != "time":
        raise ValueError(f"{path}: first column must be 'time'")
    names = [h.strip() for h in rows[0][1:]]
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    if data.shape[0] < 2:
        raise ValueError(f"{path}: need at least two samples")
    t = data[:, 0]
    dt = t[1] - t[0]
    if abs(t[0]) > GRID_TOL or not np.all(np.abs(np.diff(t) - dt) <= GRID_TOL):
        raise ValueError(f"{path}: time column must start at 0 with uniform spacing")
    return Trace({n: data[:, i + 1] for i, n in enumerate(names)}, float(dt))


def interval_offsets(iv: Interval, dt: float) -> tuple:
    lo = math.ceil(iv.lo / dt - GRID_TOL)
    hi = math.floor(iv.hi / dt + GRID_TOL)
    if lo > hi:
        raise STLDomainError(f"interval [{iv.lo}, {iv.hi}] contains no grid point at dt={dt}")
    return lo, hi


def _pred_values(p: Pred, trace: Trace) -> np.ndarray:
    val = np.full(trace.n, float(p.constant))
    for name, coef in p.terms:
        val = val + coef * trace[name]
    return val


def _signal(phi: Formula, trace: Trace, boolean: bool) -> np.ndarray:
    # boolean mode carries truth values as 0.0 / 1.0 so min/max are and/or
    if isinstance(phi, Pred):
        v = _pred_values(phi, trace)
        if boolean:
            return ((v < 0) if phi.strict else (v <= 0)).astype(np.float64)
        return -v
    if isinstance(phi, Const):
        if boolean:
            return np.full(trace.n, 1.0 if phi.value else 0.0)
        return np.full(trace.n, np.inf if phi.value else -np.inf)
    if isinstance(phi, Not):
        s = _signal(phi.arg, trace, boolean)
        return 1.0 - s if boolean else -s
    if isinstance(phi, (And, Or)):
        a = _signal(phi.left, trace, boolean)
        b = _signal(phi.right, trace, boolean)
        m = min(len(a), len(b))
        op = np.minimum if isinstance(phi, And) else np.maximum
        return op(a[:m], b[:m])
    if isinstance(phi, (Globally, Eventually)):
        s = _signal(phi.arg, trace, boolean)
        lo, hi = interval_offsets(phi.interval, trace.dt)
        fn = kernels.window_min if isinstance(phi, Globally) else kernels.window_max
        return fn(s, lo, hi)
    if isinstance(phi, Until):
        a = _signal(phi.left, trace, boolean)
        b = _signal(phi.right, trace, boolean)
        lo, hi = interval_offsets(phi.interval, trace.dt)
        return kernels.until(a, b, lo, hi)
    raise TypeError(f"not a formula: {phi!r}")


def _bind(phi: Formula, trace: Trace) -> None:
    missing = signals_of(phi) - set(trace.signals)
    if missing:
        raise KeyError(f"unknown signal(s): {', '.join(sorted(missing))}")


def _index(trace: Trace, t: float) -> int:
    k = int(round(t / trace.dt))
    if abs(k * trace.dt - t) > GRID_TOL or not 0 <= k < trace.n:
        raise STLDomainError(f"t={t} is not a grid point of the trace domain "
                             f"[0, {trace.duration}]")
    return k


def _at(phi: Formula, trace: Trace, t: float, boolean: bool) -> float:
    _bind(phi, trace)
    k = _index(trace, t)
    sig = _signal(phi, trace, boolean)
    if k >= len(sig):
        raise STLDomainError(f"formula windows at t={t} extend past the trace end "
                             f"({trace.duration})")
    return float(sig[k])


def robustness_signal(phi: Formula, trace: Trace) -> np.ndarray:
    """Robustness at every grid point where all windows fit inside the trace."""
    _bind(phi, trace)
    return _signal(phi, trace, False)


def eval_qualitative(phi: Formula, trace: Trace, t: float = 0.0) -> bool:
    return _at(phi, trace, t, True) == 1.0


def eval_robustness(phi: Formula, trace: Trace, t: float = 0.0) -> float:
    return _at(phi, trace, t, False)


def satisfies(trace: Trace, phi: Formula) -> bool:
    return eval_qualitative(phi, trace, 0.0)
