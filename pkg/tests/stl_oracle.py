"""Independent reference evaluator and random instance generator for STL tests.

The evaluator follows the inductive definitions point by point (loops over
grid indices, no sliding windows, no shared code with the monitor).
"""
import math

import numpy as np

from cpsfalsify.stl import (And, Const, Eventually, Globally, Interval, Not, Or, Pred, Trace,
                            Until)


class OutOfRange(Exception):
    pass


def _offsets(iv, dt):
    lo = math.ceil(iv.lo / dt - 1e-9)
    hi = math.floor(iv.hi / dt + 1e-9)
    return lo, hi


def _window(iv, trace, k):
    lo, hi = _offsets(iv, trace.dt)
    if k + hi >= trace.n:
        raise OutOfRange
    return range(k + lo, k + hi + 1)


def _pred_value(p, trace, k):
    return p.constant + sum(c * trace[name][k] for name, c in p.terms)


def holds(phi, trace, k):
    if isinstance(phi, Pred):
        v = _pred_value(phi, trace, k)
        return v < 0 if phi.strict else v <= 0
    if isinstance(phi, Const):
        return phi.value
    if isinstance(phi, Not):
        return not holds(phi.arg, trace, k)
    if isinstance(phi, And):
        a, b = holds(phi.left, trace, k), holds(phi.right, trace, k)
        return a and b
    if isinstance(phi, Or):
        a, b = holds(phi.left, trace, k), holds(phi.right, trace, k)
        return a or b
    if isinstance(phi, Eventually):
        return any([holds(phi.arg, trace, j) for j in _window(phi.interval, trace, k)])
    if isinstance(phi, Globally):
        return all([holds(phi.arg, trace, j) for j in _window(phi.interval, trace, k)])
    if isinstance(phi, Until):
        found = False
        for j in _window(phi.interval, trace, k):
            if holds(phi.right, trace, j) and all(holds(phi.left, trace, i)
                                                  for i in range(k, j + 1)):
                found = True
        return found
    raise TypeError(phi)


def rho(phi, trace, k):
    if isinstance(phi, Pred):
        return -_pred_value(phi, trace, k)
    if isinstance(phi, Const):
        return math.inf if phi.value else -math.inf
    if isinstance(phi, Not):
        return -rho(phi.arg, trace, k)
    if isinstance(phi, And):
        return min(rho(phi.left, trace, k), rho(phi.right, trace, k))
    if isinstance(phi, Or):
        return max(rho(phi.left, trace, k), rho(phi.right, trace, k))
    if isinstance(phi, Eventually):
        return max(rho(phi.arg, trace, j) for j in _window(phi.interval, trace, k))
    if isinstance(phi, Globally):
        return min(rho(phi.arg, trace, j) for j in _window(phi.interval, trace, k))
    if isinstance(phi, Until):
        return max(min(rho(phi.right, trace, j),
                       min(rho(phi.left, trace, i) for i in range(k, j + 1)))
                   for j in _window(phi.interval, trace, k))
    raise TypeError(phi)


SIGNALS = ("x", "y", "z")


def random_trace(rng, n=None, dt=None):
    n = int(rng.integers(2, 21)) if n is None else n
    dt = float(rng.choice([1.0, 0.5])) if dt is None else dt
    # small integer grid makes ties (and so strict/non-strict differences) common
    return Trace({s: rng.integers(-3, 4, size=n).astype(float) for s in SIGNALS}, dt)


def random_pred(rng):
    k = int(rng.integers(1, 3))
    names = rng.choice(SIGNALS, size=k, replace=False)
    terms = tuple((str(nm), float(rng.choice([-2.0, -1.0, 0.5, 1.0, 3.0]))) for nm in names)
    return Pred(terms, float(rng.integers(-3, 4)), bool(rng.integers(0, 2)))


def random_interval(rng, budget, dt):
    """An interval with hi <= budget on the dt grid, or None if none fits."""
    steps = int(math.floor(budget / dt + 1e-9))
    if steps < 1:
        return None
    hi = int(rng.integers(1, steps + 1))
    lo = int(rng.integers(0, hi))
    return Interval(lo * dt, hi * dt)


def random_formula(rng, depth, budget, dt):
    """Random formula of depth <= ``depth`` whose horizon is <= ``budget``."""
    if depth == 0 or rng.random() < 0.2:
        return Const(bool(rng.integers(0, 2))) if rng.random() < 0.05 else random_pred(rng)
    kind = int(rng.integers(0, 6))
    if kind == 0:
        return Not(random_formula(rng, depth - 1, budget, dt))
    if kind in (1, 2):
        cls = And if kind == 1 else Or
        return cls(random_formula(rng, depth - 1, budget, dt),
                   random_formula(rng, depth - 1, budget, dt))
    iv = random_interval(rng, budget, dt)
    if iv is None:
        return random_pred(rng)
    rest = budget - iv.hi
    if kind == 3:
        return Eventually(iv, random_formula(rng, depth - 1, rest, dt))
    if kind == 4:
        return Globally(iv, random_formula(rng, depth - 1, rest, dt))
    return Until(iv, random_formula(rng, depth - 1, rest, dt),
                 random_formula(rng, depth - 1, rest, dt))


def random_case(rng, max_depth=4):
    trace = random_trace(rng)
    return random_formula(rng, max_depth, trace.duration, trace.dt), trace
