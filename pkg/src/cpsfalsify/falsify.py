"""Compositional falsification of the braking loop.

The system-level verifier bounds the effect of the perception component
with two abstractions, a perfect and a completely wrong classifier. Their
validity domains, computed on a finite grid over the semantic modification
space, bracket the environments whose outcome depends on perception (the
region of uncertainty, ROU). The component-level analyzer samples that
region with a Halton sequence, and every misclassification it finds is
replayed in closed loop to see whether it breaks the safety property.

All set-valued claims (validity domains, "proved") are relative to the
grid cell centres.
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .aebs import (COW, NOT_COW, CompletelyWrong, EnvConfig, Perfect, SensorMode, SimConfig,
                   VehicleState, as_sensor, classify_scene, impact_speed, render_scene,
                   simulate)
from .stl import Formula, Trace, eval_qualitative, eval_robustness

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

VIOLATION_FOUND = "violation_found"
PROVED_ON_GRID = "proved_on_grid"
BUDGET_EXHAUSTED = "budget_exhausted"

Cell = Tuple[int, ...]


class GridMismatchError(ValueError):
    pass


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % p for p in range(2, int(n ** 0.5) + 1))


def first_primes(k: int) -> List[int]:
    return list(itertools.islice((p for p in itertools.count(2) if is_prime(p)), k))


def halton_sample(dim_count: int, n: int, bases: Optional[Sequence[int]] = None,
                  start: int = 1) -> np.ndarray:
    """Rows ``start .. start+n-1`` of the Halton sequence, shape (n, dim_count)."""
    if n < 1 or dim_count < 1:
        raise ValueError("need n >= 1 and at least one dimension")
    bases = list(bases) if bases is not None else first_primes(dim_count)
    if len(bases) != dim_count:
        raise ValueError(f"{len(bases)} bases for {dim_count} dimensions")
    if len(set(bases)) != len(bases) or not all(is_prime(int(b)) for b in bases):
        raise ValueError(f"bases must be distinct primes, got {bases}")
    idx = np.arange(start, start + n, dtype=np.int_)
    return np.column_stack([kernels.radical_inverse(idx, int(b)) for b in bases])


@dataclass(frozen=True)
class Dim:
    name: str
    lo: float
    hi: float
    resolution: int = 4

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"dimension {self.name}: need lo < hi")
        if self.resolution < 1:
            raise ValueError(f"dimension {self.name}: resolution must be >= 1")


@dataclass(frozen=True)
class ModSpace:
    """Box of semantic modifications over :class:`EnvConfig` fields.

    Fields not listed in ``dims`` take their value from ``base``. A dimension
    named ``obstacle_present`` is read as a boolean: values >= 0.5 are True.
    """

    dims: Tuple[Dim, ...]
    base: EnvConfig = EnvConfig()

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        names = [d.name for d in self.dims]
        fields = {f.name for f in dataclasses.fields(EnvConfig)}
        if len(set(names)) != len(names) or not set(names) <= fields:
            raise ValueError(f"dimension names must be distinct EnvConfig fields: {names}")

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(d.resolution for d in self.dims)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    def cells(self) -> Iterator[Cell]:
        return itertools.product(*(range(r) for r in self.shape))

    def cell_center(self, cell: Cell) -> np.ndarray:
        return (np.asarray(cell, dtype=np.float64) + 0.5) / np.asarray(self.shape)

    def cell_of(self, point) -> Cell:
        p = np.asarray(point, dtype=np.float64)
        idx = np.floor(p * np.asarray(self.shape)).astype(int)
        return tuple(int(i) for i in np.clip(idx, 0, np.asarray(self.shape) - 1))

    def concretize(self, point) -> EnvConfig:
        p = np.asarray(point, dtype=np.float64)
        if p.shape != (len(self.dims),) or np.any(p < 0) or np.any(p > 1):
            raise ValueError(f"point {point} is not in the unit cube of dimension "
                             f"{len(self.dims)}")
        values = {}
        for d, u in zip(self.dims, p):
            v = d.lo + float(u) * (d.hi - d.lo)
            values[d.name] = v >= 0.5 if d.name == "obstacle_present" else v
        return dataclasses.replace(self.base, **values)

    def to_dict(self) -> dict:
        return {"dims": [dataclasses.asdict(d) for d in self.dims],
                "base": self.base.to_dict()}


def concretize(point, space: ModSpace) -> EnvConfig:
    return space.concretize(point)


@dataclass(frozen=True)
class CellSet:
    shape: Tuple[int, ...]
    cells: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(self.shape))
        cells = frozenset(tuple(int(i) for i in c) for c in self.cells)
        for c in cells:
            if len(c) != len(self.shape) or any(not 0 <= i < r for i, r in zip(c, self.shape)):
                raise ValueError(f"cell {c} outside grid {self.shape}")
        object.__setattr__(self, "cells", cells)

    @classmethod
    def full(cls, shape) -> "CellSet":
        return cls(shape, frozenset(itertools.product(*(range(r) for r in shape))))

    def _check(self, other: "CellSet") -> None:
        if self.shape != other.shape:
            raise GridMismatchError(f"grids differ: {self.shape} vs {other.shape}")

    def __or__(self, other: "CellSet") -> "CellSet":
        self._check(other)
        return CellSet(self.shape, self.cells | other.cells)

    def __sub__(self, other: "CellSet") -> "CellSet":
        self._check(other)
        return CellSet(self.shape, self.cells - other.cells)

    def __and__(self, other: "CellSet") -> "CellSet":
        self._check(other)
        return CellSet(self.shape, self.cells & other.cells)

    def __le__(self, other: "CellSet") -> bool:
        self._check(other)
        return self.cells <= other.cells

    def __contains__(self, cell) -> bool:
        return tuple(cell) in self.cells

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self) -> Iterator[Cell]:
        return iter(sorted(self.cells))


def compute_validity_domain(mode: SensorMode, space: ModSpace, spec: Formula,
                            sim_cfg: SimConfig = SimConfig()) -> CellSet:
    """Cells whose centre environment satisfies ``spec`` under ``mode``."""
    mode = as_sensor(mode)
    sat = []
    for cell in space.cells():
        env = space.concretize(space.cell_center(cell))
        if eval_qualitative(spec, simulate(env, mode, sim_cfg)):
            sat.append(cell)
    return CellSet(space.shape, frozenset(sat))


def compute_rou(u_plus: CellSet, u_minus: CellSet) -> CellSet:
    return u_plus - u_minus


@dataclass
class ComponentError:
    env: EnvConfig
    cell: Cell
    label: int
    confidence: float
    truth: int


@dataclass
class Analysis:
    errors: List[ComponentError]
    samples: Dict[Cell, int]
    next_index: int


def ground_truth_label(env: EnvConfig) -> int:
    return COW if env.obstacle_present else NOT_COW


def ml_analyze(rou: CellSet, model, space: ModSpace, samples_per_cell: int = 4,
               start_index: int = 1, ground_truth=ground_truth_label) -> Analysis:
    """Halton-sample each ROU cell, classify the initial scene, collect mistakes.

    Sample indices run on from ``start_index`` so consecutive calls keep
    extending one low-discrepancy sequence.
    """
    if len(rou) == 0:
        raise ValueError("region of uncertainty is empty")
    sensor = as_sensor(model)
    shape = np.asarray(space.shape, dtype=np.float64)
    idx = start_index
    errors, samples = [], {}
    for cell in rou:
        units = halton_sample(len(space.dims), samples_per_cell, start=idx)
        idx += samples_per_cell
        samples[cell] = samples_per_cell
        for u in units:
            point = (np.asarray(cell) + u) / shape
            env = space.concretize(point)
            label, conf = classify_scene(sensor, env,
                                         render_scene(env, VehicleState.initial(env)))
            truth = ground_truth(env)
            if label != truth:
                errors.append(ComponentError(env, cell, label, conf, truth))
    return Analysis(errors, samples, idx)


def check_system_level(env: EnvConfig, model, spec: Formula,
                       sim_cfg: SimConfig = SimConfig()) -> tuple:
    """Closed-loop run with the real component: (satisfied, trace, robustness)."""
    trace = simulate(env, as_sensor(model), sim_cfg)
    return eval_qualitative(spec, trace), trace, eval_robustness(spec, trace)


@dataclass
class Counterexample:
    env: EnvConfig
    trace: Trace
    robustness: float
    component_error: bool

    def to_dict(self) -> dict:
        out = self.env.to_dict()
        out.update(robustness=self.robustness, component_error=self.component_error,
                   impact_speed=impact_speed(self.trace))
        return out


@dataclass
class FalsifyReport:
    status: str
    counterexamples: List[Counterexample]
    simulations: int
    rounds: int
    rou_sizes: List[int]
    u_plus: CellSet
    u_minus: CellSet
    rou: CellSet
    space: ModSpace
    component_errors: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status == VIOLATION_FOUND and not any(c.robustness < 0
                                                      for c in self.counterexamples):
            raise AssertionError("violation_found requires a negative-robustness counterexample")

    def to_json(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "status": self.status,
            "grid_relative": True,
            "space": self.space.to_dict(),
            "counterexamples": [c.to_dict() for c in self.counterexamples],
            "stats": {
                "simulations": self.simulations,
                "rounds": self.rounds,
                "rou_sizes": self.rou_sizes,
                "component_errors": self.component_errors,
                "u_plus_size": len(self.u_plus),
                "u_minus_size": len(self.u_minus),
                "grid_cells": self.space.n_cells,
            },
            "metadata": self.metadata,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_cells_csv(self, path) -> None:
        names = [d.name for d in self.space.dims]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"i_{n}" for n in names] + [f"c_{n}" for n in names]
                       + ["u_plus", "u_minus", "rou"])
            for cell in self.space.cells():
                env = self.space.concretize(self.space.cell_center(cell)).to_dict()
                w.writerow(list(cell) + [repr(float(env[n])) for n in names]
                           + [int(cell in self.u_plus), int(cell in self.u_minus),
                              int(cell in self.rou)])


def falsification_loop(model, space: ModSpace, spec: Formula, budget: int,
                       sim_cfg: SimConfig = SimConfig(), samples_per_cell: int = 4,
                       max_rounds: int = 100) -> FalsifyReport:
    """Alternate ML analysis of the ROU with closed-loop checks of its findings.

    A round samples every remaining ROU cell, replays each misclassified
    sample in closed loop, and stops the search on the first round with a
    violation. Cells whose misclassified samples all turned out safe leave
    the ROU. A round with no misclassification at all triggers the final
    step: every cell outside the pessimistic validity domain is checked at
    its centre, yielding either counterexamples or ``proved_on_grid``.
    """
    sensor = as_sensor(model)
    n = space.n_cells
    if budget < 2 * n:
        raise ValueError(f"budget {budget} cannot cover the two abstract analyses "
                         f"({2 * n} simulations)")
    u_plus = compute_validity_domain(Perfect(), space, spec, sim_cfg)
    u_minus = compute_validity_domain(CompletelyWrong(), space, spec, sim_cfg)
    sims = 2 * n
    if not u_minus <= u_plus:
        log.warning("pessimistic validity domain is not contained in the optimistic one")
    rou0 = compute_rou(u_plus, u_minus)
    rou = rou0
    rou_sizes: List[int] = []
    next_index = 1
    n_errors = 0
    rounds = 0

    def report(status, cex):
        return FalsifyReport(status, cex, sims, rounds, rou_sizes, u_plus, u_minus, rou0,
                             space, n_errors)

    while rounds < max_rounds:
        rou_sizes.append(len(rou))
        if len(rou) == 0:
            break
        rounds += 1
        analysis = ml_analyze(rou, sensor, space, samples_per_cell, next_index)
        next_index = analysis.next_index
        n_errors += len(analysis.errors)
        if not analysis.errors:
            break
        cex: List[Counterexample] = []
        unsafe_cells = set()
        checked_cells = set()
        for err in analysis.errors:
            if sims >= budget:
                return report(VIOLATION_FOUND if cex else BUDGET_EXHAUSTED, cex)
            ok, trace, rob = check_system_level(err.env, sensor, spec, sim_cfg)
            sims += 1
            checked_cells.add(err.cell)
            if not ok:
                cex.append(Counterexample(err.env, trace, rob, True))
                unsafe_cells.add(err.cell)
        if cex:
            return report(VIOLATION_FOUND, cex)
        rou = CellSet(rou.shape, rou.cells - (checked_cells - unsafe_cells))
    else:
        return report(BUDGET_EXHAUSTED, [])

    # No component errors remain: decide every cell the pessimistic analysis
    # does not already cover.
    cex = []
    pending = CellSet.full(space.shape) - u_minus
    for cell in pending:
        if sims >= budget:
            return report(VIOLATION_FOUND if cex else BUDGET_EXHAUSTED, cex)
        env = space.concretize(space.cell_center(cell))
        ok, trace, rob = check_system_level(env, sensor, spec, sim_cfg)
        sims += 1
        if not ok:
            label, _ = classify_scene(sensor, env, render_scene(env, VehicleState.initial(env)))
            cex.append(Counterexample(env, trace, rob, label != ground_truth_label(env)))
    return report(VIOLATION_FOUND if cex else PROVED_ON_GRID, cex)
