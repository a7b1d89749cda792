"""Simplified Swarm Optimization of grid parameters.

A candidate is ``x = (upper bound, lower bound, n_upper, n_lower)``. Each
generation, every variable of every solution draws ``rho ~ U[0, 1)`` and takes
the gbest value (``rho < cg``), its own pbest value (``cg <= rho < cp``), keeps
its current value (``cp <= rho < cw``) or a fresh uniform draw from its bounds
(``rho >= cw``). Candidates whose ladder violates the fee-spacing constraint
are resampled on the offending variables; if that fails they score ``-inf``
and are never selected as pbest or gbest.

All random draws of a generation happen sequentially in the parent before the
fitness evaluations, so results are reproducible for a seed regardless of how
the evaluations are scheduled.
"""

from __future__ import annotations

import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from flexgrid._rng import make_rng
from flexgrid.backtest import final_wealth
from flexgrid.errors import InfeasibleError
from flexgrid.grid_model import GridKind, GridSpec, anchored_spec, build_ladder, first_spacing_violation
from flexgrid.market_data import PriceSeries

logger = logging.getLogger(__name__)

INFEASIBLE = -math.inf
N_VAR = 4
# Variable indices in the encoded solution.
UPPER, LOWER, N_UPPER, N_LOWER = range(N_VAR)


@dataclass(frozen=True)
class BoundsProfile:
    """Box bounds: price bounds as multiples of the anchor, counts as integers.

    The integer upper limit is configuration; the closed-form expression
    ``[P_0 * 100 / (max P_x * 1.3)] - 10`` does not give usable counts at
    index price scales, so ``counts`` defaults to ``(10, 50)``.
    """

    name: str
    upper: tuple = (1.05, 1.30)
    lower: tuple = (0.70, 0.95)
    counts: tuple = (10, 50)

    def __post_init__(self):
        lo, hi = self.upper
        if not 1.0 < lo < hi:
            raise ValueError("upper-bound multipliers must satisfy 1 < lo < hi")
        lo, hi = self.lower
        if not 0.0 < lo < hi < 1.0:
            raise ValueError("lower-bound multipliers must satisfy 0 < lo < hi < 1")
        lo, hi = self.counts
        if not 1 <= lo <= hi or int(lo) != lo or int(hi) != hi:
            raise ValueError("count bounds must be integers with 1 <= lo <= hi")

    def box(self, anchor: float) -> tuple[np.ndarray, np.ndarray]:
        lb = np.array([self.upper[0] * anchor, self.lower[0] * anchor, self.counts[0], self.counts[0]], dtype=float)
        ub = np.array([self.upper[1] * anchor, self.lower[1] * anchor, self.counts[1], self.counts[1]], dtype=float)
        return lb, ub

    def contains(self, spec: GridSpec, rtol: float = 1e-12) -> bool:
        P0 = spec.anchor
        slack = rtol * P0
        return (
            self.upper[0] * P0 - slack <= spec.upper <= self.upper[1] * P0 + slack
            and self.lower[0] * P0 - slack <= spec.lower <= self.lower[1] * P0 + slack
            and self.counts[0] <= spec.n_upper <= self.counts[1]
            and self.counts[0] <= spec.n_lower <= self.counts[1]
        )

    def to_dict(self) -> dict:
        return {"name": self.name, "upper": list(self.upper), "lower": list(self.lower), "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundsProfile":
        return cls(d["name"], tuple(d["upper"]), tuple(d["lower"]), tuple(d["counts"]))


PROFILE_1 = BoundsProfile("profile-1", (1.05, 1.30), (0.70, 0.95))
PROFILE_2 = BoundsProfile("profile-2", (1.05, 1.50), (0.50, 0.95))
PROFILES = {"1": PROFILE_1, "2": PROFILE_2, "profile-1": PROFILE_1, "profile-2": PROFILE_2}


@dataclass(frozen=True)
class SsoConfig:
    """SSO settings.

    ``choices`` optionally restricts each variable to a finite set (price
    bounds given as anchor multiples, counts as integers); fresh draws are
    then uniform over the set instead of over the box.
    """

    cg: float = 0.5
    cp: float = 0.6
    cw: float = 0.7
    n_sol: int = 100
    n_gen: int = 20
    n_run: int = 10
    profile: BoundsProfile = PROFILE_1
    kind: GridKind = GridKind.FLEXIBLE
    seed: int = 0
    repair_attempts: int = 50
    choices: Optional[tuple] = None
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", GridKind(self.kind))
        if not 0.0 <= self.cg <= self.cp <= self.cw <= 1.0:
            raise ValueError("need 0 <= cg <= cp <= cw <= 1")
        if min(self.n_sol, self.n_gen, self.n_run) < 1:
            raise ValueError("n_sol, n_gen and n_run must be >= 1")
        if self.repair_attempts < 0:
            raise ValueError("repair_attempts must be non-negative")
        if self.choices is not None and len(self.choices) != N_VAR:
            raise ValueError("choices needs one value set per variable")

    def to_dict(self) -> dict:
        return {
            "cg": self.cg,
            "cp": self.cp,
            "cw": self.cw,
            "n_sol": self.n_sol,
            "n_gen": self.n_gen,
            "n_run": self.n_run,
            "profile": self.profile.to_dict(),
            "kind": self.kind.value,
            "seed": self.seed,
            "repair_attempts": self.repair_attempts,
            "choices": None if self.choices is None else [list(c) for c in self.choices],
        }


class SearchSpace:
    """Per-anchor variable domains derived from a config."""

    def __init__(self, config: SsoConfig, anchor: float):
        self.anchor = anchor
        self.lb, self.ub = config.profile.box(anchor)
        self.choices = None
        if config.choices is not None:
            scale = (anchor, anchor, 1.0, 1.0)
            self.choices = [np.array(sorted(c), dtype=float) * s for c, s in zip(config.choices, scale)]
            self.lb = np.array([c[0] for c in self.choices])
            self.ub = np.array([c[-1] for c in self.choices])

    def draw(self, j: int, rng: np.random.Generator) -> float:
        if self.choices is not None:
            return float(self.choices[j][rng.integers(len(self.choices[j]))])
        if j >= N_UPPER:
            return float(rng.integers(int(self.lb[j]), int(self.ub[j]) + 1))
        return float(rng.uniform(self.lb[j], self.ub[j]))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.empty((n, N_VAR))
        for i in range(n):
            for j in range(N_VAR):
                out[i, j] = self.draw(j, rng)
        return out

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        integral = np.all(x[N_UPPER:] == np.round(x[N_UPPER:]))
        return bool(integral and np.all(x >= self.lb) and np.all(x <= self.ub))


@dataclass(frozen=True)
class SsoSolution:
    x: tuple
    fitness: float
    feasible: bool

    @property
    def upper(self) -> float:
        return self.x[UPPER]

    @property
    def lower(self) -> float:
        return self.x[LOWER]

    @property
    def n_upper(self) -> int:
        return int(self.x[N_UPPER])

    @property
    def n_lower(self) -> int:
        return int(self.x[N_LOWER])

    def spec(self, anchor: float, kind: GridKind = GridKind.FLEXIBLE) -> GridSpec:
        return decode(self.x, anchor, kind)

    def to_dict(self) -> dict:
        return {
            "upper": self.upper,
            "lower": self.lower,
            "n_upper": self.n_upper,
            "n_lower": self.n_lower,
            "fitness": self.fitness,
            "feasible": self.feasible,
        }


def decode(x, anchor: float, kind: GridKind = GridKind.FLEXIBLE) -> GridSpec:
    """Grid spec encoded by ``x``.

    Flexible grids use ``x`` directly. Equal-distance and equal-ratio grids
    keep the upper bound and total count and move the lower bound so the
    anchor lands on a line (see ``anchored_spec``).
    """
    kind = GridKind(kind)
    ul, ll, nu, nl = float(x[0]), float(x[1]), int(round(x[2])), int(round(x[3]))
    if kind is GridKind.FLEXIBLE:
        return GridSpec(kind, ul, ll, nu, nl, anchor)
    return anchored_spec(kind, anchor, ul, ll, nu + nl)


def _violations(x, anchor: float, fee: float, kind: GridKind, profile: Optional[BoundsProfile]) -> Optional[tuple]:
    """Variables to resample, or None when ``x`` is feasible."""
    try:
        spec = decode(x, anchor, kind)
        ladder = build_ladder(spec)
    except InfeasibleError:
        return tuple(range(N_VAR))
    i = first_spacing_violation(ladder.lines, fee)
    if i is not None:
        if kind is not GridKind.FLEXIBLE:
            return tuple(range(N_VAR))
        return (LOWER, N_LOWER) if i < ladder.anchor_index else (UPPER, N_UPPER)
    if kind is not GridKind.FLEXIBLE and profile is not None and not profile.contains(spec):
        return tuple(range(N_VAR))
    return None


def is_feasible(x, anchor: float, fee: float, kind: GridKind = GridKind.FLEXIBLE, profile: Optional[BoundsProfile] = None) -> bool:
    return _violations(x, anchor, fee, GridKind(kind), profile) is None


def repair(
    x,
    anchor: float,
    fee: float,
    space: SearchSpace,
    rng: np.random.Generator,
    kind: GridKind = GridKind.FLEXIBLE,
    attempts: int = 50,
    profile: Optional[BoundsProfile] = None,
) -> tuple[np.ndarray, bool]:
    """Resample offending variables until the ladder passes the spacing check.

    Returns the (possibly modified) candidate and whether it is feasible.
    ``x`` itself is not mutated.
    """
    x = np.array(x, dtype=float)
    kind = GridKind(kind)
    for attempt in range(attempts + 1):
        bad = _violations(x, anchor, fee, kind, profile)
        if bad is None:
            return x, True
        if attempt == attempts:
            break
        for j in bad:
            x[j] = space.draw(j, rng)
    return x, False


def evaluate_fitness(
    x,
    window: PriceSeries,
    capital: float,
    fee: float = 0.0,
    kind: GridKind = GridKind.FLEXIBLE,
    profile: Optional[BoundsProfile] = None,
) -> float:
    """Settled final wealth of the grid encoded by ``x`` over ``window``; ``-inf`` when infeasible."""
    anchor = float(window.prices[0])
    if not is_feasible(x, anchor, fee, kind, profile):
        return INFEASIBLE
    return final_wealth(window, decode(x, anchor, kind), capital, fee)


@dataclass(frozen=True)
class TraceRow:
    run: int
    generation: int
    gbest_fitness: float
    x: tuple


@dataclass
class OptimizationResult:
    best: SsoSolution
    trace: list = field(default_factory=list)
    run_best: list = field(default_factory=list)
    anchor: float = 0.0
    kind: GridKind = GridKind.FLEXIBLE
    evaluations: int = 0

    def spec(self) -> GridSpec:
        return self.best.spec(self.anchor, self.kind)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        buf.write("run,generation,gbest_fitness,x1,x2,x3,x4\n")
        for r in self.trace:
            x1, x2, x3, x4 = r.x
            buf.write(f"{r.run},{r.generation},{r.gbest_fitness!r},{x1!r},{x2!r},{int(x3)},{int(x4)}\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "best": self.best.to_dict(),
            "anchor": self.anchor,
            "kind": self.kind.value,
            "spec": self.spec().to_dict(),
            "run_best": [s.to_dict() for s in self.run_best],
            "evaluations": self.evaluations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# Worker-side state for process-pool fitness evaluation.
_WORKER: dict = {}


def _worker_init(window, capital, fee, kind, profile):
    _WORKER.update(window=window, capital=capital, fee=fee, kind=kind, profile=profile)


def _worker_eval(x):
    w = _WORKER
    return evaluate_fitness(x, w["window"], w["capital"], w["fee"], w["kind"], w["profile"])


class _Evaluator:
    """Memoized fitness over one window; optionally fans out to processes."""

    def __init__(self, window, capital, fee, kind, profile, workers=1):
        self.args = (window, capital, fee, kind, profile)
        self.cache: dict = {}
        self.count = 0
        self.pool = None
        if workers > 1:
            self.pool = ProcessPoolExecutor(workers, initializer=_worker_init, initargs=self.args)

    def __call__(self, rows: np.ndarray, feasible: Sequence[bool]) -> np.ndarray:
        keys = [tuple(r) for r in rows.tolist()]
        todo = [k for k, ok in zip(keys, feasible) if ok and k not in self.cache]
        todo = list(dict.fromkeys(todo))
        if todo:
            if self.pool is None:
                values = [evaluate_fitness(k, *self.args) for k in todo]
            else:
                values = list(self.pool.map(_worker_eval, todo, chunksize=max(1, len(todo) // 16)))
            self.cache.update(zip(todo, values))
            self.count += len(todo)
        return np.array([self.cache[k] if ok else INFEASIBLE for k, ok in zip(keys, feasible)])

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def init_population(
    config: SsoConfig, anchor: float, fee: float, rng: np.random.Generator, space: Optional[SearchSpace] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random population inside the box, each member repaired.

    Returns the ``(n_sol, 4)`` candidate array and the feasibility mask.

    Raises:
        InfeasibleError: when no member is feasible after repair.
    """
    space = space or SearchSpace(config, anchor)
    pop = space.sample(rng, config.n_sol)
    feasible = np.zeros(config.n_sol, dtype=bool)
    profile = _box_profile(config)
    for i in range(config.n_sol):
        pop[i], feasible[i] = repair(pop[i], anchor, fee, space, rng, config.kind, config.repair_attempts, profile)
    if not feasible.any():
        raise InfeasibleError("no feasible grid found in the search box (fee spacing constraint)")
    return pop, feasible


def _box_profile(config: SsoConfig) -> Optional[BoundsProfile]:
    # decoded non-flexible specs can leave the box; flexible specs equal x and stay inside by construction
    return None if config.kind is GridKind.FLEXIBLE else config.profile


def update_solution(x, pbest, gbest, config: SsoConfig, rng: np.random.Generator, space: SearchSpace, rho=None) -> np.ndarray:
    """One SSO step for a single solution (integer variables stay integral)."""
    x = np.asarray(x, dtype=float)
    rho = rng.random(N_VAR) if rho is None else np.asarray(rho, dtype=float)
    out = x.copy()
    for j in range(N_VAR):
        if rho[j] < config.cg:
            out[j] = gbest[j]
        elif rho[j] < config.cp:
            out[j] = pbest[j]
        elif rho[j] < config.cw:
            out[j] = x[j]
        else:
            out[j] = space.draw(j, rng)
    out[N_UPPER:] = np.round(out[N_UPPER:])
    return out


def optimize(
    window: PriceSeries,
    capital: float,
    fee: float = 0.0,
    config: SsoConfig = SsoConfig(),
    observer=None,
) -> OptimizationResult:
    """Search the grid parameters that maximize settled wealth over ``window``.

    Runs ``config.n_run`` independent runs of ``config.n_gen`` generations and
    returns the best solution over all runs together with the per-generation
    gbest trace.

    Args:
        observer: optional ``observer(run, generation, X, fitness, pbest_fitness)``
            called after each generation's bookkeeping (generation ``-1`` is the
            initial population). Arrays are passed as copies.
    """
    if len(window) < 2:
        raise ValueError("window needs at least two periods")
    anchor = float(window.prices[0])
    rng = make_rng(config.seed)
    space = SearchSpace(config, anchor)
    profile = _box_profile(config)
    evaluate = _Evaluator(window, capital, fee, config.kind, profile, config.workers)
    trace: list[TraceRow] = []
    run_best: list[SsoSolution] = []
    try:
        for run in range(config.n_run):
            X, feasible = init_population(config, anchor, fee, rng, space)
            fit = evaluate(X, feasible)
            pbest, pfit = X.copy(), fit.copy()
            g = int(np.argmax(pfit))
            gbest, gfit = pbest[g].copy(), float(pfit[g])
            if observer is not None:
                observer(run, -1, X.copy(), fit.copy(), pfit.copy())
            for gen in range(config.n_gen):
                rho = rng.random((config.n_sol, N_VAR))
                for i in range(config.n_sol):
                    cand = update_solution(X[i], pbest[i], gbest, config, rng, space, rho=rho[i])
                    X[i], feasible[i] = repair(cand, anchor, fee, space, rng, config.kind, config.repair_attempts, profile)
                fit = evaluate(X, feasible)
                better = fit > pfit
                pbest[better] = X[better]
                pfit[better] = fit[better]
                g = int(np.argmax(pfit))
                if pfit[g] > gfit:
                    gbest, gfit = pbest[g].copy(), float(pfit[g])
                trace.append(TraceRow(run, gen, gfit, tuple(gbest.tolist())))
                if observer is not None:
                    observer(run, gen, X.copy(), fit.copy(), pfit.copy())
            run_best.append(SsoSolution(tuple(gbest.tolist()), gfit, True))
    finally:
        evaluate.close()
    best = max(run_best, key=lambda s: s.fitness)
    return OptimizationResult(best, trace, run_best, anchor, config.kind, evaluate.count)


def with_seed(config: SsoConfig, seed: int) -> SsoConfig:
    return replace(config, seed=seed)
