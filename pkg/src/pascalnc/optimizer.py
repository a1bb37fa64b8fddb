"""Largest coding rate meeting a PLR target, by bisection over the rate grid."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from .codes import CodeSpec, Scheme
from .sim import SimConfig, estimate_plr
from .theory import ChannelSpec, RankModel, achievable_rate, scheme_plr

# Monotonicity violations smaller than this are treated as noise.
MONOTONE_TOL = 1e-12


@dataclass(frozen=True)
class RateGrid:
    """Rates rho(i) = i * rho0 for i = 1..size, snapped to integer K = rho * N.

    ``offset`` shifts every K up by a constant, so codes that need K >= 2
    can use K = 2..N-1 with ``offset=1, size=N-2``.
    """

    N: int
    rho0: float | None = None
    size: int | None = None
    offset: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("block length N must be at least 2")
        rho0 = 1.0 / self.N if self.rho0 is None else float(self.rho0)
        size = (self.N - 1 - self.offset) if self.size is None else int(self.size)
        if rho0 <= 0 or size < 1:
            raise ValueError("grid needs rho0 > 0 and at least one rate")
        object.__setattr__(self, "rho0", rho0)
        object.__setattr__(self, "size", size)
        ks = self.Ks
        if len(set(ks)) != len(ks) or any(k < 1 or k >= self.N for k in ks):
            raise ValueError("grid does not map to distinct K in 1..N-1")
        exact = [self.offset + i * rho0 * self.N for i in range(1, size + 1)]
        if any(abs(k - e) > 1e-9 for k, e in zip(ks, exact)):
            warnings.warn("grid rates rounded to the nearest integer K", stacklevel=2)

    @classmethod
    def for_scheme(cls, scheme: Scheme, N: int) -> "RateGrid":
        """Full grid K = 1..N-1, or K = 2..N-1 for scheduled codes."""
        if scheme.scheduled:
            if N < 3:
                raise ValueError("scheduled codes need N >= 3")
            return cls(N, offset=1)
        return cls(N)

    @property
    def Ks(self) -> list[int]:
        return [self.offset + round(i * self.rho0 * self.N) for i in range(1, self.size + 1)]

    def K(self, i: int) -> int:
        """Generation size at 1-based grid index i."""
        return self.Ks[i - 1]

    def rho(self, i: int) -> float:
        return self.K(i) / self.N


@dataclass
class OptimizerOutcome:
    rho_star: float | None
    K_star: int | None
    plr_at_rho_star: float | None
    R_star: float | None
    iterations: int
    evaluator_kind: str
    N: int = 0
    evaluated: dict = field(default_factory=dict)  # K -> PLR
    warnings: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return self.rho_star is None


def iteration_bound(size: int) -> int:
    """ceil(log2(|grid| - 1)) evaluations, plus one for the final boundary probe."""
    return math.ceil(math.log2(size - 1)) + 1 if size > 1 else 1


def optimize_rate(
    grid: RateGrid, pe0: float, evaluator: Callable[[float], float], kind: str = "theory"
) -> OptimizerOutcome:
    """Bisection for the largest grid rate with evaluator(rate) <= pe0.

    ``first``/``last`` bracket the answer with mid = floor((first+last)/2);
    a satisfied constraint moves ``first`` up and records the rate, a
    violated one moves ``last`` down, and the loop stops once mid == first.
    ``last`` starts one past the grid (an unevaluated infeasible sentinel)
    so the top rate is reachable, and each rate is evaluated at most once.
    """
    if not 0.0 < pe0 < 1.0:
        raise ValueError(f"PLR target {pe0} outside (0, 1)")
    cache: dict[int, float] = {}

    def pe(i: int) -> float:
        if i not in cache:
            cache[i] = float(evaluator(grid.rho(i)))
        return cache[i]

    first, last = 1, grid.size + 1
    star = None
    while first < last:
        mid = (first + last) // 2
        value = pe(mid)
        if mid == first:
            if value <= pe0:
                star = mid
            break
        if value <= pe0:
            first = mid
            star = mid
        else:
            last = mid

    notes = []
    pts = sorted(cache.items())
    for (i, a), (j, b) in zip(pts, pts[1:]):
        if b < a - MONOTONE_TOL:
            notes.append(f"PLR decreases from {a:.3g} at rate {grid.rho(i):.4f} to {b:.3g} at {grid.rho(j):.4f}")
    evaluated = {grid.K(i): v for i, v in pts}
    if star is None:
        return OptimizerOutcome(None, None, None, None, len(cache), kind, grid.N, evaluated, notes)
    rho = grid.rho(star)
    plr = cache[star]
    return OptimizerOutcome(rho, grid.K(star), plr, achievable_rate(rho, plr), len(cache), kind, grid.N, evaluated, notes)


def linear_scan(grid: RateGrid, pe0: float, evaluator: Callable[[float], float]) -> int | None:
    """Largest K meeting the target by checking every grid rate."""
    best = None
    for i in range(1, grid.size + 1):
        if evaluator(grid.rho(i)) <= pe0:
            best = grid.K(i)
    return best


# -- evaluators ----------------------------------------------------------------


def theory_evaluator(
    spec: CodeSpec,
    channel: ChannelSpec,
    relay_mode: str | None = None,
    rank_model: RankModel | None = None,
) -> Callable[[float], float]:
    def evaluate(rho: float) -> float:
        K = round(rho * spec.N)
        res = scheme_plr(spec.with_K(K), channel, relay_mode, rank_model)
        if res.needs_simulation:
            raise ValueError("no closed form for this relay mode; use the simulation evaluator")
        return res.end_to_end_plr

    return evaluate


def sim_evaluator(
    spec: CodeSpec,
    channel: ChannelSpec,
    rounds: int = 10_000,
    seed: int = 0,
    relay_mode: str | None = None,
    workers: int = 1,
) -> Callable[[float], float]:
    """Monte Carlo PLR; the same seed at every rate gives common random numbers."""

    def evaluate(rho: float) -> float:
        K = round(rho * spec.N)
        cfg = SimConfig(spec.with_K(K), channel, rounds, seed, relay_mode, workers=workers)
        return estimate_plr(cfg).plr_hat

    return evaluate


@dataclass
class SweepRow:
    scheme: str
    N: int
    outcome: OptimizerOutcome | None
    error: str | None = None

    def csv_row(self) -> dict:
        o = self.outcome
        fmt = lambda v: "NA" if v is None else repr(float(v))
        return {
            "scheme": self.scheme,
            "N": self.N,
            "K_star": "NA" if o is None or o.K_star is None else o.K_star,
            "rho_star": fmt(None if o is None else o.rho_star),
            "plr": fmt(None if o is None else o.plr_at_rho_star),
            "R_star": fmt(None if o is None else o.R_star),
            "iterations": "NA" if o is None else o.iterations,
            "evaluator": "NA" if o is None else o.evaluator_kind,
        }


SWEEP_COLUMNS = ["scheme", "N", "K_star", "rho_star", "plr", "R_star", "iterations", "evaluator"]


def optimize_sweep(
    scheme: Scheme | str,
    N_list: Sequence[int],
    channel: ChannelSpec,
    pe0: float,
    evaluator_kind: str = "theory",
    base: CodeSpec | None = None,
    rounds: int = 10_000,
    seed: int = 0,
    relay_mode: str | None = None,
    rank_model: RankModel | None = None,
    workers: int = 1,
) -> list[SweepRow]:
    """One optimizer outcome per block length; failures are recorded and skipped."""
    scheme = Scheme.parse(scheme)
    rows = []
    for N in N_list:
        try:
            K0 = 2 if scheme.scheduled else 1
            if base is None:
                spec = CodeSpec(scheme, K0, N)
            else:
                spec = replace(base, scheme=scheme, K=K0, N=N)
            grid = RateGrid.for_scheme(scheme, N)
            if evaluator_kind == "theory":
                ev = theory_evaluator(spec, channel, relay_mode, rank_model)
                kind = "theory"
            elif evaluator_kind == "sim":
                ev = sim_evaluator(spec, channel, rounds, seed, relay_mode, workers)
                kind = f"sim:{rounds}:{seed}"
            else:
                raise ValueError(f"unknown evaluator {evaluator_kind!r}")
            rows.append(SweepRow(scheme.value, N, optimize_rate(grid, pe0, ev, kind)))
        except Exception as exc:  # noqa: BLE001 - recorded per point
            rows.append(SweepRow(scheme.value, N, None, str(exc)))
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.csv_row())
    return buf.getvalue()
