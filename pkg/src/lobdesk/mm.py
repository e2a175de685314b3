"""Market-maker problem: reduction, solve, and single-agent replay.

The trader quotes at (or one tick inside) the touch, pays a fixed cost per
order sent, and at the horizon liquidates inventory against the touch with
a per-unit penalty on the part exceeding the opposite queue.  Exponential
utility lets cash and the inventory mark-to-market factor out of the value:

    value(cash, book, inv, ...) = -exp(-eta*(cash + inv*mid)) * w(reduced)

so the grid state is (spread, queues, inv, resting orders) only and each
transition edge carries the multiplier

    exp(-eta * (d_cash + d_inv*mid_old + inv_new*d_mid))

evaluated on a representative book with bid price 0 (the exponent is then
a half-integer number of ticks, so the factor is reproducible exactly).
The per-action cost folds into the impulse penalty exp(eta*rho) when the
action budget is unlimited; a finite budget is solved in per-count slices
with the cost carried by the terminal instead.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from . import engine
from .book import (
    AgentState,
    BookState,
    MarketEvent,
    TradeLimits,
    apply_exo_transition,
    apply_own_transition,
)
from .prior import KernelModel, PriorConfig
from .space import StateSpace


class MMParams(NamedTuple):
    """Market-maker economics and grid bounds.

    eta:    absolute risk aversion (per currency unit)
    kappa:  terminal penalty per unit of inventory exceeding the far queue
    rho:    fixed cost per order action
    tick:   currency value of one tick
    horizon / dt:  trading window and scheme step (dt * max event rate
                   must stay below 1; the default prior peaks at 1.2/s)
    q_max, i_star, max_order:  grid bounds, matching the flow kernel's cap
    j_max:  total order budget; None folds the budget away (exact whenever
            the budget cannot bind within the horizon)
    """
    eta: float = 1.0
    kappa: float = 0.02
    rho: float = 1e-20
    tick: float = 0.01
    horizon: float = 59.0
    dt: float = 0.5
    q_max: int = 12
    i_star: int = 7
    max_order: int = 3
    j_max: int | None = None
    use_mirror: bool = True

    @property
    def n_steps(self) -> int:
        n = round(self.horizon / self.dt)
        if abs(n * self.dt - self.horizon) > 1e-9:
            raise ValueError("horizon must be an integer number of steps")
        return n

    @property
    def limits(self) -> TradeLimits:
        return TradeLimits(i_star=self.i_star, max_order=self.max_order,
                           q_cap=self.q_max, j_max=self.j_max)


def make_mm_weight(eta_tick: float) -> engine.WeightFn:
    """Edge multiplier for the cash/mark-to-market reduction.

    Books arrive in representative coordinates (bid 0 before the event,
    un-recentered after), which makes the exponent independent of the true
    price level; recentering afterwards is a pure relabeling.
    """
    def weight(book, x, ev, book2, x2):
        dg = x2.cash - x.cash
        di = x2.inv - x.inv
        mid0 = (book.bid + book.ask) / 2.0
        dmid = (book2.bid + book2.ask) / 2.0 - mid0
        return math.exp(-eta_tick * (dg + di * mid0 + x2.inv * dmid)), 0
    return weight


def terminal_values(space: StateSpace, p: MMParams) -> np.ndarray:
    """Reduced terminal array, one budget slice per action count."""
    i = space.i_col.astype(np.float64)
    spread = space.spread_col.astype(np.float64)
    over = np.where(i >= 0,
                    np.maximum(i - space.qb_col, 0.0),
                    np.maximum(-i - space.qa_col, 0.0))
    base = -np.exp(p.eta * (np.abs(i) * spread / 2.0 * p.tick + p.kappa * over))
    n_slices = 1 if p.j_max is None else p.j_max + 1
    out = np.empty((1, n_slices, len(space)))
    for j in range(n_slices):
        out[0, j] = base * math.exp(p.eta * p.rho * j)
    return out


def solve_mm(p: MMParams, cfg: PriorConfig | None = None,
             progress=None) -> engine.SolveResult:
    if cfg is None:
        cfg = PriorConfig(q_cap=p.q_max)
    if cfg.q_cap != p.q_max:
        raise ValueError("prior queue cap must equal the grid bound")
    km = KernelModel(cfg)
    space = StateSpace(p.q_max, p.i_star, use_mirror=p.use_mirror)
    wf = make_mm_weight(p.eta * p.tick)
    flow = engine.build_flow_table(space, km, wf, progress=progress)
    acts = engine.build_action_table(space, km, p.limits._replace(j_max=None),
                                     wf, progress=progress)
    res = engine.solve(
        space, flow, acts, terminal_values(space, p), p.dt, p.n_steps,
        pen=math.exp(p.eta * p.rho) if p.j_max is None else 1.0,
        j_slices=None if p.j_max is None else p.j_max + 1,
        meta={"problem": "mm", "params": {k: v for k, v in zip(p._fields, p)},
              "prior": {k: (v if not isinstance(v, dict)
                            else {str(kk): vv for kk, vv in v.items()})
                        for k, v in zip(cfg._fields, cfg)}},
    )
    if not (res.values < 0).all():
        raise AssertionError("reduced values must stay strictly negative")
    return res


def terminal_utility(p: MMParams, cash_ticks: int, book: BookState,
                     inv: int, acted: int) -> float:
    """Unreduced utility of liquidating `inv` against the final book."""
    if inv >= 0:
        liq = inv * book.bid * p.tick - p.kappa * max(inv - book.qb, 0)
    else:
        liq = inv * book.ask * p.tick - p.kappa * max(-inv - book.qa, 0)
    wealth = cash_ticks * p.tick + liq - p.rho * acted
    return -math.exp(-p.eta * wealth)


class MMPathStats(NamedTuple):
    utility: float
    gain: float             # liquidation wealth in currency, before order fees
    cash_ticks: int
    inventory: int
    orders_sent: int
    fills: int
    final_mid: float


def run_mm_path(result: engine.SolveResult, km: KernelModel, p: MMParams,
                rng: np.random.Generator, *, use_policy: bool = True,
                book0: BookState | None = None,
                recorder=None) -> MMPathStats:
    """Replay one path: our action first each step, then the market's.

    `recorder(step, book, x, act, ev)` is called once per step when given.
    """
    book = book0 or BookState(1000, 1001, 6, 6)
    x = AgentState()
    J = result.j_slices
    fills = 0
    frozen = False
    for step in range(result.n_steps):
        act = None
        if use_policy and not frozen:
            j = 0 if J == 1 else min(x.acted, J - 1)
            try:
                act = result.action_at(step, book, x, j=j)
            except KeyError:
                frozen = True   # out of the solved grid: stop acting
        if act is not None:
            draw = km.sample_regen(book, act, rng)
            inv0 = x.inv
            book, x = apply_own_transition(book, x, MarketEvent(act, draw),
                                           km.cfg.q_cap)
            fills += abs(x.inv - inv0)
        ev = km.sample_event(book, result.dt, rng)
        if ev is not None:
            inv0 = x.inv
            book, x = apply_exo_transition(book, x, ev, km.cfg.q_cap)
            fills += abs(x.inv - inv0)
        if recorder is not None:
            recorder(step, book, x, act, ev)
    u = terminal_utility(p, x.cash, book, x.inv, x.acted)
    gain = -math.log(-u) / p.eta + p.rho * x.acted   # wealth back out of u
    return MMPathStats(u, gain, x.cash, x.inv, x.acted, fills,
                       (book.bid + book.ask) / 2.0)


def simulate_mm(result: engine.SolveResult, p: MMParams, n_paths: int,
                seed: int, *, cfg: PriorConfig | None = None,
                use_policy: bool = True,
                book0: BookState | None = None) -> list[MMPathStats]:
    """Monte-Carlo replay over independently seeded paths.

    Each path gets its own child stream, so the policy and the never-act
    baseline see identical market randomness path for path (common random
    numbers) as long as their actions do not perturb the book.
    """
    km = KernelModel(cfg or PriorConfig(q_cap=p.q_max))
    out = []
    for k in range(n_paths):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x4D4D, k)))
        out.append(run_mm_path(result, km, p, rng, use_policy=use_policy,
                               book0=book0))
    return out
