"""Futures-hedged trader: spread tree, hedged cash legs, solve, replay.

The trader holds minus-one futures per unit of stock at all times, so the
mid-price drops out of the wealth and only the stock-futures offset s and
the bid-ask spread matter.  Every stock trade settles, per unit, at a
mid-relative edge (trade price minus mid, minus s for the futures leg,
minus the futures fee kappa_fut):

    own aggressive/any own fill:   -(spread/2)*tick - kappa_fut +/- s
    resting order filled by flow:  +(spread/2)*tick - kappa_fut +/- s

With exponential utility the hedged cash factors out the same way the
market-maker's does, and the leftover s-dependence of an edge is exactly
exp(-eta * s * d_inv): s lives on a small grid of layers, the layer factor
table F[l, de] carries exp(-eta * s_l * de), and the s-diffusion enters as
a per-step mixing matrix built from a trinomial tree.

The tree matches the Euler conditional mean s + rho*(s_bar - s)*dt exactly
wherever the grid can represent it and clamps toward the nearest edge
otherwise; variance is matched as closely as the three-point support
allows.  Rows always sum to exactly 1; clamp incidence is reported, not
hidden (with a strong pull and a narrow grid every row can clamp).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import engine
from .book import (
    AgentState,
    BookState,
    FlowAction,
    MarketEvent,
    TradeLimits,
    apply_exo_transition,
    apply_own_transition,
    exe,
)
from .prior import KernelModel, PriorConfig
from .space import StateSpace


def centered_grid(n: int = 6, mesh: float = 0.005,
                  center: float = 0.0) -> tuple[float, ...]:
    """n uniformly spaced levels straddling `center` (no node on it when
    n is even; the default is the 6-node half-tick layout)."""
    return tuple(center + (l - (n - 1) / 2.0) * mesh for l in range(n))


class OUParams(NamedTuple):
    """Mean-reverting spread: ds = rho_rev*(s_bar - s)dt + sigma dW on a
    bounded grid (the clamp at the edges realizes the bounded support)."""
    s_bar: float = 0.0
    rho_rev: float = 50.0
    sigma: float = 0.2
    s_grid: tuple[float, ...] = centered_grid()
    dt: float = 0.5

    @property
    def n_nodes(self) -> int:
        return len(self.s_grid)

    @property
    def mesh(self) -> float:
        if len(self.s_grid) < 2:
            return 0.0
        return self.s_grid[1] - self.s_grid[0]


def _validate_grid(grid: tuple[float, ...]) -> float:
    if len(grid) == 0:
        raise ValueError("spread grid must have at least one node")
    if len(grid) == 1:
        return 0.0
    h = grid[1] - grid[0]
    if h <= 0:
        raise ValueError("spread grid must be strictly increasing")
    for a, b in zip(grid, grid[1:]):
        if abs((b - a) - h) > 1e-12 * max(h, 1.0):
            raise ValueError("spread grid must be uniform")
    return h


def _exact_unit_sum(row: np.ndarray) -> None:
    """Rewrite the last nonzero entry as the complement of the others.

    The left-to-right float sum of the result is exactly 1: with the
    prefix p in [0, 1], the computed complement c = fl(1 - p) carries an
    error below half an ulp of 1, so fl(p + c) rounds back to 1 (exactly,
    via Sterbenz, when p >= 1/2).  In the dust case where the prefix
    already rounds above 1 the offending ulp-sized entry is dropped."""
    np.clip(row, 0.0, 1.0, out=row)
    for j in np.flatnonzero(row)[::-1]:
        row[j] = 0.0
        prefix = row.sum()
        if prefix <= 1.0:
            row[j] = 1.0 - prefix
            if float(row.sum()) == 1.0:
                return
            row[j] = 0.0
    if not row.any():
        raise AssertionError("probability row lost all mass")
    raise AssertionError("probability row failed to normalize exactly")


@dataclass(frozen=True)
class SpreadTree:
    """One-step transition matrix over the s-grid plus clamp bookkeeping."""
    grid: tuple[float, ...]
    matrix: np.ndarray          # (L, L), rows sum to exactly 1
    targets: np.ndarray         # per-node conditional-mean target
    mean_clamped: np.ndarray    # bool: row mean could not match targets
    var_clamped: np.ndarray     # bool: row variance clipped to feasibility

    def row_means(self) -> np.ndarray:
        return self.matrix @ np.asarray(self.grid)

    def clamp_report(self) -> dict:
        n = len(self.grid)
        return {"nodes": n,
                "mean_clamped": int(self.mean_clamped.sum()),
                "var_clamped": int(self.var_clamped.sum())}


def build_tree(oup: OUParams, drift: str = "euler") -> SpreadTree:
    """Trinomial (or smaller) transition rows with exact row sums.

    drift="euler" targets s + rho*(s_bar - s)*dt and variance sigma^2*dt;
    drift="exact" targets the closed-form OU conditional moments.  Mass
    that a target would push off the grid is redirected to the nearest
    representable branch (reflecting clamp) and counted in the report.
    """
    grid = tuple(float(s) for s in oup.s_grid)
    h = _validate_grid(grid)
    L = len(grid)
    if drift == "euler":
        means = [s + oup.rho_rev * (oup.s_bar - s) * oup.dt for s in grid]
        var = oup.sigma ** 2 * oup.dt
    elif drift == "exact":
        decay = math.exp(-oup.rho_rev * oup.dt)
        means = [oup.s_bar + (s - oup.s_bar) * decay for s in grid]
        var = (oup.sigma ** 2 * oup.dt if oup.rho_rev == 0.0 else
               oup.sigma ** 2 * (1.0 - decay * decay) / (2.0 * oup.rho_rev))
    else:
        raise ValueError(f"unknown drift mode {drift!r}")

    T = np.zeros((L, L))
    targets = np.asarray(means)
    mean_cl = np.zeros(L, dtype=bool)
    var_cl = np.zeros(L, dtype=bool)
    for l, target in enumerate(means):
        row = T[l]
        if L == 1:
            row[0] = 1.0
            mean_cl[l] = target != grid[0]
            var_cl[l] = var != 0.0
            continue
        if var == 0.0:
            # degenerate diffusion: point mass on the projected node
            j = min(max(int(math.floor((target - grid[0]) / h + 0.5)), 0), L - 1)
            row[j] = 1.0
            mean_cl[l] = grid[j] != target
            continue
        if L == 2:
            p = (target - grid[0]) / h
            pc = min(max(p, 0.0), 1.0)
            row[1] = pc
            row[0] = 1.0 - pc
            mean_cl[l] = pc != p
            var_cl[l] = abs(pc * (1.0 - pc) * h * h - var) > 1e-18
            _exact_unit_sum(row)
            continue
        k = min(max(int(math.floor((target - grid[0]) / h + 0.5)), 1), L - 2)
        m = (target - grid[k]) / h
        mu = min(max(m, -1.0), 1.0)
        mean_cl[l] = mu != m
        # three-point support bounds the mean-preserving variance range
        vbar = var / (h * h)
        lo, hi = abs(mu) * (1.0 - abs(mu)), 1.0 - mu * mu
        vu = min(max(vbar, lo), hi)
        var_cl[l] = vu != vbar
        row[k + 1] = (vu + mu * mu + mu) / 2.0
        row[k - 1] = (vu + mu * mu - mu) / 2.0
        row[k] = 1.0 - row[k + 1] - row[k - 1]
        _exact_unit_sum(row)
    return SpreadTree(grid, T, targets, mean_cl, var_cl)


def project_left(grid: tuple[float, ...], s: float) -> int:
    """Index of the closest node at or below s (clipped to the grid)."""
    if len(grid) == 1:
        return 0
    h = grid[1] - grid[0]
    j = int(math.floor((s - grid[0]) / h + 1e-9))
    return min(max(j, 0), len(grid) - 1)


def ou_step_exact(oup: OUParams, s: float, rng: np.random.Generator) -> float:
    """Sample the closed-form OU transition, clipped to the grid span."""
    if oup.rho_rev == 0.0:
        mean, sd = s, oup.sigma * math.sqrt(oup.dt)
    else:
        decay = math.exp(-oup.rho_rev * oup.dt)
        mean = oup.s_bar + (s - oup.s_bar) * decay
        sd = oup.sigma * math.sqrt((1.0 - decay * decay) / (2.0 * oup.rho_rev))
    nxt = mean + sd * rng.standard_normal()
    return min(max(nxt, oup.s_grid[0]), oup.s_grid[-1])


# ---------------------------------------------------------------------------
# hedged cash accounting
# ---------------------------------------------------------------------------

def futures_price(book: BookState, s: float, tick: float = 0.01) -> float:
    return (book.bid + book.ask) / 2.0 * tick + s


def delta_edges(book: BookState, s: float, kappa_fut: float,
                tick: float = 0.01) -> tuple[float, float, float, float]:
    """Per-unit hedged settlement at the touch, relative to the mid.

    Returns (bid_minus, bid_plus, ask_minus, ask_plus): the bid (ask)
    values are -(+) half the spread minus s, with the futures fee
    subtracted (minus variant) or added (plus variant).  Own fills earn
    the minus variants; resting fills hit by the flow earn the plus ones.
    """
    half = book.spread / 2.0 * tick
    return (-half - s - kappa_fut, -half - s + kappa_fut,
            half - s - kappa_fut, half - s + kappa_fut)


def own_trade_legs(book: BookState, x: AgentState,
                   act: FlowAction) -> tuple[int, int]:
    """(gross units traded with the market, inventory change) for an own
    action; self-crossed units net out and trade nothing."""
    u_sell = act.agg_bid - exe(act.agg_bid, x.rest_bid, x.ahead_bid)
    u_buy = act.agg_ask - exe(act.agg_ask, x.rest_ask, x.ahead_ask)
    return u_sell + u_buy, u_buy - u_sell


def exo_fill_legs(book: BookState, x: AgentState,
                  act: FlowAction) -> tuple[int, int]:
    """(gross units filled, inventory change) when the flow order `act`
    walks into our resting orders."""
    e_buy = exe(act.agg_bid, x.rest_bid, x.ahead_bid)    # our bid lifts
    e_sell = exe(act.agg_ask, x.rest_ask, x.ahead_ask)
    return e_buy + e_sell, e_buy - e_sell


def hedged_cash_own(book: BookState, x: AgentState, act: FlowAction,
                    s: float, p: "HFTParams") -> float:
    gross, di = own_trade_legs(book, x, act)
    return -gross * (book.spread / 2.0 * p.tick + p.kappa_fut) + s * di


def hedged_cash_exo(book: BookState, x: AgentState, act: FlowAction,
                    s: float, p: "HFTParams") -> float:
    gross, di = exo_fill_legs(book, x, act)
    return gross * (book.spread / 2.0 * p.tick - p.kappa_fut) + s * di


# ---------------------------------------------------------------------------
# the control problem
# ---------------------------------------------------------------------------

class HFTParams(NamedTuple):
    """Hedged-trader economics and grid bounds.

    kappa_fut is both the per-unit futures fee on every hedge trade and
    the terminal per-unit charge on inventory exceeding the far queue;
    the rest mirrors the market-maker parameters.
    """
    eta: float = 1.0
    kappa_fut: float = 0.02
    rho: float = 1e-20
    tick: float = 0.01
    horizon: float = 59.0
    dt: float = 0.5
    q_max: int = 6
    i_star: int = 3
    max_order: int = 3
    j_max: int | None = None

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


def make_hft_own_weight(p: HFTParams) -> engine.WeightFn:
    """exp(-eta * hedged cash) with the s-leg split off as the edge mark."""
    def weight(book, x, ev, book2, x2):
        gross, di = own_trade_legs(book, x, ev.action)
        mult = math.exp(p.eta * gross * (book.spread / 2.0 * p.tick + p.kappa_fut))
        return mult, di
    return weight


def make_hft_exo_weight(p: HFTParams) -> engine.WeightFn:
    def weight(book, x, ev, book2, x2):
        gross, di = exo_fill_legs(book, x, ev.action)
        mult = math.exp(-p.eta * gross * (book.spread / 2.0 * p.tick - p.kappa_fut))
        return mult, di
    return weight


def utility_hft(p: HFTParams, cash: float, book: BookState, inv: int,
                s: float, acted: int) -> float:
    """Terminal utility: unwind the stock at the touch and the hedge at
    mid + s, pay the fee per unit, and charge overflow beyond the queue.
    `cash` is the hedged running cash in currency units."""
    bm, _, _, ap = delta_edges(book, s, p.kappa_fut, p.tick)
    if inv >= 0:
        liq = inv * bm - p.kappa_fut * max(inv - book.qb, 0)
    else:
        liq = inv * ap - p.kappa_fut * max(-inv - book.qa, 0)
    wealth = cash + liq - p.rho * acted
    return -math.exp(-p.eta * wealth)


def terminal_values_hft(space: StateSpace, p: HFTParams,
                        grid: tuple[float, ...]) -> np.ndarray:
    i = space.i_col.astype(np.float64)
    spread = space.spread_col.astype(np.float64)
    over = np.where(i >= 0,
                    np.maximum(i - space.qb_col, 0.0),
                    np.maximum(-i - space.qa_col, 0.0))
    n_slices = 1 if p.j_max is None else p.j_max + 1
    out = np.empty((len(grid), n_slices, len(space)))
    for l, s in enumerate(grid):
        base = -np.exp(p.eta * (np.abs(i) * (spread / 2.0 * p.tick + p.kappa_fut)
                                + i * s + p.kappa_fut * over))
        for j in range(n_slices):
            out[l, j] = base * math.exp(p.eta * p.rho * j)
    return out


def layer_factors(p: HFTParams, grid: tuple[float, ...],
                  de_off: int) -> np.ndarray:
    F = np.empty((len(grid), 2 * de_off + 1))
    for l, s in enumerate(grid):
        for k in range(2 * de_off + 1):
            F[l, k] = math.exp(-p.eta * s * (k - de_off))
    return F


def solve_hft(p: HFTParams, oup: OUParams, cfg: PriorConfig | None = None,
              drift: str = "euler", progress=None) -> engine.SolveResult:
    """Backward solve over (s-node, book/agent state): tree expectation in
    s, then the flow generator at fixed s, then the action obstacle.  The
    bid/ask mirror is never used here; s breaks the reflection symmetry."""
    if abs(oup.dt - p.dt) > 1e-12:
        raise ValueError("spread-grid dt must equal the scheme dt")
    if cfg is None:
        cfg = PriorConfig(q_cap=p.q_max)
    if cfg.q_cap != p.q_max:
        raise ValueError("prior queue cap must equal the grid bound")
    km = KernelModel(cfg)
    space = StateSpace(p.q_max, p.i_star, use_mirror=False)
    flow = engine.build_flow_table(space, km, make_hft_exo_weight(p),
                                   progress=progress)
    acts = engine.build_action_table(space, km, p.limits._replace(j_max=None),
                                     make_hft_own_weight(p), progress=progress)
    tree = build_tree(oup, drift=drift)
    de_off = int(max(np.max(np.abs(flow.de), initial=0),
                     np.max(np.abs(acts.de), initial=0)))
    res = engine.solve(
        space, flow, acts, terminal_values_hft(space, p, tree.grid),
        p.dt, p.n_steps,
        pen=math.exp(p.eta * p.rho) if p.j_max is None else 1.0,
        mix=tree.matrix, F=layer_factors(p, tree.grid, de_off), de_off=de_off,
        j_slices=None if p.j_max is None else p.j_max + 1,
        meta={"problem": "hft",
              "params": {k: v for k, v in zip(p._fields, p)},
              "ou": {"s_bar": oup.s_bar, "rho_rev": oup.rho_rev,
                     "sigma": oup.sigma, "s_grid": list(tree.grid),
                     "dt": oup.dt, "drift": drift,
                     "clamps": tree.clamp_report()},
              "prior": {k: (v if not isinstance(v, dict)
                            else {str(kk): vv for kk, vv in v.items()})
                        for k, v in zip(cfg._fields, cfg)}},
    )
    if not (res.values < 0).all():
        raise AssertionError("reduced values must stay strictly negative")
    return res


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

class HFTPathStats(NamedTuple):
    utility: float
    gain: float            # terminal hedged wealth in currency units
    cash: float
    inventory: int
    orders_sent: int
    fills: int
    s_final: float


def run_hft_path(result: engine.SolveResult, km: KernelModel, p: HFTParams,
                 oup: OUParams, rng: np.random.Generator, *,
                 use_policy: bool = True, s_mode: str = "tree",
                 tree: SpreadTree | None = None, s0: float | None = None,
                 book0: BookState | None = None,
                 recorder=None) -> HFTPathStats:
    """One path: observe s, act, let the flow play, then advance s.

    s_mode="tree" hops between grid nodes with the solve's own transition
    rows; s_mode="exact" samples the closed-form OU step and projects to
    the node at or below for policy lookups.
    """
    if s_mode == "tree" and tree is None:
        tree = build_tree(oup)
    book = book0 or BookState(1000, 1001, 6, 6)
    x = AgentState()
    s = oup.s_bar if s0 is None else s0
    if s_mode == "tree":
        s = tree.grid[project_left(tree.grid, s)]
    cash = 0.0
    fills = 0
    frozen = False
    J = result.j_slices
    for step in range(result.n_steps):
        layer = project_left(oup.s_grid, s)
        act = None
        if use_policy and not frozen:
            j = 0 if J == 1 else min(x.acted, J - 1)
            try:
                act = result.action_at(step, book, x, layer=layer, j=j)
            except KeyError:
                frozen = True   # out of the solved grid: stop acting
        if act is not None:
            cash += hedged_cash_own(book, x, act, s, p)
            _, di = own_trade_legs(book, x, act)
            fills += abs(di)
            draw = km.sample_regen(book, act, rng)
            book, x = apply_own_transition(book, x, MarketEvent(act, draw),
                                           km.cfg.q_cap)
        ev = km.sample_event(book, result.dt, rng)
        if ev is not None:
            cash += hedged_cash_exo(book, x, ev.action, s, p)
            gross, _ = exo_fill_legs(book, x, ev.action)
            fills += gross
            book, x = apply_exo_transition(book, x, ev, km.cfg.q_cap)
        if recorder is not None:
            recorder(step, book, x, act, ev, s,
                     futures_price(book, s, p.tick))
        if s_mode == "tree":
            li = project_left(tree.grid, s)
            s = tree.grid[int(rng.choice(len(tree.grid), p=tree.matrix[li]))]
        else:
            s = ou_step_exact(oup, s, rng)
    u = utility_hft(p, cash, book, x.inv, s, x.acted)
    gain = -math.log(-u) / p.eta + p.rho * x.acted   # wealth back out of u
    return HFTPathStats(u, gain, cash, x.inv, x.acted, fills, s)


def simulate_hft(result: engine.SolveResult, p: HFTParams, oup: OUParams,
                 n_paths: int, seed: int, *, cfg: PriorConfig | None = None,
                 use_policy: bool = True, s_mode: str = "tree",
                 book0: BookState | None = None) -> list[HFTPathStats]:
    km = KernelModel(cfg or PriorConfig(q_cap=p.q_max))
    tree = build_tree(oup) if s_mode == "tree" else None
    out = []
    for k in range(n_paths):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x4854, k)))
        out.append(run_hft_path(result, km, p, oup, rng, use_policy=use_policy,
                                s_mode=s_mode, tree=tree, book0=book0))
    return out
