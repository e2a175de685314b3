"""Shared-book multi-agent market simulation.

One market maker, one hedged trader and four broker trackers act on a
single one-level order book.  Every step all participants decide on the
same pre-step snapshot; the hedged trader's action applies first, the
market maker's second, the trackers' in uniformly shuffled order.  Later
applications are clipped to whatever the earlier ones left feasible.  The
only randomness is the stock-futures spread path and the sizes of queues
regenerated after depletions: there is no exogenous order flow.

Queue composition is tracked as owner-tagged slices in price-time
priority.  The crowd (owner -1) holds the regenerated queues; it absorbs
fills without counterparty bookkeeping.  Aggressive volume that lands on
the actor's own slice nets out as a cancellation, not a trade.

When a queue is depleted the price moves (always, unlike under the
exogenous-flow prior's 75% coin): the depleted side discovers a deeper
level (far refill table) and, from a 2-tick spread, drags the other side
onto a freshly created level (near table).  The single freak exception,
one action depleting both sides at a 2-tick spread, refills both in place.
A price move abandons the old level: resting orders there are dropped
(treated as cancelled), matching the one-level model's convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import mm as mm_mod
from .book import (AgentState, BookState, FlowAction, ZERO_ACTION, check_book)
from .broker import (TrackerState, VolumeParams, VWAPModel, sell_volume_step,
                     sell_vwap_step, volume_step, vwap_step)
from .hft import (HFTParams, OUParams, ou_step_exact, project_left,
                  utility_hft)
from .prior import REGEN_FAR, REGEN_NEAR

CROWD = -1


# ---------------------------------------------------------------------------
# owner-tagged book
# ---------------------------------------------------------------------------


class CompositeBook:
    """Best bid/ask with owner-tagged queue slices, front first.

    Slices are [owner, size] pairs with size >= 1; the crowd owner is -1.
    Totals are the BookState queue sizes at all times.
    """

    def __init__(self, book: BookState):
        check_book(book)
        self.bid = book.bid
        self.ask = book.ask
        self.bids: list[list[int]] = [[CROWD, book.qb]]
        self.asks: list[list[int]] = [[CROWD, book.qa]]

    @property
    def qb(self) -> int:
        return sum(s for _, s in self.bids)

    @property
    def qa(self) -> int:
        return sum(s for _, s in self.asks)

    @property
    def spread(self) -> int:
        return self.ask - self.bid

    def state(self) -> BookState:
        return BookState(self.bid, self.ask, self.qb, self.qa)

    def _side(self, side: str) -> list[list[int]]:
        return self.bids if side == "bid" else self.asks

    def rest(self, side: str, owner: int) -> int:
        return sum(s for o, s in self._side(side) if o == owner)

    def ahead(self, side: str, owner: int) -> int:
        """Volume standing in front of the owner's first slice."""
        total = 0
        for o, s in self._side(side):
            if o == owner:
                return total
            total += s
        return 0

    def view(self, owner: int, cash: int = 0, inv: int = 0,
             acted: int = 0) -> AgentState:
        """The owner's single-agent picture of its book position."""
        return AgentState(cash, inv,
                          self.rest("bid", owner), self.rest("ask", owner),
                          self.ahead("bid", owner), self.ahead("ask", owner),
                          acted)


# ---------------------------------------------------------------------------
# one action application
# ---------------------------------------------------------------------------


class AppliedResult(NamedTuple):
    """What one clipped action did to the composite book.

    chunks are the (owner, units) pieces the aggressive volume consumed,
    front first, priced at agg_price on agg_side; draws the (side, kind,
    size) refills consumed, in resolution order.
    """
    action: FlowAction
    agg_side: str
    agg_price: int
    chunks: tuple[tuple[int, int], ...]
    draws: tuple[tuple[str, str, int], ...]


NOTHING = AppliedResult(ZERO_ACTION, "", 0, (), ())


def _consume_front(slices: list[list[int]], size: int) -> list[tuple[int, int]]:
    out = []
    while size > 0:
        owner, s = slices[0]
        take = min(s, size)
        out.append((owner, take))
        if take == s:
            slices.pop(0)
        else:
            slices[0][1] -= take
        size -= take
    return out


def _cancel_own(slices: list[list[int]], owner: int, size: int) -> None:
    """Shrink the owner's volume from the back (queue priority is kept)."""
    for sl in reversed(slices):
        if size == 0:
            break
        if sl[0] == owner:
            take = min(sl[1], size)
            sl[1] -= take
            size -= take
    slices[:] = [sl for sl in slices if sl[1] > 0]


def _cancel_crowd_back(slices: list[list[int]], owner_unused: int,
                       size: int) -> None:
    """Exogenous cancel: crowd volume from the back, never agent units."""
    for sl in reversed(slices):
        if size == 0:
            break
        if sl[0] == CROWD:
            take = min(sl[1], size)
            sl[1] -= take
            size -= take
    slices[:] = [sl for sl in slices if sl[1] > 0]


def apply_action(comp: CompositeBook, actor: int, act: FlowAction,
                 refill: Callable[[str, str], int], move: int = 1,
                 q_cap: int = 12) -> AppliedResult:
    """Clip `act` to current feasibility and apply it; returns what happened.

    Clipping: cancels shrink to the actor's current resting size (the
    crowd's cancels consume crowd volume back first), aggressive volume to
    the queue net of same-side cancels, touch joins require a flat side and
    respect the queue cap, in-spread placements require a 2-tick spread and
    no depletion.  A stale two-sided full cancel that would deplete both
    queues at a 1-tick spread keeps its bid leg and drops the ask leg.
    `refill(side, kind)` supplies regeneration sizes (kind "far"/"near");
    `move` is the price-move flag for single-sided depletions (always 1 in
    the multi-agent market, the event's coin when replaying exogenous flow).
    """
    qb0, qa0, spread0 = comp.qb, comp.qa, comp.spread
    rest_b0 = comp.rest("bid", actor)
    rest_a0 = comp.rest("ask", actor)
    crowd_b = comp.rest("bid", CROWD)
    crowd_a = comp.rest("ask", CROWD)

    can_b = min(act.can_bid, crowd_b if actor == CROWD else rest_b0)
    can_a = min(act.can_ask, crowd_a if actor == CROWD else rest_a0)
    agg_b = min(act.agg_bid, qb0 - can_b)
    agg_a = min(act.agg_ask, qa0 - can_a)
    dep_b = can_b + agg_b == qb0
    dep_a = can_a + agg_a == qa0
    if dep_b and dep_a and spread0 == 1:
        can_a = agg_a = 0
        dep_a = False

    # the flat-only join and in-spread rules bind agents (one live order per
    # side); the crowd is order flow, it joins and places freely
    busy_b = actor != CROWD and rest_b0 > 0
    busy_a = actor != CROWD and rest_a0 > 0
    spr_b, spr_a = act.spr_bid, act.spr_ask
    if spr_b and spr_a:
        spr_a = 0
    if spread0 != 2 or dep_b or dep_a or busy_b:
        spr_b = 0
    if spread0 != 2 or dep_b or dep_a or busy_a:
        spr_a = 0
    spr_b = min(spr_b, q_cap)
    spr_a = min(spr_a, q_cap)

    lim_b, lim_a = act.lim_bid, act.lim_ask
    if busy_b or spr_b or dep_b or (spread0 == 2 and dep_a):
        lim_b = 0
    else:
        lim_b = min(lim_b, q_cap - qb0)
    if busy_a or spr_a or dep_a or (spread0 == 2 and dep_b):
        lim_a = 0
    else:
        lim_a = min(lim_a, q_cap - qa0)

    # bookkeeping: cancels first, then the aggressive walk at pre-move prices
    cancel = _cancel_crowd_back if actor == CROWD else _cancel_own
    if can_b:
        cancel(comp.bids, actor, can_b)
    if can_a:
        cancel(comp.asks, actor, can_a)
    chunks: tuple[tuple[int, int], ...] = ()
    agg_side, agg_price = "", 0
    if agg_b:
        chunks = tuple(_consume_front(comp.bids, agg_b))
        agg_side, agg_price = "bid", comp.bid
    elif agg_a:
        chunks = tuple(_consume_front(comp.asks, agg_a))
        agg_side, agg_price = "ask", comp.ask

    # price moves and regeneration, simultaneous over the two sides
    mv_b = mv_a = 0
    if not (dep_b and dep_a) and move:
        mv_b = -int(dep_b) + int(spread0 == 2 and dep_a)
        mv_a = int(dep_a) - int(spread0 == 2 and dep_b)
    if spr_b:
        mv_b += 1
    if spr_a:
        mv_a -= 1
    comp.bid += mv_b
    comp.ask += mv_a

    draws: list[tuple[str, str, int]] = []
    if spr_b:
        comp.bids = [[actor, spr_b]]
    elif dep_b or mv_b != 0:
        kind = "far" if dep_b and mv_b != 0 else "near"
        size = max(1, min(int(refill("bid", kind)), q_cap))
        draws.append(("bid", kind, size))
        comp.bids = [[CROWD, size]]
    elif lim_b:
        if actor == CROWD and comp.bids and comp.bids[-1][0] == CROWD:
            comp.bids[-1][1] += lim_b
        else:
            comp.bids.append([actor, lim_b])
    if spr_a:
        comp.asks = [[actor, spr_a]]
    elif dep_a or mv_a != 0:
        kind = "far" if dep_a and mv_a != 0 else "near"
        size = max(1, min(int(refill("ask", kind)), q_cap))
        draws.append(("ask", kind, size))
        comp.asks = [[CROWD, size]]
    elif lim_a:
        if actor == CROWD and comp.asks and comp.asks[-1][0] == CROWD:
            comp.asks[-1][1] += lim_a
        else:
            comp.asks.append([actor, lim_a])

    check_book(comp.state())
    applied = FlowAction(agg_b, agg_a, lim_b, lim_a, spr_b, spr_a, can_b, can_a)
    return AppliedResult(applied, agg_side, agg_price, chunks, tuple(draws))


# ---------------------------------------------------------------------------
# ledgers and settlement
# ---------------------------------------------------------------------------


@dataclass
class Ledger:
    """Per-participant running account (stock legs only, integer ticks)."""
    cash: int = 0
    inv: int = 0
    acted: int = 0
    fills: int = 0
    hedged: float = 0.0     # futures-hedged cash, maintained for hft agents


def settle(applied: AppliedResult, actor: int, ledgers: dict[int, Ledger]) -> int:
    """Credit the aggressive fills to both parties; returns traded units.

    Chunks on the actor's own slice net out (a cancellation, not a trade).
    Selling into the bid: the actor's cash grows by price x units and its
    inventory falls; each filled owner takes the other side at the same
    price.  Returns the units traded against other participants.
    """
    if not applied.chunks:
        return 0
    price = applied.agg_price
    sell = applied.agg_side == "bid"          # aggressor sells into the bid
    traded = 0
    a = ledgers[actor]
    for owner, u in applied.chunks:
        if owner == actor:
            continue
        traded += u
        o = ledgers[owner]
        if sell:
            a.cash += u * price
            a.inv -= u
            o.cash -= u * price
            o.inv += u
        else:
            a.cash -= u * price
            a.inv += u
            o.cash += u * price
            o.inv -= u
        a.fills += u
        o.fills += u
    return traded


def table_sampler(far, near, rng: np.random.Generator) -> Callable[[str, str], int]:
    """Refill provider drawing from the far/near size tables."""
    tables = {}
    for kind, dist in (("far", far), ("near", near)):
        sizes = np.array([s for s, _ in dist])
        cum = np.cumsum([p for _, p in dist])
        cum = cum / cum[-1]
        tables[kind] = (sizes, cum)

    def draw(side: str, kind: str) -> int:
        sizes, cum = tables[kind]
        return int(sizes[int(np.searchsorted(cum, rng.random(), side="right"))])

    return draw


# ---------------------------------------------------------------------------
# agent adapters
# ---------------------------------------------------------------------------


def clip_view(book: BookState, x: AgentState, q_max: int,
              i_star: int) -> tuple[BookState, AgentState]:
    """Project the shared state onto a policy's solved grid.

    Queue sizes clip to the grid bound keeping the agent's own resting
    volume, inventory clips to the solve's hard bound; distortion is
    accepted (policies trained on the single-agent kernel are deployed
    unchanged).
    """
    qb = min(book.qb, q_max)
    qa = min(book.qa, q_max)
    inv = max(-i_star, min(i_star, x.inv))
    rb = min(x.rest_bid, qb, i_star - inv)
    ra = min(x.rest_ask, qa, i_star + inv)
    bb = min(x.ahead_bid, qb - rb) if rb else 0
    ba = min(x.ahead_ask, qa - ra) if ra else 0
    return (BookState(book.bid, book.ask, qb, qa),
            AgentState(0, inv, rb, ra, bb, ba, x.acted))


class MMAdapter:
    """Market-maker policy lookup on the clipped view; freezes off-grid."""

    kind = "mm"

    def __init__(self, result, params: mm_mod.MMParams, name: str = "mm"):
        self.res = result
        self.p = params
        self.name = name
        self.frozen = False

    def decide(self, book: BookState, own: AgentState, t: float,
               s: float) -> FlowAction | None:
        if self.frozen:
            return None
        res = self.res
        step = min(int(t / res.dt + 1e-9), res.n_steps - 1)
        vb, vx = clip_view(book, own, res.space.q_max, res.space.i_star)
        j = 0 if res.j_slices == 1 else min(own.acted, res.j_slices - 1)
        try:
            return res.action_at(step, vb, vx, j=j)
        except KeyError:
            self.frozen = True
            return None

    def gain(self, led: Ledger, book: BookState, s: float) -> float:
        u = mm_mod.terminal_utility(self.p, led.cash, book, led.inv, led.acted)
        return -math.log(-u) / self.p.eta + self.p.rho * led.acted


class HFTAdapter:
    """Hedged-trader policy lookup; the spread layer projects left."""

    kind = "hft"

    def __init__(self, result, params: HFTParams, oup: OUParams,
                 name: str = "hft"):
        self.res = result
        self.p = params
        self.oup = oup
        self.name = name
        self.frozen = False

    def decide(self, book: BookState, own: AgentState, t: float,
               s: float) -> FlowAction | None:
        if self.frozen:
            return None
        res = self.res
        step = min(int(t / res.dt + 1e-9), res.n_steps - 1)
        layer = project_left(self.oup.s_grid, s)
        vb, vx = clip_view(book, own, res.space.q_max, res.space.i_star)
        j = 0 if res.j_slices == 1 else min(own.acted, res.j_slices - 1)
        try:
            return res.action_at(step, vb, vx, layer=layer, j=j)
        except KeyError:
            self.frozen = True
            return None

    def gain(self, led: Ledger, book: BookState, s: float) -> float:
        u = utility_hft(self.p, led.hedged, book, led.inv, s, led.acted)
        return -math.log(-u) / self.p.eta + self.p.rho * led.acted


class VolumeAdapter:
    """Participation-of-volume tracker, buy or sell side."""

    kind = "volume"

    def __init__(self, vp: VolumeParams, side: str = "buy",
                 name: str | None = None):
        if side not in ("buy", "sell"):
            raise ValueError(f"side must be 'buy' or 'sell', got {side!r}")
        self.vp = vp
        self.side = side
        self.ts = TrackerState()
        self.name = name or f"volume_{side}"

    def decide(self, book: BookState, own: AgentState, t: float,
               s: float) -> FlowAction | None:
        step = volume_step if self.side == "buy" else sell_volume_step
        act = step(self.vp, self.ts, book, own, t)
        return None if act.is_zero() else act

    def on_market_volume(self, units: int) -> None:
        self.ts.others_vol += units


class VWAPAdapter:
    """Schedule-following tracker, buy or sell side."""

    kind = "vwap"

    def __init__(self, model: VWAPModel, vp: VolumeParams, side: str = "buy",
                 name: str | None = None):
        if side not in ("buy", "sell"):
            raise ValueError(f"side must be 'buy' or 'sell', got {side!r}")
        self.model = model
        self.vp = vp
        self.side = side
        self.ts = TrackerState()
        self.name = name or f"vwap_{side}"

    def decide(self, book: BookState, own: AgentState, t: float,
               s: float) -> FlowAction | None:
        step = vwap_step if self.side == "buy" else sell_vwap_step
        act = step(self.model, self.vp, self.ts, book, own, t)
        return None if act.is_zero() else act

    def on_market_volume(self, units: int) -> None:
        self.ts.others_vol += units


# ---------------------------------------------------------------------------
# the market loop
# ---------------------------------------------------------------------------


class SimConfig(NamedTuple):
    """Roster and scalars of one market run.

    agents carry their own policies/parameters; names must be unique.
    The spread process is advanced only when `oup` is given (an HFT in the
    roster without `oup` is a configuration error).
    """
    agents: tuple
    horizon: float = 300.0
    dt: float = 1.0
    seed: int = 0
    book0: BookState = BookState(1000, 1001, 6, 6)
    q_cap: int = 12
    far_table: tuple = REGEN_FAR
    near_table: tuple = REGEN_NEAR
    oup: OUParams | None = None
    s0: float | None = None


class StepRecord(NamedTuple):
    """One actor application: everything needed to replay it."""
    step: int
    t: float
    s: float
    actor: str
    intended: FlowAction
    applied: FlowAction
    draws: tuple[tuple[str, str, int], ...]
    before: BookState
    after: BookState
    accounts: tuple[tuple[int, int], ...]   # (cash, inv) per agent, roster order


class MarketLog(NamedTuple):
    meta: dict
    records: list


class MarketResult(NamedTuple):
    log: MarketLog
    summary: dict
    ledgers: dict
    final_book: BookState
    final_s: float


def _validate_config(cfg: SimConfig) -> None:
    if not cfg.agents:
        raise ValueError("roster must hold at least one agent")
    names = [a.name for a in cfg.agents]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate agent names: {names}")
    if any(a.kind == "hft" for a in cfg.agents) and cfg.oup is None:
        raise ValueError("an hft agent needs the spread process (oup)")
    if cfg.horizon <= 0 or cfg.dt <= 0:
        raise ValueError("horizon and dt must be positive")


def run_market(cfg: SimConfig) -> MarketResult:
    """Run the shared-book market to the horizon; see the module docstring.

    Execution order each step: hft agents (roster order), then mm agents,
    then the remaining agents in a uniformly drawn order.  Decisions are
    made by every agent on the same pre-step snapshot, after the spread
    process has advanced.
    """
    _validate_config(cfg)
    agents = list(cfg.agents)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x53494D)))
    refill = table_sampler(cfg.far_table, cfg.near_table, rng)
    comp = CompositeBook(cfg.book0)
    ledgers: dict[int, Ledger] = {i: Ledger() for i in range(len(agents))}
    ledgers[CROWD] = Ledger()
    oup = cfg.oup._replace(dt=cfg.dt) if cfg.oup is not None else None
    s = (cfg.s0 if cfg.s0 is not None else oup.s_bar) if oup else 0.0

    hfts = [i for i, a in enumerate(agents) if a.kind == "hft"]
    mms = [i for i, a in enumerate(agents) if a.kind == "mm"]
    ibs = [i for i, a in enumerate(agents) if a.kind not in ("hft", "mm")]
    trackers = [i for i in ibs if hasattr(agents[i], "on_market_volume")]

    n_steps = int(round(cfg.horizon / cfg.dt))
    records: list[StepRecord] = []
    value = 0
    volume = 0
    mids = [cfg.book0.mid2 / 2.0]

    for k in range(n_steps):
        t = k * cfg.dt
        if oup is not None:
            s = ou_step_exact(oup, s, rng)
        snap = comp.state()
        views = [comp.view(i, ledgers[i].cash, ledgers[i].inv,
                           ledgers[i].acted) for i in range(len(agents))]
        intents = [agents[i].decide(snap, views[i], t, s)
                   for i in range(len(agents))]
        order = hfts + mms + [ibs[j] for j in rng.permutation(len(ibs))]
        for i in order:
            intended = intents[i] or ZERO_ACTION
            before = comp.state()
            if intended.is_zero():
                applied = NOTHING
            else:
                sp = comp.spread
                applied = apply_action(comp, i, intended, refill,
                                       move=1, q_cap=cfg.q_cap)
                ledgers[i].acted += 1
                traded = settle(applied, i, ledgers)
                if traded:
                    value += traded * applied.agg_price
                    volume += traded
                    _hedge_legs(agents, ledgers, applied, i, sp, s)
                    for j in trackers:
                        u = _foreign_units(applied, i, j)
                        if u:
                            agents[j].on_market_volume(u)
            records.append(StepRecord(
                k, t, s, agents[i].name, intended, applied.action,
                applied.draws, before, comp.state(),
                tuple((ledgers[j].cash, ledgers[j].inv)
                      for j in range(len(agents)))))
        mids.append(comp.state().mid2 / 2.0)

    final = comp.state()
    meta = {"names": [a.name for a in agents],
            "kinds": [a.kind for a in agents],
            "dt": cfg.dt, "horizon": cfg.horizon, "seed": cfg.seed,
            "q_cap": cfg.q_cap, "book0": tuple(cfg.book0)}
    log = MarketLog(meta, records)
    summary = summarize(agents, ledgers, final, s, value, volume, mids)
    return MarketResult(log, summary, ledgers, final, s)


def _foreign_units(applied: AppliedResult, actor: int, watcher: int) -> int:
    """Units of the application traded between parties other than watcher."""
    if watcher == actor:
        return 0
    return sum(u for owner, u in applied.chunks
               if owner != actor and owner != watcher)


def _hedge_legs(agents, ledgers, applied: AppliedResult, actor: int,
                spread: int, s: float) -> None:
    """Accumulate futures-hedged cash for hft parties of these fills.

    The aggressor pays half the spread and the fee per unit; a passively
    filled hft earns half the spread net of the fee.  Either books the
    hedge at the current stock-futures spread s.
    """
    sell = applied.agg_side == "bid"
    for owner, u in applied.chunks:
        if owner == actor:
            continue
        for who, aggressor in ((actor, True), (owner, False)):
            if who == CROWD or agents[who].kind != "hft":
                continue
            p = agents[who].p
            di = (-u if sell else u) if aggressor else (u if sell else -u)
            half = spread / 2.0 * p.tick
            if aggressor:
                ledgers[who].hedged += -u * (half + p.kappa_fut) + s * di
            else:
                ledgers[who].hedged += u * (half - p.kappa_fut) + s * di


def summarize(agents, ledgers, final_book: BookState, s: float,
              value: int, volume: int, mids: list[float]) -> dict:
    """Flat summary: market totals plus one block per participant."""
    out = {
        "final_bid": final_book.bid, "final_ask": final_book.ask,
        "final_qb": final_book.qb, "final_qa": final_book.qa,
        "traded_volume": volume,
        "market_vwap": value / volume if volume else math.nan,
        "mid_min": min(mids), "mid_max": max(mids),
        "crowd_cash": ledgers[CROWD].cash, "crowd_inv": ledgers[CROWD].inv,
        "inv_conserved": ledgers[CROWD].inv
        + sum(ledgers[i].inv for i in range(len(agents))) == 0,
        "cash_conserved": ledgers[CROWD].cash
        + sum(ledgers[i].cash for i in range(len(agents))) == 0,
    }
    vwap = out["market_vwap"]
    for i, a in enumerate(agents):
        led = ledgers[i]
        pre = a.name
        out[f"{pre}.cash"] = led.cash
        out[f"{pre}.inv"] = led.inv
        out[f"{pre}.acted"] = led.acted
        out[f"{pre}.fills"] = led.fills
        if a.kind in ("mm", "hft"):
            out[f"{pre}.gain"] = a.gain(led, final_book, s)
        elif hasattr(a, "ts"):
            filled = abs(led.inv)
            avg = abs(led.cash) / filled if filled else math.nan
            out[f"{pre}.avg_price"] = avg
            out[f"{pre}.rel_error"] = ((avg - vwap) / vwap
                                       if filled and volume else math.nan)
            out[f"{pre}.finished"] = a.ts.done
    return out


# ---------------------------------------------------------------------------
# serialization and replay
# ---------------------------------------------------------------------------

_ACT_FIELDS = len(FlowAction._fields)


def log_to_csv(log: MarketLog) -> str:
    """One row per actor application; floats via repr (lossless)."""
    names = log.meta["names"]
    head = ["step", "t", "s", "actor"]
    head += [f"int_{f}" for f in FlowAction._fields]
    head += [f"app_{f}" for f in FlowAction._fields]
    head += ["draws", "bid0", "ask0", "qb0", "qa0",
             "bid1", "ask1", "qb1", "qa1"]
    for n in names:
        head += [f"{n}.cash", f"{n}.inv"]
    rows = [",".join(head)]
    for r in log.records:
        draws = "|".join(f"{sd}:{kind}:{sz}" for sd, kind, sz in r.draws)
        cells = [str(r.step), repr(float(r.t)), repr(float(r.s)), r.actor]
        cells += [str(v) for v in r.intended]
        cells += [str(v) for v in r.applied]
        cells += [draws]
        cells += [str(v) for v in r.before]
        cells += [str(v) for v in r.after]
        for cash, inv in r.accounts:
            cells += [str(cash), str(inv)]
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


def replay(log: MarketLog) -> MarketLog:
    """Re-apply the logged intents through a fresh book, without randomness.

    Refill draws come from the log itself; every other quantity (clipping,
    fills, settlement, prices) is recomputed.  The result can be serialized
    and compared byte for byte against the original log.
    """
    meta = log.meta
    names = meta["names"]
    index = {n: i for i, n in enumerate(names)}
    comp = CompositeBook(BookState(*meta["book0"]))
    ledgers: dict[int, Ledger] = {i: Ledger() for i in range(len(names))}
    ledgers[CROWD] = Ledger()
    records = []
    for r in log.records:
        i = index[r.actor]
        queue = list(r.draws)

        def from_log(side: str, kind: str) -> int:
            sd, kd, sz = queue.pop(0)
            if (sd, kd) != (side, kind):
                raise ValueError(f"draw stream mismatch: logged {(sd, kd)}, "
                                 f"replay wants {(side, kind)}")
            return sz

        before = comp.state()
        if before != r.before:
            raise ValueError(f"replay diverged at step {r.step}: "
                             f"{before} != {r.before}")
        if r.intended.is_zero():
            applied = NOTHING
        else:
            applied = apply_action(comp, i, r.intended, from_log,
                                   move=1, q_cap=meta["q_cap"])
            ledgers[i].acted += 1
            settle(applied, i, ledgers)
        records.append(StepRecord(
            r.step, r.t, r.s, r.actor, r.intended, applied.action,
            applied.draws, before, comp.state(),
            tuple((ledgers[j].cash, ledgers[j].inv)
                  for j in range(len(names)))))
    return MarketLog(meta, records)


def agent_series(log: MarketLog, name: str) -> list[dict]:
    """Per-step rows for one participant: its applications plus accounts."""
    idx = log.meta["names"].index(name)
    out = []
    for r in log.records:
        if r.actor != name:
            continue
        cash, inv = r.accounts[idx]
        out.append({"step": r.step, "t": r.t, "s": r.s,
                    "intended": r.intended, "applied": r.applied,
                    "bid": r.after.bid, "ask": r.after.ask,
                    "qb": r.after.qb, "qa": r.after.qa,
                    "cash": cash, "inv": inv})
    return out
