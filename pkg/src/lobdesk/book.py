"""One-level order book state and transition maps.

The book keeps only the best bid and best ask: two integer tick prices and
two queue sizes (in units). The spread is 1 or 2 ticks at all times and both
queues hold at least one unit; every transition below preserves that.

Order flow, whether it comes from the exogenous market or from a strategic
agent, is expressed as one 8-field action:

    agg_bid / agg_ask   aggressive volume consuming the bid / ask queue front
    lim_bid / lim_ask   limit volume joining the back of the touch queue
    spr_bid / spr_ask   limit volume posted one tick inside the spread
    can_bid / can_ask   own volume cancelled out of the bid / ask queue

Aggressive-plus-cancelled volume on a side ("consumed" volume) may deplete
the queue.  A depleted queue regenerates from a drawn refill size; whether
the price moves on depletion is decided by the `move` coin of the draw
(always 1 for in-step depletions in the multi-agent simulator, 75% under the
default flow prior).  A refill at an unchanged price draws from the near
table, a refill at a freshly discovered / created price level from the far /
near table depending on the move direction.

Agents track their own resting volume per side (`rest_*`) together with the
volume standing ahead of it (`ahead_*`).  Executions against a resting order
follow price-time priority: an aggressive order first consumes the volume
ahead, then the agent's units, see `exe`.  Cancellations by others consume
the queue from the back (the volume behind the agent first) and can never
remove the agent's own units.

Conventions:
    prices     integer ticks (tick value in currency applied at I/O only)
    cash       integer tick-units (price ticks x traded units)
    rest == 0  implies ahead == 0
    a queue side whose price moved, or which was depleted and refilled,
    drops the agent's resting bookkeeping on that side (the residual order
    is treated as cancelled; the model cannot track off-touch orders)
"""

from __future__ import annotations

from typing import Iterator, NamedTuple


class BookState(NamedTuple):
    bid: int
    ask: int
    qb: int
    qa: int

    @property
    def spread(self) -> int:
        return self.ask - self.bid

    @property
    def mid2(self) -> int:
        """Twice the mid price, in ticks (exact integer)."""
        return self.ask + self.bid


class FlowAction(NamedTuple):
    agg_bid: int = 0
    agg_ask: int = 0
    lim_bid: int = 0
    lim_ask: int = 0
    spr_bid: int = 0
    spr_ask: int = 0
    can_bid: int = 0
    can_ask: int = 0

    @property
    def consumed_bid(self) -> int:
        return self.agg_bid + self.can_bid

    @property
    def consumed_ask(self) -> int:
        return self.agg_ask + self.can_ask

    def is_zero(self) -> bool:
        return not any(self)


ZERO_ACTION = FlowAction()


class RegenDraw(NamedTuple):
    """Randomness attached to one event: price-move coin and refill sizes.

    `refill_bid` / `refill_ask` are read only for a side that regenerates
    (depleted, or price moved by depletion drag); 0 is a safe placeholder
    for sides that never read it.
    """
    move: int = 0
    refill_bid: int = 0
    refill_ask: int = 0


NO_DRAW = RegenDraw(0, 0, 0)


class MarketEvent(NamedTuple):
    action: FlowAction
    draw: RegenDraw


class AgentState(NamedTuple):
    cash: int = 0
    inv: int = 0
    rest_bid: int = 0
    rest_ask: int = 0
    ahead_bid: int = 0
    ahead_ask: int = 0
    acted: int = 0


class TradeLimits(NamedTuple):
    """Bounds shaping an agent's admissible action set.

    i_star:            hard inventory bound (inventory stays in [-i_star, i_star]
                       even if all resting orders were suddenly filled)
    max_order:         per-order size cap
    q_cap:             book-level queue cap; limit joins are clipped so a queue
                       never exceeds it
    full_cancel_only:  cancels must remove the whole resting order
    j_max:             action-count budget; None = unlimited
    """
    i_star: int
    max_order: int = 3
    q_cap: int = 12
    full_cancel_only: bool = True
    j_max: int | None = None


# ---------------------------------------------------------------------------
# elementary ops
# ---------------------------------------------------------------------------

def exe(agg: int, rest: int, ahead: int) -> int:
    """Units of a resting order filled by an aggressive order of size `agg`.

    Price-time priority: the `ahead` units in front fill first, the agent's
    `rest` units next.  Result is min((agg - ahead)+, rest).
    """
    return min(max(agg - ahead, 0), rest)


def imbalance(book: BookState) -> float:
    return (book.qb - book.qa) / (book.qb + book.qa)


def mirror_book(book: BookState) -> BookState:
    """Bid/ask reflection: prices negate and swap, queues swap."""
    return BookState(-book.ask, -book.bid, book.qa, book.qb)


def mirror_action(act: FlowAction) -> FlowAction:
    return FlowAction(act.agg_ask, act.agg_bid, act.lim_ask, act.lim_bid,
                      act.spr_ask, act.spr_bid, act.can_ask, act.can_bid)


def mirror_agent(x: AgentState) -> AgentState:
    return AgentState(x.cash, -x.inv, x.rest_ask, x.rest_bid,
                      x.ahead_ask, x.ahead_bid, x.acted)


def mirror_draw(draw: RegenDraw) -> RegenDraw:
    return RegenDraw(draw.move, draw.refill_ask, draw.refill_bid)


def mirror_event(ev: MarketEvent) -> MarketEvent:
    return MarketEvent(mirror_action(ev.action), mirror_draw(ev.draw))


def check_book(book: BookState) -> None:
    if book.spread not in (1, 2):
        raise ValueError(f"spread must be 1 or 2 ticks, got {book.spread}")
    if book.qb < 1 or book.qa < 1:
        raise ValueError(f"queues must hold at least one unit, got {book.qb}, {book.qa}")


def check_agent(book: BookState, x: AgentState, i_star: int) -> None:
    """Domain check: the state must be safe against sudden full execution."""
    if x.rest_bid + x.inv > i_star:
        raise ValueError("resting bid volume plus inventory exceeds i_star")
    if x.inv - x.rest_ask < -i_star:
        raise ValueError("inventory minus resting ask volume below -i_star")
    if x.rest_bid + x.ahead_bid > book.qb or x.rest_ask + x.ahead_ask > book.qa:
        raise ValueError("resting plus ahead volume exceeds queue size")
    if x.rest_bid < 0 or x.rest_ask < 0 or x.ahead_bid < 0 or x.ahead_ask < 0:
        raise ValueError("negative resting/ahead volume")
    if (x.rest_bid == 0 and x.ahead_bid != 0) or (x.rest_ask == 0 and x.ahead_ask != 0):
        raise ValueError("ahead volume without a resting order")


# ---------------------------------------------------------------------------
# book-level transition
# ---------------------------------------------------------------------------

def _check_event(book: BookState, act: FlowAction) -> None:
    if act.consumed_bid > book.qb or act.consumed_ask > book.qa:
        raise ValueError("consumed volume exceeds queue size")
    if min(act) < 0:
        raise ValueError("negative action field")
    if (act.spr_bid or act.spr_ask) and book.spread != 2:
        raise ValueError("in-spread placement requires a 2-tick spread")
    if act.spr_bid and act.spr_ask:
        raise ValueError("simultaneous two-sided in-spread placement")
    dep_b = act.consumed_bid == book.qb
    dep_a = act.consumed_ask == book.qa
    if (act.spr_bid or act.spr_ask) and (dep_b or dep_a):
        raise ValueError("in-spread placement combined with a queue depletion")
    if dep_b and dep_a and book.spread == 1:
        raise ValueError("double depletion at a 1-tick spread")
    if act.spr_bid and act.lim_bid or act.spr_ask and act.lim_ask:
        raise ValueError("in-spread and touch limit on the same side")
    if book.spread == 2 and (act.lim_bid and dep_a or act.lim_ask and dep_b):
        raise ValueError("touch join on a side dragged by the other side's depletion")


def _price_moves(book: BookState, act: FlowAction, move: int) -> tuple[int, int]:
    """Tick displacement (d_bid, d_ask) of the two sides for one event."""
    dep_b = act.consumed_bid == book.qb
    dep_a = act.consumed_ask == book.qa
    spread2 = book.spread == 2
    mv_b = mv_a = 0
    if move:
        mv_b = -int(dep_b) + int(spread2 and dep_a)
        mv_a = int(dep_a) - int(spread2 and dep_b)
    if act.spr_bid:
        mv_b += 1
    if act.spr_ask:
        mv_a -= 1
    return mv_b, mv_a


def apply_book_transition(book: BookState, ev: MarketEvent, q_cap: int = 12) -> BookState:
    """Advance the book by one event.

    Limit joins are clipped so queues never exceed `q_cap`; callers building
    event tables are expected to pre-clip, the clip here is a final guard.
    Refill draws are used as given (table construction clips them to the cap).
    """
    act, draw = ev
    _check_event(book, act)
    dep_b = act.consumed_bid == book.qb
    dep_a = act.consumed_ask == book.qa
    mv_b, mv_a = _price_moves(book, act, draw.move)

    if act.spr_bid:
        qb = act.spr_bid
    elif mv_b != 0 or dep_b:
        qb = draw.refill_bid
    else:
        qb = book.qb + min(act.lim_bid, q_cap - book.qb) - act.consumed_bid

    if act.spr_ask:
        qa = act.spr_ask
    elif mv_a != 0 or dep_a:
        qa = draw.refill_ask
    else:
        qa = book.qa + min(act.lim_ask, q_cap - book.qa) - act.consumed_ask

    out = BookState(book.bid + mv_b, book.ask + mv_a, qb, qa)
    check_book(out)
    return out


def _side_survived(book: BookState, act: FlowAction, draw: RegenDraw) -> tuple[bool, bool]:
    """Whether each side kept its queue identity through the event."""
    dep_b = act.consumed_bid == book.qb
    dep_a = act.consumed_ask == book.qa
    mv_b, mv_a = _price_moves(book, act, draw.move)
    return (mv_b == 0 and not dep_b), (mv_a == 0 and not dep_a)


# ---------------------------------------------------------------------------
# agent transitions
# ---------------------------------------------------------------------------

def apply_own_transition(book: BookState, x: AgentState, ev: MarketEvent,
                         q_cap: int = 12) -> tuple[BookState, AgentState]:
    """Apply the agent's own impulse: cash/inventory legs priced at the touch.

    Self-crossing volume (own aggressive order hitting own resting units)
    nets out of cash and inventory; only the part filled against others is
    priced.  The action counter increases by one whatever the content.
    """
    act, draw = ev
    if act.can_bid > x.rest_bid or act.can_ask > x.rest_ask:
        raise ValueError("cancel exceeds resting size")
    exe_b = exe(act.agg_bid, x.rest_bid, x.ahead_bid)
    exe_a = exe(act.agg_ask, x.rest_ask, x.ahead_ask)

    cash = x.cash + (act.agg_bid - exe_b) * book.bid - (act.agg_ask - exe_a) * book.ask
    inv = x.inv - (act.agg_bid - exe_b) + (act.agg_ask - exe_a)

    lim_b = min(act.lim_bid, q_cap - book.qb)
    lim_a = min(act.lim_ask, q_cap - book.qa)

    rb = x.rest_bid + max(lim_b - x.rest_bid, 0) + act.spr_bid - act.can_bid - exe_b
    ra = x.rest_ask + max(lim_a - x.rest_ask, 0) + act.spr_ask - act.can_ask - exe_a

    # all corrections reference the pre-action queue position (simultaneous form)
    b0 = x.ahead_bid
    bb = (b0 + (book.qb - b0) * int(lim_b != 0)
          - b0 * int(act.can_bid == x.rest_bid)
          - min(b0, act.agg_bid) * int(act.agg_bid != 0)
          - b0 * int(act.spr_bid != 0))
    a0 = x.ahead_ask
    ba = (a0 + (book.qa - a0) * int(lim_a != 0)
          - a0 * int(act.can_ask == x.rest_ask)
          - min(a0, act.agg_ask) * int(act.agg_ask != 0)
          - a0 * int(act.spr_ask != 0))

    book2 = apply_book_transition(book, MarketEvent(act._replace(lim_bid=lim_b, lim_ask=lim_a), draw), q_cap)
    ok_b, ok_a = _side_survived(book, act, draw)
    # an own in-spread placement IS the new queue, it survives its own move
    if not ok_b and not act.spr_bid:
        rb, bb = 0, 0
    if not ok_a and not act.spr_ask:
        ra, ba = 0, 0
    if rb == 0:
        bb = 0
    if ra == 0:
        ba = 0
    out = AgentState(cash, inv, rb, ra, bb, ba, x.acted + 1)
    return book2, out


def apply_exo_transition(book: BookState, x: AgentState, ev: MarketEvent,
                         q_cap: int = 12) -> tuple[BookState, AgentState]:
    """Apply an exogenous event to the agent's bookkeeping.

    Executions price at the touch: a market sell hitting the agent's resting
    bid makes the agent buy at the bid.  Exogenous cancellations remove the
    queue back first (the volume behind the agent, then the volume ahead;
    never the agent's own units).  The action counter is unchanged.
    """
    act, draw = ev
    exe_b = exe(act.agg_bid, x.rest_bid, x.ahead_bid)
    exe_a = exe(act.agg_ask, x.rest_ask, x.ahead_ask)

    cash = x.cash - exe_b * book.bid + exe_a * book.ask
    inv = x.inv + exe_b - exe_a

    rb = x.rest_bid - exe_b
    ra = x.rest_ask - exe_a

    if act.can_bid == 0:
        bb = max(x.ahead_bid - act.agg_bid, 0)
    else:
        behind = book.qb - x.ahead_bid - x.rest_bid
        bb = max(x.ahead_bid - max(act.can_bid - behind, 0), 0)
    if act.can_ask == 0:
        ba = max(x.ahead_ask - act.agg_ask, 0)
    else:
        behind = book.qa - x.ahead_ask - x.rest_ask
        ba = max(x.ahead_ask - max(act.can_ask - behind, 0), 0)

    book2 = apply_book_transition(book, ev, q_cap)
    ok_b, ok_a = _side_survived(book, act, draw)
    if not ok_b:
        rb, bb = 0, 0
    if not ok_a:
        ra, ba = 0, 0
    # guard for cancel events overlapping agent volume (never under the default prior)
    rb = min(rb, book2.qb)
    ra = min(ra, book2.qa)
    bb = min(bb, book2.qb - rb)
    ba = min(ba, book2.qa - ra)
    if rb == 0:
        bb = 0
    if ra == 0:
        ba = 0
    out = AgentState(cash, inv, rb, ra, bb, ba, x.acted)
    return book2, out


# ---------------------------------------------------------------------------
# admissible action enumeration
# ---------------------------------------------------------------------------

def _bid_passives(book: BookState, x: AgentState, lim: TradeLimits) -> Iterator[tuple[int, int, int]]:
    """(lim_bid, spr_bid, can_bid) choices for the bid side, none included."""
    yield 0, 0, 0
    if x.rest_bid == 0:
        top = min(lim.i_star - x.inv, lim.max_order, lim.q_cap - book.qb)
        for s in range(1, top + 1):
            yield s, 0, 0
        if book.spread == 2:
            top = min(lim.i_star - x.inv, lim.max_order)
            for s in range(1, top + 1):
                yield 0, s, 0
    else:
        if lim.full_cancel_only:
            yield 0, 0, x.rest_bid
        else:
            for s in range(1, x.rest_bid + 1):
                yield 0, 0, s


def _ask_passives(book: BookState, x: AgentState, lim: TradeLimits) -> Iterator[tuple[int, int, int]]:
    yield 0, 0, 0
    if x.rest_ask == 0:
        top = min(x.inv + lim.i_star, lim.max_order, lim.q_cap - book.qa)
        for s in range(1, top + 1):
            yield s, 0, 0
        if book.spread == 2:
            top = min(x.inv + lim.i_star, lim.max_order)
            for s in range(1, top + 1):
                yield 0, s, 0
    else:
        if lim.full_cancel_only:
            yield 0, 0, x.rest_ask
        else:
            for s in range(1, x.rest_ask + 1):
                yield 0, 0, s


def admissible_actions(book: BookState, x: AgentState, lim: TradeLimits) -> list[FlowAction]:
    """Non-zero actions the agent may send from (book, x).

    Aggressive orders go alone (they exclude every passive field).  Passive
    fields combine freely across sides subject to the side constraints and
    the exclusions below; cancels require a resting order, placements
    require none.  Returns the empty list when the action budget is spent.
    Order is lexicographic in the action tuple.
    """
    check_book(book)
    check_agent(book, x, lim.i_star)
    if lim.j_max is not None and x.acted >= lim.j_max:
        return []

    out: list[FlowAction] = []
    # selling via the bid must stay safe even if the resting ask then fills
    top = min(x.inv + lim.i_star - x.rest_ask, book.qb, lim.max_order)
    for s in range(1, top + 1):
        out.append(FlowAction(agg_bid=s))
    top = min(lim.i_star - x.inv - x.rest_bid, book.qa, lim.max_order)
    for s in range(1, top + 1):
        out.append(FlowAction(agg_ask=s))

    spread2 = book.spread == 2
    for lb, sb, cb in _bid_passives(book, x, lim):
        dep_b = cb == book.qb
        for la, sa, ca in _ask_passives(book, x, lim):
            if lb == sb == cb == la == sa == ca == 0:
                continue
            dep_a = ca == book.qa
            if sb and sa:
                continue                        # spread would collapse to 0
            if (sb or sa) and (dep_b or dep_a):
                continue                        # ill-defined combo
            if dep_b and dep_a and not spread2:
                continue                        # spread would open to 3
            if spread2 and (lb and dep_a or la and dep_b):
                continue                        # join merged into a dragged regen
            out.append(FlowAction(0, 0, lb, la, sb, sa, cb, ca))

    out.sort()
    return out


def is_admissible_flow(act: FlowAction) -> bool:
    """Structural constraints on the 8-field action, state-independent.

    Aggressive volume excludes everything else (and both sides can't be
    aggressed at once); a side takes at most one of {touch limit, in-spread
    limit}; a cancel excludes same-side placements and any aggression.
    """
    if min(act) < 0:
        return False
    if act.agg_bid and act.agg_ask:
        return False
    if act.agg_bid or act.agg_ask:
        return not (act.lim_bid or act.lim_ask or act.spr_bid or act.spr_ask
                    or act.can_bid or act.can_ask)
    if act.lim_bid and act.spr_bid or act.lim_ask and act.spr_ask:
        return False
    if act.can_bid and (act.lim_bid or act.spr_bid):
        return False
    if act.can_ask and (act.lim_ask or act.spr_ask):
        return False
    return True
