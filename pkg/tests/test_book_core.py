"""Book-level and agent-level transition tests.

The frozen examples were hand-evaluated once against the transition rules
(price moves on depletion, regeneration draws, price-time priority fills,
back-first exogenous cancels) and pinned here.
"""

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobdesk.book import (
    AgentState,
    BookState,
    FlowAction,
    MarketEvent,
    NO_DRAW,
    RegenDraw,
    TradeLimits,
    ZERO_ACTION,
    admissible_actions,
    apply_book_transition,
    apply_exo_transition,
    apply_own_transition,
    check_agent,
    check_book,
    exe,
    imbalance,
    is_admissible_flow,
    mirror_action,
    mirror_agent,
    mirror_book,
    mirror_event,
)


def ev(action=ZERO_ACTION, draw=NO_DRAW, **fields):
    if fields:
        action = FlowAction(**fields)
    return MarketEvent(action, draw)


# ---------------------------------------------------------------------------
# elementary ops
# ---------------------------------------------------------------------------

def test_exe_values():
    assert exe(0, 5, 2) == 0
    assert exe(5, 3, 2) == 3
    assert exe(2, 3, 4) == 0
    assert exe(3, 2, 2) == 1


def test_imbalance():
    assert imbalance(BookState(0, 1, 3, 1)) == pytest.approx(0.5)
    assert imbalance(BookState(0, 1, 2, 2)) == 0.0


def test_mirror_involution():
    b = BookState(100, 102, 3, 7)
    assert mirror_book(mirror_book(b)) == b
    x = AgentState(5, -2, 1, 0, 2, 0, 4)
    assert mirror_agent(mirror_agent(x)) == x
    a = FlowAction(1, 0, 2, 0, 0, 3, 0, 1)
    assert mirror_action(mirror_action(a)) == a


# ---------------------------------------------------------------------------
# structural action admissibility
# ---------------------------------------------------------------------------

def test_flow_structure():
    assert is_admissible_flow(ZERO_ACTION)
    assert is_admissible_flow(FlowAction(lim_bid=2, lim_ask=3))
    assert not is_admissible_flow(FlowAction(agg_bid=1, agg_ask=1))
    assert not is_admissible_flow(FlowAction(agg_bid=1, lim_ask=1))
    assert not is_admissible_flow(FlowAction(lim_bid=1, spr_bid=1))
    assert not is_admissible_flow(FlowAction(can_bid=1, lim_bid=1))
    assert is_admissible_flow(FlowAction(can_bid=1, lim_ask=1))


# ---------------------------------------------------------------------------
# book transitions
# ---------------------------------------------------------------------------

def test_market_depletes_ask_price_moves():
    b = BookState(0, 1, 2, 2)
    out = apply_book_transition(b, MarketEvent(FlowAction(agg_ask=2), RegenDraw(1, 3, 4)))
    assert out == BookState(0, 2, 2, 4)


def test_market_depletes_ask_no_move():
    b = BookState(0, 1, 2, 2)
    out = apply_book_transition(b, MarketEvent(FlowAction(agg_ask=2), RegenDraw(0, 9, 4)))
    assert out == BookState(0, 1, 2, 4)


def test_market_partial_no_move():
    b = BookState(0, 1, 5, 2)
    out = apply_book_transition(b, MarketEvent(FlowAction(agg_bid=3), NO_DRAW))
    assert out == BookState(0, 1, 2, 2)


def test_depletion_drag_at_spread_two():
    b = BookState(0, 2, 2, 3)
    out = apply_book_transition(b, MarketEvent(FlowAction(agg_ask=3), RegenDraw(1, 5, 7)))
    # ask discovered one tick up, bid dragged up behind it, spread stays 2
    assert out == BookState(1, 3, 5, 7)


def test_depletion_drag_bid_side():
    b = BookState(0, 2, 2, 3)
    out = apply_book_transition(b, MarketEvent(FlowAction(agg_bid=2), RegenDraw(1, 5, 7)))
    assert out == BookState(-1, 1, 5, 7)


def test_in_spread_bid():
    b = BookState(0, 2, 4, 4)
    out = apply_book_transition(b, MarketEvent(FlowAction(spr_bid=3), NO_DRAW))
    assert out == BookState(1, 2, 3, 4)


def test_in_spread_ask():
    b = BookState(0, 2, 4, 4)
    out = apply_book_transition(b, MarketEvent(FlowAction(spr_ask=1), NO_DRAW))
    assert out == BookState(0, 1, 4, 1)


def test_limit_join_clipped_at_cap():
    b = BookState(0, 1, 11, 4)
    out = apply_book_transition(b, MarketEvent(FlowAction(lim_bid=3), NO_DRAW), q_cap=12)
    assert out == BookState(0, 1, 12, 4)


def test_zero_event_is_identity():
    b = BookState(0, 1, 2, 2)
    assert apply_book_transition(b, MarketEvent(ZERO_ACTION, NO_DRAW)) == b


def test_bad_events_raise():
    with pytest.raises(ValueError):
        apply_book_transition(BookState(0, 1, 2, 2), MarketEvent(FlowAction(agg_ask=3), NO_DRAW))
    with pytest.raises(ValueError):  # in-spread needs a 2-tick spread
        apply_book_transition(BookState(0, 1, 2, 2), MarketEvent(FlowAction(spr_bid=1), NO_DRAW))
    with pytest.raises(ValueError):  # two-sided in-spread collapses the spread
        apply_book_transition(BookState(0, 2, 2, 2), MarketEvent(FlowAction(spr_bid=1, spr_ask=1), NO_DRAW))
    with pytest.raises(ValueError):  # double depletion at spread 1 opens spread 3
        apply_book_transition(BookState(0, 1, 1, 1),
                              MarketEvent(FlowAction(can_bid=1, can_ask=1), RegenDraw(1, 2, 2)))
    with pytest.raises(ValueError):  # queue must stay >= 1
        apply_book_transition(BookState(0, 1, 2, 2), MarketEvent(FlowAction(agg_ask=2), RegenDraw(1, 1, 0)))


# ---------------------------------------------------------------------------
# own transitions
# ---------------------------------------------------------------------------

def test_own_market_buy():
    b = BookState(1000, 1001, 2, 3)
    x = AgentState()
    b2, x2 = apply_own_transition(b, x, MarketEvent(FlowAction(agg_ask=1), NO_DRAW))
    assert x2 == AgentState(cash=-1001, inv=1, acted=1)
    assert b2 == BookState(1000, 1001, 2, 2)


def test_own_market_sell_with_self_fill():
    # agent rests 2 at the bid behind 1 unit; its own sell of 2 hits 1 of its
    # own resting units: only 1 unit is net-sold, the self-trade cancels out
    b = BookState(1000, 1001, 4, 3)
    x = AgentState(inv=0, rest_bid=2, ahead_bid=1)
    b2, x2 = apply_own_transition(b, x, MarketEvent(FlowAction(agg_bid=2), NO_DRAW))
    assert x2.cash == 1 * 1000
    assert x2.inv == -1
    assert x2.rest_bid == 1           # one own unit was consumed by self-trade
    assert x2.ahead_bid == 0
    assert b2.qb == 2


def test_own_limit_join():
    b = BookState(1000, 1001, 5, 3)
    x = AgentState()
    b2, x2 = apply_own_transition(b, x, MarketEvent(FlowAction(lim_bid=2), NO_DRAW))
    assert (x2.rest_bid, x2.ahead_bid) == (2, 5)
    assert (x2.cash, x2.inv) == (0, 0)
    assert x2.acted == 1
    assert b2.qb == 7


def test_own_full_cancel():
    b = BookState(1000, 1001, 5, 3)
    x = AgentState(rest_bid=2, ahead_bid=3)
    b2, x2 = apply_own_transition(b, x, MarketEvent(FlowAction(can_bid=2), NO_DRAW))
    assert (x2.rest_bid, x2.ahead_bid) == (0, 0)
    assert b2.qb == 3


def test_own_in_spread_survives_its_own_price_move():
    b = BookState(1000, 1002, 5, 3)
    x = AgentState()
    b2, x2 = apply_own_transition(b, x, MarketEvent(FlowAction(spr_bid=2), NO_DRAW))
    assert b2 == BookState(1001, 1002, 2, 3)
    assert (x2.rest_bid, x2.ahead_bid) == (2, 0)


def test_own_depleting_buy_regenerates():
    b = BookState(1000, 1001, 2, 3)
    x = AgentState()
    b2, x2 = apply_own_transition(b, x, MarketEvent(FlowAction(agg_ask=3), RegenDraw(1, 0, 6)))
    assert b2 == BookState(1000, 1002, 2, 6)
    assert (x2.cash, x2.inv) == (-3 * 1001, 3)


def test_own_cancel_too_large_raises():
    b = BookState(1000, 1001, 2, 3)
    with pytest.raises(ValueError):
        apply_own_transition(b, AgentState(rest_bid=1, ahead_bid=1),
                             MarketEvent(FlowAction(can_bid=2), NO_DRAW))


# ---------------------------------------------------------------------------
# exogenous transitions
# ---------------------------------------------------------------------------

def test_exo_fill_of_resting_bid():
    b = BookState(1000, 1001, 4, 3)
    x = AgentState(rest_bid=2, ahead_bid=1)
    b2, x2 = apply_exo_transition(b, x, MarketEvent(FlowAction(agg_bid=2), NO_DRAW))
    # one unit ahead fills first, then one of the agent's units
    assert x2.cash == -1 * 1000
    assert x2.inv == 1
    assert (x2.rest_bid, x2.ahead_bid) == (1, 0)
    assert x2.acted == 0
    assert b2.qb == 2


def test_exo_cancel_consumes_back_first():
    b = BookState(1000, 1001, 5, 3)
    x = AgentState(rest_bid=2, ahead_bid=1)    # 2 units behind the agent
    b2, x2 = apply_exo_transition(b, x, MarketEvent(FlowAction(can_bid=3), NO_DRAW))
    assert (x2.rest_bid, x2.ahead_bid) == (2, 0)
    assert x2.cash == 0 and x2.inv == 0
    assert b2.qb == 2


def test_exo_depletion_executes_then_resets_side():
    b = BookState(1000, 1001, 3, 3)
    x = AgentState(rest_bid=2, ahead_bid=1)
    b2, x2 = apply_exo_transition(b, x, MarketEvent(FlowAction(agg_bid=3), RegenDraw(1, 10, 0)))
    assert x2.inv == 2 and x2.cash == -2 * 1000
    assert (x2.rest_bid, x2.ahead_bid) == (0, 0)
    assert b2 == BookState(999, 1001, 10, 3)


def test_exo_drag_drops_resting_order_without_fill():
    b = BookState(1000, 1002, 3, 2)
    x = AgentState(rest_bid=1, ahead_bid=2)
    b2, x2 = apply_exo_transition(b, x, MarketEvent(FlowAction(agg_ask=2), RegenDraw(1, 4, 5)))
    assert b2 == BookState(1001, 1003, 4, 5)
    assert (x2.rest_bid, x2.ahead_bid) == (0, 0)
    assert x2.cash == 0 and x2.inv == 0


def test_exo_in_spread_drops_touch_resting_order():
    b = BookState(1000, 1002, 3, 2)
    x = AgentState(rest_bid=1, ahead_bid=2)
    b2, x2 = apply_exo_transition(b, x, MarketEvent(FlowAction(spr_bid=2), NO_DRAW))
    assert b2 == BookState(1001, 1002, 2, 2)
    assert (x2.rest_bid, x2.ahead_bid) == (0, 0)


# ---------------------------------------------------------------------------
# admissible action enumeration
# ---------------------------------------------------------------------------

LIM = TradeLimits(i_star=2, max_order=3, q_cap=6)


def test_budget_spent_means_no_actions():
    lim = LIM._replace(j_max=3)
    assert admissible_actions(BookState(0, 1, 2, 2), AgentState(acted=3), lim) == []
    assert admissible_actions(BookState(0, 1, 2, 2), AgentState(acted=2), lim) != []


def test_at_upper_inventory_no_bid_placements():
    acts = admissible_actions(BookState(0, 1, 2, 2), AgentState(inv=LIM.i_star), LIM)
    assert all(a.lim_bid == 0 and a.spr_bid == 0 and a.agg_ask == 0 for a in acts)
    assert any(a.agg_bid > 0 for a in acts)    # selling down is allowed


def test_no_in_spread_at_one_tick():
    acts = admissible_actions(BookState(0, 1, 2, 2), AgentState(), LIM)
    assert all(a.spr_bid == 0 and a.spr_ask == 0 for a in acts)
    acts = admissible_actions(BookState(0, 2, 2, 2), AgentState(), LIM)
    assert any(a.spr_bid > 0 for a in acts) and any(a.spr_ask > 0 for a in acts)


def test_no_join_while_resting():
    x = AgentState(rest_bid=1, ahead_bid=1)
    acts = admissible_actions(BookState(0, 1, 3, 2), x, LIM)
    assert all(a.lim_bid == 0 for a in acts)
    assert any(a.can_bid == 1 for a in acts)


def test_full_cancel_only_flag():
    x = AgentState(rest_bid=2, ahead_bid=0)
    acts = admissible_actions(BookState(0, 1, 3, 2), x, LIM)
    assert {a.can_bid for a in acts} == {0, 2}
    acts = admissible_actions(BookState(0, 1, 3, 2), x, LIM._replace(full_cancel_only=False))
    assert {a.can_bid for a in acts} == {0, 1, 2}


def test_aggression_capped_by_resting_exposure():
    # selling is throttled by the resting ask that could still fill
    x = AgentState(inv=0, rest_ask=2, ahead_ask=0)
    acts = admissible_actions(BookState(0, 1, 3, 3), x, LIM)
    assert max(a.agg_bid for a in acts) == 0
    x = AgentState(inv=0, rest_ask=1, ahead_ask=0)
    acts = admissible_actions(BookState(0, 1, 3, 3), x, LIM)
    assert max(a.agg_bid for a in acts) == 1


def test_enumeration_is_sorted_unique():
    acts = admissible_actions(BookState(0, 2, 3, 3), AgentState(), LIM)
    assert acts == sorted(acts)
    assert len(acts) == len(set(acts))


def test_domain_violation_raises():
    with pytest.raises(ValueError):
        admissible_actions(BookState(0, 1, 2, 2), AgentState(inv=1, rest_bid=2), LIM)
    with pytest.raises(ValueError):
        admissible_actions(BookState(0, 1, 2, 2), AgentState(rest_bid=1, ahead_bid=2), LIM)


# ---------------------------------------------------------------------------
# exhaustive domain preservation on a small grid
# ---------------------------------------------------------------------------

def small_states(i_star=2, q_max=3):
    for spread in (1, 2):
        for qb in range(1, q_max + 1):
            for qa in range(1, q_max + 1):
                book = BookState(0, spread, qb, qa)
                for i in range(-i_star, i_star + 1):
                    for nb in range(0, min(qb, i_star - i) + 1):
                        for bb in range(0, (qb - nb if nb else 0) + 1):
                            for na in range(0, min(qa, i + i_star) + 1):
                                for ba in range(0, (qa - na if na else 0) + 1):
                                    yield book, AgentState(0, i, nb, na, bb, ba, 0)


def draws_for(book, act, q_cap):
    dep_b = act.consumed_bid == book.qb
    dep_a = act.consumed_ask == book.qa
    if not (dep_b or dep_a):
        yield NO_DRAW
        return
    for move in (0, 1):
        if move == 0 and book.spread == 1 and dep_b and dep_a:
            continue
        for rb in (1, q_cap):
            for ra in (1, q_cap):
                yield RegenDraw(move, rb, ra)


@pytest.mark.parametrize("full_cancel", [True, False])
def test_own_actions_preserve_domain_exhaustively(full_cancel):
    lim = TradeLimits(i_star=2, max_order=3, q_cap=3, full_cancel_only=full_cancel)
    n_checked = 0
    for book, x in small_states(i_star=lim.i_star, q_max=lim.q_cap):
        for act in admissible_actions(book, x, lim):
            assert is_admissible_flow(act)
            for draw in draws_for(book, act, lim.q_cap):
                b2, x2 = apply_own_transition(book, x, MarketEvent(act, draw), lim.q_cap)
                check_book(b2)
                check_agent(b2, x2, lim.i_star)
                n_checked += 1
    assert n_checked > 10_000


def exo_events(book, q_cap):
    """A covering family of exogenous events: markets, joins, in-spread."""
    for s in range(1, min(3, book.qb) + 1):
        act = FlowAction(agg_bid=s)
        for draw in draws_for(book, act, q_cap):
            yield MarketEvent(act, draw)
    for s in range(1, min(3, book.qa) + 1):
        act = FlowAction(agg_ask=s)
        for draw in draws_for(book, act, q_cap):
            yield MarketEvent(act, draw)
    for s in range(1, max(0, q_cap - book.qb) + 1):
        yield MarketEvent(FlowAction(lim_bid=s), NO_DRAW)
    for s in range(1, max(0, q_cap - book.qa) + 1):
        yield MarketEvent(FlowAction(lim_ask=s), NO_DRAW)
    if book.spread == 2:
        for s in (1, 3):
            yield MarketEvent(FlowAction(spr_bid=s), NO_DRAW)
            yield MarketEvent(FlowAction(spr_ask=s), NO_DRAW)


def test_exo_events_preserve_domain_exhaustively():
    q_cap = 3
    n_checked = 0
    for book, x in small_states(i_star=2, q_max=q_cap):
        for event in exo_events(book, q_cap):
            b2, x2 = apply_exo_transition(book, x, event, q_cap)
            check_book(b2)
            check_agent(b2, x2, i_star=2 + 3)   # inventory may drift past i_star via fills
            assert -2 - 3 <= x2.inv <= 2 + 3
            n_checked += 1
    assert n_checked > 10_000


# ---------------------------------------------------------------------------
# mirror conjugation properties
# ---------------------------------------------------------------------------

@st.composite
def domain_state(draw):
    spread = draw(st.integers(1, 2))
    qb = draw(st.integers(1, 4))
    qa = draw(st.integers(1, 4))
    bid = draw(st.integers(-5, 5))
    book = BookState(bid, bid + spread, qb, qa)
    i = draw(st.integers(-2, 2))
    nb = draw(st.integers(0, min(qb, 2 - i)))
    bb = draw(st.integers(0, qb - nb)) if nb else 0
    na = draw(st.integers(0, min(qa, 2 + i)))
    ba = draw(st.integers(0, qa - na)) if na else 0
    x = AgentState(draw(st.integers(-10, 10)), i, nb, na, bb, ba, draw(st.integers(0, 3)))
    return book, x


@given(domain_state(), st.integers(0, 10**6))
@settings(max_examples=300, deadline=None)
def test_mirror_conjugates_own_transition(state, pick):
    book, x = state
    lim = TradeLimits(i_star=2, max_order=3, q_cap=4)
    acts = admissible_actions(book, x, lim)
    if not acts:
        return
    act = acts[pick % len(acts)]
    draws = list(draws_for(book, act, lim.q_cap))
    draw = draws[pick % len(draws)]
    b2, x2 = apply_own_transition(book, x, MarketEvent(act, draw), lim.q_cap)
    mb2, mx2 = apply_own_transition(mirror_book(book), mirror_agent(x),
                                    mirror_event(MarketEvent(act, draw)), lim.q_cap)
    assert mb2 == mirror_book(b2)
    assert mx2 == mirror_agent(x2)


@given(domain_state(), st.integers(0, 10**6))
@settings(max_examples=300, deadline=None)
def test_mirror_conjugates_exo_transition(state, pick):
    book, x = state
    events = list(exo_events(book, q_cap=4))
    event = events[pick % len(events)]
    b2, x2 = apply_exo_transition(book, x, event, 4)
    mb2, mx2 = apply_exo_transition(mirror_book(book), mirror_agent(x),
                                    mirror_event(event), 4)
    assert mb2 == mirror_book(b2)
    assert mx2 == mirror_agent(x2)


@given(domain_state())
@settings(max_examples=300, deadline=None)
def test_mirror_bijects_action_sets(state):
    book, x = state
    lim = TradeLimits(i_star=2, max_order=3, q_cap=4)
    acts = admissible_actions(book, x, lim)
    mirrored = sorted(mirror_action(a) for a in acts)
    assert mirrored == admissible_actions(mirror_book(book), mirror_agent(x), lim)


@given(domain_state(), st.integers(0, 10**6))
@settings(max_examples=300, deadline=None)
def test_cash_legs_price_net_aggression_at_touch(state, pick):
    book, x = state
    lim = TradeLimits(i_star=2, max_order=3, q_cap=4)
    acts = [a for a in admissible_actions(book, x, lim) if a.agg_bid or a.agg_ask]
    if not acts:
        return
    act = acts[pick % len(acts)]
    draws = list(draws_for(book, act, lim.q_cap))
    _, x2 = apply_own_transition(book, x, MarketEvent(act, draws[pick % len(draws)]), lim.q_cap)
    d_inv = x2.inv - x.inv
    d_cash = x2.cash - x.cash
    price = book.bid if act.agg_bid else book.ask
    assert d_cash == -d_inv * price
    assert abs(d_inv) <= max(act.agg_bid, act.agg_ask)
