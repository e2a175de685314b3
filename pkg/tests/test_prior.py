"""Flow-prior kernel tests: rates, size laws, regeneration, sampling."""

import math

import numpy as np
import pytest

from lobdesk.book import (
    BookState,
    FlowAction,
    NO_DRAW,
    is_admissible_flow,
    mirror_action,
    mirror_book,
    mirror_draw,
)
from lobdesk.prior import KernelModel, PriorConfig, book_keys

KM = KernelModel()


def rates_by(book, pred):
    return sum(r for a, r in KM.events(book) if pred(a))


# ---------------------------------------------------------------------------
# rate composition
# ---------------------------------------------------------------------------

def test_total_rate_interior():
    for book in (BookState(0, 1, 6, 6), BookState(0, 2, 6, 2), BookState(0, 1, 6, 2),
                 BookState(0, 1, 4, 9), BookState(0, 2, 9, 9)):
        assert KM.gamma(book) == pytest.approx(1.2, abs=1e-12)


def test_market_side_split_balanced():
    book = BookState(0, 1, 4, 4)
    ask = rates_by(book, lambda a: a.agg_ask > 0)
    bid = rates_by(book, lambda a: a.agg_bid > 0)
    assert ask == pytest.approx(0.3, abs=1e-12)
    assert bid == pytest.approx(0.3, abs=1e-12)


def test_market_side_split_imbalanced():
    book = BookState(0, 1, 6, 2)          # Imb = 0.5
    ask = rates_by(book, lambda a: a.agg_ask > 0)
    assert ask / 0.6 == pytest.approx(0.5 + 0.35 * 0.5, abs=1e-12)


def test_market_size_law_centered():
    # Imb = 0, ask queue 4: center ceil(0.7*4) = 3, neighbours 2 and 4
    book = BookState(0, 1, 4, 4)
    got = {a.agg_ask: r for a, r in KM.events(book) if a.agg_ask}
    assert set(got) == {2, 3, 4}
    assert got[3] == pytest.approx(0.6 * 0.5 * 0.6, abs=1e-12)
    assert got[2] == pytest.approx(0.6 * 0.5 * 0.2, abs=1e-12)
    assert got[4] == pytest.approx(0.6 * 0.5 * 0.2, abs=1e-12)


def test_market_size_law_clips_to_queue():
    # Imb = 0.5, ask queue 2: f = 0.85, center ceil(1.7) = 2, the +1
    # neighbour clips onto the queue size
    book = BookState(0, 1, 6, 2)
    got = {a.agg_ask: r for a, r in KM.events(book) if a.agg_ask}
    p_ask = 0.675 * 0.6
    assert got[1] == pytest.approx(p_ask * 0.2, abs=1e-12)
    assert got[2] == pytest.approx(p_ask * 0.8, abs=1e-12)


def test_market_size_zero_outcomes_drop_rate():
    # bid queue 1 at Imb = -0.6: f_bid = 0.88, center 1, the -1 neighbour
    # hits zero and disappears together with its rate mass
    book = BookState(0, 1, 1, 4)
    got = {a.agg_bid: r for a, r in KM.events(book) if a.agg_bid}
    p_bid = (0.5 + 0.35 * 0.6) * 0.6
    assert got == {1: pytest.approx(p_bid * 0.8, abs=1e-12)}
    assert KM.gamma(book) == pytest.approx(1.2 - p_bid * 0.2, abs=1e-12)


def test_limit_join_law_spread_one():
    book = BookState(0, 1, 4, 4)
    got = {a.lim_bid: r for a, r in KM.events(book) if a.lim_bid}
    assert got[1] == pytest.approx(0.3 * 0.35, abs=1e-12)
    assert got[2] == pytest.approx(0.3 * 0.55, abs=1e-12)
    assert got[3] == pytest.approx(0.3 * 0.10, abs=1e-12)
    assert rates_by(book, lambda a: a.spr_bid or a.spr_ask) == 0.0


def test_inspread_law_spread_two():
    book = BookState(0, 2, 6, 2)          # Imb = 0.5
    spr_b = rates_by(book, lambda a: a.spr_bid > 0)
    spr_a = rates_by(book, lambda a: a.spr_ask > 0)
    assert spr_b == pytest.approx(0.6 * 0.9 * 0.675, abs=1e-12)
    assert spr_a == pytest.approx(0.6 * 0.9 * 0.325, abs=1e-12)
    joins = rates_by(book, lambda a: a.lim_bid or a.lim_ask)
    assert joins == pytest.approx(0.6 * 0.1, abs=1e-12)


def test_join_clipped_at_queue_cap():
    book = BookState(0, 1, 11, 12)
    got = {a.lim_bid: r for a, r in KM.events(book) if a.lim_bid}
    assert got == {1: pytest.approx(0.3, abs=1e-12)}   # all sizes merge to 1
    assert rates_by(book, lambda a: a.lim_ask > 0) == 0.0


def test_domain_errors():
    with pytest.raises(ValueError):
        KM.events(BookState(0, 1, 13, 4))
    with pytest.raises(ValueError):
        KernelModel(PriorConfig(move_prob=1.5))
    with pytest.raises(ValueError):
        KernelModel(PriorConfig(limit_sizes=((1, 0.5), (2, 0.4))))


# ---------------------------------------------------------------------------
# regeneration law
# ---------------------------------------------------------------------------

def test_regen_non_depleting_is_trivial():
    book = BookState(0, 1, 4, 4)
    assert KM.regen_law(book, FlowAction(agg_ask=2)) == [(NO_DRAW, 1.0)]
    assert KM.regen_law(BookState(0, 2, 4, 4), FlowAction(spr_bid=2)) == [(NO_DRAW, 1.0)]


def test_regen_single_depletion_spread_one():
    book = BookState(0, 1, 4, 2)
    law = KM.regen_law(book, FlowAction(agg_ask=2))
    assert sum(p for _, p in law) == pytest.approx(1.0, abs=1e-14)
    move = {d.refill_ask: p for d, p in law if d.move == 1}
    stay = {d.refill_ask: p for d, p in law if d.move == 0}
    assert sum(move.values()) == pytest.approx(0.75, abs=1e-12)
    assert move[10] == pytest.approx(0.75 * 0.60, abs=1e-12)
    assert move[5] == pytest.approx(0.75 * 0.25, abs=1e-12)
    assert move[12] == pytest.approx(0.75 * 0.15, abs=1e-12)
    assert stay == {2: pytest.approx(0.25 * 0.60), 1: pytest.approx(0.25 * 0.25),
                    3: pytest.approx(0.25 * 0.15)}
    assert all(d.refill_bid == 0 for d, _ in law)      # bid untouched


def test_regen_double_move_far_times_near():
    book = BookState(0, 2, 4, 2)
    law = KM.regen_law(book, FlowAction(agg_ask=2))
    assert sum(p for _, p in law) == pytest.approx(1.0, abs=1e-14)
    moved = [(d, p) for d, p in law if d.move == 1]
    assert len(moved) == 9                              # 3 far x 3 near
    ask_marg = {}
    bid_marg = {}
    for d, p in moved:
        ask_marg[d.refill_ask] = ask_marg.get(d.refill_ask, 0.0) + p
        bid_marg[d.refill_bid] = bid_marg.get(d.refill_bid, 0.0) + p
    assert ask_marg[10] == pytest.approx(0.75 * 0.60, abs=1e-12)   # discovered: far
    assert bid_marg[2] == pytest.approx(0.75 * 0.60, abs=1e-12)    # created: near
    # independence: joint = product of marginals (conditionally on the move)
    for d, p in moved:
        assert p == pytest.approx(ask_marg[d.refill_ask] * bid_marg[d.refill_bid] / 0.75,
                                  abs=1e-12)


def test_regen_clipped_at_small_cap():
    km = KernelModel(PriorConfig(q_cap=6))
    law = km.regen_law(BookState(0, 1, 4, 2), FlowAction(agg_ask=2))
    move = {d.refill_ask: p for d, p in law if d.move == 1}
    assert set(move) == {5, 6}                          # 10 and 12 merge at the cap
    assert move[6] == pytest.approx(0.75 * 0.75, abs=1e-12)
    assert move[5] == pytest.approx(0.75 * 0.25, abs=1e-12)


def test_regen_double_depletion_in_place():
    book = BookState(0, 2, 1, 1)
    law = KM.regen_law(book, FlowAction(can_bid=1, can_ask=1))
    assert len(law) == 9
    assert all(d.move == 0 for d, _ in law)
    assert sum(p for _, p in law) == pytest.approx(1.0, abs=1e-14)


# ---------------------------------------------------------------------------
# structural invariants over the whole domain
# ---------------------------------------------------------------------------

def test_kernel_invariants_exhaustive():
    for spread, qb, qa in book_keys(KM.cfg.q_cap):
        book = BookState(0, spread, qb, qa)
        total = 0.0
        for act, rate in KM.events(book):
            assert rate > 0.0
            assert is_admissible_flow(act)
            assert act.consumed_bid <= qb and act.consumed_ask <= qa
            assert not act.is_zero()
            law = KM.regen_law(book, act)
            assert abs(sum(p for _, p in law) - 1.0) < 1e-12
            assert all(p > 0 for _, p in law)
            total += rate
        assert total <= 1.2 + 1e-12


def test_kernel_mirror_symmetry_exhaustive():
    for spread, qb, qa in book_keys(KM.cfg.q_cap):
        book = BookState(0, spread, qb, qa)
        direct = {a: r for a, r in KM.events(book)}
        flipped = {mirror_action(a): r for a, r in KM.events(mirror_book(book))}
        assert set(direct) == set(flipped)
        for a in direct:
            assert direct[a] == pytest.approx(flipped[a], abs=1e-14)
        for act, _ in KM.events(book):
            law = {d: p for d, p in KM.regen_law(book, act)}
            mlaw = {mirror_draw(d): p for d, p in
                    KM.regen_law(mirror_book(book), mirror_action(act))}
            assert law.keys() == mlaw.keys()
            for d in law:
                assert law[d] == pytest.approx(mlaw[d], abs=1e-14)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_sampler_is_deterministic():
    book = BookState(0, 1, 6, 6)
    seqs = []
    for _ in range(2):
        rng = np.random.Generator(np.random.PCG64(12345))
        seqs.append([KM.sample_event(book, 0.5, rng) for _ in range(200)])
    assert seqs[0] == seqs[1]


def test_thinning_frequency():
    book = BookState(0, 1, 6, 6)
    assert KM.gamma(book) == pytest.approx(1.2, abs=1e-12)
    rng = np.random.Generator(np.random.PCG64(7))
    n = 100_000
    hits = sum(KM.sample_event(book, 0.5, rng) is not None for _ in range(n))
    p = -math.expm1(-0.6)
    se = math.sqrt(p * (1 - p) / n)
    assert abs(hits / n - p) < 3 * se


def test_conditional_draws_match_rates_chisquare():
    from scipy import stats

    book = BookState(0, 1, 6, 2)
    rng = np.random.Generator(np.random.PCG64(11))
    n = 100_000
    counts = {}
    for _ in range(n):
        ev = KM.sample_flow(book, rng)
        counts[ev.action] = counts.get(ev.action, 0) + 1
    acts = [a for a, _ in KM.events(book)]
    rates = np.array([r for _, r in KM.events(book)])
    expected = rates / rates.sum() * n
    observed = np.array([counts.get(a, 0) for a in acts], dtype=float)
    chi = stats.chisquare(observed, expected)
    assert chi.pvalue > 0.01
