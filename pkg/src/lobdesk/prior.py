"""Queue-reactive prior for the exogenous order flow.

Events arrive as a marked Poisson stream whose intensity table depends on
the book only through (spread, q_bid, q_ask).  The decomposition is

    rate(action | book)          finite support of flow actions with rates
    regen(draw | book, action)   law of the regeneration mark (price-move
                                 coin and refill sizes), summing to one

Default calibration (one "unit" is half a median trade size):

    limit orders   0.6/s, side 1/2 each, sizes {1: 35%, 2: 55%, 3: 10%};
                   at a 2-tick spread the order lands inside the spread
                   with probability 0.9, bid side w.p. 0.5 + 0.35*Imb
    market orders  0.6/s, ask side w.p. 0.5 + 0.35*Imb where
                   Imb = (q_b - q_a)/(q_b + q_a); size is centered at
                   ceil(f*Q) with f = 0.7 + 0.3*Imb on the ask
                   (0.7 - 0.3*Imb on the bid), 60% center and 20% at
                   center +- 1, out-of-range mass accumulating at the
                   clipped endpoint (0 or Q); zero-size outcomes are no-ops
                   and are dropped from the support
    cancellations  none by default (rate configurable)
    regeneration   price moves on depletion w.p. 0.75; a queue refilled at
                   a price level deeper in the book ("discovered") draws
                   from {10: 60%, 5: 25%, 12: 15%}, a queue refilled at its
                   old price or at a freshly created level draws from
                   {2: 60%, 1: 25%, 3: 15%}; on a double move the two draws
                   are independent

All refill and join sizes are clipped so queues never exceed `q_cap`
(probability mass merges at the cap).  The tables are symmetric under the
bid/ask mirror by construction, which the tests assert.
"""

from __future__ import annotations

import math
from typing import Iterator, NamedTuple

import numpy as np

from .book import BookState, FlowAction, MarketEvent, NO_DRAW, RegenDraw, imbalance

Dist = tuple[tuple[int, float], ...]

LIMIT_SIZES: Dist = ((1, 0.35), (2, 0.55), (3, 0.10))
REGEN_FAR: Dist = ((10, 0.60), (5, 0.25), (12, 0.15))
REGEN_NEAR: Dist = ((2, 0.60), (1, 0.25), (3, 0.15))


class PriorConfig(NamedTuple):
    limit_rate: float = 0.6
    market_rate: float = 0.6
    cancel_rate: float = 0.0
    imb_slope: float = 0.35          # side choice: 0.5 + slope*Imb
    size_center: float = 0.7         # market size fraction f = center + slope*Imb
    size_slope: float = 0.3
    center_prob: float = 0.6         # mass at ceil(f*Q); (1-p)/2 at each neighbour
    limit_sizes: Dist = LIMIT_SIZES
    move_prob: float = 0.75
    regen_far: Dist = REGEN_FAR
    regen_near: Dist = REGEN_NEAR
    inspread_prob: float = 0.9
    q_cap: int = 12


def _check_dist(d: Dist, name: str) -> None:
    if abs(sum(p for _, p in d) - 1.0) > 1e-12:
        raise ValueError(f"{name} does not sum to 1")
    if any(p < 0 for _, p in d) or any(s < 1 for s, _ in d):
        raise ValueError(f"{name} has a negative weight or a size below 1")


def _clip_merge(d: Dist, lo: int, hi: int) -> Dist:
    """Clip sizes into [lo, hi], merging probability mass at the endpoints."""
    acc: dict[int, float] = {}
    for s, p in d:
        s = min(max(s, lo), hi)
        acc[s] = acc.get(s, 0.0) + p
    return tuple(sorted(acc.items()))


def _market_sizes(cfg: PriorConfig, frac: float, q: int) -> Dist:
    """Trade-size law at a queue of size q: 60/20/20 around ceil(frac*q).

    Sizes clip into [0, q]; a zero size means "nothing happens" and is
    dropped (the caller's rates become sub-stochastic by that mass).
    """
    c = math.ceil(frac * q)
    side = (1.0 - cfg.center_prob) / 2.0
    raw = ((c - 1, side), (c, cfg.center_prob), (c + 1, side))
    return tuple((s, p) for s, p in _clip_merge(raw, 0, q) if s > 0)


class KernelModel:
    """Materialized flow prior over book states with q <= q_cap."""

    def __init__(self, cfg: PriorConfig = PriorConfig()):
        _check_dist(cfg.limit_sizes, "limit_sizes")
        _check_dist(cfg.regen_far, "regen_far")
        _check_dist(cfg.regen_near, "regen_near")
        for p in (cfg.move_prob, cfg.inspread_prob, cfg.center_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probability outside [0, 1]")
        if min(cfg.limit_rate, cfg.market_rate, cfg.cancel_rate) < 0:
            raise ValueError("negative rate")
        self.cfg = cfg
        self._beta: dict[tuple[int, int, int], list[tuple[FlowAction, float]]] = {}
        self._cum: dict[tuple[int, int, int], tuple[list[FlowAction], np.ndarray, float]] = {}

    # -- beta: action rates ------------------------------------------------

    def _build_beta(self, spread: int, qb: int, qa: int) -> list[tuple[FlowAction, float]]:
        cfg = self.cfg
        book = BookState(0, spread, qb, qa)
        imb = imbalance(book)
        p_ask = 0.5 + cfg.imb_slope * imb
        out: list[tuple[FlowAction, float]] = []

        join_rate = cfg.limit_rate * (1.0 - cfg.inspread_prob if spread == 2 else 1.0)
        for side, q in (("b", qb), ("a", qa)):
            room = cfg.q_cap - q
            for s, p in _clip_merge(cfg.limit_sizes, 1, max(room, 1)):
                if s > room:
                    continue                      # queue at cap: join is a no-op
                act = FlowAction(lim_bid=s) if side == "b" else FlowAction(lim_ask=s)
                out.append((act, join_rate * 0.5 * p))

        if spread == 2 and cfg.inspread_prob > 0:
            in_rate = cfg.limit_rate * cfg.inspread_prob
            p_bid_spr = 0.5 + cfg.imb_slope * imb
            for s, p in _clip_merge(cfg.limit_sizes, 1, cfg.q_cap):
                out.append((FlowAction(spr_bid=s), in_rate * p_bid_spr * p))
                out.append((FlowAction(spr_ask=s), in_rate * (1.0 - p_bid_spr) * p))

        f_bid = cfg.size_center - cfg.size_slope * imb
        f_ask = cfg.size_center + cfg.size_slope * imb
        for s, p in _market_sizes(cfg, f_bid, qb):
            out.append((FlowAction(agg_bid=s), cfg.market_rate * (1.0 - p_ask) * p))
        for s, p in _market_sizes(cfg, f_ask, qa):
            out.append((FlowAction(agg_ask=s), cfg.market_rate * p_ask * p))

        if cfg.cancel_rate > 0:
            for side, q in (("b", qb), ("a", qa)):
                for s, p in _clip_merge(cfg.limit_sizes, 1, q):
                    act = FlowAction(can_bid=s) if side == "b" else FlowAction(can_ask=s)
                    out.append((act, cfg.cancel_rate * 0.5 * p))

        return [(a, r) for a, r in out if r > 0.0]

    def events(self, book: BookState) -> list[tuple[FlowAction, float]]:
        """The finite support of the flow intensity with per-action rates."""
        if not 1 <= book.qb <= self.cfg.q_cap or not 1 <= book.qa <= self.cfg.q_cap:
            raise ValueError("book outside kernel domain")
        key = (book.spread, book.qb, book.qa)
        if key not in self._beta:
            self._beta[key] = self._build_beta(*key)
        return self._beta[key]

    def gamma(self, book: BookState) -> float:
        return sum(r for _, r in self.events(book))

    # -- lambda: regeneration law -------------------------------------------

    def regen_law(self, book: BookState, act: FlowAction) -> list[tuple[RegenDraw, float]]:
        """Law of the regeneration mark given the action; sums to one.

        Non-depleting actions (in-spread placements included: the placed
        size is the new queue) carry a single trivial draw.
        """
        cfg = self.cfg
        dep_b = act.consumed_bid == book.qb
        dep_a = act.consumed_ask == book.qa
        if not (dep_b or dep_a):
            return [(NO_DRAW, 1.0)]
        far = _clip_merge(cfg.regen_far, 1, cfg.q_cap)
        near = _clip_merge(cfg.regen_near, 1, cfg.q_cap)
        out: list[tuple[RegenDraw, float]] = []
        if dep_b and dep_a:
            # only reachable through agent actions at a 2-tick spread; the
            # two displacements cancel, both queues refill in place
            for sb, pb in near:
                for sa, pa in near:
                    out.append((RegenDraw(0, sb, sa), pb * pa))
            return out
        stay = 1.0 - cfg.move_prob
        if dep_b:
            if stay > 0:
                out += [(RegenDraw(0, s, 0), stay * p) for s, p in near]
            if book.spread == 1:
                out += [(RegenDraw(1, s, 0), cfg.move_prob * p) for s, p in far]
            else:
                # bid discovers a deeper level, the ask is dragged onto a
                # freshly created one: far x near, independent
                for sb, pb in far:
                    for sa, pa in near:
                        out.append((RegenDraw(1, sb, sa), cfg.move_prob * pb * pa))
        else:
            if stay > 0:
                out += [(RegenDraw(0, 0, s), stay * p) for s, p in near]
            if book.spread == 1:
                out += [(RegenDraw(1, 0, s), cfg.move_prob * p) for s, p in far]
            else:
                for sa, pa in far:
                    for sb, pb in near:
                        out.append((RegenDraw(1, sb, sa), cfg.move_prob * pa * pb))
        return out

    # -- sampling -----------------------------------------------------------

    def _cumulative(self, book: BookState) -> tuple[list[FlowAction], np.ndarray, float]:
        key = (book.spread, book.qb, book.qa)
        if key not in self._cum:
            ev = self.events(book)
            acts = [a for a, _ in ev]
            cum = np.cumsum([r for _, r in ev])
            self._cum[key] = (acts, cum, float(cum[-1]) if len(cum) else 0.0)
        return self._cum[key]

    def sample_flow(self, book: BookState, rng: np.random.Generator) -> MarketEvent:
        """Draw one event from the normalized flow law (conditional on arrival)."""
        acts, cum, total = self._cumulative(book)
        idx = int(np.searchsorted(cum, rng.random() * total, side="right"))
        act = acts[min(idx, len(acts) - 1)]
        return MarketEvent(act, self.sample_regen(book, act, rng))

    def sample_regen(self, book: BookState, act: FlowAction,
                     rng: np.random.Generator) -> RegenDraw:
        law = self.regen_law(book, act)
        if len(law) == 1:
            return law[0][0]
        u = rng.random()
        acc = 0.0
        for draw, p in law:
            acc += p
            if u < acc:
                return draw
        return law[-1][0]

    def sample_event(self, book: BookState, dt: float,
                     rng: np.random.Generator) -> MarketEvent | None:
        """One step of Bernoulli thinning: at most one event per dt.

        Emits an event with probability 1 - exp(-gamma(book)*dt), else
        None.  Uniform consumption depends only on (book, outcome), so a
        fixed seed replays the identical sequence.
        """
        total = self._cumulative(book)[2]
        if total <= 0.0:
            return None
        if rng.random() >= -math.expm1(-total * dt):
            return None
        return self.sample_flow(book, rng)


def book_keys(q_cap: int) -> Iterator[tuple[int, int, int]]:
    """All (spread, q_bid, q_ask) book keys with queues in [1, q_cap]."""
    for spread in (1, 2):
        for qb in range(1, q_cap + 1):
            for qa in range(1, q_cap + 1):
                yield spread, qb, qa
