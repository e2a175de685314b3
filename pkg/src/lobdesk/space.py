"""Reduced state grids for the backward solvers.

A reduced state is (spread, q_b, q_a, i, n_b, b_b, n_a, b_a): the book up
to a price shift plus the agent's inventory and queue bookkeeping.  Cash
and the action counter are factored out by the caller (exponential utility
makes both multiplicative); absolute price levels never enter.

Constraints (the domain the dynamics provably preserve):

    spread in {1, 2};  1 <= q_b, q_a <= q_max
    -i_star <= i <= i_star;  n_b + i <= i_star;  i - n_a >= -i_star
    n + b <= q per side;  b = 0 whenever n = 0

States are enumerated lexicographically and indexed densely.  With
`use_mirror=True` only one representative per bid/ask reflection orbit is
kept (the one with the smaller packed code); `index_of` then reports
whether the queried state was stored flipped, so policy lookups can mirror
the stored action back.  Mirror reduction is only sound when the flow
prior, the terminal utility, and the action weights are all symmetric;
callers opt in.
"""

from __future__ import annotations

import numpy as np

from .book import AgentState, BookState


class StateSpace:
    def __init__(self, q_max: int, i_star: int, use_mirror: bool = False):
        if q_max < 1 or i_star < 0:
            raise ValueError("need q_max >= 1 and i_star >= 0")
        self.q_max = q_max
        self.i_star = i_star
        self.use_mirror = use_mirror

        # side pairs (n, b) per queue size: index 0 is the empty (0, 0) pair
        self._pair_idx = np.full((q_max + 1, q_max + 1, q_max + 1), -1, dtype=np.int32)
        self._pairs_n: list[np.ndarray] = []
        self._pairs_b: list[np.ndarray] = []
        for q in range(q_max + 1):
            ns, bs = [0], [0]
            for n in range(1, q + 1):
                for b in range(0, q - n + 1):
                    ns.append(n)
                    bs.append(b)
            self._pairs_n.append(np.array(ns, dtype=np.int64))
            self._pairs_b.append(np.array(bs, dtype=np.int64))
            self._pair_idx[q, ns, bs] = np.arange(len(ns), dtype=np.int32)
        self.S = 1 + q_max * (q_max + 1) // 2      # radix for one side

        cols = self._enumerate()
        codes = self._code(*cols)
        mirror_codes = self._code(cols[0], cols[2], cols[1], -cols[3],
                                  cols[6], cols[7], cols[4], cols[5])
        if use_mirror:
            keep = codes <= mirror_codes
        else:
            keep = np.ones(len(codes), dtype=bool)

        kept = [c[keep] for c in cols]
        self.spread_col, self.qb_col, self.qa_col, self.i_col, \
            self.nb_col, self.bb_col, self.na_col, self.ba_col = \
            [c.astype(np.int16) for c in kept]
        self.n_states = int(keep.sum())

        n_codes = 2 * q_max * q_max * (2 * i_star + 1) * self.S * self.S
        self._rev = np.full(n_codes, -1, dtype=np.int32)
        self._flip = np.zeros(n_codes, dtype=bool)
        idx = np.arange(self.n_states, dtype=np.int32)
        self._rev[codes[keep]] = idx
        if use_mirror:
            mc = mirror_codes[keep]
            self._rev[mc] = idx
            self._flip[mc[mc != codes[keep]]] = True

    def _enumerate(self) -> list[np.ndarray]:
        out = [[] for _ in range(8)]
        for spread in (1, 2):
            for qb in range(1, self.q_max + 1):
                pb_n, pb_b = self._pairs_n[qb], self._pairs_b[qb]
                for qa in range(1, self.q_max + 1):
                    pa_n, pa_b = self._pairs_n[qa], self._pairs_b[qa]
                    for i in range(-self.i_star, self.i_star + 1):
                        mb = pb_n <= self.i_star - i
                        ma = pa_n <= self.i_star + i
                        nb, bb = pb_n[mb], pb_b[mb]
                        na, ba = pa_n[ma], pa_b[ma]
                        kb, ka = len(nb), len(na)
                        if kb == 0 or ka == 0:
                            continue
                        out[0].append(np.full(kb * ka, spread, dtype=np.int64))
                        out[1].append(np.full(kb * ka, qb, dtype=np.int64))
                        out[2].append(np.full(kb * ka, qa, dtype=np.int64))
                        out[3].append(np.full(kb * ka, i, dtype=np.int64))
                        out[4].append(np.repeat(nb, ka))
                        out[5].append(np.repeat(bb, ka))
                        out[6].append(np.tile(na, kb))
                        out[7].append(np.tile(ba, kb))
        return [np.concatenate(c) for c in out]

    def _code(self, spread, qb, qa, i, nb, bb, na, ba):
        sb = self._pair_idx[qb, nb, bb].astype(np.int64)
        sa = self._pair_idx[qa, na, ba].astype(np.int64)
        if np.any(sb < 0) or np.any(sa < 0):
            raise ValueError("invalid (n, b) pair for queue size")
        q = self.q_max
        c = (spread - 1) * q + (qb - 1)
        c = c * q + (qa - 1)
        c = c * (2 * self.i_star + 1) + (i + self.i_star)
        c = c * self.S + sb
        return c * self.S + sa

    # -- lookups -------------------------------------------------------------

    def index_of(self, book: BookState, x: AgentState) -> tuple[int, bool]:
        """Dense index of the reduced state, and whether it is stored mirrored."""
        code = self._code(np.int64(book.spread), np.int64(book.qb), np.int64(book.qa),
                          np.int64(x.inv), np.int64(x.rest_bid), np.int64(x.ahead_bid),
                          np.int64(x.rest_ask), np.int64(x.ahead_ask))
        idx = int(self._rev[code])
        if idx < 0:
            raise KeyError(f"state outside grid: {book}, {x}")
        return idx, bool(self._flip[code])

    def contains(self, book: BookState, x: AgentState) -> bool:
        if not (1 <= book.qb <= self.q_max and 1 <= book.qa <= self.q_max
                and book.spread in (1, 2) and abs(x.inv) <= self.i_star):
            return False
        ok = (x.rest_bid + x.inv <= self.i_star and x.inv - x.rest_ask >= -self.i_star
              and x.rest_bid + x.ahead_bid <= book.qb
              and x.rest_ask + x.ahead_ask <= book.qa
              and (x.rest_bid > 0 or x.ahead_bid == 0)
              and (x.rest_ask > 0 or x.ahead_ask == 0))
        return bool(ok)

    def decode(self, idx: int) -> tuple[BookState, AgentState]:
        """Representative (book, agent) of state idx, bid pinned at price 0."""
        spread = int(self.spread_col[idx])
        book = BookState(0, spread, int(self.qb_col[idx]), int(self.qa_col[idx]))
        x = AgentState(0, int(self.i_col[idx]), int(self.nb_col[idx]),
                       int(self.na_col[idx]), int(self.bb_col[idx]),
                       int(self.ba_col[idx]), 0)
        return book, x

    def __len__(self) -> int:
        return self.n_states

    def __repr__(self) -> str:
        tag = "mirror" if self.use_mirror else "full"
        return (f"StateSpace(q_max={self.q_max}, i_star={self.i_star}, "
                f"{tag}, {self.n_states} states)")
