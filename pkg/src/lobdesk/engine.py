"""Backward dynamic programming for jump impulse-control problems.

The scheme discretizes a jump-diffusion impulse problem on a reduced state
grid.  One backward step at time t_i computes, per extra layer l (used for
the hedging-spread node; a single layer otherwise) and action-budget slice:

    w   = mix . ( v_next  +  dt * (flow(v_next) - gamma*v_next) )
    v   = max( w , max_c pen * E_draws[ weight * w(successor) ] )

where `mix` couples the layers (identity when there is none), `flow` is the
CSR of exogenous-event edges, and the impulse successors read w at the next
budget slice (or the same slice when the budget is folded away into `pen`).
The mix is applied after the flow so the composed step is a convex
combination of next values whenever dt*gamma < 1; folding the two additively
instead would need the mix diagonal to dominate dt*gamma, which strongly
mean-reverting spread trees violate.
The comparison is strict, so continuation wins exact ties and the earliest
(lexicographically smallest) action wins among equal maximizers.

The scheme contracts only when dt * max-event-rate < 1; `solve` refuses
to run otherwise.

Edge weights come from a caller-supplied callback

    weight_fn(book, x, ev, book2, x2) -> (mult, de)

evaluated on representative books (bid price 0), which is where each
problem's measure change (cash factor, inventory-times-mid factor, hedge
cash flows) enters; `de` tags the edge with the integer mark that the
layer factor table F[l, de] acts on (0 and F = 1 when unused).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .book import (
    AgentState,
    BookState,
    FlowAction,
    MarketEvent,
    TradeLimits,
    admissible_actions,
    apply_exo_transition,
    apply_own_transition,
)
from .kernels import ActionTable, FlowTable
from .space import StateSpace

WeightFn = Callable[[BookState, AgentState, MarketEvent, BookState, AgentState],
                    tuple[float, int]]


def unit_weight(book, x, ev, book2, x2):
    return 1.0, 0


# ---------------------------------------------------------------------------
# table construction (object-level; book.py is the single source of truth)
# ---------------------------------------------------------------------------

def build_flow_table(space: StateSpace, km, weight_fn: WeightFn = unit_weight,
                     progress: Callable[[int, int], None] | None = None) -> FlowTable:
    q_cap = km.cfg.q_cap if hasattr(km, "cfg") else space.q_max
    if q_cap != space.q_max:
        raise ValueError("kernel queue cap must match the grid (closure)")
    ptr = np.zeros(space.n_states + 1, dtype=np.int64)
    dst, w0, de, gamma = [], [], [], np.zeros(space.n_states)
    for z in range(space.n_states):
        book, x = space.decode(z)
        g = 0.0
        for act, rate in km.events(book):
            g += rate
            for draw, p in km.regen_law(book, act):
                ev = MarketEvent(act, draw)
                b2, x2 = apply_exo_transition(book, x, ev, q_cap)
                mult, mark = weight_fn(book, x, ev, b2, x2)
                dst.append(space.index_of(b2, x2)[0])
                w0.append(rate * p * mult)
                de.append(mark)
        gamma[z] = g
        ptr[z + 1] = len(dst)
        if progress and z % 100_000 == 0:
            progress(z, space.n_states)
    return FlowTable(ptr, dst, w0, de, gamma)


def build_action_table(space: StateSpace, km, limits: TradeLimits,
                       weight_fn: WeightFn = unit_weight,
                       progress: Callable[[int, int], None] | None = None) -> ActionTable:
    if limits.q_cap != space.q_max or limits.i_star != space.i_star:
        raise ValueError("trade limits must match the grid (closure)")
    if limits.j_max is not None:
        raise ValueError("budget slices are handled by the solver, not the table")
    state_ptr = np.zeros(space.n_states + 1, dtype=np.int64)
    slot_act: list[int] = []
    edge_ptr: list[int] = [0]
    dst, w0, de = [], [], []
    act_ids: dict[FlowAction, int] = {}
    actions: list[FlowAction] = []
    for z in range(space.n_states):
        book, x = space.decode(z)
        for act in admissible_actions(book, x, limits):
            for draw, p in km.regen_law(book, act):
                ev = MarketEvent(act, draw)
                b2, x2 = apply_own_transition(book, x, ev, limits.q_cap)
                mult, mark = weight_fn(book, x, ev, b2, x2)
                dst.append(space.index_of(b2, x2)[0])
                w0.append(p * mult)
                de.append(mark)
            if act not in act_ids:
                act_ids[act] = len(actions)
                actions.append(act)
            slot_act.append(act_ids[act])
            edge_ptr.append(len(dst))
        state_ptr[z + 1] = len(slot_act)
        if progress and z % 100_000 == 0:
            progress(z, space.n_states)
    return ActionTable(state_ptr, slot_act, edge_ptr, dst, w0, de, actions)


# ---------------------------------------------------------------------------
# scalar reference operators (slow; used to cross-check the tables)
# ---------------------------------------------------------------------------

def op_flow(space: StateSpace, km, weight_fn: WeightFn, v: np.ndarray,
            book: BookState, x: AgentState) -> float:
    """Exogenous-flow contribution sum rate*(E[weight*v(dst)] - v(z))."""
    vz = v[space.index_of(book, x)[0]]
    total = 0.0
    for act, rate in km.events(book):
        acc = 0.0
        for draw, p in km.regen_law(book, act):
            ev = MarketEvent(act, draw)
            b2, x2 = apply_exo_transition(book, x, ev)
            mult, _ = weight_fn(book, x, ev, b2, x2)
            acc += p * mult * v[space.index_of(b2, x2)[0]]
        total += rate * (acc - vz)
    return total


def op_impulse(space: StateSpace, km, weight_fn: WeightFn, w: np.ndarray,
               book: BookState, x: AgentState, act: FlowAction,
               q_cap: int | None = None) -> float:
    """Post-action expectation E_draws[weight * w(successor)]."""
    acc = 0.0
    for draw, p in km.regen_law(book, act):
        ev = MarketEvent(act, draw)
        b2, x2 = apply_own_transition(book, x, ev, q_cap or space.q_max)
        mult, _ = weight_fn(book, x, ev, b2, x2)
        acc += p * mult * w[space.index_of(b2, x2)[0]]
    return acc


# ---------------------------------------------------------------------------
# the backward sweep
# ---------------------------------------------------------------------------

@dataclass
class SolveResult:
    space: StateSpace
    values: np.ndarray        # (L, J, N) value at t = 0
    policies: np.ndarray      # (n_steps, L, J, N) action id or -1
    actions: list[FlowAction]
    dt: float
    n_steps: int
    meta: dict

    @property
    def n_layers(self) -> int:
        return self.values.shape[0]

    @property
    def j_slices(self) -> int:
        return self.values.shape[1]

    def value_of(self, book: BookState, x: AgentState, layer: int = 0,
                 j: int = 0) -> float:
        return float(self.values[layer, j, self.space.index_of(book, x)[0]])

    def action_at(self, step: int, book: BookState, x: AgentState,
                  layer: int = 0, j: int = 0) -> FlowAction | None:
        """Policy lookup with mirror decoding; None means continue."""
        from .book import mirror_action
        idx, flipped = self.space.index_of(book, x)
        if j >= self.j_slices:           # budget spent
            return None
        a = int(self.policies[step, layer, j, idx])
        if a < 0:
            return None
        act = self.actions[a]
        return mirror_action(act) if flipped else act


def solve(space: StateSpace, flow: FlowTable, acts: ActionTable,
          terminal: np.ndarray, dt: float, n_steps: int, *,
          pen: float = 1.0, mix: np.ndarray | None = None,
          F: np.ndarray | None = None, de_off: int = 0,
          j_slices: int | None = None, meta: dict | None = None,
          progress: Callable[[int, int], None] | None = None) -> SolveResult:
    """Run the backward scheme from `terminal` over n_steps of length dt.

    terminal has shape (L, J, N): L layers (1 without a mix matrix), J
    action-budget slices (1 folded), N grid states.  With J > 1, actions
    consume budget: slice j reads post-action values from slice j+1 and the
    last slice cannot act.  With J = 1 the budget is unlimited and `pen`
    (e.g. exp(eta*per-action-cost)) multiplies post-action values.
    """
    if dt * flow.max_gamma >= 1.0:
        raise ValueError(
            f"dt*max_rate = {dt * flow.max_gamma:.3f} >= 1: the explicit scheme "
            "is not monotone; shrink dt")
    L = 1 if mix is None else mix.shape[0]
    J = j_slices or 1
    N = space.n_states
    terminal = np.asarray(terminal, dtype=np.float64).reshape(L, J, N)
    if F is None:
        F = np.ones((L, 1))
    F = np.asarray(F, dtype=np.float64)

    v = terminal.copy()
    w = np.empty_like(v)
    policies = np.full((n_steps, L, J, N), -1, dtype=np.int32)
    for step in range(n_steps - 1, -1, -1):
        for j in range(J):
            for l in range(L):
                flw = flow.apply(v[l, j], F[l], de_off)
                np.multiply(flw, dt, out=flw)
                np.add(v[l, j], flw, out=w[l, j])
            if mix is not None:
                # layer coupling applied to the flowed values: the composed
                # step is monotone whenever dt*gamma < 1, independent of the
                # mix diagonal (an additive mix + dt*flow form is not)
                w[:, j, :] = mix @ w[:, j, :]
        for j in range(J):
            for l in range(L):
                if J > 1 and j == J - 1:
                    v[l, j] = w[l, j]      # budget exhausted: no impulse
                    continue
                w_next = w[l, j + 1] if J > 1 else w[l, 0]
                acts.apply(w[l, j], w_next, F[l], de_off, pen,
                           v_out=v[l, j], pol_out=policies[step, l, j])
        if progress:
            progress(n_steps - step, n_steps)
    return SolveResult(space, v, policies, acts.actions, dt, n_steps, meta or {})


# ---------------------------------------------------------------------------
# policy file format: one JSON header line, then raw little-endian arrays
# ---------------------------------------------------------------------------

_MAGIC = b"LOBDESKPOL 1\n"


def save_policy(path: str, result: SolveResult) -> None:
    header = {
        "grid": {"q_max": result.space.q_max, "i_star": result.space.i_star,
                 "mirror": result.space.use_mirror, "n_states": result.space.n_states},
        "shape": list(result.policies.shape),
        "dt": result.dt,
        "n_steps": result.n_steps,
        "actions": [list(a) for a in result.actions],
        "meta": result.meta,
    }
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(result.policies.astype("<i4").tobytes(order="C"))
        f.write(result.values.astype("<f8").tobytes(order="C"))


class PolicyFile:
    """Loaded policy with enough structure to drive simulations."""

    def __init__(self, header: dict, policies: np.ndarray, values: np.ndarray):
        self.header = header
        self.policies = policies
        self.values = values
        self.actions = [FlowAction(*a) for a in header["actions"]]
        self.dt = float(header["dt"])
        self.n_steps = int(header["n_steps"])
        self.grid = header["grid"]
        self.meta = header.get("meta", {})


def result_from_file(pf: PolicyFile) -> SolveResult:
    """Rebuild a usable result (grid included) from a loaded policy."""
    space = StateSpace(pf.grid["q_max"], pf.grid["i_star"],
                       use_mirror=pf.grid["mirror"])
    if len(space) != pf.grid["n_states"]:
        raise ValueError("policy file grid does not rebuild to the same size")
    return SolveResult(space, pf.values, pf.policies, pf.actions,
                       pf.dt, pf.n_steps, pf.meta)


def load_policy(path: str) -> PolicyFile:
    with open(path, "rb") as f:
        if f.readline() != _MAGIC:
            raise ValueError(f"{path}: not a policy file (bad magic)")
        header = json.loads(f.readline().decode())
        shape = tuple(header["shape"])
        n_pol = int(np.prod(shape))
        pol = np.frombuffer(f.read(4 * n_pol), dtype="<i4").reshape(shape)
        vals = np.frombuffer(f.read(), dtype="<f8").reshape(shape[1:])
    return PolicyFile(header, pol, vals)


def export_policy_csv(stream: io.TextIOBase, space: StateSpace,
                      result_or_file, step: int = 0, layer: int = 0,
                      j: int = 0) -> None:
    """Human-readable dump of one policy slice."""
    pols = result_or_file.policies[step, layer, j]
    acts: Sequence[FlowAction] = result_or_file.actions
    stream.write("spread,q_bid,q_ask,inv,rest_bid,ahead_bid,rest_ask,ahead_ask,"
                 "action,agg_bid,agg_ask,lim_bid,lim_ask,spr_bid,spr_ask,"
                 "can_bid,can_ask\n")
    for z in range(space.n_states):
        a = int(pols[z])
        act = acts[a] if a >= 0 else None
        name = "continue" if act is None else "act"
        fields = ",".join(str(v) for v in (act or FlowAction()))
        stream.write(f"{space.spread_col[z]},{space.qb_col[z]},{space.qa_col[z]},"
                     f"{space.i_col[z]},{space.nb_col[z]},{space.bb_col[z]},"
                     f"{space.na_col[z]},{space.ba_col[z]},{name},{fields}\n")
