"""Hot loops of the backward sweep, written twice behind one signature.

The numba path (default when importable) JIT-compiles plain loops; the
numpy path expresses the same segment sums with bincount/reduceat.  Both
accumulate each CSR segment left to right in edge order, so they agree to
the bit on identical inputs.  LOBDESK_BACKEND picks the default at import
(see backend.py); set_backend() flips it at runtime.

Layout shared by both paths:

    flow table     ptr[N+1], dst[nnz], w0[nnz], de[nnz]; per-state rate
                   total gamma[N].  Contribution of the exogenous flow:
                   out[z] = sum_e w0*F[de]*v[dst] - gamma[z]*v[z]
    action table   state_ptr[N+1] -> slots; slot_act[S] action ids;
                   edge_ptr[S+1] -> edges (dst, w0, de).  A slot's value is
                   pen * sum_e w0*F[de]*w_next[dst]; a state takes the best
                   slot strictly above its continuation value, ties going
                   to the earliest slot (actions are stored in lexicographic
                   order) and to continuation at exact equality.

`F` is the layer weight table indexed by de + de_off: market-making edges
all carry de = 0 and F = [1.0]; the futures-hedged solver uses de = net
traded units and F[l, de] = exp(-eta * s_l * de).
"""

from __future__ import annotations

import numpy as np

from . import backend
from .backend import njit

_ACTIVE = backend.backend_name()


def set_backend(name: str) -> None:
    """Override the kernel backend ('numba' or 'numpy') for this process.

    The default comes from LOBDESK_BACKEND at import; benchmarks and the
    backend-equality tests flip this to run both paths side by side.
    """
    global _ACTIVE
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not backend.HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    _ACTIVE = name


def active_backend() -> str:
    return _ACTIVE


@njit(cache=True)
def _flow_nb(v_next, ptr, dst, w0, de, F_l, de_off, gamma, out):
    for z in range(gamma.shape[0]):
        acc = 0.0
        for e in range(ptr[z], ptr[z + 1]):
            acc += w0[e] * F_l[de[e] + de_off] * v_next[dst[e]]
        out[z] = acc - gamma[z] * v_next[z]


@njit(cache=True)
def _impulse_nb(w_same, w_next, state_ptr, slot_act, edge_ptr, dst, w0, de,
                F_l, de_off, pen, v_out, pol_out):
    for z in range(w_same.shape[0]):
        best = w_same[z]
        arg = -1
        for s in range(state_ptr[z], state_ptr[z + 1]):
            acc = 0.0
            for e in range(edge_ptr[s], edge_ptr[s + 1]):
                acc += w0[e] * F_l[de[e] + de_off] * w_next[dst[e]]
            val = pen * acc
            if val > best:
                best = val
                arg = slot_act[s]
        v_out[z] = best
        pol_out[z] = arg


def _segment_rows(ptr: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(ptr.shape[0] - 1), np.diff(ptr))


def _flow_np(v_next, ptr, dst, w0, de, F_l, de_off, gamma, out, rows):
    contrib = w0 * F_l[de.astype(np.int64) + de_off] * v_next[dst]
    out[:] = np.bincount(rows, weights=contrib, minlength=gamma.shape[0])
    out -= gamma * v_next


def _impulse_np(w_same, w_next, state_ptr, slot_act, edge_ptr, dst, w0, de,
                F_l, de_off, pen, v_out, pol_out, edge_slot):
    n_states = w_same.shape[0]
    n_slots = slot_act.shape[0]
    contrib = w0 * F_l[de.astype(np.int64) + de_off] * w_next[dst]
    slot_vals = pen * np.bincount(edge_slot, weights=contrib, minlength=n_slots)

    # per-state max over its (contiguous) slot range; empty ranges -> -inf
    padded = np.append(slot_vals, -np.inf)
    starts = np.minimum(state_ptr[:-1], n_slots)
    best = np.maximum.reduceat(padded, starts) if n_slots else np.full(n_states, -np.inf)
    best[state_ptr[:-1] == state_ptr[1:]] = -np.inf

    take = best > w_same
    v_out[:] = np.where(take, best, w_same)

    # earliest slot attaining the max (slots are in lexicographic action order)
    slot_state = _segment_rows(state_ptr)
    hit = np.where(slot_vals == best[slot_state], np.arange(n_slots), n_slots)
    hit = np.append(hit, n_slots)
    first = np.minimum.reduceat(hit, starts) if n_slots else np.full(n_states, n_slots)
    pol_out[:] = np.where(take, np.append(slot_act, -1)[np.minimum(first, n_slots)], -1)


class FlowTable:
    """CSR of exogenous-event edges with per-state total rates."""

    def __init__(self, ptr, dst, w0, de, gamma):
        self.ptr = np.asarray(ptr, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int32)
        self.w0 = np.asarray(w0, dtype=np.float64)
        self.de = np.asarray(de, dtype=np.int16)
        self.gamma = np.asarray(gamma, dtype=np.float64)
        self._rows = None

    @property
    def max_gamma(self) -> float:
        return float(self.gamma.max()) if len(self.gamma) else 0.0

    def apply(self, v_next, F_l, de_off, out=None):
        """out[z] = sum_edges w0*F[de]*v_next[dst] - gamma[z]*v_next[z]."""
        if out is None:
            out = np.empty_like(v_next)
        if _ACTIVE == "numba":
            _flow_nb(v_next, self.ptr, self.dst, self.w0, self.de,
                     F_l, de_off, self.gamma, out)
        else:
            if self._rows is None:
                self._rows = _segment_rows(self.ptr)
            _flow_np(v_next, self.ptr, self.dst, self.w0, self.de,
                     F_l, de_off, self.gamma, out, self._rows)
        return out


class ActionTable:
    """Per-state action slots, each slot a small CSR of post-action draws."""

    def __init__(self, state_ptr, slot_act, edge_ptr, dst, w0, de, actions):
        self.state_ptr = np.asarray(state_ptr, dtype=np.int64)
        self.slot_act = np.asarray(slot_act, dtype=np.int32)
        self.edge_ptr = np.asarray(edge_ptr, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int32)
        self.w0 = np.asarray(w0, dtype=np.float64)
        self.de = np.asarray(de, dtype=np.int16)
        self.actions = list(actions)          # id -> FlowAction
        self._edge_slot = None

    def apply(self, w_same, w_next, F_l, de_off, pen, v_out=None, pol_out=None):
        """Best of continuation and acting; pol = action id or -1."""
        if v_out is None:
            v_out = np.empty_like(w_same)
        if pol_out is None:
            pol_out = np.empty(w_same.shape[0], dtype=np.int32)
        if _ACTIVE == "numba":
            _impulse_nb(w_same, w_next, self.state_ptr, self.slot_act,
                        self.edge_ptr, self.dst, self.w0, self.de,
                        F_l, de_off, pen, v_out, pol_out)
        else:
            if self._edge_slot is None:
                self._edge_slot = _segment_rows(self.edge_ptr)
            _impulse_np(w_same, w_next, self.state_ptr, self.slot_act,
                        self.edge_ptr, self.dst, self.w0, self.de,
                        F_l, de_off, pen, v_out, pol_out, self._edge_slot)
        return v_out, pol_out
