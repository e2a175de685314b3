"""Institutional execution algorithms: volume participation and VWAP.

A broker must buy (or sell, handled by mirroring) a block of stock over a
fixed window.  Two controllers are provided.

The volume tracker keeps its filled quantity near a fixed fraction of the
volume traded by everyone else.  It rests a limit order at the best bid
sized so that expected passive fills track the participation rate, reposts
whenever the resting slice has fully executed, and corrects drift outside
a tolerance band: too far ahead, it cancels and pauses; too far behind, it
crosses the spread with the smallest market order that restores the band.

The VWAP tracker follows a precomputed schedule.  The schedule comes from
an impact model solved in closed form: price carries a permanent impact
`beta_perm` per unit traded and a temporary impact `kappa_temp` per unit
of trading speed, unfinished quantity is penalized at `kappa_end` per unit
squared at the horizon, and performance is measured against the
volume-weighted market price with exponential risk aversion `eta`.  The
value exponent is quadratic in inventory: the curvature coefficient solves
a Riccati equation (closed form via a substitution root), the tilt and
level coefficients solve linear equations integrated backward by
fixed-step RK4 and tabulated.  At each decision interval the tracker
plans its own volume from the schedule's speed, converts it into a
participation rate against the market-volume forecast, and runs the
volume tracker's posting logic at that rate inside the interval, with an
outer band around the scheduled quantity enforced by cancels or market
orders.

Prices and cash are in integer ticks, as everywhere in this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import kernels
from .backend import njit
from .book import (
    AgentState,
    BookState,
    FlowAction,
    MarketEvent,
    ZERO_ACTION,
    apply_exo_transition,
    apply_own_transition,
    exe,
    mirror_action,
    mirror_agent,
    mirror_book,
)
from .prior import KernelModel, PriorConfig


# ---------------------------------------------------------------------------
# schedule model: Riccati coefficients and closed-form curvature
# ---------------------------------------------------------------------------


class RiccatiPoly(NamedTuple):
    """d(curvature)/dt = const + lin*h + quad*h**2, terminal value 0."""
    const: float
    lin: float
    quad: float


def riccati_poly(eta, sigma, beta_perm, kappa_temp, kappa_end) -> RiccatiPoly:
    """Riccati polynomial of the inventory-squared exponent coefficient.

    Plain field arithmetic, so exact inputs (fractions.Fraction) give exact
    coefficients; tests rely on this to check identities without rounding.
    """
    gap = 2 * kappa_end - beta_perm
    const = eta * gap * gap / (4 * kappa_temp) - eta * eta * sigma * sigma / 2
    lin = gap / kappa_temp
    quad = 1 / (kappa_temp * eta)
    return RiccatiPoly(const, lin, quad)


class CurvatureForm(NamedTuple):
    """curvature(T - tau) = 1/(shift + weight*exp(rate*tau)) - offset."""
    shift: float
    weight: float
    rate: float
    offset: float


def _curvature_form(poly: RiccatiPoly, root: str, params_echo: str) -> tuple[float, CurvatureForm]:
    disc = poly.lin * poly.lin - 4.0 * poly.const * poly.quad
    if disc <= 0.0 or poly.lin == 0.0:
        raise ValueError(
            f"degenerate curvature equation ({params_echo}): the substitution "
            f"roots coincide (discriminant {disc!r}); a strictly positive "
            "volatility and a nonzero linear coefficient are required")
    half_gap = abs(poly.lin) / (2.0 * math.sqrt(disc))
    sub_root = 0.5 - half_gap if root == "small" else 0.5 + half_gap
    rate = poly.lin / (1.0 - 2.0 * sub_root)
    offset = poly.const / ((1.0 - sub_root) * rate)
    if offset == 0.0 or not math.isfinite(offset):
        raise ValueError(
            f"degenerate curvature equation ({params_echo}): offset {offset!r}")
    shift = sub_root / offset
    weight = 1.0 / offset - shift
    return sub_root, CurvatureForm(shift, weight, rate, offset)


def _check_no_blowup(form: CurvatureForm, horizon: float, params_echo: str) -> None:
    """The closed-form denominator is monotone in time; endpoint signs decide."""
    d_start = form.shift + form.weight            # tau = 0, exactly 1/offset
    span = form.rate * horizon
    if form.rate > 0.0:
        # rewritten with z = exp(-rate*tau): the denominator is shift*z + weight
        d_end = form.weight if span > 700.0 else form.shift * math.exp(-span) + form.weight
    else:
        d_end = form.shift + form.weight * math.exp(span)
    if d_start == 0.0 or d_end == 0.0 or (d_start > 0.0) != (d_end > 0.0):
        raise ValueError(
            f"curvature denominator vanishes inside the horizon ({params_echo}); "
            "the Riccati solution blows up before the start of trading")


# ---------------------------------------------------------------------------
# tabulation sweeps (numba when active, plain python otherwise)
# ---------------------------------------------------------------------------


def _h_sweep_py(n, step, vm, bc, sig2eta2, beta_eta, inv2ke, inv4ke):
    """Backward RK4 for the tilt/level pair on a half-point time grid.

    vm[j] = remaining-volume notional v(t_j,T)*m_bar and bc[j] the
    curvature-dependent linear coefficient, both sampled descending from
    the horizon at half steps (2n+1 entries).  Returns (tilt, level) at the
    n+1 full nodes, descending, starting from the terminal zeros.
    """
    tilt = np.zeros(n + 1)
    level = np.zeros(n + 1)
    y1 = 0.0
    y0 = 0.0
    d = -step
    for k in range(n):
        j0 = 2 * k
        j1 = j0 + 1
        j2 = j0 + 2
        w = y1 + beta_eta * vm[j0]
        k1t = sig2eta2 * vm[j0] + w * bc[j0] * inv2ke
        k1l = -0.5 * sig2eta2 * vm[j0] * vm[j0] + w * w * inv4ke
        u = y1 + 0.5 * d * k1t
        w = u + beta_eta * vm[j1]
        k2t = sig2eta2 * vm[j1] + w * bc[j1] * inv2ke
        k2l = -0.5 * sig2eta2 * vm[j1] * vm[j1] + w * w * inv4ke
        u = y1 + 0.5 * d * k2t
        w = u + beta_eta * vm[j1]
        k3t = sig2eta2 * vm[j1] + w * bc[j1] * inv2ke
        k3l = -0.5 * sig2eta2 * vm[j1] * vm[j1] + w * w * inv4ke
        u = y1 + d * k3t
        w = u + beta_eta * vm[j2]
        k4t = sig2eta2 * vm[j2] + w * bc[j2] * inv2ke
        k4l = -0.5 * sig2eta2 * vm[j2] * vm[j2] + w * w * inv4ke
        y1 += d * (k1t + 2.0 * k2t + 2.0 * k3t + k4t) / 6.0
        y0 += d * (k1l + 2.0 * k2l + 2.0 * k3l + k4l) / 6.0
        tilt[k + 1] = y1
        level[k + 1] = y0
    return tilt, level


def _target_sweep_py(n, step, vm, curv, tilt, beta, kend, eta, kappa, start):
    """Forward RK4 for the scheduled inventory, speed floored at zero.

    Arrays are sampled ascending at half steps (2n+1 entries); returns the
    n+1 full nodes starting from `start`.
    """
    out = np.empty(n + 1)
    y = start
    out[0] = y
    for k in range(n):
        j0 = 2 * k
        j1 = j0 + 1
        j2 = j0 + 2
        r = (beta * (y - vm[j0]) - 2.0 * kend * y
             - (tilt[j0] + 2.0 * curv[j0] * y) / eta) / (2.0 * kappa)
        k1 = r if r > 0.0 else 0.0
        u = y + 0.5 * step * k1
        r = (beta * (u - vm[j1]) - 2.0 * kend * u
             - (tilt[j1] + 2.0 * curv[j1] * u) / eta) / (2.0 * kappa)
        k2 = r if r > 0.0 else 0.0
        u = y + 0.5 * step * k2
        r = (beta * (u - vm[j1]) - 2.0 * kend * u
             - (tilt[j1] + 2.0 * curv[j1] * u) / eta) / (2.0 * kappa)
        k3 = r if r > 0.0 else 0.0
        u = y + step * k3
        r = (beta * (u - vm[j2]) - 2.0 * kend * u
             - (tilt[j2] + 2.0 * curv[j2] * u) / eta) / (2.0 * kappa)
        k4 = r if r > 0.0 else 0.0
        y += step * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        out[k + 1] = y
    return out


_h_sweep_nb = njit(cache=True)(_h_sweep_py)
_target_sweep_nb = njit(cache=True)(_target_sweep_py)


def _sweeps():
    if kernels.active_backend() == "numba":
        return _h_sweep_nb, _target_sweep_nb
    return _h_sweep_py, _target_sweep_py


# ---------------------------------------------------------------------------
# the schedule model
# ---------------------------------------------------------------------------


class VWAPModel:
    """Closed-form coefficients and tabulated schedule of the VWAP problem.

    curve is a piecewise-constant market-volume forecast given as
    ((start_time, rate), ...) with start times increasing from 0; the last
    segment runs to the horizon.  block is the number of units to buy.
    """

    def __init__(self, *, eta: float = 1.0, sigma: float = 0.2,
                 beta_perm: float = 0.0004, kappa_temp: float = 0.003,
                 kappa_end: float = 0.18, horizon: float = 1800.0,
                 block: int = 250, curve=((0.0, 1.2),),
                 root: str = "small", step: float = 0.01):
        if eta <= 0 or kappa_temp <= 0 or kappa_end < 0 or sigma < 0:
            raise ValueError("eta and kappa_temp must be positive, "
                             "sigma and kappa_end nonnegative")
        if horizon <= 0 or step <= 0:
            raise ValueError("horizon and step must be positive")
        if block < 1:
            raise ValueError("block must be at least one unit")
        if root not in ("small", "large"):
            raise ValueError(f"root must be 'small' or 'large', got {root!r}")
        starts = [float(s) for s, _ in curve]
        rates = [float(r) for _, r in curve]
        if not starts or starts[0] != 0.0:
            raise ValueError("curve must start at time 0")
        if any(b <= a for a, b in zip(starts, starts[1:])) or starts[-1] >= horizon:
            raise ValueError("curve start times must increase and stay inside the horizon")
        if any(r < 0 for r in rates):
            raise ValueError("curve rates must be nonnegative")

        self.eta = float(eta)
        self.sigma = float(sigma)
        self.beta_perm = float(beta_perm)
        self.kappa_temp = float(kappa_temp)
        self.kappa_end = float(kappa_end)
        self.horizon = float(horizon)
        self.block = int(block)
        self.curve = tuple(zip(starts, rates))
        self.root = root

        self._starts = np.array(starts)
        self._rates = np.array(rates)
        seg_ends = np.append(self._starts[1:], self.horizon)
        self._cum = np.concatenate(
            ([0.0], np.cumsum(self._rates * (seg_ends - self._starts))))[:-1]

        self.total_volume = float(self._vol_upto(self.horizon))
        if self.total_volume <= 0.0:
            raise ValueError("curve forecasts zero total volume")
        self.m_bar = self.block / self.total_volume

        echo = (f"eta={eta}, sigma={sigma}, beta_perm={beta_perm}, "
                f"kappa_temp={kappa_temp}, kappa_end={kappa_end}")
        self.riccati = riccati_poly(self.eta, self.sigma, self.beta_perm,
                                    self.kappa_temp, self.kappa_end)
        self.disc = self.riccati.lin ** 2 - 4.0 * self.riccati.const * self.riccati.quad
        if self.riccati.const == 0.0:
            # terminal zero is a fixed point: the curvature vanishes identically
            self.sub_root, self.form = 0.0, None
        else:
            self.sub_root, self.form = _curvature_form(self.riccati, root, echo)
            _check_no_blowup(self.form, self.horizon, echo)

        n = max(int(math.ceil(self.horizon / step)), 2)
        self.step = self.horizon / n
        half_desc = self.horizon - np.arange(2 * n + 1) * (self.step / 2.0)
        half_desc[0] = self.horizon
        half_desc[-1] = 0.0
        vm_desc = self.v_remaining(half_desc) * self.m_bar
        bc_desc = (-self.beta_perm * self.eta + 2.0 * self.eta * self.kappa_end
                   + 2.0 * self.curvature(half_desc))
        h_sweep, target_sweep = _sweeps()
        tilt_desc, level_desc = h_sweep(
            n, self.step, vm_desc, bc_desc,
            self.sigma ** 2 * self.eta ** 2, self.beta_perm * self.eta,
            1.0 / (2.0 * self.kappa_temp * self.eta),
            1.0 / (4.0 * self.kappa_temp * self.eta))
        self.grid = half_desc[::2][::-1].copy()
        self.tilt_tab = tilt_desc[::-1].copy()
        self.level_tab = level_desc[::-1].copy()

        half_asc = half_desc[::-1].copy()
        self.target_tab = target_sweep(
            n, self.step, vm_desc[::-1].copy(),
            self.curvature(half_asc),
            np.interp(half_asc, self.grid, self.tilt_tab),
            self.beta_perm, self.kappa_end, self.eta, self.kappa_temp,
            float(-self.block))

    # -- volume forecast ----------------------------------------------------

    def _vol_upto(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.horizon)
        idx = np.searchsorted(self._starts, t, side="right") - 1
        out = self._cum[idx] + self._rates[idx] * (t - self._starts[idx])
        return float(out) if out.ndim == 0 else out

    def vol_rate(self, t: float) -> float:
        """Forecast market-volume rate at time t (units per second)."""
        if not 0.0 <= t <= self.horizon:
            return 0.0
        idx = int(np.searchsorted(self._starts, t, side="right")) - 1
        return float(self._rates[idx])

    def vol_between(self, t0: float, t1: float) -> float:
        """Forecast market volume on [t0, t1], clipped to the window."""
        return float(self._vol_upto(t1) - self._vol_upto(t0))

    def v_remaining(self, t):
        """Forecast volume still to trade after time t."""
        return self.total_volume - self._vol_upto(t)

    # -- exponent coefficients ----------------------------------------------

    def curvature(self, t):
        """Inventory-squared exponent coefficient, exact closed form."""
        tau = self.horizon - np.asarray(t, dtype=float)
        if self.form is None:
            val = np.zeros_like(tau)
        else:
            f = self.form
            if f.rate > 0.0:
                z = np.exp(-f.rate * tau)
                val = z / (f.shift * z + f.weight) - f.offset
            else:
                val = 1.0 / (f.shift + f.weight * np.exp(f.rate * tau)) - f.offset
            val = np.where(tau == 0.0, 0.0, val)
        return float(val) if val.ndim == 0 else val

    def tilt(self, t):
        """Inventory-linear exponent coefficient, from the RK4 table."""
        return np.interp(t, self.grid, self.tilt_tab)

    def level(self, t):
        """Inventory-free exponent coefficient, from the RK4 table."""
        return np.interp(t, self.grid, self.level_tab)

    # -- schedule ------------------------------------------------------------

    def speed_raw(self, t, inv):
        """Optimal trading speed before flooring (units per second)."""
        vm = self.v_remaining(np.asarray(t, dtype=float)) * self.m_bar
        num = (self.beta_perm * (inv - vm) - 2.0 * self.kappa_end * inv
               - (self.tilt(t) + 2.0 * self.curvature(t) * inv) / self.eta)
        return num / (2.0 * self.kappa_temp)

    def speed(self, t, inv):
        """Optimal buying speed, floored at zero."""
        return np.maximum(self.speed_raw(t, inv), 0.0)

    def target(self, t):
        """Scheduled inventory at time t (starts at -block, nondecreasing)."""
        return np.interp(t, self.grid, self.target_tab)

    def planned_volume(self, t0: float, t1: float, inv: float) -> float:
        """Integral of the floored speed over [t0, t1] at frozen inventory."""
        if t1 <= t0:
            return 0.0
        ts = np.linspace(t0, t1, 129)
        return float(np.trapezoid(np.maximum(self.speed_raw(ts, inv), 0.0), ts))


def vwap_coeffs(**kwargs) -> VWAPModel:
    """Build the VWAP schedule model; see VWAPModel for the keywords."""
    return VWAPModel(**kwargs)


def optimal_speed(model: VWAPModel, t: float, inv: float) -> float:
    """Optimal buying speed at time t holding inv units net (floored at 0)."""
    return float(model.speed(t, inv))


def target_inventory(model: VWAPModel, t: float) -> float:
    """Scheduled inventory path value at time t."""
    return float(model.target(t))


# ---------------------------------------------------------------------------
# trackers
# ---------------------------------------------------------------------------


class VolumeParams(NamedTuple):
    """Volume-tracker configuration.

    rate:       target participation fraction of total traded volume
    band:       drift tolerance, in units of stock
    target:     block size to fill
    interval:   seconds between resting-size refreshes
    fill_prob:  assumed chance a unit resting at the touch eventually fills
    q_cap:      book queue cap the tracker respects when sizing posts
    """
    rate: float = 0.2
    band: float = 4.0
    target: int = 250
    interval: float = 60.0
    fill_prob: float = 0.5
    q_cap: int = 12


def _check_vp(vp: VolumeParams) -> None:
    if not 0.0 < vp.rate < 1.0:
        raise ValueError(f"participation rate must lie in (0, 1), got {vp.rate}")
    if vp.band <= 0 or vp.target < 1 or vp.interval <= 0 or not 0 < vp.fill_prob <= 1:
        raise ValueError("band, target, interval and fill_prob must be positive")


@dataclass
class TrackerState:
    """Mutable controller state threaded through the step functions.

    bought is the filled quantity (mirror frame for sellers), others_vol
    the cumulative volume traded by everyone else, rest_target the resting
    size the current interval asks for, quota/forecast the per-interval
    planned own volume and market-volume forecast of the VWAP tracker, and
    rate the participation in effect.  mode is one of "active", "paused"
    (above the band, resting orders pulled) and "catching-up" (below the
    band, crossing the spread).
    """
    bought: int = 0
    others_vol: int = 0
    rest_target: int = 0
    mode: str = "active"
    interval_idx: int = -1
    done: bool = False
    quota: float = 0.0
    forecast: float = 0.0
    rate: float = 0.0


def _cancel_all(own: AgentState) -> FlowAction:
    return FlowAction(can_bid=own.rest_bid) if own.rest_bid else ZERO_ACTION


def _post_or_trim(ts: TrackerState, vp: VolumeParams, book: BookState,
                  own: AgentState, remaining: int) -> FlowAction:
    """Keep the resting bid in line with the interval's target size.

    Posts only from a flat slice (a partially filled order is left to
    finish first), never more than the queue cap allows, and trims any
    excess over the still-needed quantity.
    """
    want = min(ts.rest_target, remaining)
    if own.rest_bid > want:
        return FlowAction(can_bid=own.rest_bid - want)
    if own.rest_bid == 0 and want > 0:
        post = min(want, vp.q_cap - book.qb)
        if post > 0:
            return FlowAction(lim_bid=post)
    return ZERO_ACTION


def volume_step(vp: VolumeParams, ts: TrackerState, book: BookState,
                own: AgentState, t: float) -> FlowAction:
    """One buy-side decision of the volume tracker; mutates ts.

    The caller accumulates everyone else's executed volume into
    ts.others_vol between calls; filled quantity is read off own.inv.
    """
    _check_vp(vp)
    ts.bought = own.inv
    remaining = vp.target - ts.bought
    if remaining <= 0:
        ts.done = True
        return _cancel_all(own)
    f = vp.rate
    held = ts.bought * (1.0 - f)
    hi = f * ts.others_vol + vp.band
    lo = f * ts.others_vol - vp.band
    if ts.mode == "paused":
        if held > hi:
            return ZERO_ACTION
        ts.mode = "active"
    if held > hi:
        ts.mode = "paused"
        return _cancel_all(own)
    if held < lo:
        ts.mode = "catching-up"
        need = math.ceil(lo / (1.0 - f) - ts.bought)
        return FlowAction(agg_ask=min(max(need, 1), book.qa, remaining))
    ts.mode = "active"
    idx = int(t / vp.interval)
    if idx != ts.interval_idx:
        ts.interval_idx = idx
        ts.rate = f
        ts.rest_target = math.ceil((f / (1.0 - f)) * book.qb / vp.fill_prob)
    return _post_or_trim(ts, vp, book, own, remaining)


def vwap_step(model: VWAPModel, vp: VolumeParams, ts: TrackerState,
              book: BookState, own: AgentState, t: float) -> FlowAction:
    """One buy-side decision of the VWAP tracker; mutates ts.

    vp.band is the tolerance around the scheduled quantity, vp.rate is
    ignored (participation is derived from the schedule each interval).
    """
    if vp.target != model.block:
        raise ValueError(f"tracker target {vp.target} != model block {model.block}")
    ts.bought = own.inv
    remaining = vp.target - ts.bought
    if remaining <= 0:
        ts.done = True
        return _cancel_all(own)
    scheduled = min(max(float(model.target(t)) + model.block, 0.0), float(model.block))
    if ts.mode == "paused":
        if ts.bought > scheduled + vp.band:
            return ZERO_ACTION
        ts.mode = "active"
    if ts.bought > scheduled + vp.band:
        ts.mode = "paused"
        return _cancel_all(own)
    if ts.bought < scheduled - vp.band:
        ts.mode = "catching-up"
        need = math.ceil(scheduled - vp.band - ts.bought)
        return FlowAction(agg_ask=min(max(need, 1), book.qa, remaining))
    ts.mode = "active"
    idx = int(t / vp.interval)
    if idx != ts.interval_idx:
        ts.interval_idx = idx
        t0 = idx * vp.interval
        ts.quota = model.planned_volume(t0, min(t0 + vp.interval, model.horizon),
                                        ts.bought - model.block)
        ts.forecast = model.vol_between(t0, t0 + vp.interval)
        total = ts.quota + ts.forecast
        ts.rate = ts.quota / total if total > 0.0 else 0.0
        if ts.quota > 0.0 and ts.forecast > 0.0:
            ts.rest_target = math.ceil(
                (ts.quota / ts.forecast) * book.qb / vp.fill_prob)
        elif ts.quota > 0.0:
            ts.rest_target = remaining
        else:
            ts.rest_target = 0
    return _post_or_trim(ts, vp, book, own, remaining)


def sell_volume_step(vp: VolumeParams, ts: TrackerState, book: BookState,
                     own: AgentState, t: float) -> FlowAction:
    """Sell-side volume tracker: the buy logic run in the mirrored frame."""
    return mirror_action(volume_step(vp, ts, mirror_book(book), mirror_agent(own), t))


def sell_vwap_step(model: VWAPModel, vp: VolumeParams, ts: TrackerState,
                   book: BookState, own: AgentState, t: float) -> FlowAction:
    """Sell-side VWAP tracker: the buy logic run in the mirrored frame."""
    return mirror_action(vwap_step(model, vp, ts, mirror_book(book), mirror_agent(own), t))


# ---------------------------------------------------------------------------
# single-agent replay against the exogenous flow
# ---------------------------------------------------------------------------


class IBPathStats(NamedTuple):
    """Outcome of one tracker path.  Prices are in ticks."""
    filled: int
    others_vol: int
    finished: bool
    steps: int
    avg_price: float
    market_vwap: float
    rel_error: float
    cash: int
    inv: int


def run_ib_path(step_fn: Callable[[TrackerState, BookState, AgentState, float], FlowAction],
                km: KernelModel, rng: np.random.Generator, *,
                horizon: float, dt: float = 0.5,
                book0: BookState | None = None, recorder=None) -> IBPathStats:
    """Replay one tracker against the exogenous flow on a private book.

    step_fn(ts, book, own, t) -> FlowAction decides before the market
    moves; the flow then advances by at most one event.  Everyone else's
    executed volume accumulates into ts.others_vol; the market VWAP
    averages every execution including the tracker's own.
    `recorder(step, t, book, own, ts, act, ev)` is called once per step.
    """
    book = book0 or BookState(1000, 1001, 6, 6)
    x = AgentState()
    ts = TrackerState()
    value = 0
    volume = 0
    n_steps = int(round(horizon / dt))
    steps = n_steps
    for k in range(n_steps):
        t = k * dt
        act = step_fn(ts, book, x, t)
        if not act.is_zero():
            draw = km.sample_regen(book, act, rng)
            pre = book
            book, x = apply_own_transition(book, x, MarketEvent(act, draw), km.cfg.q_cap)
            value += act.agg_bid * pre.bid + act.agg_ask * pre.ask
            volume += act.agg_bid + act.agg_ask
        ev = km.sample_event(book, dt, rng)
        if ev is not None:
            ea = ev.action
            mine = (exe(ea.agg_bid, x.rest_bid, x.ahead_bid)
                    + exe(ea.agg_ask, x.rest_ask, x.ahead_ask))
            pre = book
            book, x = apply_exo_transition(book, x, ev, km.cfg.q_cap)
            ts.others_vol += ea.agg_bid + ea.agg_ask - mine
            value += ea.agg_bid * pre.bid + ea.agg_ask * pre.ask
            volume += ea.agg_bid + ea.agg_ask
        if recorder is not None:
            recorder(k, t, book, x, ts, act, ev)
        if ts.done and x.rest_bid == 0 and x.rest_ask == 0:
            steps = k + 1
            break
    filled = abs(x.inv)
    avg = abs(x.cash) / filled if filled else math.nan
    vwap = value / volume if volume else math.nan
    rel = (avg - vwap) / vwap if filled and volume else math.nan
    return IBPathStats(filled, ts.others_vol, ts.done, steps, avg, vwap, rel,
                       x.cash, x.inv)


def run_volume_path(vp: VolumeParams, km: KernelModel, rng: np.random.Generator,
                    *, side: str = "buy", horizon: float = 3600.0,
                    dt: float = 0.5, book0: BookState | None = None,
                    recorder=None) -> IBPathStats:
    step = volume_step if side == "buy" else sell_volume_step
    return run_ib_path(lambda ts, b, x, t: step(vp, ts, b, x, t), km, rng,
                       horizon=horizon, dt=dt, book0=book0, recorder=recorder)


def run_vwap_path(model: VWAPModel, vp: VolumeParams, km: KernelModel,
                  rng: np.random.Generator, *, side: str = "buy",
                  horizon: float | None = None, dt: float = 0.5,
                  book0: BookState | None = None, recorder=None) -> IBPathStats:
    step = vwap_step if side == "buy" else sell_vwap_step
    return run_ib_path(lambda ts, b, x, t: step(model, vp, ts, b, x, t), km, rng,
                       horizon=horizon if horizon is not None else model.horizon,
                       dt=dt, book0=book0, recorder=recorder)


def simulate_volume(vp: VolumeParams, n_paths: int, seed: int, *,
                    cfg: PriorConfig | None = None, side: str = "buy",
                    horizon: float = 3600.0, dt: float = 0.5,
                    book0: BookState | None = None) -> list[IBPathStats]:
    """Monte-Carlo volume-tracker paths over independently seeded streams."""
    km = KernelModel(cfg or PriorConfig())
    out = []
    for k in range(n_paths):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x564C, k)))
        out.append(run_volume_path(vp, km, rng, side=side, horizon=horizon,
                                   dt=dt, book0=book0))
    return out


def simulate_vwap(model: VWAPModel, vp: VolumeParams, n_paths: int, seed: int, *,
                  cfg: PriorConfig | None = None, side: str = "buy",
                  horizon: float | None = None, dt: float = 0.5,
                  book0: BookState | None = None) -> list[IBPathStats]:
    """Monte-Carlo VWAP-tracker paths over independently seeded streams."""
    km = KernelModel(cfg or PriorConfig())
    out = []
    for k in range(n_paths):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5657, k)))
        out.append(run_vwap_path(model, vp, km, rng, side=side, horizon=horizon,
                                 dt=dt, book0=book0))
    return out
