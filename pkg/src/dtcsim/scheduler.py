"""Per-slot downlink scheduling: association, power split and RE allocation.

Channel tensors have shape (n_bs, n_users, n_t, n_sc).  Power is a
per-antenna power spectral density in W/Hz, noise likewise.  Resource
elements (REs) are counted at RB-symbol granularity: a BS owns
``(n_sc // 12) * n_sym`` of them per slot and hands them out as contiguous
blocks in user order, which fixes the RBs (and hence subcarriers) each user
occupies.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInputError

__all__ = [
    "SUBCARRIERS_PER_RB",
    "UTILITY_FLOOR",
    "UtilityWeights",
    "PowerAllocation",
    "Allocation",
    "SlotContext",
    "BcdResult",
    "PfState",
    "dbm_to_watt",
    "thermal_noise_psd",
    "n_resource_elements",
    "associate_users",
    "sinr_per_subcarrier",
    "compute_sinr",
    "rate",
    "allocate_power",
    "utility",
    "allocate_res",
    "re_layout",
    "user_sinr",
    "objective",
    "served_rates",
    "fair_share_rates",
    "run_bcd",
    "pf_schedule",
    "schedule_pf",
]

SUBCARRIERS_PER_RB = 12
UTILITY_FLOOR = 1e-9


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def thermal_noise_psd(noise_figure_db=7.0):
    """Noise PSD in W/Hz: -174 dBm/Hz plus the receiver noise figure."""
    return float(dbm_to_watt(-174.0 + noise_figure_db))


def n_resource_elements(n_subcarriers, n_symbols):
    return (n_subcarriers // SUBCARRIERS_PER_RB) * n_symbols


@dataclass(frozen=True)
class UtilityWeights:
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.2

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma)
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise InvalidInputError("utility weights must be finite and >= 0")
        if not any(vals):
            raise InvalidInputError("utility weights must not all be zero")


@dataclass(frozen=True)
class PowerAllocation:
    psd: np.ndarray  # (n_bs, n_t) W/Hz
    budget: np.ndarray  # (n_bs,)

    def satisfies_budget(self, rtol=1e-12):
        total = self.psd.sum(axis=1)
        return bool(np.all(self.psd >= 0) and np.all(total <= self.budget * (1.0 + rtol)))


@dataclass(frozen=True)
class Allocation:
    association: np.ndarray  # (n_users,) serving BS
    shares: np.ndarray  # (n_users,) REs this slot
    previous: np.ndarray  # (n_users,) REs last slot

    def per_bs_total(self, n_bs):
        return np.bincount(self.association, weights=self.shares, minlength=n_bs).astype(np.int64)


@dataclass
class SlotContext:
    """Inputs to one scheduling decision.

    ``channels`` is the CSI the scheduler believes in.  ``eligible`` marks
    users competing for REs (normally those with backlog), ``slack`` holds
    urgency slack in ms and ``service_class`` the f_u flags.
    """

    channels: np.ndarray
    p_psd: np.ndarray
    noise_psd: float
    bandwidth: float
    n_symbols: int
    association: np.ndarray = None
    eligible: np.ndarray = None
    slack: np.ndarray = None
    service_class: np.ndarray = None
    previous: np.ndarray = None
    rb_cap: int | None = None

    def __post_init__(self):
        h = np.asarray(self.channels)
        if h.ndim != 4:
            raise InvalidInputError("channels must have shape (n_bs, n_users, n_t, n_sc)")
        self.channels = h
        n_bs, n_users, _, n_sc = h.shape
        self.p_psd = np.broadcast_to(np.asarray(self.p_psd, dtype=float), (n_bs,)).copy()
        if np.any(self.p_psd <= 0):
            raise InvalidInputError("per-BS power budget must be positive")
        if self.noise_psd <= 0 or self.bandwidth <= 0:
            raise InvalidInputError("noise and bandwidth must be positive")
        if n_sc < SUBCARRIERS_PER_RB:
            raise InvalidInputError("need at least one resource block of subcarriers")
        if self.association is None:
            self.association = associate_users(h)
        self.association = np.asarray(self.association, dtype=np.int64)
        ones = np.ones(n_users, dtype=bool)
        self.eligible = ones if self.eligible is None else np.asarray(self.eligible, dtype=bool)
        self.slack = np.full(n_users, np.inf) if self.slack is None else np.asarray(self.slack, dtype=float)
        self.service_class = (np.zeros(n_users, dtype=np.int64) if self.service_class is None
                              else np.asarray(self.service_class, dtype=np.int64))
        self.previous = (np.zeros(n_users, dtype=np.int64) if self.previous is None
                         else np.asarray(self.previous, dtype=np.int64))

    @property
    def n_bs(self):
        return self.channels.shape[0]

    @property
    def n_users(self):
        return self.channels.shape[1]

    @property
    def n_rb(self):
        return self.channels.shape[3] // SUBCARRIERS_PER_RB

    @property
    def n_re(self):
        return self.n_rb * self.n_symbols

    @property
    def re_cap(self):
        return None if self.rb_cap is None else self.rb_cap * self.n_symbols

    def conj_channels(self):
        if getattr(self, "_conj", None) is None:
            self._conj = self.channels.conj()
        return self._conj

    def antenna_gains(self):
        """Sum over subcarriers of |H|^2, shape (n_bs, n_users, n_t)."""
        if getattr(self, "_gains", None) is None:
            self._gains = np.sum(self.channels.real ** 2 + self.channels.imag ** 2, axis=3)
        return self._gains

    def scheduled_users(self):
        """Per-BS list of users competing for that BS's REs.

        Eligible attached users; when none is eligible, every attached user.
        """
        out = []
        for b in range(self.n_bs):
            attached = np.flatnonzero(self.association == b)
            active = attached[self.eligible[attached]]
            out.append(active if len(active) else attached)
        return out


def associate_users(channels):
    """Serving BS per user: largest wideband mean channel power, ties to the lower id."""
    h = np.asarray(channels)
    power = np.sum(np.abs(h) ** 2, axis=(2, 3)) / h.shape[3]  # (n_bs, n_users)
    return np.argmax(power, axis=0).astype(np.int64)


def sinr_per_subcarrier(channels, psd, association, noise_psd, conj=None):
    """SINR (n_users, n_sc) with full-band interference from every other BS.

    ``conj`` may carry a precomputed ``channels.conj()``.
    """
    hc = np.asarray(channels).conj() if conj is None else conj
    amp = np.sqrt(np.asarray(psd, dtype=float)).astype(hc.real.dtype)
    y = (amp[:, None, None, :] @ hc)[:, :, 0, :]  # sum over antennas
    power = y.real ** 2 + y.imag ** 2  # (n_bs, n_users, n_sc)
    users = np.arange(hc.shape[1])
    signal = power[association, users]
    serving = np.zeros(power.shape[:2], dtype=bool)
    serving[association, users] = True
    interference = np.where(serving[:, :, None], 0.0, power).sum(axis=0)
    return signal / (interference + noise_psd)


def compute_sinr(user, channels, power, association, noise_psd, subcarriers=None):
    """SINR of one user averaged over ``subcarriers`` (default: all)."""
    psd = power.psd if isinstance(power, PowerAllocation) else power
    s = sinr_per_subcarrier(channels, psd, np.asarray(association), noise_psd)[user]
    if subcarriers is None:
        return float(s.mean())
    subcarriers = np.asarray(subcarriers)
    return float(s[subcarriers].mean()) if len(subcarriers) else 0.0


def rate(bandwidth, sinr):
    """Shannon rate ``W * log2(1 + sinr)`` in bits/s."""
    bandwidth = np.asarray(bandwidth, dtype=float)
    sinr = np.asarray(sinr, dtype=float)
    if np.any(bandwidth < 0) or np.any(sinr < 0):
        raise InvalidInputError("bandwidth and sinr must be >= 0")
    out = bandwidth * np.log2(1.0 + sinr)
    return float(out) if out.ndim == 0 else out


def allocate_power(channels, association, p_psd, weights=None, antenna_gains=None):
    """Split each BS budget over its antennas in proportion to aggregate gain.

    ``weights`` (per user, default 1) scale each attached user's contribution
    to the gain of every antenna.  A BS whose gains are all zero splits its
    budget uniformly.  ``antenna_gains`` may carry precomputed per-antenna
    sums of |H|^2 over subcarriers.
    """
    if antenna_gains is None:
        h = np.asarray(channels)
        per_user = np.sum(np.abs(h) ** 2, axis=3)  # (n_bs, n_users, n_t)
    else:
        per_user = antenna_gains
    n_bs, n_users, n_t = per_user.shape
    budget = np.broadcast_to(np.asarray(p_psd, dtype=float), (n_bs,)).copy()
    if np.any(budget <= 0):
        raise InvalidInputError("power budget must be positive")
    w = np.ones(n_users) if weights is None else np.asarray(weights, dtype=float)
    attach = np.zeros((n_bs, n_users))
    attach[np.asarray(association), np.arange(n_users)] = w
    gain = np.einsum("bu,bum->bm", attach, per_user)
    total = gain.sum(axis=1, keepdims=True)
    uniform = np.full((n_bs, n_t), 1.0 / n_t)
    frac = np.divide(gain, total, out=uniform.copy(), where=total > 0)
    return PowerAllocation(frac * budget[:, None], budget)


def utility(sinr, slack, previous, service_class, weights):
    """Per-user utility, floored at ``UTILITY_FLOOR``.

    Users with ``service_class == 1`` and negative urgency slack receive the
    extra ``beta * (-slack)`` term; everyone else gets ``alpha * sinr +
    gamma * previous``.
    """
    sinr = np.asarray(sinr, dtype=float)
    slack = np.asarray(slack, dtype=float)
    urgent = (np.asarray(service_class) == 1) & (slack < 0)
    penalty = np.where(urgent, -np.where(urgent, slack, 0.0), 0.0)
    u = weights.alpha * sinr + weights.beta * penalty + weights.gamma * np.asarray(previous, dtype=float)
    u = np.nan_to_num(u, nan=UTILITY_FLOOR, posinf=np.finfo(float).max / 8)
    out = np.maximum(u, UTILITY_FLOOR)
    return float(out) if out.ndim == 0 else out


def _largest_remainder(weights, total):
    share = weights / weights.sum() * total
    base = np.floor(share + 1e-9)
    frac = np.round(np.clip(share - base, 0.0, None), 12)
    out = base.astype(np.int64)
    left = int(total - out.sum())
    if left > 0:
        order = np.argsort(-frac, kind="stable")
        out[order[:left]] += 1
    elif left < 0:
        order = np.argsort(frac, kind="stable")
        out[order[:-left]] -= 1
    return out


def allocate_res(utilities, n_re, cap=None):
    """Integer RE shares proportional to utility by largest remainder.

    Shares sum to ``n_re`` exactly unless the per-user ``cap`` makes that
    impossible, in which case every user sits at the cap.  Remainder ties go
    to the lower user index.
    """
    u = np.atleast_1d(np.asarray(utilities, dtype=float))
    if n_re < 0 or int(n_re) != n_re:
        raise InvalidInputError("n_re must be a non-negative integer")
    n_re = int(n_re)
    if len(u) == 0 or n_re == 0:
        return np.zeros(len(u), dtype=np.int64)
    if np.any(~np.isfinite(u)) or np.any(u <= 0):
        raise InvalidInputError("utilities must be finite and positive")
    if np.all(u <= UTILITY_FLOOR):
        u = np.ones_like(u)
    out = np.zeros(len(u), dtype=np.int64)
    if cap is None or cap * len(u) >= n_re:
        free = np.ones(len(u), dtype=bool)
        remaining = n_re
        while True:
            idx = np.flatnonzero(free)
            alloc = _largest_remainder(u[idx], remaining)
            over = (alloc > cap) if cap is not None else np.zeros(len(idx), dtype=bool)
            if not over.any():
                out[idx] = alloc
                return out
            # pin the users above the cap and redistribute the overflow
            out[idx[over]] = cap
            free[idx[over]] = False
            remaining -= cap * int(over.sum())
    out[:] = cap
    return out


def re_layout(shares, association, n_bs, n_rb, n_symbols):
    """RE count per (user, RB) under in-order contiguous filling per BS."""
    shares = np.asarray(shares, dtype=np.int64)
    counts = np.zeros((len(shares), n_rb), dtype=np.int64)
    rb_edges = np.arange(n_rb + 1) * n_symbols
    for b in range(n_bs):
        start = 0
        for u in np.flatnonzero(np.asarray(association) == b):
            a = int(shares[u])
            if a == 0:
                continue
            lo, hi = start, start + a
            counts[u] = np.clip(np.minimum(hi, rb_edges[1:]) - np.maximum(lo, rb_edges[:-1]), 0, None)
            start = hi
    return counts


def user_sinr(sinr_sc, layout):
    """SINR per user averaged over the REs it holds; wideband mean if it holds none."""
    n_rb = layout.shape[1]
    rb = sinr_sc[:, : n_rb * SUBCARRIERS_PER_RB].reshape(len(sinr_sc), n_rb, SUBCARRIERS_PER_RB).mean(axis=2)
    held = layout.sum(axis=1)
    wide = rb.mean(axis=1)
    weighted = np.sum(rb * layout, axis=1)
    return np.where(held > 0, weighted / np.maximum(held, 1), wide)


def _sinr_sc(ctx, psd, channels=None):
    if channels is None:
        return sinr_per_subcarrier(ctx.channels, psd, ctx.association, ctx.noise_psd, conj=ctx.conj_channels())
    return sinr_per_subcarrier(channels, psd, ctx.association, ctx.noise_psd)


def _rates_from_sinr(ctx, sinr_sc, shares):
    layout = re_layout(shares, ctx.association, ctx.n_bs, ctx.n_rb, ctx.n_symbols)
    return rate(shares / ctx.n_re * ctx.bandwidth, user_sinr(sinr_sc, layout))


def _wideband(ctx, sinr_sc):
    return sinr_sc[:, : ctx.n_rb * SUBCARRIERS_PER_RB].mean(axis=1)


def objective(ctx, power, shares, channels=None):
    """Sum rate (bits/s) of a decision, optionally evaluated on other channels."""
    return float(np.sum(served_rates(ctx, power, shares, channels)))


def served_rates(ctx, power, shares, channels=None):
    """Per-user Shannon rate (bits/s) of a decision."""
    psd = power.psd if isinstance(power, PowerAllocation) else power
    return _rates_from_sinr(ctx, _sinr_sc(ctx, psd, channels), np.asarray(shares))


def _power(ctx, weights):
    return allocate_power(ctx.channels, ctx.association, ctx.p_psd, weights=weights,
                          antenna_gains=ctx.antenna_gains())


def _equal_weights(ctx):
    w = np.zeros(ctx.n_users)
    for users in ctx.scheduled_users():
        w[users] = 1.0
    return w


def fair_share_rates(ctx):
    """Rate each scheduled user would get with an equal RE split (bits/s).

    Uses the equal-weight power rule and wideband SINR; unscheduled users get 0.
    """
    power = _power(ctx, _equal_weights(ctx))
    s = _wideband(ctx, _sinr_sc(ctx, power.psd))
    out = np.zeros(ctx.n_users)
    for users in ctx.scheduled_users():
        if len(users):
            out[users] = ctx.bandwidth / len(users) * np.log2(1.0 + s[users])
    return out


def _game_shares(ctx, sinr_sc, weights):
    u = utility(_wideband(ctx, sinr_sc), ctx.slack, ctx.previous, ctx.service_class, weights)
    shares = np.zeros(ctx.n_users, dtype=np.int64)
    for users in ctx.scheduled_users():
        if len(users):
            shares[users] = allocate_res(u[users], ctx.n_re, ctx.re_cap)
    return shares


@dataclass
class BcdResult:
    power: PowerAllocation
    allocation: Allocation
    objective: float
    history: list = field(default_factory=list)
    n_iter: int = 0
    iterates: list = field(default_factory=list)


def run_bcd(ctx, weights=UtilityWeights(), max_iter=20, tol=1e-6):
    """Alternate the gain-based power rule and the utility game on the sum rate.

    The first iterate uses equal-weight power and its game shares.  Each later
    iteration proposes share-weighted power, then game shares for that power;
    a block proposal is kept only if it does not lower the sum rate, so the
    objective never decreases.  ``history`` lists the objective per iterate
    and ``iterates`` the matching (psd, shares) pairs.  Iteration stops when
    neither block moves or the gain falls below ``tol`` (relative).
    """
    if max_iter < 1:
        raise InvalidInputError("max_iter must be >= 1")
    power = _power(ctx, _equal_weights(ctx))
    sinr_sc = _sinr_sc(ctx, power.psd)
    shares = _game_shares(ctx, sinr_sc, weights)
    obj = float(np.sum(_rates_from_sinr(ctx, sinr_sc, shares)))
    history = [obj]
    iterates = [(power.psd, shares)]
    n_iter = 1
    for _ in range(1, max_iter):
        moved = False
        start = obj
        cand = _power(ctx, shares.astype(float))
        if not np.array_equal(cand.psd, power.psd):
            cand_sinr = _sinr_sc(ctx, cand.psd)
            cand_obj = float(np.sum(_rates_from_sinr(ctx, cand_sinr, shares)))
            if cand_obj >= obj:
                power, sinr_sc, obj, moved = cand, cand_sinr, cand_obj, True
        cand_shares = _game_shares(ctx, sinr_sc, weights)
        if not np.array_equal(cand_shares, shares):
            cand_obj = float(np.sum(_rates_from_sinr(ctx, sinr_sc, cand_shares)))
            if cand_obj >= obj:
                shares, obj, moved = cand_shares, cand_obj, True
        if not moved:
            break
        n_iter += 1
        history.append(obj)
        iterates.append((power.psd, shares))
        if obj - start <= tol * max(abs(start), 1e-300):
            break
    return BcdResult(power, Allocation(ctx.association.copy(), shares, ctx.previous.copy()),
                     obj, history, n_iter, iterates)


def pf_schedule(instantaneous, average, n_re, cap=None):
    """RE shares proportional to ``instantaneous / average``."""
    r = np.asarray(instantaneous, dtype=float)
    avg = np.asarray(average, dtype=float)
    if np.any(avg <= 0):
        raise InvalidInputError("average rates must be positive")
    metric = np.maximum(r / avg, UTILITY_FLOOR)
    return allocate_res(metric, n_re, cap)


@dataclass
class PfState:
    """Exponentially smoothed average rates, window ``horizon`` slots."""

    n_users: int
    horizon: float = 100.0
    initial: float = 1.0
    average: np.ndarray = None

    def __post_init__(self):
        if self.horizon < 1 or self.initial <= 0:
            raise InvalidInputError("PF horizon must be >= 1 and initial rate > 0")
        if self.average is None:
            self.average = np.full(self.n_users, float(self.initial))

    def update(self, served):
        a = 1.0 / self.horizon
        self.average = (1.0 - a) * self.average + a * np.asarray(served, dtype=float)
        # keep the ratio well defined for users that are never served
        self.average = np.maximum(self.average, np.finfo(float).tiny)


def schedule_pf(ctx, state):
    """PF decision: equal-weight gain power rule, then per-BS PF shares."""
    power = _power(ctx, _equal_weights(ctx))
    sinr_sc = _sinr_sc(ctx, power.psd)
    inst = rate(ctx.bandwidth, _wideband(ctx, sinr_sc))
    shares = np.zeros(ctx.n_users, dtype=np.int64)
    for users in ctx.scheduled_users():
        if len(users):
            shares[users] = pf_schedule(inst[users], state.average[users], ctx.n_re, ctx.re_cap)
    obj = float(np.sum(_rates_from_sinr(ctx, sinr_sc, shares)))
    return BcdResult(power, Allocation(ctx.association.copy(), shares, ctx.previous.copy()), obj, [obj], 1,
                     [(power.psd, shares)])
