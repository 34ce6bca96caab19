"""Episode engine: predictor training, the online slot loop and Monte-Carlo replication."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ConfigError, InvalidInputError, OutOfCoverageError
from ..metrics import MetricReport, rmse_pl
from ..predictor import (
    CSIReconstructor,
    PathLossRegressor,
    PilotPattern,
    RicianConfig,
    gain_from_pl,
    interpolation_matrix,
    reference_noise_variance,
    sample_pilots,
    sequence_windows,
    synthesize_predicted_links,
)
from ..scheduler import (
    PfState,
    SlotContext,
    UtilityWeights,
    associate_users,
    dbm_to_watt,
    fair_share_rates,
    run_bcd,
    schedule_pf,
    served_rates,
    thermal_noise_psd,
)
from ..traffic import BEST_EFFORT, CONTROL, UserQueue, delay_stats, draw_arrivals, serve, urgency_slack
from .config import parse_ratio
from .twin import get_twin

__all__ = [
    "STREAMS",
    "rng_streams",
    "derived_seed",
    "TrainedPL",
    "train_pl_model",
    "train_recon_model",
    "EpisodeResult",
    "run_episode",
    "MonteCarloReport",
    "default_strategies",
    "run_monte_carlo",
]

# child stream ids under one root seed
STREAMS = {"traffic": 0, "fading": 1, "pilots": 2, "init": 3, "mobility": 4, "training": 5}


def rng_streams(seed):
    return {name: np.random.default_rng([seed, k]) for name, k in STREAMS.items()}


def derived_seed(seed, stream):
    return int(np.random.SeedSequence([seed, STREAMS[stream]]).generate_state(1)[0])


# -- offline training -----------------------------------------------------------


@dataclass
class TrainedPL:
    model: PathLossRegressor
    predicted: np.ndarray  # (n_bs, n_cells) dB
    holdout_row: int
    holdout_rmse: float

    def plcurve_rows(self, twin):
        cells = twin.row_cells(self.holdout_row)
        g = twin.grid
        for b in range(twin.n_bs):
            for c in cells:
                yield b, int(c), int(c % g.n_x), float(twin.truth_pl[b, c]), float(self.predicted[b, c])


def _check_row(twin, row):
    if not 0 <= row < twin.grid.n_y:
        raise ConfigError(f"holdout_row {row} outside the grid's {twin.grid.n_y} rows")


_MODEL_CACHE = {}


def train_pl_model(twin, cfg, seed=None):
    """Path-loss CNN trained on every grid row except the held-out one.

    ``seed`` defaults to ``cfg.predictor.training_seed``.
    """
    p = cfg.predictor
    seed = p.training_seed if seed is None else seed
    key = ("pl", id(twin), p, seed)
    if key in _MODEL_CACHE:
        return _MODEL_CACHE[key]
    _check_row(twin, p.holdout_row)
    if twin.grid.n_x < p.window:
        raise ConfigError(f"grid rows ({twin.grid.n_x} cells) are shorter than the CNN window ({p.window})")
    xs, ys = [], []
    for b in range(twin.n_bs):
        for iy in range(twin.grid.n_y):
            if iy == p.holdout_row:
                continue
            cells = twin.row_cells(iy)
            x, y = sequence_windows(twin.wek.values[b, cells], twin.truth_pl[b, cells], p.window, p.stride)
            xs += x
            ys += y
    if not xs:
        raise ConfigError("no finite path-loss windows to train on")
    model = PathLossRegressor(window=p.window, epochs=p.pl_epochs, learning_rate=p.pl_learning_rate,
                              random_state=derived_seed(seed, "init"))
    model.fit(np.stack(xs), np.stack(ys))
    predicted = np.zeros_like(twin.truth_pl)
    for b in range(twin.n_bs):
        for iy in range(twin.grid.n_y):
            cells = twin.row_cells(iy)
            predicted[b, cells] = model.predict_sequence(twin.wek.values[b, cells])
    cells = twin.row_cells(p.holdout_row)
    truth = twin.truth_pl[:, cells]
    finite = np.isfinite(truth)
    rmse = rmse_pl(predicted[:, cells][finite], truth[finite]) if finite.any() else math.nan
    out = TrainedPL(model, predicted, p.holdout_row, rmse)
    _MODEL_CACHE[key] = out
    return out


def _noise_floor(twin, snr_db):
    powers = twin.link_energy / (twin.n_antennas * twin.n_subcarriers)
    return reference_noise_variance(powers[powers > 0], snr_db)


def train_recon_model(twin, cfg, ratio, seed=None, use_wek=True):
    """Reconstruction network trained on noisy pilots of random (BS, cell) links."""
    p = cfg.predictor
    seed = p.training_seed if seed is None else seed
    ratio = parse_ratio(ratio)
    key = ("recon", id(twin), p, seed, ratio, cfg.pilot_snr_db, use_wek)
    if key in _MODEL_CACHE:
        return _MODEL_CACHE[key]
    rng = np.random.default_rng([seed, STREAMS["training"], ratio.numerator, ratio.denominator])
    pattern = PilotPattern(ratio, twin.n_subcarriers)
    b = rng.integers(0, twin.n_bs, p.recon_samples)
    c = rng.integers(0, twin.grid.n_cells, p.recon_samples)
    h = twin.truth[b, c].astype(complex)
    partial = sample_pilots(h, pattern, _noise_floor(twin, cfg.pilot_snr_db), rng)
    net = CSIReconstructor(pilot_indices=pattern.indices, n_subcarriers=twin.n_subcarriers,
                           hidden=p.recon_hidden, epochs=p.recon_epochs, learning_rate=p.recon_learning_rate,
                           use_wek=use_wek, random_state=derived_seed(seed, "init"))
    net.fit(partial.values, h, wek=twin.wek.values[b, c])
    _MODEL_CACHE[key] = net
    return net


# -- online loop ------------------------------------------------------------------


@dataclass
class EpisodeResult:
    report: MetricReport
    seed: int
    config_hash: str
    scheduler: str
    csi_mode: str
    pilot_ratio: str
    slot_rows: list = field(default_factory=list)
    tasks: list = field(default_factory=list)
    trace: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    pl: TrainedPL | None = None


def _make_queues(cfg):
    t = cfg.traffic
    queues = []
    for u in range(cfg.n_users):
        control = u < t.n_control
        queues.append(UserQueue(
            user=u,
            service_class=CONTROL if control else BEST_EFFORT,
            arrival_rate=t.control_rate_per_s if control else t.best_effort_rate_per_s,
            task_bits=t.task_bits,
            deadline_ms=t.control_deadline_ms if control else t.best_effort_deadline_ms,
        ))
    return queues


class _CsiSource:
    """Produces the scheduler's view of the channel for one slot."""

    def __init__(self, twin, cfg, mode, ratio, streams):
        seed = cfg.predictor.training_seed
        self.twin, self.cfg, self.mode = twin, cfg, mode
        self.fading, self.pilots = streams["fading"], streams["pilots"]
        self.training = {}
        self.pl = None
        if mode == "dtc":
            self.pl = train_pl_model(twin, cfg, seed)
            self.training["pl_cnn"] = self.pl.model.loss_curve_
            self.rician = RicianConfig(cfg.rician_k)
            self.gain = gain_from_pl(self.pl.predicted, twin.n_subcarriers)
            self.theta = twin.wek.values[:, :, 2]
            self.blocked = twin.wek.values[:, :, 0] > 0.5
            self.spacing = np.array([twin.scene.spacing(bs) for bs in twin.scene.base_stations])
        if mode in ("partial", "partial+dtc"):
            self.pattern = PilotPattern(ratio, twin.n_subcarriers)
            self.noise = _noise_floor(twin, cfg.pilot_snr_db)
            self.interp = interpolation_matrix(self.pattern.indices, twin.n_subcarriers).T.astype(np.complex64)
        if mode == "partial+dtc":
            self.net = train_recon_model(twin, cfg, ratio, seed)
            self.training["recon"] = self.net.loss_curve_

    def estimate(self, h_true, cells):
        if self.mode == "ideal":
            return h_true
        tw = self.twin
        n_bs, n_users, n_t, n_sc = h_true.shape
        if self.mode == "dtc":
            spacing = np.broadcast_to(self.spacing[:, None], (n_bs, n_users))
            return synthesize_predicted_links(self.gain[:, cells], self.theta[:, cells], self.blocked[:, cells],
                                              self.rician, n_t, spacing, tw.scene.wavelength, self.fading, n_sc)
        partial = sample_pilots(h_true, self.pattern, self.noise, self.pilots)
        if self.mode == "partial":
            v = partial.values.astype(np.complex64).reshape(-1, partial.values.shape[-1])
            return (v @ self.interp).reshape(h_true.shape)
        flat = partial.values.reshape(n_bs * n_users, n_t, -1)
        wek = tw.wek.values[:, cells].reshape(n_bs * n_users, -1)
        return self.net.predict(flat, wek=wek).reshape(h_true.shape).astype(np.complex64)


def _energy(x):
    r = np.ascontiguousarray(x).view(x.real.dtype).ravel()
    return float(np.dot(r, r))


def _trajectory(cfg, twin, mobility):
    g = twin.grid
    rows = np.arange(cfg.n_users) % g.n_y
    start = mobility.integers(0, g.n_x, cfg.n_users)
    return rows, start


def run_episode(cfg, seed, scheduler=None, csi_mode=None, pilot_ratio=None, horizon=None):
    """Run one seeded episode; arguments other than ``cfg`` override config keys."""
    scheduler = cfg.scheduler.kind if scheduler is None else scheduler
    csi_mode = cfg.csi_mode if csi_mode is None else csi_mode
    pilot_ratio = cfg.pilot_ratio if pilot_ratio is None else pilot_ratio
    horizon = cfg.horizon if horizon is None else horizon
    run_cfg = cfg.replace(csi_mode=csi_mode, pilot_ratio=str(pilot_ratio), horizon=horizon,
                          scheduler=dataclasses.replace(cfg.scheduler, kind=scheduler))
    twin = get_twin(run_cfg)
    streams = rng_streams(seed)
    rows, start = _trajectory(run_cfg, twin, streams["mobility"])
    source = _CsiSource(twin, run_cfg, csi_mode, parse_ratio(pilot_ratio), streams)

    sc = run_cfg.scheduler
    weights = UtilityWeights(sc.alpha, sc.beta, sc.gamma)
    p_psd = float(dbm_to_watt(sc.p_psd_dbm_hz))
    noise = thermal_noise_psd(sc.noise_figure_db)
    queues = _make_queues(run_cfg)
    n_users, n_bs = run_cfg.n_users, twin.n_bs
    service = np.array([q.service_class for q in queues])
    pf = PfState(n_users, horizon=sc.pf_horizon)
    slot_s, slot_ms = run_cfg.slot_s, run_cfg.slot_ms

    previous = np.zeros(n_users, dtype=np.int64)
    delivered = np.zeros((horizon, n_users), dtype=np.int64)
    allocated = np.zeros((horizon, n_users), dtype=np.int64)
    arrivals = np.zeros((horizon, n_users), dtype=np.int64)
    backlog = np.zeros((horizon + 1, n_users), dtype=np.int64)
    shares = np.zeros((horizon, n_users), dtype=np.int64)
    association = np.zeros((horizon, n_users), dtype=np.int64)
    power = np.zeros((horizon, n_bs, twin.n_antennas))
    err_energy = truth_energy = cross = est_energy = 0.0
    cell_energy = twin.link_energy
    slot_rows = []
    all_tasks = []

    for t in range(horizon):
        col = (start + t // run_cfg.slots_per_cell) % twin.grid.n_x
        cells = rows * twin.grid.n_x + col
        h_true = twin.truth[:, cells]
        h_est = source.estimate(h_true, cells)
        e_true = float(cell_energy[:, cells].sum())
        truth_energy += e_true
        if h_est is h_true:
            cross += e_true
            est_energy += e_true
        else:
            err_energy += _energy(h_est - h_true)
            cross += float(np.vdot(h_true, h_est).real)
            est_energy += _energy(h_est)

        for u, q in enumerate(queues):
            k = draw_arrivals(q.arrival_rate, slot_s, streams["traffic"])
            arrivals[t, u] = k
            all_tasks += q.push(t, k)
        ctx = SlotContext(h_est, p_psd, noise, run_cfg.bandwidth_hz, run_cfg.n_symbols,
                          association=associate_users(h_est),
                          eligible=np.array([q.backlog > 0 for q in queues]),
                          service_class=service, previous=previous, rb_cap=sc.rb_max)
        fair = fair_share_rates(ctx)
        ctx.slack = np.array([urgency_slack(q, t, slot_ms, fair[u]) for u, q in enumerate(queues)])
        if scheduler == "game":
            decision = run_bcd(ctx, weights, sc.bcd_max_iter, sc.bcd_tol)
        else:
            decision = schedule_pf(ctx, pf)
        a = decision.allocation.shares
        rates = served_rates(ctx, decision.power, a, channels=h_true)
        bits = np.floor(rates * slot_s).astype(np.int64)
        for u, q in enumerate(queues):
            before = q.backlog
            serve(q, bits[u], t)
            delivered[t, u] = before - q.backlog
            backlog[t + 1, u] = q.backlog
        allocated[t] = bits
        shares[t] = a
        association[t] = ctx.association
        power[t] = decision.power.psd
        if scheduler == "pf":
            pf.update(delivered[t] / slot_s)
        previous = a.copy()
        slot_rows.append((t, scheduler, csi_mode, delivered[t] / slot_s))

    report = _report(run_cfg, horizon, delivered, allocated, all_tasks, n_users,
                     (err_energy, truth_energy, cross, est_energy), source.pl, csi_mode)
    trace = {"shares": shares, "association": association, "power": power, "p_budget": p_psd,
             "n_re": (twin.n_subcarriers // 12) * run_cfg.n_symbols, "arrivals": arrivals,
             "delivered": delivered, "backlog": backlog, "task_bits": run_cfg.traffic.task_bits}
    return EpisodeResult(report, seed, run_cfg.hash(), scheduler, csi_mode, str(pilot_ratio), slot_rows,
                         all_tasks, trace, source.training, source.pl)


def _report(cfg, horizon, delivered, allocated, tasks, n_users, energies, pl, mode):
    report = MetricReport()
    if pl is not None:
        report.rmse_pl_db = pl.holdout_rmse
    if horizon == 0:
        return report
    elapsed = horizon * cfg.slot_s
    per_user = delivered.sum(axis=0) / elapsed
    report.per_user_throughput_bps = [float(x) for x in per_user]
    report.throughput_bps = float(per_user.sum())
    report.shannon_throughput_bps = float(allocated.sum() / elapsed)
    err, ref, cross, est = energies
    if ref > 0:
        report.nmse = err / ref
        if est > 0:
            report.cosine_similarity = min(1.0, max(-1.0, cross / math.sqrt(ref * est)))
    done = [t for t in tasks if t.completion_slot is not None]
    stats = delay_stats(done, cfg.slot_ms, users=range(n_users))
    report.mean_delay_ms = stats.mean_delay_ms
    report.violation_count = int(stats.violation_count)
    report.users_without_completions = list(stats.no_completions)
    return report


# -- Monte Carlo -------------------------------------------------------------------


def default_strategies(cfg):
    """(scheduler, csi_mode, pilot_ratio) triples run by ``compare``."""
    main = cfg.pilot_ratio
    out = [("game", m, main) for m in ("ideal", "dtc", "partial", "partial+dtc")]
    out += [("pf", "ideal", main), ("pf", "partial+dtc", main)]
    for r in cfg.compare_pilot_ratios:
        if parse_ratio(r) != parse_ratio(main):
            out += [("game", "partial", r), ("game", "partial+dtc", r)]
    return out


_METRICS = ("throughput_bps", "shannon_throughput_bps", "nmse", "cosine_similarity", "rmse_pl_db",
            "violation_count")


@dataclass
class MonteCarloReport:
    runs: list = field(default_factory=list)  # one dict per (strategy, seed)
    aggregate: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)


def _label(strategy):
    sched, mode, ratio = strategy
    return f"{sched}|{mode}|{ratio}"


def run_monte_carlo(cfg, seeds=None, strategies=None, horizon=None, on_episode=None):
    """Independent episodes per seed and strategy, aggregated as mean and std.

    A failing episode is recorded in ``failures`` and excluded from the
    aggregate of its strategy.
    """
    seeds = list(cfg.seeds if seeds is None else seeds)
    if not seeds:
        raise InvalidInputError("need at least one seed")
    strategies = default_strategies(cfg) if strategies is None else strategies
    out = MonteCarloReport()
    for seed in seeds:
        for strat in strategies:
            try:
                res = run_episode(cfg, seed, *strat, horizon=horizon)
            except (InvalidInputError, OutOfCoverageError, ConfigError, FloatingPointError) as exc:
                out.failures.append({"strategy": _label(strat), "seed": seed, "error": str(exc)})
                continue
            row = {"strategy": _label(strat), "scheduler": strat[0], "csi_mode": strat[1],
                   "pilot_ratio": str(strat[2]), "seed": seed}
            row.update({m: getattr(res.report, m) for m in _METRICS})
            out.runs.append(row)
            if on_episode is not None:
                on_episode(res)
    for strat in strategies:
        label = _label(strat)
        rows = [r for r in out.runs if r["strategy"] == label]
        agg = {"n": len(rows)}
        for m in _METRICS:
            vals = [r[m] for r in rows if r[m] is not None]
            if vals:
                agg[m] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        out.aggregate[label] = agg
    return out
