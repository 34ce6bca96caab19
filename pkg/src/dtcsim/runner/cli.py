"""Command-line entry point: ``dtcsim <subcommand> [options]``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError, InvalidInputError, UndefinedMetricError
from ..metrics import write_metrics_json, write_slots_csv
from ..predictor import save_model, write_training_csv
from ..propagation import fit_fi_model, write_fi_json
from ..scene import scene_to_dict
from ..traffic import write_task_trace
from .config import CSI_MODES, SCHEDULERS, load_config, parse_ratio
from .episode import default_strategies, run_episode, run_monte_carlo, train_pl_model, train_recon_model
from .twin import get_twin

__all__ = ["main", "build_parser"]

log = logging.getLogger("dtcsim")


def _ratio_tag(ratio):
    r = parse_ratio(ratio)
    return f"{r.numerator}_{r.denominator}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _write_plcurve(path, trained, twin):
    _write_csv(path, ["bs", "cell", "ix", "truth_pl_db", "predicted_pl_db"],
               ([b, c, ix, _fmt(t), _fmt(p)] for b, c, ix, t, p in trained.plcurve_rows(twin)))


def _config(args):
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "csi_mode", None) is not None:
        changes["csi_mode"] = args.csi_mode
    if getattr(args, "horizon", None) is not None:
        changes["horizon"] = args.horizon
    if getattr(args, "scheduler", None) is not None:
        changes["scheduler"] = dataclasses.replace(cfg.scheduler, kind=args.scheduler)
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = (args.seed,)
    return cfg.replace(**changes) if changes else cfg


def _out_dir(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands -------------------------------------------------------------------


def cmd_build_wek(args):
    cfg = _config(args)
    out = _out_dir(args)
    twin = get_twin(cfg)
    twin.wek.to_csv(out / "wek.csv")
    write_metrics_json(out / "scene.json", scene_to_dict(twin.scene))
    log.info("wrote %d WEK entries to %s", len(twin.wek), out / "wek.csv")


def cmd_train(args):
    cfg = _config(args)
    out = _out_dir(args)
    twin = get_twin(cfg)
    meta = {"config_hash": cfg.hash()}
    pl = train_pl_model(twin, cfg)
    save_model(out / "pl_cnn.bin", pl.model, metadata=meta)
    curves = {"pl_cnn": pl.model.loss_curve_}
    ratios = []
    for r in (cfg.pilot_ratio, *cfg.compare_pilot_ratios):
        if parse_ratio(r) not in [parse_ratio(x) for x in ratios]:
            ratios.append(r)
    for r in ratios:
        net = train_recon_model(twin, cfg, r)
        tag = _ratio_tag(r)
        save_model(out / f"recon_{tag}.bin", net, metadata=meta)
        curves[f"recon_{tag}"] = net.loss_curve_
    write_training_csv(out / "training.csv", curves)
    _write_plcurve(out / "plcurve.csv", pl, twin)
    write_metrics_json(out / "metrics.json", {"config_hash": cfg.hash(), "holdout_row": pl.holdout_row,
                                              "rmse_pl_db": pl.holdout_rmse})
    log.info("held-out PL RMSE %.3f dB", pl.holdout_rmse)


def cmd_simulate(args):
    cfg = _config(args)
    out = _out_dir(args)
    seed = cfg.seeds[0]
    res = run_episode(cfg, seed)
    twin = get_twin(cfg)
    payload = {"config_hash": res.config_hash, "seed": seed, "scheduler": res.scheduler,
               "csi_mode": res.csi_mode, "pilot_ratio": res.pilot_ratio, "horizon": cfg.horizon,
               **res.report.to_dict()}
    write_metrics_json(out / "metrics.json", payload)
    write_slots_csv(out / "slots.csv", res.slot_rows, cfg.n_users)
    write_task_trace(out / "tasks.csv", res.tasks, cfg.slot_ms)
    write_training_csv(out / "training.csv", res.training)
    pl = res.pl if res.pl is not None else train_pl_model(twin, cfg)
    _write_plcurve(out / "plcurve.csv", pl, twin)
    log.info("throughput %.3f Mb/s", res.report.throughput_bps / 1e6)


def cmd_compare(args):
    cfg = _config(args)
    out = _out_dir(args)
    strategies = default_strategies(cfg)
    series = {}

    def collect(res):
        key = f"{res.scheduler}|{res.csi_mode}|{res.pilot_ratio}"
        rates = np.array([r[3].sum() for r in res.slot_rows])
        series.setdefault(key, []).append(rates)
        log.info("seed %d %s: %.3f Mb/s", res.seed, key, res.report.throughput_bps / 1e6)

    report = run_monte_carlo(cfg, strategies=strategies, on_episode=collect)
    metrics = ("throughput_bps", "shannon_throughput_bps", "nmse", "cosine_similarity", "rmse_pl_db",
               "violation_count")
    _write_csv(out / "runs.csv", ["strategy", "scheduler", "csi_mode", "pilot_ratio", "seed", *metrics],
               ([r["strategy"], r["scheduler"], r["csi_mode"], r["pilot_ratio"], r["seed"],
                 *(_fmt(r[m]) for m in metrics)] for r in report.runs))
    rows = []
    for label, agg in report.aggregate.items():
        for m in metrics:
            if m in agg:
                rows.append([label, m, agg["n"], repr(agg[m]["mean"]), repr(agg[m]["std"])])
    _write_csv(out / "summary.csv", ["strategy", "metric", "n", "mean", "std"], rows)
    slot_rows = []
    for label, runs in series.items():
        mean = np.mean(np.stack(runs), axis=0)
        slot_rows += [[label, t, repr(float(v))] for t, v in enumerate(mean)]
    _write_csv(out / "slots.csv", ["strategy", "slot", "mean_aggregate_rate"], slot_rows)
    nmse_rows = []
    for label, agg in report.aggregate.items():
        sched, mode, ratio = label.split("|")
        if mode.startswith("partial") and "nmse" in agg:
            nmse_rows.append([ratio, mode, sched, repr(agg["nmse"]["mean"]), repr(agg["nmse"]["std"])])
    _write_csv(out / "nmse.csv", ["pilot_ratio", "csi_mode", "scheduler", "nmse_mean", "nmse_std"], nmse_rows)
    twin = get_twin(cfg)
    pl = train_pl_model(twin, cfg)
    _write_plcurve(out / "plcurve.csv", pl, twin)
    curves = {"pl_cnn": pl.model.loss_curve_}
    for _, mode, ratio in strategies:
        if mode == "partial+dtc":
            curves[f"recon_{_ratio_tag(ratio)}"] = train_recon_model(twin, cfg, ratio).loss_curve_
    write_training_csv(out / "training.csv", curves)
    write_metrics_json(out / "metrics.json", {"config_hash": cfg.hash(), "seeds": list(cfg.seeds),
                                              "aggregate": report.aggregate, "failures": report.failures})
    if report.failures:
        log.warning("%d episodes failed", len(report.failures))
        return 1
    return 0


def cmd_fit_fi(args):
    cfg = _config(args)
    out = _out_dir(args)
    twin = get_twin(cfg)
    blocked = twin.wek.values[:, :, 0] > 0.5
    samples = {"los": [], "nlos": []}
    for b, bs in enumerate(twin.scene.base_stations):
        d = np.linalg.norm(twin.points - np.asarray(bs.position), axis=1)
        for c in range(len(twin.points)):
            pl = twin.truth_pl[b, c]
            if np.isfinite(pl):
                samples["nlos" if blocked[b, c] else "los"].append((d[c], pl))
    models = {}
    for name, s in samples.items():
        if len(s) >= 2:
            models[name] = fit_fi_model(s)
    if not models:
        raise InvalidInputError("no finite path-loss samples to fit")
    write_fi_json(out / "fi.json", models)
    for name, m in models.items():
        log.info("%s: alpha %.2f dB, beta %.3f, sigma %.2f dB (%d samples)", name, m.alpha, m.beta, m.sigma,
                 len(samples[name]))


# -- parser ------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="dtcsim", description="Digital-twin channel prediction and scheduling")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, episode=False, horizon=False):
        sp.add_argument("--config", type=Path, default=None, help="scenario JSON (default: shipped scenario)")
        sp.add_argument("--out-dir", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="root seed (overrides the seeds list)")
        if episode:
            sp.add_argument("--csi-mode", choices=CSI_MODES, default=None)
            sp.add_argument("--scheduler", choices=SCHEDULERS, default=None)
        if episode or horizon:
            sp.add_argument("--horizon", type=int, default=None, help="slots per episode")

    common(sub.add_parser("build-wek", help="trace the scene and write the WEK table"))
    common(sub.add_parser("train", help="train the path-loss and reconstruction networks"))
    common(sub.add_parser("simulate", help="run one seeded episode"), episode=True)
    common(sub.add_parser("compare", help="all strategies over every configured seed"), horizon=True)
    common(sub.add_parser("fit-fi", help="fit floating-intercept path-loss models"))
    return p


_COMMANDS = {"build-wek": cmd_build_wek, "train": cmd_train, "simulate": cmd_simulate, "compare": cmd_compare,
             "fit-fi": cmd_fit_fi}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        code = _COMMANDS[args.command](args)
    except (ConfigError, InvalidInputError, UndefinedMetricError, OSError) as exc:
        print(f"dtcsim {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
