"""Command-line experiment runner.

Every command writes one CSV table (to ``--out`` or stdout) preceded by a
``#`` comment block with the artifact version, the command, the seeds and a
hash of the network configuration. ``reproduce`` writes ``<target>.csv``
into the ``--out`` directory and exits non-zero when a verdict fails.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, control, lqi, macsim, model, optimizer, presets, reproduce
from .config import COMMANDS, TARGETS, ExperimentSpec, config_hash, parse_config
from .errors import EdcaError
from .linearizer import linear_plant

log = logging.getLogger("edcafair")

DEFAULT_SIM_US = 1e7


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "pass" if v else "FAIL"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return v


def write_table(rows: list[dict], out, meta: dict) -> None:
    """CSV with a metadata comment block; ``out`` is a path, ``-`` or None for stdout."""
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}: {v}\n")
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    if out in (None, "-"):
        sys.stdout.write(buf.getvalue())
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(buf.getvalue())


def _per_ac(config, **cols) -> list[dict]:
    return [{"ac": name, **{k: v[i] for k, v in cols.items()}} for i, name in enumerate(config.names)]


def _default_windows(config) -> np.ndarray:
    return np.array([presets.EDCA_DEFAULT_WINDOW.get(n, 16) for n in config.names], dtype=float)


# --- commands -------------------------------------------------------------------


def cmd_model(config, spec):
    W = np.array(spec.windows) if spec.windows is not None else _default_windows(config)
    cfg, idx = config.active()
    a = model.attempt_from_window(W[idx], cfg)
    rows = _per_ac(cfg, window=W[idx], tau=a.tau, p_col=model.collision_prob(a, cfg), throughput_mbps=model.throughput(a, cfg),
                   delay_us=model.delay(a, cfg, cfg.retry_limit), airtime=model.airtime(a, cfg))
    return rows, True


def cmd_optimize(config, spec):
    pt = optimizer.optimize(config)
    rows = _per_ac(pt.config, w_star=pt.windows, tau=pt.attempt.tau, p_star=pt.p_star, mu=pt.mu_star.mu,
                   throughput_mbps=pt.throughputs, delay_us=pt.delays, deadline_us=pt.config.burst_deadlines, airtime=pt.airtimes)
    return rows, True


def cmd_airtime(config, spec):
    pt = optimizer.optimize(config)
    names, air = reproduce.flow_airtimes(pt)
    rows = [{"flow": i + 1, "ac": n, "airtime": a} for i, (n, a) in enumerate(zip(names, air))]
    rows.append({"flow": "sum", "ac": "", "airtime": air.sum()})
    return rows, True


def cmd_linearize(config, spec):
    pt = optimizer.optimize(config)
    plant = linear_plant(pt)
    names = pt.config.names
    rows = [{"window": names[j], **{f"dp_{names[i]}": plant.h[j, i] for i in range(plant.N)}} for j in range(plant.N)]
    return rows, True


def _design(config, spec):
    pt = optimizer.optimize(config)
    plant = linear_plant(pt)
    w = lqi.build_weights(spec.q1, spec.q2, spec.rho, plant.N)
    return pt, plant, w, lqi.solve_dare(plant, w, config.beacon_interval * 1e-6)


def cmd_design(config, spec):
    pt, plant, w, ctrl = _design(config, spec)
    N = plant.N
    res = lqi.riccati_residual(ctrl.p_riccati, ctrl.a_hat, ctrl.b_hat, w.q, w.r)
    rows = [{"row": pt.config.names[i], **{f"k{j}": ctrl.k[i, j] for j in range(2 * N)}} for i in range(N)]
    rows.append({"row": "spectral_radius", "k0": ctrl.spectral_radius, **{f"k{j}": "" for j in range(1, 2 * N)}})
    rows.append({"row": "riccati_residual", "k0": res, **{f"k{j}": "" for j in range(1, 2 * N)}})
    return rows, bool(ctrl.spectral_radius < 1 and res <= 1e-8)


def _sim_one(args):
    config, windows, duration, seed = args
    return macsim.run_sim(config, windows, duration, seed)


def _map(fn, items, jobs):
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def cmd_simulate(config, spec, jobs=1):
    """Simulate at the given windows (default: the optimum) and compare with the model."""
    cfg, idx = config.active()
    if spec.windows is not None:
        W = np.array(spec.windows, dtype=float)[idx]
        a = model.attempt_from_window(W, cfg)
        ref = {"tau": a.tau, "p_obs": model.collision_prob(a, cfg), "throughput": model.throughput(a, cfg)}
    else:
        pt = optimizer.optimize(config)
        W = pt.windows
        ref = {"tau": pt.attempt.tau, "p_obs": pt.p_star, "throughput": pt.throughputs}
    duration = spec.duration_us or DEFAULT_SIM_US
    runs = _map(_sim_one, [(cfg, W, duration, s) for s in spec.seeds], jobs)
    rows = []
    for s, r in zip(spec.seeds, runs):
        for i, name in enumerate(cfg.names):
            rows.append({"seed": s, "ac": name, "window": W[i], "tau": r.tau[i], "p_obs": r.p_obs[i], "throughput_mbps": r.throughput[i],
                         "delay_us": r.mean_delay[i], "passed": ""})
    ok = True
    for i, name in enumerate(cfg.names):
        row = {"seed": "model", "ac": name, "window": W[i], "tau": ref["tau"][i], "p_obs": ref["p_obs"][i],
               "throughput_mbps": ref["throughput"][i], "delay_us": "", "passed": ""}
        v = {k: np.array([getattr(r, k)[i] for r in runs]) for k in ref}
        dist = {k: abs(v[k].mean() - ref[k][i]) + float(reproduce.halfwidth(v[k][:, None])[0]) for k in ref}
        passed = dist["tau"] <= 0.01 and dist["p_obs"] <= 0.01 and dist["throughput"] <= 0.02 * ref["throughput"][i]
        row["passed"] = bool(passed)
        ok &= bool(passed)
        rows.append(row)
    return rows, ok


def cmd_closedloop(config, spec, plant="sim"):
    w = lqi.Weights(spec.q1, spec.q2, spec.rho, None, None)
    duration = spec.duration_us or 100 * config.beacon_interval
    run = control.run_closed_loop(config, list(spec.events), w, spec.seeds[0], duration, plant=plant)
    rows = []
    for r in run.records:
        row = {"k": r.k, "time_us": r.time_us}
        for field in ("n_stations", "w_applied", "p_obs", "p_used", "p_star", "throughput", "integrator"):
            for name, v in zip(config.names, getattr(r, field)):
                row[f"{field}_{name}"] = v
        rows.append(row)
    if run.aborted:
        log.error(run.aborted)
    return rows, run.aborted is None


def cmd_reproduce(target, spec):
    if target == "table4":
        rows = reproduce.reproduce_table4()
    elif target == "fig4":
        rows = reproduce.reproduce_fig4()
    elif target == "fig7":
        kw = {"duration_us": spec.duration_us} if spec.duration_us else {}
        rows = reproduce.reproduce_fig7(spec.seeds, **kw)
    else:
        rows = reproduce.reproduce_qr_tuning()
    ok = all(r["passed"] for r in rows if isinstance(r["passed"], (bool, np.bool_)))
    return rows, ok


# --- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="edcafair", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--preset", choices=("table4_case1", "table4_case2", "tuning", "adaptivity"), help="built-in network instead of --config")
        p.add_argument("--out", help="output CSV (directory for reproduce); default stdout")
        p.add_argument("--seed", type=int, dest="seeds", action="append", help="repeatable")
        p.add_argument("--seeds", type=int, nargs="+", dest="seed_list")
        p.add_argument("--duration", type=float, help="simulated time in us")
        p.add_argument("--q1", type=float)
        p.add_argument("--q2", type=float)
        p.add_argument("--rho", type=float)
        p.add_argument("--windows", type=float, nargs="+", help="one window per AC")
        p.add_argument("--jobs", type=int, default=1, help="parallel processes for independent seeds")
        if name == "reproduce":
            p.add_argument("--target", required=True, choices=TARGETS + ("all",))
        if name == "closedloop":
            p.add_argument("--plant", choices=control.PLANTS, default="sim")
    return ap


_PRESETS = {
    "table4_case1": presets.table4_case1,
    "table4_case2": presets.table4_case2,
    "tuning": presets.tuning_config,
    "adaptivity": presets.adaptivity_config,
}


def _load(args):
    if args.config:
        config, spec = parse_config(args.config)
    elif args.preset:
        config, spec = _PRESETS[args.preset](), ExperimentSpec()
        if args.preset == "adaptivity":
            spec = replace(spec, events=reproduce.FIG7_EVENTS)
    elif args.command == "reproduce":
        config, spec = presets.fig4(1), ExperimentSpec()
    else:
        raise EdcaError("give --config or --preset")
    over = {"command": args.command, "out": args.out}
    seeds = (args.seeds or []) + (args.seed_list or [])
    if seeds:
        over["seeds"] = tuple(seeds)
    if args.duration is not None:
        over["duration_us"] = args.duration
    for k in ("q1", "q2", "rho"):
        if getattr(args, k) is not None:
            over[k] = getattr(args, k)
    if args.windows is not None:
        if len(args.windows) != config.N:
            raise EdcaError(f"--windows needs {config.N} values")
        over["windows"] = tuple(args.windows)
    if args.command == "reproduce" and args.target != "all":
        over["target"] = args.target
    elif args.command == "reproduce":
        over["command"] = None
    return config, replace(spec, **over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        config, spec = _load(args)
        meta = {"artifact": f"edcafair {__version__}", "command": args.command, "seeds": " ".join(map(str, spec.seeds))}
        if args.command == "reproduce":
            targets = TARGETS if args.target == "all" else (args.target,)
            ok = True
            for t in targets:
                try:
                    rows, passed = cmd_reproduce(t, spec)
                except EdcaError as exc:
                    raise EdcaError(f"reproduce {t}: {exc}") from exc
                out = str(Path(args.out) / f"{t}.csv") if args.out else None
                write_table(rows, out, {**meta, "target": t})
                print(f"{t}: {'pass' if passed else 'FAIL'}", file=sys.stderr)
                ok &= passed
            return 0 if ok else 1
        meta["config"] = config_hash(config)
        if args.command == "simulate":
            rows, ok = cmd_simulate(config, spec, args.jobs)
        elif args.command == "closedloop":
            rows, ok = cmd_closedloop(config, spec, args.plant)
        else:
            rows, ok = globals()[f"cmd_{args.command}"](config, spec)
        write_table(rows, spec.out, meta)
        return 0 if ok else 1
    except EdcaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
