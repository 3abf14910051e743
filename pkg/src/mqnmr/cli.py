"""Command-line runner: experiment orchestration and CSV emission.

Subcommands
-----------
simulate      order-resolved spectra for either experiment -> spectrum CSV
decay-times   averaged e-fold decay times and their coth fit  (experiment A)
perturbed     envelope-zero decay times and their tanh fit    (experiment B)
clusters      cluster-size traces for either experiment
verify        block pipeline against the full 2^N reference
conservation  frequency-domain area conservation, both routes

All numeric CSV values are written with 17 significant digits and a '.'
decimal separator; reductions happen in a fixed order, so outputs are
byte-identical across runs and worker counts.  Exit codes: 0 success,
1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, analysis, coherence, engine, oracle
from .config import ConfigError, RunConfig, build_config, load_config_file, parse_grid
from .propagator import EigensolverError
from .sectors import SpinSystem


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


class CsvWriter:
    """Streams rows to a temp file; only a successful run publishes it."""

    def __init__(self, path: str, header: list):
        self.path = path
        self.tmp = path + ".tmp"
        self.handle = open(self.tmp, "w", encoding="utf-8", newline="\n")
        self.handle.write(",".join(header) + "\n")

    def row(self, *values) -> None:
        self.handle.write(",".join(_fmt(v) if not isinstance(v, str) else v for v in values) + "\n")

    def close_and_publish(self) -> None:
        self.handle.close()
        os.replace(self.tmp, self.path)

    def discard(self) -> None:
        try:
            self.handle.close()
        finally:
            if os.path.exists(self.tmp):
                os.remove(self.tmp)


class Emitter:
    """Collects CSV writers so a failure discards every partial file."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.writers = []
        os.makedirs(out_dir, exist_ok=True)

    def csv(self, name: str, header: list) -> CsvWriter:
        writer = CsvWriter(os.path.join(self.out_dir, name), header)
        self.writers.append(writer)
        return writer

    def publish(self) -> None:
        for writer in self.writers:
            writer.close_and_publish()

    def abort(self) -> None:
        for writer in self.writers:
            writer.discard()


def _progress(label: str):
    def callback(done: int, total: int):
        stride = max(1, total // 10)
        if done == total or done % stride == 0:
            print(f"{label}: {done}/{total}", file=sys.stderr, flush=True)

    return callback


def _window(cfg: RunConfig) -> coherence.AveragingWindow:
    return coherence.AveragingWindow(tau0=cfg.tau0, periods=cfg.periods, steps=cfg.avg_steps)


def _populated_orders(orders, reference, floor):
    """Even orders k >= 2 up to the first one below the intensity floor.

    Stopping at the first gap avoids keeping isolated far-tail orders whose
    neighbours have already dropped out.
    """
    keep = []
    n = (len(orders) - 1) // 2
    for k in range(2, n + 1, 2):
        if reference[n + k] < floor:
            break
        keep.append(k)
    return keep


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def run_simulate(cfg: RunConfig, emitter: Emitter) -> None:
    for n in cfg.n_spins:
        system = SpinSystem(n)
        if cfg.experiment == "A":
            t_values = cfg.t_grid.values()
            writer = emitter.csv(f"spectrum_A_n{n}.csv", ["experiment", "n_spins", "p", "tau_bar", "t_bar", "k", "intensity"])
            table = engine.coherence_table_at(system, cfg.tau, workers=cfg.workers)
            mat = table.intensity_matrix(t_values)
            for it, t in enumerate(t_values):
                for ik, k in enumerate(table.orders):
                    writer.row("A", n, 0.0, cfg.tau, t, int(k), mat[ik, it])
        else:
            taus = cfg.tau_grid.values()
            for p in cfg.p:
                writer = emitter.csv(f"spectrum_B_n{n}_p{p:g}.csv", ["experiment", "n_spins", "p", "tau_bar", "t_bar", "k", "intensity"])
                sweep = engine.perturbed_sweep(
                    system, p, taus, mixing=cfg.mixing, workers=cfg.workers,
                    progress=_progress(f"sweep N={n} p={p:g}"),
                )
                orders = np.arange(-n, n + 1)
                for it, tau in enumerate(taus):
                    for ik, k in enumerate(orders):
                        writer.row("B", n, p, tau, 0.0, int(k), sweep[ik, it])


def run_decay_times(cfg: RunConfig, emitter: Emitter) -> None:
    t_values = cfg.t_grid.values()
    for n in cfg.n_spins:
        system = SpinSystem(n)
        table = coherence.averaged_table(
            system, _window(cfg), workers=cfg.workers, progress=_progress(f"averaging N={n}, sectors")
        )
        mat = table.intensity_matrix(t_values)
        at_zero = mat[:, 0]
        writer = emitter.csv(f"decay_times_n{n}.csv", ["n_spins", "p", "k", "decay_time", "method", "status"])
        fit_points = []
        for k in _populated_orders(table.orders, at_zero, cfg.j_floor):
            curve = analysis.DecayCurve(t_values, mat[n + k], order=k, n_spins=n)
            result = analysis.decay_time_e(curve)
            writer.row(n, 0.0, k, result.value, "e_fold", result.status)
            if result.ok:
                fit_points.append((k, result.value))
        fits = emitter.csv(f"fits_n{n}.csv", ["model", "parameters", "residual", "converged"])
        if len(fit_points) >= 4:
            ks, tes = zip(*fit_points)
            fit = analysis.fit_coth(ks, tes)
            fits.row(fit.model, ";".join(_fmt(v) for v in fit.parameters), fit.residual, str(fit.converged).lower())


def run_perturbed(cfg: RunConfig, emitter: Emitter) -> None:
    # Decay times are emitted for every order above j_floor, but the tanh
    # fit only uses orders whose intensity reaches the observability
    # threshold j_min: the envelope-zero reading is an amplitude-crossing
    # measurement, and below the threshold it tracks the amplitude itself
    # (tau_p ~ log peak) instead of the decay law.
    taus = cfg.tau_grid.values()
    for n in cfg.n_spins:
        system = SpinSystem(n)
        for p in cfg.p:
            sweep = engine.perturbed_sweep(
                system, p, taus, mixing=cfg.mixing, workers=cfg.workers,
                progress=_progress(f"sweep N={n} p={p:g}"),
            )
            peak = sweep.max(axis=1)
            orders = np.arange(-n, n + 1)
            writer = emitter.csv(f"decay_times_n{n}_p{p:g}.csv", ["n_spins", "p", "k", "decay_time", "method", "status"])
            fit_points = []
            for k in _populated_orders(orders, peak, cfg.j_floor):
                curve = analysis.DecayCurve(taus, sweep[n + k], order=k, n_spins=n, p=p, experiment="B")
                result = analysis.decay_time_perturbed(curve)
                writer.row(n, p, k, result.value, "envelope_zero", result.status)
                if result.ok and peak[n + k] >= cfg.j_min:
                    fit_points.append((k, result.value))
            fits = emitter.csv(f"fits_n{n}_p{p:g}.csv", ["model", "parameters", "residual", "converged"])
            if len(fit_points) >= 4:
                ks, vals = zip(*fit_points)
                fit = analysis.fit_tanh(ks, vals)
                fits.row(fit.model, ";".join(_fmt(v) for v in fit.parameters), fit.residual, str(fit.converged).lower())


def run_clusters(cfg: RunConfig, emitter: Emitter) -> None:
    for n in cfg.n_spins:
        system = SpinSystem(n)
        if cfg.experiment == "A":
            t_values = cfg.t_grid.values()
            table = coherence.averaged_table(
                system, _window(cfg), workers=cfg.workers, progress=_progress(f"averaging N={n}, sectors")
            )
            mat = table.intensity_matrix(t_values)
            trace = analysis.cluster_trace_from_matrix(t_values, table.orders, mat, cfg.j_min)
            writer = emitter.csv(f"clusters_A_n{n}.csv", ["abscissa", "n_c_all", "n_c_nonneg", "j_min"])
            for i, t in enumerate(trace.abscissa):
                writer.row(t, int(trace.n_all[i]), int(trace.n_nonneg[i]), trace.threshold)
        else:
            taus = cfg.tau_grid.values()
            orders = np.arange(-n, n + 1)
            for p in cfg.p:
                sweep = engine.perturbed_sweep(
                    system, p, taus, mixing=cfg.mixing, workers=cfg.workers,
                    progress=_progress(f"sweep N={n} p={p:g}"),
                )
                env = analysis.upper_envelope_matrix(taus, orders, sweep)
                trace = analysis.cluster_trace_from_matrix(taus, orders, env, cfg.j_min)
                writer = emitter.csv(f"clusters_B_n{n}_p{p:g}.csv", ["abscissa", "n_c_all", "n_c_nonneg", "j_min"])
                for i, tau in enumerate(trace.abscissa):
                    writer.row(tau, int(trace.n_all[i]), int(trace.n_nonneg[i]), trace.threshold)


def run_verify(cfg: RunConfig) -> int:
    worst = 0.0
    for n in cfg.n_spins:
        system = SpinSystem(n)
        taus = np.linspace(0.2, 2.0, cfg.grid_points)
        ts = np.linspace(0.0, 1.0, cfg.grid_points)
        ps = np.linspace(0.0, 0.4, cfg.grid_points)
        for tau in taus:
            for t in ts:
                ref = oracle.oracle_standard_intensities(system, tau, t)
                got = coherence.intensities_standard(system, tau, t, workers=cfg.workers)
                for k, v in ref.items():
                    worst = max(worst, abs(v - got.intensity(k)))
        for tau in taus:
            for p in ps:
                ref = oracle.oracle_perturbed_intensities(system, p, tau, mixing=cfg.mixing)
                got = coherence.intensities_perturbed(system, p, tau, mixing=cfg.mixing, workers=cfg.workers)
                for k, v in ref.items():
                    worst = max(worst, abs(v - got.intensity(k)))
        print(f"N={n}: max |block - reference| = {worst:.3e} over both experiments")
    if worst <= cfg.tol:
        print(f"max |delta| <= {cfg.tol:g}: OK")
        return 0
    print(f"max |delta| = {worst:.3e} exceeds {cfg.tol:g}")
    return 2


def run_conservation(cfg: RunConfig) -> int:
    status = 0
    for n in cfg.n_spins:
        system = SpinSystem(n)
        areas = coherence.fourier_area_check(system, cfg.tau, cfg.t_span, cfg.samples, workers=cfg.workers)
        rel = abs(areas.numeric_sum - areas.analytic_sum) / abs(areas.analytic_sum)
        print(f"N={n} tau={cfg.tau:g}: sum_k A_k analytic = {areas.analytic_sum:.12f}, "
              f"dft = {areas.numeric_sum:.12f} (rel. diff {rel:.3e})")
    return status


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _int_list(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value configuration file; flags override it")
    parser.add_argument("--n", dest="n_spins", type=_int_list, help="comma-separated spin counts")
    parser.add_argument("--workers", type=int, help=f"worker threads (default: ${engine.WORKERS_ENV} or CPU count)")
    parser.add_argument("--output-dir", "-o", dest="output_dir", help="directory for emitted files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mqnmr", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"mqnmr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="order-resolved intensity spectra")
    _add_common(sim)
    sim.add_argument("--experiment", choices=("A", "B"))
    sim.add_argument("--tau", type=float)
    sim.add_argument("--t-grid", dest="t_grid", metavar="START:STOP:STEP")
    sim.add_argument("--tau-grid", dest="tau_grid", metavar="START:STOP:STEP")
    sim.add_argument("--p", type=_float_list)
    sim.add_argument("--mixing", choices=("ideal_mq", "matched_heff"))

    dec = sub.add_parser("decay-times", help="averaged e-fold decay times (experiment A)")
    _add_common(dec)
    dec.add_argument("--t-grid", dest="t_grid", metavar="START:STOP:STEP")
    dec.add_argument("--tau0", type=float)
    dec.add_argument("--periods", type=int)
    dec.add_argument("--avg-steps", dest="avg_steps", type=int)
    dec.add_argument("--j-floor", dest="j_floor", type=float)

    per = sub.add_parser("perturbed", help="envelope-zero decay times (experiment B)")
    _add_common(per)
    per.add_argument("--p", type=_float_list)
    per.add_argument("--tau-grid", dest="tau_grid", metavar="START:STOP:STEP")
    per.add_argument("--mixing", choices=("ideal_mq", "matched_heff"))
    per.add_argument("--j-floor", dest="j_floor", type=float)
    per.add_argument("--j-min", dest="j_min", type=float,
                     help="observability threshold restricting the tanh fit")

    clu = sub.add_parser("clusters", help="coherence-cluster size traces")
    _add_common(clu)
    clu.add_argument("--experiment", choices=("A", "B"))
    clu.add_argument("--p", type=_float_list)
    clu.add_argument("--t-grid", dest="t_grid", metavar="START:STOP:STEP")
    clu.add_argument("--tau-grid", dest="tau_grid", metavar="START:STOP:STEP")
    clu.add_argument("--j-min", dest="j_min", type=float)
    clu.add_argument("--mixing", choices=("ideal_mq", "matched_heff"))
    clu.add_argument("--tau0", type=float)
    clu.add_argument("--periods", type=int)
    clu.add_argument("--avg-steps", dest="avg_steps", type=int)

    ver = sub.add_parser("verify", help="compare block pipeline against the 2^N reference")
    _add_common(ver)
    ver.add_argument("--grid-points", dest="grid_points", type=int)
    ver.add_argument("--tol", type=float)
    ver.add_argument("--mixing", choices=("ideal_mq", "matched_heff"))

    con = sub.add_parser("conservation", help="frequency-domain area conservation")
    _add_common(con)
    con.add_argument("--tau", type=float)
    con.add_argument("--t-span", dest="t_span", type=float)
    con.add_argument("--samples", type=int)

    return parser


_EXPERIMENT_BY_COMMAND = {"decay-times": "A", "perturbed": "B", "verify": "verify", "conservation": "conservation"}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except SystemExit as exc:  # argparse reserves 2; our contract uses 1
        return 0 if exc.code == 0 else 1
    command = args.pop("command")
    config_path = args.pop("config", None)

    try:
        file_values = load_config_file(config_path) if config_path else {}
        for key in ("tau_grid", "t_grid"):
            if isinstance(args.get(key), str):
                args[key] = parse_grid(args[key], key)
        if command in _EXPERIMENT_BY_COMMAND:
            args["experiment"] = _EXPERIMENT_BY_COMMAND[command]
        cfg = build_config(file_values, args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1

    start = time.perf_counter()
    emitter = Emitter(cfg.output_dir)
    try:
        if command == "simulate":
            run_simulate(cfg, emitter)
            status = 0
        elif command == "decay-times":
            run_decay_times(cfg, emitter)
            status = 0
        elif command == "perturbed":
            run_perturbed(cfg, emitter)
            status = 0
        elif command == "clusters":
            run_clusters(cfg, emitter)
            status = 0
        elif command == "verify":
            status = run_verify(cfg)
        elif command == "conservation":
            status = run_conservation(cfg)
        else:  # pragma: no cover - argparse enforces the choices
            raise AssertionError(command)
    except (EigensolverError, np.linalg.LinAlgError, FloatingPointError) as exc:
        emitter.abort()
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        emitter.abort()
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        emitter.abort()
        raise

    emitter.publish()
    meta = {
        "command": command,
        "config": cfg.as_dict(),
        "version": __version__,
        "wall_time_s": time.perf_counter() - start,
    }
    with open(os.path.join(cfg.output_dir, "run_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
