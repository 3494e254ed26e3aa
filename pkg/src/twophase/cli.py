"""Command-line entry point for the wave-by-wave validation workflow.

Subcommands: ``simulate``, ``fpca fit|score|flag``, ``design
init|allocate|split|close|draw``, ``estimate``, ``report``.  Every
command is deterministic given its inputs and ``--seed``; failures exit
with a distinct code per error class and a single machine-parsable
stderr line ``error: <class>: <message>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from twophase import (
    allocation,
    fileio,
    fpca,
    imputation,
    models,
    multiframe,
    raking,
    records as rec,
    simulate,
)
from twophase.errors import (
    CalibrationError,
    ConvergenceError,
    DegenerateDesignError,
    DomainError,
    IllConditionedError,
    InfeasibleError,
    LedgerError,
    PartitionError,
    SchemaError,
    TwophaseError,
)

log = logging.getLogger("twophase")

EXIT_CODES = [
    (SchemaError, 4, "parse"),
    (InfeasibleError, 5, "infeasible"),
    (PartitionError, 6, "partition"),
    (LedgerError, 6, "ledger"),
    (ConvergenceError, 7, "convergence"),
    (CalibrationError, 8, "calibration"),
    (DomainError, 9, "domain"),
    (DegenerateDesignError, 10, "degenerate-design"),
    (IllConditionedError, 11, "ill-conditioned"),
    (OSError, 3, "io"),
    (TwophaseError, 12, "error"),
]


def _configure_logging():
    level = os.environ.get("TWOPHASE_LOG", "info").upper()
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _log_config(args):
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    log.info("resolved configuration: %s", resolved)


# ---------------------------------------------------------------------------
# simulate


def _sim_config_from_json(path) -> simulate.SimConfig:
    if path is None:
        return simulate.SimConfig()
    with open(path) as fh:
        raw = json.load(fh)
    traj = simulate.TrajectoryModel(**raw.pop("trajectory", {}))
    err = simulate.ErrorModel(**raw.pop("error", {}))
    known = {f.name for f in dataclasses.fields(simulate.SimConfig)}
    unknown = set(raw) - known
    if unknown:
        raise SchemaError(f"unknown simulation config keys: {sorted(unknown)}")
    return simulate.SimConfig(trajectory=traj, error=err, **raw)


def cmd_simulate_generate(args) -> int:
    config = _sim_config_from_json(args.config)
    seed = args.seed if args.seed is not None else config.seed
    pop = simulate.generate(config, seed, include_series=args.with_series)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_dyads(out / "dyads.csv", fileio.population_to_records(pop))
    fileio.write_truth(out / "truth.csv", pop)
    if args.with_series:
        fileio.write_measurements(out / "measurements.csv", pop.series)
    log.info("wrote %d records to %s", pop.n, out)
    return 0


def cmd_simulate_reveal(args) -> int:
    records = fileio.read_dyads(args.dyads)
    truth = fileio.read_truth(args.truth)
    draw = fileio.read_draw(args.draw)
    wave = args.wave if args.wave is not None else draw["wave"]
    drawn = {rid for ids in draw["by_stratum"].values() for rid in ids}
    overlap = set(draw.get("overlap_ids", ()))
    updated = []
    for r in records:
        if r.id in drawn and not r.validated:
            t = truth.get(r.id)
            if t is None:
                raise SchemaError(f"truth file has no row for drawn record {r.id!r}")
            r = r.with_validation(wave, t["y"], t["delta"], t["x"], t["z"])
        updated.append(r)
    fileio.write_dyads(args.out, updated)
    log.info("validated %d newly drawn records (%d reused from overlap)",
             len(drawn - overlap), len(overlap & drawn))
    return 0


def cmd_simulate_experiment(args) -> int:
    config = _sim_config_from_json(args.config)
    spec = simulate.DesignSpec()
    report = simulate.run_experiment(config, spec, args.replicates,
                                     master_seed=args.seed, progress=args.progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_report(out / "report.csv", out / "report.txt", report)
    print((out / "report.txt").read_text(), end="")
    return 0


# ---------------------------------------------------------------------------
# fpca


def cmd_fpca_fit(args) -> int:
    series = fileio.read_measurements(args.measurements)
    system = fpca.fit_eigensystem(
        series, grid_size=args.grid_size, fve_threshold=args.fve,
        mean_bandwidth=args.mean_bandwidth, cov_bandwidth=args.cov_bandwidth)
    fileio.write_eigensystem(args.out, system)
    log.info("fit %d components (fve %.5f) from %d subjects",
             system.n_components, system.fve[-1] if system.n_components else 1.0,
             len(series))
    return 0


def cmd_fpca_score(args) -> int:
    series = fileio.read_measurements(args.measurements)
    system = fileio.read_eigensystem(args.eigensystem)
    gest = {}
    if args.gestation_file:
        with open(args.gestation_file) as fh:
            import csv as _csv
            reader = _csv.reader(fh)
            next(reader)
            for row in reader:
                gest[row[0]] = float(row[1])
    import csv as _csv
    with open(args.out, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["subject_id"]
                        + [f"score_{k}" for k in range(system.n_components)]
                        + ["gestation_days", "weekly_gain"])
        for s in series:
            g = gest.get(s.subject_id, args.gestation_days)
            xi, _ = fpca.pace_scores(s.shifted(g - fpca.FULL_TERM_DAYS), system)
            gain = fpca.weight_change(s, system, g)
            writer.writerow([s.subject_id] + [repr(float(v)) for v in xi]
                            + [repr(float(g)), repr(float(gain))])
    return 0


def cmd_fpca_flag(args) -> int:
    series = fileio.read_measurements(args.measurements)
    system = fileio.read_eigensystem(args.eigensystem)
    import csv as _csv
    with open(args.out, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["subject_id", "obs_index", "t_days", "weight_kg"])
        for s in series:
            for j in fpca.flag_outliers(s, system, level=args.level):
                writer.writerow([s.subject_id, j, repr(float(s.times[j])),
                                 repr(float(s.values[j]))])
    return 0


# ---------------------------------------------------------------------------
# design


def cmd_design_init(args) -> int:
    records = fileio.read_dyads(args.dyads)
    with open(args.strata) as fh:
        specs = json.load(fh)
    if not isinstance(specs, list):
        raise SchemaError("strata file must be a JSON list of leaf specs")
    ledger = rec.build_ledger(args.frame, specs, records, rng_seed=args.seed,
                              member_flag=args.member_flag)
    fileio.write_ledger(args.out, ledger)
    log.info("ledger %s: %d leaves over %d members", args.frame,
             len(ledger.leaf_ids()), ledger.population_size())
    return 0


def cmd_design_allocate(args) -> int:
    ledger = fileio.read_ledger(args.ledger)
    records = fileio.read_dyads(args.dyads)
    values = fileio.read_influence(args.influence)
    assignment = rec.assign_strata(records, ledger)
    stats = allocation.stratum_sd(values, assignment, ledger)
    closed_ids = {s.id for s in ledger.leaves() if s.closed}
    if args.wave == 1 and all(s.already_sampled == 0 for s in stats):
        draws = allocation.exact_allocation(stats, args.target,
                                            min_per_stratum=args.min_per_stratum)
        closed, flags = closed_ids, {}
    else:
        result = allocation.multiwave(stats, args.target,
                                      min_per_stratum=args.min_per_stratum,
                                      pre_closed=closed_ids)
        draws, closed = result.draws, result.closed
        flags = {"spilled": sorted(result.spilled)}
    flags["sd_sources"] = {s.id: s.sd_source for s in stats
                           if s.sd_source != "stratum"}
    fileio.write_allocation(args.out, draws, wave=args.wave, frame=ledger.frame,
                            closed=closed, flags=flags)
    return 0


def cmd_design_split(args) -> int:
    ledger = fileio.read_ledger(args.ledger)
    records = fileio.read_dyads(args.dyads)
    cuts = [float(c) for c in args.cuts.split(",") if c != ""]
    child_ids = args.child_ids.split(",") if args.child_ids else None
    new = rec.split_stratum(ledger, records, args.stratum, args.axis, cuts,
                            child_ids=child_ids)
    fileio.write_ledger(args.out, new)
    return 0


def cmd_design_close(args) -> int:
    ledger = fileio.read_ledger(args.ledger)
    new = rec.close_stratum(ledger, args.stratum)
    fileio.write_ledger(args.out, new)
    return 0


def cmd_design_draw(args) -> int:
    ledger = fileio.read_ledger(args.ledger)
    records = fileio.read_dyads(args.dyads)
    alloc = fileio.read_allocation(args.allocation)
    wave = args.wave if args.wave is not None else ledger.wave_count + 1
    result = allocation.draw_sample(records, ledger, alloc["draws"],
                                    seed=args.seed, wave=wave)
    fileio.write_draw(args.out, result.by_stratum, wave=wave,
                      overlap_ids=result.overlap_ids)
    if args.update_ledger:
        updated = rec.apply_draw(ledger, wave, result.by_stratum)
        fileio.write_ledger(args.update_ledger, updated)
    return 0


# ---------------------------------------------------------------------------
# estimate


def _cox_arrays(records, phase2: bool):
    if phase2:
        y = np.array([r.y for r in records])
        d = np.array([float(r.delta) for r in records])
        x = np.array([[r.x, *r.z] for r in records])
    else:
        y = np.array([r.y_star for r in records])
        d = np.array([float(r.delta_star) for r in records])
        x = np.array([[r.x_star, *r.z_star] for r in records])
    return y, d, x


def _logistic_arrays(records, outcome_z: int, phase2: bool):
    if phase2:
        y = np.array([r.z[outcome_z] for r in records])
        x = np.array([[1.0, r.x, *(v for j, v in enumerate(r.z) if j != outcome_z)]
                      for r in records])
    else:
        y = np.array([r.z_star[outcome_z] for r in records])
        x = np.array([[1.0, r.x_star,
                       *(v for j, v in enumerate(r.z_star) if j != outcome_z)]
                      for r in records])
    return np.clip(y, 0, 1), x


def _terms(records, model, outcome_z):
    n_z = len(records[0].z_star)
    if model == "cox":
        return ["x"] + [f"z_{j}" for j in range(n_z)]
    return ["intercept", "x"] + [f"z_{j}" for j in range(n_z) if j != outcome_z]


def _target_index(model):
    return 0 if model == "cox" else 1


def _generic_mi_influence(records, model, outcome_z, mi_replicates, seed):
    """Multiply-imputed influence from a generic per-column imputation spec."""
    n_z = len(records[0].z_star)
    data = {
        "y_star": np.array([r.y_star for r in records]),
        "delta_star": np.array([float(r.delta_star) for r in records]),
        "x_star": np.array([r.x_star for r in records]),
    }
    for j in range(n_z):
        data[f"z_star_{j}"] = np.array([r.z_star[j] for r in records])
    validated = np.array([r.validated for r in records])
    for name, star in (("y", "y_star"), ("delta", "delta_star"), ("x", "x_star")):
        col = np.zeros(len(records))
        for i, r in enumerate(records):
            col[i] = getattr(r, name) if r.validated else 0.0
        data[name] = col
    for j in range(n_z):
        col = np.zeros(len(records))
        for i, r in enumerate(records):
            col[i] = r.z[j] if r.validated else 0.0
        data[f"z_{j}"] = col

    V = imputation.VariableSpec
    specs = []
    for j in range(n_z):
        binary = set(np.unique(data[f"z_star_{j}"])) <= {0.0, 1.0}
        specs.append(V(f"z_{j}", "binary" if binary else "continuous",
                       (f"z_star_{j}",)))
    specs.append(V("x", "continuous", ("x_star",)
                   + tuple(f"z_star_{j}" for j in range(n_z))))
    specs.append(V("delta", "binary", ("delta_star", "x_star", "y_star")))
    specs.append(V("y", "continuous", ("y_star", "delta_star")))
    model_fit = imputation.fit_imputation(data, validated, specs)
    if model == "cox":
        analysis = imputation.AnalysisSpec(
            kind="cox", outcome="y", event="delta",
            covariates=("x",) + tuple(f"z_{j}" for j in range(n_z)), target=0)
    else:
        analysis = imputation.AnalysisSpec(
            kind="logistic", outcome=f"z_{outcome_z}", event=None,
            covariates=("x",) + tuple(f"z_{j}" for j in range(n_z)
                                      if j != outcome_z),
            target=0, intercept=True)
    return imputation.mi_influence(data, model_fit, mi_replicates, analysis, seed)


def cmd_estimate(args) -> int:
    records = fileio.read_dyads(args.dyads)
    if args.model == "logistic":
        frame_records = [r for r in records if r.in_asthma_frame]
    else:
        frame_records = records
    terms = _terms(records, args.model, args.outcome_z)
    target = _target_index(args.model)

    def fit_rows(rows, weights=None):
        if args.model == "cox":
            y, d, x = _cox_arrays(rows, phase2=args.method != "phase1")
            return models.fit_cox(y, d, x, weights), (y, d, x)
        y, x = _logistic_arrays(rows, args.outcome_z, phase2=args.method != "phase1")
        return models.fit_logistic(y, x, weights), (y, None, x)

    if args.method == "phase1":
        fit, _ = fit_rows(frame_records)
        fit.variance = models.sandwich_variance(fit)
        rows_out = [("phase1", fit.coefficients, fit.se)]
        if args.emit_influence:
            h = models.influence_for_target(fit, target)
            fileio.write_influence(args.emit_influence,
                                   {r.id: float(v) for r, v in
                                    zip(frame_records, h)})
    else:
        ledger = fileio.read_ledger(args.ledger)
        pis = rec.sampling_probabilities(records, ledger)
        assignment = rec.assign_strata(records, ledger)
        sampled_ids = ledger.sampled_ids()
        sampled = [r for r in frame_records if r.id in sampled_ids]
        if not all(r.validated for r in sampled):
            raise LedgerError("a sampled record is not validated; reveal phase-2 "
                              "data before estimating")
        if args.frame == "multi":
            if not args.asthma_ledger:
                raise SchemaError("--frame multi requires --asthma-ledger")
            ledger2 = fileio.read_ledger(args.asthma_ledger)
            pis2 = rec.sampling_probabilities(records, ledger2)
            assignment2 = rec.assign_strata(records, ledger2)
            sampled2_ids = ledger2.sampled_ids()
            fw = multiframe.combine_frames(
                ledger.frame, ledger2.frame, pis, pis2,
                {rid: assignment[rid] for rid in sampled_ids},
                {rid: assignment2[rid] for rid in sampled2_ids})
            by_id = {r.id: r for r in records}
            frame_ids = {r.id for r in frame_records}
            rows_rec = [by_id[r.record_id] for r in fw.rows
                        if r.record_id in frame_ids]
            keep = [r.record_id in frame_ids for r in fw.rows]
            weights = fw.weights()[np.asarray(keep)]
            strata_keys = fw.strata_keys()[np.asarray(keep)]
            clusters = fw.cluster_ids()[np.asarray(keep)]
            if args.emit_weights:
                fileio.write_combined_weights(args.emit_weights, fw.rows)
        else:
            rows_rec = sampled
            weights = np.array([1.0 / pis[r.id] for r in rows_rec])
            strata_keys = np.array([assignment[r.id] for r in rows_rec])
            clusters = None

        if args.method == "ipw":
            fit, _ = fit_rows(rows_rec, weights)
            fit.variance = models.sandwich_variance(fit, strata_keys, clusters)
        else:  # raking
            if args.aux == "mi":
                h_all = _generic_mi_influence(frame_records, args.model,
                                              args.outcome_z,
                                              args.mi_replicates, args.seed)
                if args.emit_mi_influence:
                    fileio.write_influence(
                        args.emit_mi_influence,
                        {r.id: float(v) for r, v in zip(frame_records, h_all)})
                h_map = {r.id: float(v) for r, v in zip(frame_records, h_all)}
            elif args.influence:
                h_map = fileio.read_influence(args.influence)
            else:
                p1fit, _ = (lambda rows: (
                    models.fit_cox(*_cox_arrays(rows, phase2=False)[:2],
                                   _cox_arrays(rows, phase2=False)[2]), None))(
                    frame_records) if args.model == "cox" else (
                    models.fit_logistic(*_logistic_arrays(
                        frame_records, args.outcome_z, phase2=False)), None)
                h = models.influence_for_target(p1fit, target)
                h_map = {r.id: float(v) for r, v in zip(frame_records, h)}
            aux_all = np.array([[1.0, h_map[r.id]] for r in frame_records])
            totals = aux_all.sum(axis=0)
            aux_sample = np.array([[1.0, h_map[r.id]] for r in rows_rec])
            if args.model == "cox":
                y, d, x = _cox_arrays(rows_rec, phase2=True)
                fit, cal = raking.raking_fit("cox", y, d, x, weights, aux_sample,
                                             totals, strata=strata_keys,
                                             clusters=clusters)
            else:
                y, x = _logistic_arrays(rows_rec, args.outcome_z, phase2=True)
                fit, cal = raking.raking_fit("logistic", y, None, x, weights,
                                             aux_sample, totals,
                                             strata=strata_keys, clusters=clusters)
            log.info("calibration: residual %.3g in %d iterations",
                     cal.constraint_residual, cal.iterations)
        name = f"{args.method}_{args.frame}" if args.method != "phase1" else "phase1"
        if args.method == "raking":
            name = f"raking_{args.aux}"
        rows_out = [(name, fit.coefficients, fit.se)]
        if args.emit_influence:
            h = models.influence_for_target(fit, target) / weights
            fileio.write_influence(args.emit_influence,
                                   {r.id: float(v) for r, v in zip(rows_rec, h)})
    fileio.write_estimates(args.out, rows_out, terms)
    return 0


def cmd_report(args) -> int:
    merged: dict[str, dict[str, tuple[float, float]]] = {}
    names = []
    for path in args.inputs:
        for row in fileio.read_estimates(path):
            if row["estimator"] not in names:
                names.append(row["estimator"])
            merged.setdefault(row["term"], {})[row["estimator"]] = (row["beta"],
                                                                    row["se"])
    import csv as _csv
    with open(args.out, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["term"] + [f"{n}_{c}" for n in names for c in ("beta", "se")])
        for term in merged:
            row = [term]
            for n in names:
                beta, se = merged[term].get(n, (float("nan"), float("nan")))
                row += [repr(beta), repr(se)]
            writer.writerow(row)
    if args.text:
        lines = [f"{'term':14s} " + " ".join(f"{n:>18s}" for n in names)]
        for term in merged:
            cells = []
            for n in names:
                beta, se = merged[term].get(n, (float("nan"), float("nan")))
                cells.append(f"{beta:9.3f} ({se:5.3f})")
            lines.append(f"{term:14s} " + " ".join(f"{c:>18s}" for c in cells))
        Path(args.text).write_text("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twophase")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="synthetic data and experiments")
    p_sim.add_argument("action", nargs="?", default="generate",
                       choices=["generate", "reveal", "experiment"])
    p_sim.add_argument("--config", default=None)
    p_sim.add_argument("--out", required=False)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--with-series", action="store_true")
    p_sim.add_argument("--dyads")
    p_sim.add_argument("--truth")
    p_sim.add_argument("--draw")
    p_sim.add_argument("--wave", type=int, default=None)
    p_sim.add_argument("--replicates", type=int, default=500)
    p_sim.add_argument("--progress", action="store_true")

    p_fpca = sub.add_parser("fpca", help="functional PCA on weight histories")
    fpca_sub = p_fpca.add_subparsers(dest="action", required=True)
    f_fit = fpca_sub.add_parser("fit")
    f_fit.add_argument("--measurements", required=True)
    f_fit.add_argument("--out", required=True)
    f_fit.add_argument("--grid-size", type=int, default=fpca.DEFAULT_GRID_SIZE)
    f_fit.add_argument("--fve", type=float, default=fpca.DEFAULT_FVE)
    f_fit.add_argument("--mean-bandwidth", type=float, default=None)
    f_fit.add_argument("--cov-bandwidth", type=float, default=None)
    f_score = fpca_sub.add_parser("score")
    f_score.add_argument("--measurements", required=True)
    f_score.add_argument("--eigensystem", required=True)
    f_score.add_argument("--out", required=True)
    f_score.add_argument("--gestation-days", type=float, default=273.0)
    f_score.add_argument("--gestation-file", default=None)
    f_flag = fpca_sub.add_parser("flag")
    f_flag.add_argument("--measurements", required=True)
    f_flag.add_argument("--eigensystem", required=True)
    f_flag.add_argument("--out", required=True)
    f_flag.add_argument("--level", type=float, default=0.95)

    p_design = sub.add_parser("design", help="ledger, allocation, and draws")
    design_sub = p_design.add_subparsers(dest="action", required=True)
    d_init = design_sub.add_parser("init")
    d_init.add_argument("--frame", required=True)
    d_init.add_argument("--dyads", required=True)
    d_init.add_argument("--strata", required=True)
    d_init.add_argument("--out", required=True)
    d_init.add_argument("--seed", type=int, default=0)
    d_init.add_argument("--member-flag", default=None)
    d_alloc = design_sub.add_parser("allocate")
    d_alloc.add_argument("--ledger", required=True)
    d_alloc.add_argument("--dyads", required=True)
    d_alloc.add_argument("--influence", required=True)
    d_alloc.add_argument("--target", type=int, required=True)
    d_alloc.add_argument("--wave", type=int, required=True)
    d_alloc.add_argument("--out", required=True)
    d_alloc.add_argument("--min-per-stratum", type=int, default=1)
    d_split = design_sub.add_parser("split")
    d_split.add_argument("--ledger", required=True)
    d_split.add_argument("--dyads", required=True)
    d_split.add_argument("--stratum", required=True)
    d_split.add_argument("--axis", required=True)
    d_split.add_argument("--cuts", required=True)
    d_split.add_argument("--child-ids", default=None)
    d_split.add_argument("--out", required=True)
    d_close = design_sub.add_parser("close")
    d_close.add_argument("--ledger", required=True)
    d_close.add_argument("--stratum", required=True)
    d_close.add_argument("--out", required=True)
    d_draw = design_sub.add_parser("draw")
    d_draw.add_argument("--ledger", required=True)
    d_draw.add_argument("--dyads", required=True)
    d_draw.add_argument("--allocation", required=True)
    d_draw.add_argument("--seed", type=int, required=True)
    d_draw.add_argument("--wave", type=int, default=None)
    d_draw.add_argument("--out", required=True)
    d_draw.add_argument("--update-ledger", default=None)

    p_est = sub.add_parser("estimate", help="phase-1, IPW, and raking estimators")
    p_est.add_argument("--dyads", required=True)
    p_est.add_argument("--model", choices=["cox", "logistic"], default="cox")
    p_est.add_argument("--method", choices=["phase1", "ipw", "raking"],
                       required=True)
    p_est.add_argument("--frame", choices=["single", "multi"], default="single")
    p_est.add_argument("--aux", choices=["naive", "mi"], default="naive")
    p_est.add_argument("--ledger", default=None)
    p_est.add_argument("--asthma-ledger", default=None)
    p_est.add_argument("--influence", default=None,
                       help="aux influence CSV for raking (overrides --aux naive refit)")
    p_est.add_argument("--outcome-z", type=int, default=2,
                       help="z index holding the logistic outcome")
    p_est.add_argument("--mi-replicates", type=int,
                       default=imputation.DEFAULT_REPLICATES)
    p_est.add_argument("--seed", type=int, default=0)
    p_est.add_argument("--out", required=True)
    p_est.add_argument("--emit-influence", default=None)
    p_est.add_argument("--emit-mi-influence", default=None)
    p_est.add_argument("--emit-weights", default=None)

    p_rep = sub.add_parser("report", help="merge estimate tables")
    p_rep.add_argument("--inputs", nargs="+", required=True)
    p_rep.add_argument("--out", required=True)
    p_rep.add_argument("--text", default=None)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _log_config(args)
    try:
        if args.command == "simulate":
            if args.action == "generate":
                if not args.out:
                    raise SchemaError("simulate generate requires --out")
                return cmd_simulate_generate(args)
            if args.action == "reveal":
                for field in ("dyads", "truth", "draw", "out"):
                    if not getattr(args, field):
                        raise SchemaError(f"simulate reveal requires --{field}")
                return cmd_simulate_reveal(args)
            if not args.out:
                raise SchemaError("simulate experiment requires --out")
            return cmd_simulate_experiment(args)
        if args.command == "fpca":
            return {"fit": cmd_fpca_fit, "score": cmd_fpca_score,
                    "flag": cmd_fpca_flag}[args.action](args)
        if args.command == "design":
            return {"init": cmd_design_init, "allocate": cmd_design_allocate,
                    "split": cmd_design_split, "close": cmd_design_close,
                    "draw": cmd_design_draw}[args.action](args)
        if args.command == "estimate":
            if args.method != "phase1" and not args.ledger:
                raise SchemaError(f"--method {args.method} requires --ledger")
            return cmd_estimate(args)
        if args.command == "report":
            return cmd_report(args)
        raise SchemaError(f"unknown command {args.command!r}")
    except Exception as exc:  # noqa: BLE001 - single mapping point to exit codes
        for klass, code, label in EXIT_CODES:
            if isinstance(exc, klass):
                msg = str(exc).replace("\n", " ")
                print(f"error: {label}: {msg}", file=sys.stderr)
                return code
        raise


def main() -> None:
    _configure_logging()
    sys.exit(dispatch(sys.argv[1:]))
