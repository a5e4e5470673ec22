"""Pipeline stages behind the CLI: simulate, analyze, predict and demo.

Each stage is a pure function of its config and input files. It writes
CSV reports (plus optional PNG figures) into an output directory and
records what it did in ``manifest.json`` there.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from . import gpr, stats_analysis as st
from .config import PipelineConfig, derive_seed, load_config, with_overrides, SHIPPED
from .idm_sim import simulate_follower
from .mc_engine import (PARAMS, CampaignDataset, filter_by_trip, read_dataset, run_campaign,
                        write_dataset)
from .trace_io import SpeedTrace, save_trace, trip_stats

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
MIN_RECORDS = 10


class PipelineError(RuntimeError):
    """A stage could not produce its outputs from valid inputs."""


class InputError(ValueError):
    """A referenced input file is missing (a usage error for the CLI)."""


@dataclass(frozen=True)
class AnalysisResult:
    table: dict[str, st.DcorrResult]
    quintic: st.QuinticModel
    linear: st.QuinticModel
    spread: float
    drift: dict[str, float]
    n_valid: int


@dataclass(frozen=True)
class PredictionResult:
    features: list[str]
    model: gpr.GPRModel
    cv: gpr.CvReport
    quintic: st.QuinticModel
    test_r_square: float
    test_rmse: float
    kl: float
    kl_self: float


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def versions() -> dict[str, str]:
    import matplotlib
    import numba
    import scipy
    return {"drivefuel": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "matplotlib": matplotlib.__version__}


def stage_seeds(cfg: PipelineConfig) -> dict[str, int]:
    tags = ["campaign", "test", "cv", "gpr"] + [f"permutation:{p}" for p in PARAMS]
    return {t: derive_seed(cfg.seed, t) for t in tags}


def update_manifest(out: Path, stage: str, cfg: PipelineConfig, inputs: Sequence[Path],
                    outputs: Sequence[Path], fresh: bool = False) -> Path:
    """Record a stage in the directory manifest. Contains no clock or host data."""
    path = out / MANIFEST
    doc = {} if fresh or not path.exists() else json.loads(path.read_text(encoding="utf-8"))
    doc["versions"] = versions()
    doc.setdefault("stages", {})[stage] = {
        "config_name": cfg.name,
        "config_sha256": cfg.sha256(),
        "config": cfg.to_ini(),
        "seed": cfg.seed,
        "stage_seeds": stage_seeds(cfg),
        "inputs": {p.name: _sha256(p) for p in inputs},
        "outputs": {p.name: _sha256(p) for p in outputs if p.suffix != ".png"},
        "figures": sorted(p.name for p in outputs if p.suffix == ".png"),
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _prepare_out(cfg: PipelineConfig, out: Path | None) -> Path:
    out = Path(out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    return out


def _analysis_dataset(cfg: PipelineConfig, ds: CampaignDataset, leader: SpeedTrace) -> CampaignDataset:
    ds = CampaignDataset(ds.records, trip_stats(leader), ds.vehicle_id, ds.seed, ds.rejected, dict(ds.meta))
    if cfg.campaign.filter:
        ds = filter_by_trip(ds, cfg.campaign.dist_tol, cfg.campaign.time_tol)
    n_valid = len(ds.valid())
    if n_valid < MIN_RECORDS:
        raise PipelineError(f"dataset has {n_valid} usable records, need at least {MIN_RECORDS}")
    return ds


def load_dataset(cfg: PipelineConfig, path: Path) -> CampaignDataset:
    if not Path(path).is_file():
        raise InputError(f"dataset not found: {path}")
    return read_dataset(path, vehicle_id=cfg.vehicle_spec().name, seed=cfg.seed)


def _sample_drivers(ds: CampaignDataset, k: int) -> list[int]:
    """Iteration numbers of valid drivers spread over the a_max quantiles."""
    valid = ds.valid()
    if not valid or k < 1:
        return []
    order = sorted(valid, key=lambda r: (r.prefs.a_max, r.j))
    picks = np.unique(np.round(np.linspace(0, len(order) - 1, k)).astype(int))
    return [order[i].j for i in picks]


def run_simulate(cfg: PipelineConfig, out: Path | None = None, plots: bool | None = None) -> CampaignDataset:
    """Run the training campaign and write it with trajectory samples."""
    out = _prepare_out(cfg, out)
    plots = cfg.output.plots if plots is None else plots
    leader = cfg.leader()
    vehicle = cfg.vehicle_spec()
    ds = run_campaign(leader, vehicle, cfg.idm_constants(), n=cfg.campaign.n,
                      sampler=cfg.campaign.sampler, seed=stage_seeds(cfg)["campaign"],
                      ranges=cfg.preference_ranges())
    written = [out / "campaign.csv", out / "leader.csv"]
    write_dataset(ds, written[0])
    save_trace(leader, written[1])

    stride = max(int(round(1.0 / leader.dt)), 1)
    by_j = {r.j: r for r in ds.records}
    samples = {}
    for j in _sample_drivers(ds, cfg.output.sample_drivers):
        samples[j] = simulate_follower(leader, by_j[j].prefs, cfg.idm_constants())
    rows = []
    for j, traj in samples.items():
        for k in range(0, traj.speeds.size, stride):
            rows.append((j, by_j[j].prefs.a_max, k * leader.dt, traj.speeds[k], traj.accels[k],
                         traj.gaps[k], traj.positions[k]))
    written.append(_write_rows(out / "follower_samples.csv",
                               ["j", "a", "t_s", "v_mps", "a_mps2", "gap_m", "x_m"], rows))
    if plots:
        from . import plotting
        t = leader.times
        written.append(plotting.plot_trajectories(
            t[::stride], leader.speeds[::stride],
            {f"a = {by_j[j].prefs.a_max:.2f}": tr.speeds[::stride] for j, tr in samples.items()},
            out / "trajectories.png"))
        written.append(plotting.plot_trip_histogram(
            ds.column("dist_m"), trip_stats(leader).distance, out / "trip_distance.png"))
    update_manifest(out, "simulate", cfg, [], written, fresh=True)
    log.info("simulate: %d records (%d flagged) -> %s", len(ds), ds.n_flagged, out)
    return ds


def correlation_table(cfg: PipelineConfig, ds: CampaignDataset) -> dict[str, st.DcorrResult]:
    seeds = stage_seeds(cfg)
    fuel = ds.column("fuel_L")
    return {p: st.dcorr_test(ds.column(p), fuel, cfg.analysis.permutations, seeds[f"permutation:{p}"])
            for p in PARAMS}


def run_analyze(cfg: PipelineConfig, ds: CampaignDataset, out: Path | None = None,
                plots: bool | None = None, inputs: Sequence[Path] = ()) -> AnalysisResult:
    """Correlation table, convergence series, quintic fit and fuel spread."""
    out = _prepare_out(cfg, out)
    plots = cfg.output.plots if plots is None else plots
    leader = cfg.leader()
    ds = _analysis_dataset(cfg, ds, leader)
    a, fuel = ds.column("a"), ds.column("fuel_L")
    n = a.size
    table = correlation_table(cfg, ds)
    written = [out / "dcorr.csv"]
    st.write_correlation_report([(cfg.traffic, p, table[p]) for p in PARAMS], written[0])

    conv = {p: st.dcorr_convergence(ds, p, cfg.analysis.stride) for p in PARAMS}
    sizes = [m for m, _ in conv[PARAMS[0]]]
    written.append(_write_rows(out / "convergence.csv", ["n", *PARAMS],
                               ([m, *(conv[p][i][1] for p in PARAMS)] for i, m in enumerate(sizes))))
    drift = {}
    for p in PARAMS:
        x = ds.column(p)
        drift[p] = (abs(table[p].r - st.distance_correlation(x[:n - 200], fuel[:n - 200]))
                    if n > 200 + 1 else float("nan"))

    quintic = st.fit_quintic(a, fuel)
    linear = st.fit_quintic(a, fuel, degree=1)
    st.write_fit_report([(cfg.traffic, ds.vehicle_id, "quintic", quintic.r_square, quintic.rmse),
                         (cfg.traffic, ds.vehicle_id, "linear", linear.r_square, linear.rmse)],
                        out / "fit.csv")
    written.append(out / "fit.csv")
    written.append(_write_rows(out / "quintic_coeffs.csv", ["power", "coeff"],
                               ((5 - i, z) for i, z in enumerate(quintic.coeffs))))
    order = np.argsort(ds.column("j"), kind="stable")
    written.append(_write_rows(out / "scatter.csv", ["j", "a", "fuel_L", "quintic_L"],
                               zip(ds.column("j")[order], a[order], fuel[order], quintic(a[order]))))
    a_range = cfg.preference_ranges().bounds("a")
    centers, means = st.binned_means(a, fuel, cfg.analysis.spread_bins, a_range)
    spread = st.peak_to_trough(a, fuel, cfg.analysis.spread_bins, a_range)
    written.append(_write_rows(out / "binned_fuel.csv", ["a_center", "mean_fuel_L"], zip(centers, means)))

    ranked = sorted(PARAMS, key=lambda p: table[p].r, reverse=True)
    summary = [
        ("traffic", cfg.traffic), ("vehicle", ds.vehicle_id), ("n_records", len(ds)),
        ("n_valid", n), ("n_flagged", ds.n_flagged), ("n_rejected", ds.rejected),
        ("min_gap_m", float(ds.column("min_gap_m").min())),
        ("dominant", ranked[0]), ("dominance_ratio", table[ranked[0]].r / table[ranked[1]].r),
        ("spread", spread),
    ] + [(f"drift_{p}", drift[p]) for p in PARAMS]
    written.append(_write_rows(out / "analysis.csv", ["key", "value"], summary))
    if plots:
        from . import plotting
        written.append(plotting.plot_convergence(sizes, {p: [r for _, r in conv[p]] for p in PARAMS},
                                                 out / "convergence.png"))
        written.append(plotting.plot_fuel_vs_a(a, fuel, {"quintic": quintic, "linear": linear},
                                               out / "fuel_vs_a.png"))
    update_manifest(out, "analyze", cfg, inputs, written)
    return AnalysisResult(table, quintic, linear, spread, drift, n)


def run_predict(cfg: PipelineConfig, train_ds: CampaignDataset, out: Path | None = None,
                plots: bool | None = None, test_ds: CampaignDataset | None = None,
                table: dict[str, st.DcorrResult] | None = None,
                inputs: Sequence[Path] = ()) -> PredictionResult:
    """Train the GP on significant features, cross-validate, and score a test campaign.

    Without ``test_ds`` a test campaign is simulated with the config's test
    sampler (normal draws around the range midpoints by default).
    """
    out = _prepare_out(cfg, out)
    plots = cfg.output.plots if plots is None else plots
    seeds = stage_seeds(cfg)
    leader = cfg.leader()
    train_ds = _analysis_dataset(cfg, train_ds, leader)
    written = []
    if test_ds is None:
        test_ds = run_campaign(leader, cfg.vehicle_spec(), cfg.idm_constants(), n=cfg.test_n,
                               sampler=cfg.campaign.test_sampler, seed=seeds["test"],
                               ranges=cfg.preference_ranges())
        write_dataset(test_ds, out / "test_campaign.csv")
        written.append(out / "test_campaign.csv")
    test_ds = _analysis_dataset(cfg, test_ds, leader)

    table = table or correlation_table(cfg, train_ds)
    features = gpr.select_features(table, cfg.analysis.threshold)
    X, Y = train_ds.features(features), train_ds.column("fuel_L")
    opts = gpr.TrainOptions(restarts=cfg.analysis.restarts, seed=seeds["gpr"])
    cv = gpr.cross_validate(X, Y, cfg.analysis.folds, seeds["cv"], opts)
    model = gpr.train(X, Y, opts, features)
    gpr.save_model(model, out / "gpr_model.json")
    written.append(out / "gpr_model.json")
    quintic = st.fit_quintic(train_ds.column("a"), Y)

    X_test, observed = test_ds.features(features), test_ds.column("fuel_L")
    predicted = model.predict(X_test)
    test_r2, test_rmse = st.goodness(predicted, observed)
    P, Q = st.paired_histograms(observed, predicted, cfg.analysis.bins)
    kl = st.kl_divergence(P, Q)
    kl_self = st.kl_divergence(P, P)

    fold_sizes = [f.size for f in gpr.kfold_indices(Y.size, cfg.analysis.folds, seeds["cv"])]
    cv_rows = [(i + 1, fold_sizes[i], cv.fold_r_square[i], cv.fold_rmse[i]) for i in range(cv.folds)]
    cv_rows.append(("pooled", Y.size, cv.r_square, cv.rmse))
    written.append(_write_rows(out / "cv.csv", ["fold", "n", "r_square", "rmse_L"], cv_rows))
    written.append(_write_rows(out / "predictions.csv", ["j", *features, "observed_L", "predicted_L"],
                               ([j, *x, o, p] for j, x, o, p in
                                zip(test_ds.column("j"), X_test, observed, predicted))))
    written.append(_write_rows(out / "histograms.csv", ["bin_lo", "bin_hi", "p_observed", "p_predicted"],
                               zip(P.edges[:-1], P.edges[1:], P.probs, Q.probs)))
    report = [
        ("traffic", cfg.traffic), ("vehicle", train_ds.vehicle_id),
        ("features", ";".join(features)), ("n_train", Y.size), ("n_test", observed.size),
        ("gp_sigma_f", model.sigma_f), ("gp_sigma_l", model.sigma_l), ("gp_noise_var", model.noise_var),
        ("cv_folds", cv.folds), ("cv_r_square", cv.r_square), ("cv_rmse_L", cv.rmse),
        ("quintic_r_square", quintic.r_square), ("quintic_rmse_L", quintic.rmse),
        ("test_r_square", test_r2), ("test_rmse_L", test_rmse),
        ("kl_nats", kl), ("kl_self_nats", kl_self),
    ]
    written.append(_write_rows(out / "report.csv", ["key", "value"], report))
    if plots:
        from . import plotting
        written.append(plotting.plot_pred_vs_obs(observed, predicted, out / "pred_vs_obs.png"))
        written.append(plotting.plot_histogram_pair(P.edges, P.probs, Q.probs, kl, out / "fuel_histograms.png"))
        written.append(plotting.plot_param_distributions({p: test_ds.column(p) for p in PARAMS},
                                                         out / "test_preferences.png"))
    update_manifest(out, "predict", cfg, inputs, written)
    return PredictionResult(features, model, cv, quintic, test_r2, test_rmse, kl, kl_self)


DEMO_HEADER = ["cell", "traffic", "vehicle", "n_valid", "n_flagged", "min_gap_m", "dominant",
               "dominance_ratio", "a_r", "a_p", "spread", "linear_rmse_L", "quintic_r_square",
               "quintic_rmse_L", "gp_cv_r_square", "test_r_square", "test_rmse_L", "kl_nats"]


def run_demo(out: Path, seed: int | None = None, n: int | None = None, plots: bool = True,
             cells: Sequence[str] = SHIPPED) -> list[list]:
    """Run simulate, analyze and predict for each shipped scenario/vehicle cell."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for cell in cells:
        cfg = with_overrides(load_config(cell), seed=seed, n=n, out=str(out / cell))
        cell_out = Path(cfg.output.dir)
        ds = run_simulate(cfg, cell_out, plots)
        res = run_analyze(cfg, ds, cell_out, plots, [cell_out / "campaign.csv"])
        pred = run_predict(cfg, ds, cell_out, plots, table=res.table, inputs=[cell_out / "campaign.csv"])
        ranked = sorted(PARAMS, key=lambda p: res.table[p].r, reverse=True)
        rows.append([cell, cfg.traffic, ds.vehicle_id, res.n_valid, ds.n_flagged,
                     float(ds.column("min_gap_m").min()), ranked[0],
                     res.table[ranked[0]].r / res.table[ranked[1]].r, res.table["a"].r,
                     res.table["a"].p_value, res.spread, res.linear.rmse, res.quintic.r_square,
                     res.quintic.rmse, pred.cv.r_square, pred.test_r_square, pred.test_rmse, pred.kl])
        log.info("demo: %s done", cell)
    _write_rows(out / "summary.csv", DEMO_HEADER, rows)
    return rows
