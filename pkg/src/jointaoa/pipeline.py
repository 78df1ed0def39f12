"""
Experiment stages: data generation, framework construction, classifier
training, threshold optimisation, evaluation against MUSIC, reporting.

Every artifact lives in a run directory named after the config digest.
``manifest.json`` records, per stage, the files read and written; the
threshold stage only reads the threshold split and evaluation only the test
split.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ._rng import derive
from .array_signal import ArrayGeometry, feature_vectors, fit_feature_stats, sample_covariances, standardize
from .baselines import information_criteria, music_spectra, pick_music_peaks, uniform_search_grid
from .classifier import TrainingError, init_network, train_many
from .config import ExperimentConfig
from .datasets import Dataset, export_features_csv, read_dataset, simulate, write_dataset
from .estimator import (
    Ensemble,
    JointEstimate,
    assemble_spectra,
    default_thresholds,
    detect_peaks,
    estimate_record,
    optimize_threshold,
)
from .framework import Framework, build_grid, generate_framework, load_framework, save_framework, segments_of, subset_index
from .metrics import (
    THETA_TILDE_GRID,
    InstanceOutcome,
    MetricReport,
    averaged_f1,
    expected_success_rate,
    f1_scores,
    p_q_correct,
    rmse,
    success_curve,
    success_rate_by_q,
)

__all__ = [
    "Run",
    "SPLITS",
    "generate_datasets",
    "export_csv",
    "build_framework",
    "active_matrix",
    "classifier_labels",
    "train_ensemble",
    "run_threshold_stage",
    "evaluate",
    "write_report",
    "run_all",
    "load_outcomes",
]

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "threshold", "test")
# stream keys for derive(seed, ...)
_DATA, _FRAMEWORK, _CLASSIFIER = 0, 1, 2
_TRAIN_CHUNK = 32


class Run:
    """Run directory plus its manifest."""

    def __init__(self, config: ExperimentConfig, directory=None):
        self.config = config
        self.dir = Path(directory) if directory is not None else config.run_dir()
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.dir / "manifest.json"
        if self.manifest_path.exists():
            self.manifest = json.loads(self.manifest_path.read_text())
            if self.manifest.get("config_digest") != config.digest():
                raise ValueError(f"{self.dir} belongs to a different configuration")
        else:
            self.manifest = {
                "config_digest": config.digest(),
                "config": config.result_dict(),
                "stages": {},
            }
            self._save()
        (self.dir / "config.json").write_text(json.dumps(config.result_dict(), indent=1, sort_keys=True) + "\n")

    def path(self, *parts) -> Path:
        return self.dir.joinpath(*parts)

    def dataset_path(self, split: str) -> Path:
        return self.path("datasets", f"{split}.aoad")

    @property
    def ensemble_dir(self) -> Path:
        return self.path("ensemble")

    def _save(self):
        self.manifest_path.write_text(json.dumps(self.manifest, indent=1, sort_keys=True) + "\n")

    def record(self, stage: str, started: float, inputs, outputs):
        rel = lambda p: str(Path(p).relative_to(self.dir))
        self.manifest["stages"][stage] = {
            "started": started,
            "finished": time.time(),
            "inputs": sorted(rel(p) for p in inputs),
            "outputs": sorted(rel(p) for p in outputs),
        }
        self._save()

    def require(self, stage: str):
        if stage not in self.manifest["stages"]:
            raise RuntimeError(f"stage {stage!r} has not been run in {self.dir}")

    def artifacts(self) -> list[Path]:
        out = []
        for rec in self.manifest["stages"].values():
            out += [self.dir / p for p in rec["outputs"]]
        return out


def _geometry(config: ExperimentConfig) -> ArrayGeometry:
    return ArrayGeometry(config.sensor_count, config.spacing_wavelengths)


def generate_datasets(config: ExperimentConfig, run: Run | None = None) -> dict:
    """Simulate and write the four splits; each split has its own seed stream."""
    run = run or Run(config)
    started = time.time()
    n_trn, n_val, n_thr = config.split_sizes()
    sizes = dict(zip(SPLITS, (n_trn, n_val, n_thr, config.D_tst)))
    run.path("datasets").mkdir(exist_ok=True)
    paths = {}
    for code, split in enumerate(SPLITS):
        ds = simulate(
            _geometry(config),
            sizes[split],
            config.T,
            config.snr_db,
            config.theta_min,
            config.theta_max,
            seed=derive(config.seed, _DATA, code),
            fixed_q=config.fixed_q,
            q_max=config.q_max,
        )
        paths[split] = write_dataset(run.dataset_path(split), ds)
        log.info("wrote %s (%d instances)", paths[split], len(ds))
    run.record("generate", started, [], paths.values())
    return paths


def export_csv(config: ExperimentConfig, run: Run | None = None) -> dict:
    """Write datasets/<split>.csv (raw features plus active segment labels) for inspection."""
    run = run or Run(config)
    run.require("generate")
    started = time.time()
    grid = build_grid(config.theta_min, config.theta_max, config.M)
    paths = {}
    for split in SPLITS:
        ds = read_dataset(run.dataset_path(split))
        active = [set(segments_of(grid, a).tolist()) for a in ds.aoas]
        paths[split] = export_features_csv(run.path("datasets", f"{split}.csv"), _features(ds), ds.aoas, active)
    run.record("export-csv", started, [run.dataset_path(s) for s in SPLITS], paths.values())
    return paths


def build_framework(config: ExperimentConfig, run: Run | None = None) -> Framework:
    run = run or Run(config)
    started = time.time()
    grid = build_grid(config.theta_min, config.theta_max, config.M)
    seed = int(derive(config.seed, _FRAMEWORK).generate_state(1)[0])
    fw = generate_framework(grid, config.k, config.L, seed=seed)
    path = save_framework(fw, run.path("framework.json"))
    run.record("framework", started, [], [path])
    return fw


def active_matrix(framework: Framework, aoas) -> np.ndarray:
    """(B, M) boolean: segment holds at least one AOA of the instance."""
    M = framework.grid.segment_count
    out = np.zeros((len(aoas), M), dtype=bool)
    for n, a in enumerate(aoas):
        if len(a):
            out[n, segments_of(framework.grid, a) - 1] = True
    return out


def classifier_labels(framework: Framework, active: np.ndarray) -> list[np.ndarray]:
    """Target class (subset position) of every instance for every classifier."""
    labels = []
    for ls in framework.labelsets:
        table = np.zeros(2 ** len(ls), dtype=np.int64)
        for pos, sub in enumerate(subset_index(ls)):
            table[sum(1 << ls.index(l) for l in sub)] = pos
        bits = sum(active[:, l - 1].astype(np.int64) << i for i, l in enumerate(ls))
        labels.append(table[bits])
    return labels


def _features(ds: Dataset) -> np.ndarray:
    return feature_vectors(sample_covariances(ds.snapshots))


def _train_chunk(job):
    (ids, spec, X_trn, y_trn, X_val, y_val, train_cfg, seed) = job
    nets = [init_network(spec, derive(seed, _CLASSIFIER, j, 0)) for j in ids]
    shuffles = [derive(seed, _CLASSIFIER, j, 1) for j in ids]

    def progress(epoch, alive, val):
        log.info("classifiers %d-%d: epoch %d, %d training, mean val loss %.4f", ids[0], ids[-1], epoch, alive, val)

    return ids, train_many(nets, X_trn, y_trn, X_val, y_val, train_cfg, shuffles, ids=ids, log=progress)


def train_ensemble(config: ExperimentConfig, run: Run | None = None):
    """Fit feature stats on the training split and train all classifiers.

    Classifiers are trained in fixed chunks of same-spec networks; the chunks
    are identical whatever the worker count, so results do not depend on it.
    """
    run = run or Run(config)
    run.require("generate")
    started = time.time()
    fw_path = run.path("framework.json")
    framework = load_framework(fw_path) if fw_path.exists() else build_framework(config, run)
    trn = read_dataset(run.dataset_path("train"))
    val = read_dataset(run.dataset_path("val"))
    F_trn, F_val = _features(trn), _features(val)
    stats = fit_feature_stats(F_trn)
    X_trn, X_val = standardize(F_trn, stats), standardize(F_val, stats)
    y_trn = classifier_labels(framework, active_matrix(framework, trn.aoas))
    y_val = classifier_labels(framework, active_matrix(framework, val.aoas))
    del trn, val

    by_spec = {}
    for j, size in enumerate(framework.output_sizes()):
        by_spec.setdefault(size, []).append(j)
    jobs = []
    for size, members in sorted(by_spec.items()):
        spec = config.network_spec(size)
        for s in range(0, len(members), _TRAIN_CHUNK):
            ids = members[s : s + _TRAIN_CHUNK]
            jobs.append(
                (ids, spec, X_trn, [y_trn[j] for j in ids], X_val, [y_val[j] for j in ids], config.train_config(), config.seed)
            )
    networks = [None] * framework.classifier_count
    reports = [None] * framework.classifier_count
    try:
        if config.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(_train_chunk, jobs))
        else:
            results = [_train_chunk(job) for job in jobs]
    except TrainingError as exc:
        raise TrainingError(f"training aborted: {exc}", exc.epoch, exc.batch, exc.classifier) from exc
    for ids, pairs in results:
        for j, (net, rep) in zip(ids, pairs):
            networks[j] = net
            reports[j] = rep
    ensemble = Ensemble(framework, networks, stats)
    ensemble.save(run.ensemble_dir)
    rep_path = run.path("train_reports.json")
    rep_path.write_text(json.dumps([r.to_dict() for r in reports], indent=1) + "\n")
    outputs = [run.ensemble_dir / "framework.json", rep_path]
    outputs += [run.ensemble_dir / "models" / f"model_{j:04d}.npz" for j in range(len(networks))]
    run.record("train", started, [run.dataset_path("train"), run.dataset_path("val"), fw_path], outputs)
    return ensemble, reports


def _load_ensemble(run: Run) -> Ensemble:
    run.require("train")
    return Ensemble.load(run.ensemble_dir)


def run_threshold_stage(config: ExperimentConfig, run: Run | None = None):
    """Optimise the peak-detection threshold on the threshold split."""
    run = run or Run(config)
    ensemble = _load_ensemble(run)
    started = time.time()
    ds = read_dataset(run.dataset_path("threshold"))
    spectra = ensemble.spectra(ds.snapshots)
    result = optimize_threshold(
        spectra, ds.source_counts, default_thresholds(config.threshold_include_zero)
    )
    log.info("threshold %.2f (%d/%d correct)", result.level, result.correct_count, len(ds))
    path = run.path("threshold.json")
    path.write_text(json.dumps(result.to_dict(), indent=1) + "\n")
    run.record("threshold", started, [run.dataset_path("threshold"), run.ensemble_dir / "framework.json"], [path])
    return result


def _music_outcomes(covs, eig, q_hats, config, search_grid, chunk=500):
    geometry = _geometry(config)
    estimates = []
    for s in range(0, covs.shape[0], chunk):
        sl = slice(s, s + chunk)
        spectra = music_spectra(covs[sl], q_hats[sl], geometry, search_grid, eig=(eig[0][sl], eig[1][sl]))
        for p, q in zip(spectra, q_hats[sl]):
            estimates.append(JointEstimate(int(q), list(pick_music_peaks(p, search_grid, int(q)))))
    return estimates


def _expected_curve(config: ExperimentConfig) -> dict:
    return {
        t: expected_success_rate(t, config.delta_theta, config.source_counts, config.M).value
        for t in THETA_TILDE_GRID
    }


def _method_report(name, outcomes, config, threshold=None, f1=None, **tags) -> MetricReport:
    r = rmse(outcomes)
    return MetricReport(
        method=name,
        scenario="I" if config.scenario == "fixed" else "II",
        snr_db=config.snr_db,
        delta_theta=config.delta_theta,
        L=config.L if name == "mlf" else None,
        threshold=threshold,
        rmse_deg=r.value,
        p_q_correct_pct=p_q_correct(outcomes),
        success_rate_pct=success_curve(outcomes),
        expected_success_rate_pct=_expected_curve(config),
        f1_by_cardinality=f1,
        success_at_1deg_by_q=success_rate_by_q(outcomes, 1.0),
        tags=tags,
    )


def evaluate(config: ExperimentConfig, run: Run | None = None) -> list[MetricReport]:
    """Estimate on the test split with the MLF and four MUSIC variants."""
    run = run or Run(config)
    run.require("threshold")
    ensemble = _load_ensemble(run)
    threshold = json.loads(run.path("threshold.json").read_text())["level"]
    started = time.time()
    ds = read_dataset(run.dataset_path("test"))
    fw = ensemble.framework
    covs = sample_covariances(ds.snapshots)
    feats = feature_vectors(covs)
    outputs = []

    # MLF
    X = standardize(feats, ensemble.stats)
    preds = ensemble.predict(X)
    spectra = assemble_spectra(fw, preds)
    mlf_est = [detect_peaks(p, threshold, fw.grid) for p in spectra]
    targets = classifier_labels(fw, active_matrix(fw, ds.aoas))
    table = f1_scores(preds, targets, fw)
    f1 = {}
    for qh in range(fw.k + 1):
        m = averaged_f1(table, fw, qh)
        f1[qh] = m.value
    methods = {"mlf": (mlf_est, dict(threshold=threshold, f1=f1))}

    # MUSIC with MDL / AIC order selection at two grid resolutions
    w, V = np.linalg.eigh(covs)
    lam = np.maximum(w[:, ::-1], np.finfo(float).tiny)
    mdl_v, aic_v = information_criteria(lam, config.T)
    selectors = {"mdl": np.argmin(mdl_v, axis=1), "aic": np.argmin(aic_v, axis=1)}
    grids = {
        "low": fw.grid.centers,
        "high": uniform_search_grid(config.theta_min, config.theta_max, config.music_high_step),
    }
    for sel_name, q_hats in selectors.items():
        for grid_name, grid in grids.items():
            est = _music_outcomes(covs, (w, V), q_hats, config, grid)
            methods[f"music-{sel_name}-{grid_name}"] = (
                est,
                dict(method_tag="music", order_selector=sel_name, grid=grid_name),
            )

    reports = []
    run.path("outcomes").mkdir(exist_ok=True)
    for name, (est, extra) in methods.items():
        outcomes = [
            InstanceOutcome(len(a), list(a), e.q_hat, e.aoas_deg) for a, e in zip(ds.aoas, est)
        ]
        path = run.path("outcomes", f"{name}.jsonl")
        with open(path, "w") as fh:
            for n, (a, e) in enumerate(zip(ds.aoas, est)):
                tags = {"method": name} if name == "mlf" else {
                    "method": "music",
                    "order_selector": extra["order_selector"],
                    "grid": extra["grid"],
                }
                fh.write(estimate_record(n, len(a), a, e, threshold if name == "mlf" else None, **tags) + "\n")
        outputs.append(path)
        if name == "mlf":
            reports.append(_method_report(name, outcomes, config, threshold=threshold, f1=extra["f1"]))
        else:
            reports.append(
                _method_report(name, outcomes, config, order_selector=extra["order_selector"], grid=extra["grid"])
            )

    metrics_path = run.path("metrics.json")
    doc = {"config_digest": config.digest(), "reports": [r.to_dict() for r in reports]}
    metrics_path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    curves_path = run.path("curves.csv")
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["theta_tilde", "method", "value"])
    for r in reports:
        for t, v in r.success_rate_pct.items():
            wr.writerow([f"{t:g}", r.method, repr(v)])
    for t, v in reports[0].expected_success_rate_pct.items():
        wr.writerow([f"{t:g}", "expected", repr(v)])
    curves_path.write_text(buf.getvalue())
    outputs += [metrics_path, curves_path]
    run.record(
        "evaluate",
        started,
        [run.dataset_path("test"), run.path("threshold.json"), run.ensemble_dir / "framework.json"],
        outputs,
    )
    return reports


def load_outcomes(path) -> list[InstanceOutcome]:
    out = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            out.append(InstanceOutcome(rec["q_true"], rec["aoas_true"], rec["q_hat"], rec["aoas_hat"]))
    return out


def write_report(config: ExperimentConfig, run: Run | None = None) -> str:
    """Plain-text summary table of metrics.json; also written to report.txt."""
    run = run or Run(config)
    run.require("evaluate")
    doc = json.loads(run.path("metrics.json").read_text())
    lines = [
        f"scenario {'I' if config.scenario == 'fixed' else 'II'}, SNR {config.snr_db:g} dB, "
        f"delta_theta {config.delta_theta:g} deg, L {config.L}",
        f"{'method':<18}{'P(Q=Q) %':>10}{'RMSE deg':>10}{'f_sr(1)':>9}{'f_sr(2)':>9}{'f_sr(5)':>9}",
    ]
    for r in doc["reports"]:
        sr = r["success_rate"]
        rm = "n/a" if r["rmse"] is None else f"{r['rmse']:.3f}"
        lines.append(
            f"{r['method']:<18}{r['p_q_correct']:>10.2f}{rm:>10}{sr['1']:>9.2f}{sr['2']:>9.2f}{sr['5']:>9.2f}"
        )
    exp = doc["reports"][0]["expected_success_rate"]
    lines.append(f"{'ideal (expected)':<18}{'':>10}{'':>10}{exp['1']:>9.2f}{exp['2']:>9.2f}{exp['5']:>9.2f}")
    text = "\n".join(lines) + "\n"
    path = run.path("report.txt")
    path.write_text(text)
    run.record("report", time.time(), [run.path("metrics.json")], [path])
    return text


def run_all(config: ExperimentConfig, directory=None) -> Run:
    run = Run(config, directory)
    generate_datasets(config, run)
    build_framework(config, run)
    train_ensemble(config, run)
    run_threshold_stage(config, run)
    evaluate(config, run)
    write_report(config, run)
    return run
