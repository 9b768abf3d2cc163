"""Subcommands of the ``sem`` tool: ingest, fit, forecast, evaluate and verify.

Each step reads the artifacts of the previous one from the output folder,
checks their version headers, writes its own artifacts and a manifest, and
returns the lines it wants printed. Reruns with the same configuration write
byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .arima import fit_arima, forecast, write_forecasts
from .basis import fit_panel, make_basis, write_coefficients
from .config import RunConfig, thread_count
from .core import KeyKind
from .errors import ApplicabilityError, DataQualityError, SemError
from .evaluate import evaluate_cohort, mse, render_table, write_mse
from .fpca import fit_fpca, load_model, save_model, write_eigen_summary
from .hmd import (
    CohortPanel,
    build_mortality,
    conditional_data,
    parse_cohort_lifetable,
    read_normalized,
    write_normalized,
)
from .inversion import invert_panel, write_keys
from .modification import PREDICTION_COLUMNS, modify_scores, predicted_mortality, write_predictions
from .simulate import drifting_ig_params, generate_synthetic_panel
from .tsv import read_tsv, write_tsv
from .verify import run_oracles, write_report

log = logging.getLogger(__name__)

NORMALIZED = "normalized.tsv"
FORECAST_DELTAS = (0.8, 0.95)  # bands of the score-forecast dump


@dataclass
class StepResult:
    """Printable outcome of one subcommand; ``ok=False`` maps to exit code 1."""

    lines: list = field(default_factory=list)
    notices: list = field(default_factory=list)
    ok: bool = True


# artifact names ----------------------------------------------------------------


def model_file(kind) -> str:
    return f"model_{KeyKind(kind).value}.json"


def predictions_file(delta: float) -> str:
    return f"predictions_d{delta:g}.tsv"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: RunConfig, command: str, inputs, outputs, notices=(), results=None) -> Path:
    """JSON record of the settings, software versions and file digests of one run."""
    out = Path(cfg.out_dir)
    doc = {
        "command": command,
        "versions": {
            "semfda": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "seed": cfg.seed,
        "config": cfg.echo(),
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {name: _sha256(out / name) for name in outputs},
        "notices": list(notices),
        "results": results or {},
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _need(path: Path) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f"missing input artifact: {path}")
    return path


# ingest ------------------------------------------------------------------------


def synthetic_panel(cfg: RunConfig) -> CohortPanel:
    """Panel of training and target cohorts from the drifting IG key family."""
    pc, sc = cfg.pipeline, cfg.synthetic
    cohorts = list(range(pc.train_first, max(pc.targets) + 1))
    params = drifting_ig_params(
        cohorts, sc.a0, sc.a_slope, sc.b0, sc.b_slope, wiggle=sc.wiggle, seed=cfg.seed
    )
    wanted = set(cfg.training_cohorts) | set(pc.targets)
    size = sc.cohort_size if sc.cohort_size > 0 else None
    return generate_synthetic_panel(
        KeyKind.IG, {c: params[c] for c in sorted(wanted)}, cfg.sem, cohort_size=size, seed=cfg.seed
    )


def hmd_panel(cfg: RunConfig) -> tuple[CohortPanel, list[str]]:
    """Panel from the configured life-table files; cohorts with data faults are skipped."""
    if not cfg.hmd_files:
        raise SemError("no life-table files configured ([paths] hmd_files) and synthetic data disabled")
    rows = []
    for path in cfg.hmd_files:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"life-table file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                rows.extend(parse_cohort_lifetable(fh))
            except SemError as err:
                raise type(err)(f"{path}: {err}") from err
    notices, curves = [], {}
    for c in sorted({r.cohort for r in rows}):
        try:
            curves[c] = build_mortality(rows, c, cfg.sem)
        except DataQualityError as err:
            notices.append(f"skipped cohort {c}: {err}")
    if not curves:
        raise DataQualityError("no usable cohort in the life-table files")
    return CohortPanel(curves, cfg.sem), notices


def run_ingest(cfg: RunConfig) -> StepResult:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.synthetic.enabled:
        panel, notices, inputs, source = synthetic_panel(cfg), [], [], "synthetic IG family"
    else:
        panel, notices = hmd_panel(cfg)
        inputs, source = list(cfg.hmd_files), f"{len(cfg.hmd_files)} life-table file(s)"
    write_normalized(panel, out / NORMALIZED)
    summary = [(c, 0, panel[c].w_avail) for c in panel.cohorts]
    write_tsv(out / "ingest_summary.tsv", "ingest-summary", ("cohort", "first_age", "last_age"), summary)
    spans = sorted({s[2] for s in summary})
    res = StepResult(notices=notices)
    res.lines.append(
        f"ingested {len(panel.cohorts)} cohorts {panel.cohorts[0]}-{panel.cohorts[-1]} from {source}"
    )
    res.lines.append(f"age spans 0..{spans[0]} to 0..{spans[-1]}")
    write_manifest(cfg, "ingest", inputs, [NORMALIZED, "ingest_summary.tsv"], notices)
    return res


# fit ---------------------------------------------------------------------------


def training_panel(cfg: RunConfig, panel: CohortPanel) -> CohortPanel:
    """Training cohorts cut at the last data year."""
    missing = [c for c in cfg.training_cohorts if c not in panel]
    if missing:
        raise DataQualityError(f"training cohorts missing from the normalized data: {missing}")
    curves = {}
    for c in cfg.training_cohorts:
        cm = panel[c]
        last = min(cm.w_avail, cfg.last_data_year - c)
        if last <= cfg.sem.S:
            raise DataQualityError(f"training cohort {c} has no data beyond age {cfg.sem.S}")
        curves[c] = cm if last == cm.w_avail else cm.truncated(last)
    return CohortPanel(curves, cfg.sem)


def run_fit(cfg: RunConfig) -> StepResult:
    out = Path(cfg.out_dir)
    norm = _need(out / NORMALIZED)
    panel = training_panel(cfg, read_normalized(norm, cfg.sem))
    basis = make_basis(cfg.sem.S, cfg.sem.w, cfg.pipeline.basis_L, cfg.pipeline.basis_order)
    workers = thread_count()
    res, outputs, results = StepResult(), [], {}
    for kind in cfg.pipeline.kinds:
        k = KeyKind(kind).value
        estimates = invert_panel(panel, kind, workers=workers)
        fds = fit_panel(estimates, basis)
        model = fit_fpca(fds, cfg.pipeline.theta, kind=kind)
        names = [f"keys_{k}.tsv", f"coefficients_{k}.tsv", f"eigenvalues_{k}.tsv", model_file(kind)]
        write_keys(out / names[0], estimates)
        write_coefficients(out / names[1], fds)
        write_eigen_summary(out / names[2], model)
        save_model(model, out / names[3])
        outputs += names
        capped = int(sum(e.capped.sum() for e in estimates))
        shares = ", ".join(f"{c:.6f}" for c in model.contrib[: model.K_selected])
        res.lines.append(
            f"{k}: m={fds.m} cohorts, rank {model.rank}, K_selected={model.K_selected} "
            f"(cumulative shares {shares}), {capped} capped key values"
        )
        results[k] = {"K_selected": model.K_selected, "rank": model.rank}
    write_manifest(cfg, "fit", [norm], outputs, results=results)
    return res


# forecast ----------------------------------------------------------------------


def _map(fn, items, workers):
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def run_forecast(cfg: RunConfig) -> StepResult:
    out = Path(cfg.out_dir)
    pc, p = cfg.pipeline, cfg.sem
    norm = _need(out / NORMALIZED)
    panel = read_normalized(norm, p)
    c_m = pc.train_last
    horizon = max(pc.targets) - c_m
    deltas = sorted({*FORECAST_DELTAS, *pc.deltas})
    workers = thread_count()
    res = StepResult()
    inputs = [norm]
    forecast_rows, arima_rows, mod_rows, key_rows = [], [], [], []
    pred = {delta: [] for delta in pc.deltas}
    for kind in pc.kinds:
        k = KeyKind(kind).value
        model_path = _need(out / model_file(kind))
        inputs.append(model_path)
        model = load_model(model_path)
        if model.cohorts[-1] != c_m:
            raise DataQualityError(f"{model_path} was fitted up to cohort {model.cohorts[-1]}, config says {c_m}")
        K = model.K_selected
        header_at = len(res.lines)

        def fit_component(j):
            spec = fit_arima(model.scores[:, j], pc.max_p, pc.max_d, pc.max_q)
            return forecast(spec, model.scores[:, j], horizon, deltas, component=j + 1)

        fcs = _map(fit_component, range(K), workers)
        for fc in fcs:
            s = fc.spec
            arima_rows.append(
                (k, fc.component, s.p, s.d, s.q, _vec(s.phi), _vec(s.theta_ma), float(s.intercept),
                 float(s.sigma2), float(s.aicc), int(s.fallback))
            )
            if s.fallback:
                res.notices.append(f"{k} component {fc.component}: ARIMA fell back to a random walk with drift")
            lo80, hi80 = fc.intervals[0.8]
            lo95, hi95 = fc.intervals[0.95]
            for h in range(horizon):
                forecast_rows.append(
                    (k, fc.component, c_m + h + 1, float(fc.points[h]), float(lo80[h]), float(hi80[h]),
                     float(lo95[h]), float(hi95[h]))
                )
        ages = np.arange(p.S, p.w + 1)
        design = model.basis.design(ages.astype(float))

        def predict(job):
            cohort, delta = job
            point = np.array([fc.points[cohort - c_m - 1] for fc in fcs])
            unmod = predicted_mortality(model, point, p, kind=kind)
            mod, mk, notice = None, None, None
            try:
                partial = _partial_data(panel, cohort, cfg)
                mk = modify_scores(fcs, model, partial, p, delta, cohort, c_m, cfg.last_data_year, kind)
                mod = predicted_mortality(model, mk, p)
            except ApplicabilityError as err:
                notice = f"{k} cohort {cohort} d={delta:g}: modification not applicable ({err}); unmodified only"
            return cohort, delta, point, unmod, mk, mod, notice

        jobs = [(c, d) for c in pc.targets for d in pc.deltas]
        for cohort, delta, point, unmod, mk, mod, notice in _map(predict, jobs, workers):
            if notice:
                res.notices.append(notice)
            for flag, what in ((unmod, "unmodified"), (mod, "modified")):
                if flag is not None and flag.flagged:
                    res.notices.append(f"{k} cohort {cohort} {what}: clamped or non-monotone prediction")
            q_mod = mod.q if mod is not None else np.full(ages.size, np.nan)
            pred[delta] += [(k, cohort, int(a), float(u), float(m)) for a, u, m in zip(ages, unmod.q, q_mod)]
            key_point = design @ model.key_coeffs(point)
            key_mod = design @ model.key_coeffs(mk.scores_tilde) if mk is not None else np.full(ages.size, np.nan)
            key_rows += [
                (k, cohort, float(delta), int(a), float(u), float(m)) for a, u, m in zip(ages, key_point, key_mod)
            ]
            if mk is not None:
                for j in range(K):
                    mod_rows.append(
                        (k, cohort, float(delta), j + 1, float(mk.scores_forecast[j]), float(mk.box[j, 0]),
                         float(mk.box[j, 1]), float(mk.scores_tilde[j]), float(mk.objective_at_forecast),
                         float(mk.objective))
                    )
                res.lines.append(
                    f"{k} cohort {cohort} d={delta:g}: fit ages {p.S}..{int(mk.fit_ages[-1])}, "
                    f"objective {mk.objective_at_forecast:.4E} -> {mk.objective:.4E}"
                )
        orders = ", ".join(f"({r[2]},{r[3]},{r[4]})" for r in arima_rows if r[0] == k)
        res.lines.insert(header_at, f"{k}: K={K} score series, ARIMA orders {orders}, horizon {horizon}")

    names = ["score_forecasts.tsv", "arima.tsv", "modified_scores.tsv", "key_curves.tsv"]
    write_forecasts(out / names[0], forecast_rows)
    write_tsv(
        out / names[1], "arima",
        ("kind", "component", "p", "d", "q", "phi", "theta", "intercept", "sigma2", "aicc", "fallback"),
        arima_rows,
    )
    write_tsv(
        out / names[2], "modified-scores",
        ("kind", "cohort", "delta", "component", "z_forecast", "lo", "hi", "z_modified",
         "objective_forecast", "objective_modified"),
        mod_rows,
    )
    write_tsv(out / names[3], "key-curves", ("kind", "cohort", "delta", "age", "key", "key_modified"), key_rows)
    for delta, rows in pred.items():
        write_predictions(out / predictions_file(delta), rows)
        names.append(predictions_file(delta))
    write_manifest(cfg, "forecast", inputs, names, res.notices)
    return res


def _vec(v) -> str:
    return ",".join(repr(float(x)) for x in v)


def _partial_data(panel: CohortPanel, cohort: int, cfg: RunConfig) -> np.ndarray:
    """Observed ``q(t | S)`` of a target cohort up to the last data year."""
    S = cfg.sem.S
    if cohort not in panel:
        raise ApplicabilityError(f"no data for cohort {cohort}")
    cm = panel[cohort]
    last = min(cm.w_avail, cfg.last_data_year - cohort)
    if last <= S:
        raise ApplicabilityError(f"no mortality observed beyond age {S} by {cfg.last_data_year}")
    return conditional_data(cm.truncated(last), S)


# evaluate ----------------------------------------------------------------------


def read_predictions(path):
    """``{(kind, cohort): (ages, q_pred, q_pred_modified)}`` from a prediction dump."""
    raw = read_tsv(path, "predictions", PREDICTION_COLUMNS)
    grouped: dict = {}
    for k, c, a, u, m in raw:
        grouped.setdefault((KeyKind(k), int(c)), []).append((int(a), float(u), float(m)))
    out = {}
    for key, rows in grouped.items():
        rows.sort()
        arr = np.array(rows)
        out[key] = (arr[:, 0].astype(int), arr[:, 1], arr[:, 2])
    return out


def run_evaluate(cfg: RunConfig) -> StepResult:
    out = Path(cfg.out_dir)
    pc, p = cfg.pipeline, cfg.sem
    norm = _need(out / NORMALIZED)
    panel = read_normalized(norm, p)
    inputs = [norm]
    res, reports = StepResult(), []
    unmodified_done = set()
    for delta in pc.deltas:
        path = _need(out / predictions_file(delta))
        inputs.append(path)
        for (kind, cohort), (ages, q_un, q_mod) in sorted(read_predictions(path).items()):
            if cohort not in panel:
                res.notices.append(f"no holdout data for cohort {cohort}; skipped")
                continue
            args = (ages, panel[cohort], pc.eval_age, cfg.last_data_year, p.w, pc.mse_from_first_forecast_age)
            if (kind, cohort) not in unmodified_done:
                reports.append(_evaluate(kind, "unmodified", q_un, args, None))
                unmodified_done.add((kind, cohort))
            if not np.all(np.isnan(q_mod)):
                reports.append(_evaluate(kind, "modified", q_mod, args, delta))
    if not reports:
        raise DataQualityError("predictions and holdout data share no cohorts")
    text, _, _ = render_table(reports, pc.kinds)
    write_mse(out / "mse.tsv", reports)
    (out / "mse_table.txt").write_text(text, encoding="utf-8")
    res.lines += text.rstrip("\n").splitlines()

    fit_rows = []
    for kind in pc.kinds:
        model_path = out / model_file(kind)
        if not model_path.is_file():
            continue
        inputs.append(model_path)
        model = load_model(model_path)
        for i, cohort in enumerate(model.cohorts):
            fit_rows.append((KeyKind(kind).value, cohort, _in_sample_mse(model, i, panel[cohort], cfg)))
    write_tsv(out / "fit_mse.tsv", "fit-mse", ("kind", "cohort", "mse"), fit_rows)
    for kind in pc.kinds:
        vals = [r[2] for r in fit_rows if r[0] == KeyKind(kind).value]
        if vals:
            res.lines.append(f"{KeyKind(kind).value} training cohorts: in-sample MSE max {max(vals):.4E}")
    write_manifest(cfg, "evaluate", inputs, ["mse.tsv", "mse_table.txt", "fit_mse.tsv"], res.notices)
    return res


def _evaluate(kind, variant, q, args, delta):
    ages, holdout, S0, last_year, w, first = args
    return evaluate_cohort(kind, variant, ages, q, holdout, S0, last_year, w, first, delta=delta)


def _in_sample_mse(model, i, cm, cfg: RunConfig) -> float:
    """MSE over ages ``S0..w`` of the fitted curve of a training cohort, both conditioned on ``S0``."""
    S0, p = cfg.pipeline.eval_age, cfg.sem
    top = min(p.w, cm.w_avail, cfg.last_data_year - cm.cohort)
    ages = np.arange(S0, top + 1)
    fitted = predicted_mortality(model, model.scores[i], p, ages=ages)
    q0 = fitted.q[0]
    pred = np.clip((fitted.q - q0) / (1.0 - q0), 0.0, 1.0)
    data = conditional_data(cm.truncated(top), S0)
    return mse(pred, data, S0, top)


# verify ------------------------------------------------------------------------


def run_verify(cfg: RunConfig) -> StepResult:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_oracles(cfg.seed, cfg.verify.n_paths, thread_count(), cfg.verify.fault, cfg.sem)
    write_report(out / "verify.tsv", results)
    res = StepResult(lines=[r.line() for r in results], ok=all(r.passed for r in results))
    failed = [r.name for r in results if not r.passed]
    res.lines.append("all oracles passed" if res.ok else f"failed oracles: {', '.join(failed)}")
    write_manifest(cfg, "verify", [], ["verify.tsv"], results={r.name: bool(r.passed) for r in results})
    return res


COMMANDS = {
    "ingest": run_ingest,
    "fit": run_fit,
    "forecast": run_forecast,
    "evaluate": run_evaluate,
    "verify": run_verify,
}
