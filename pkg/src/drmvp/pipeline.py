"""File-based stages, run configuration, manifest and figure studies."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import clime, evaluation, io, market_sim, model, realized_vol, studies
from .lags import LagSpec
from .market_sim import SimConfig
from .model import LassoConfig
from .realized_vol import PreAvgConfig

log = logging.getLogger(__name__)

STAGES = ("simulate", "estimate", "invert", "fit", "predict", "backtest", "eval", "acf")
STUDIES = ("fig1", "fig2", "fig3", "fig4", "fig5", "prop1", "martingale")


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("DRMVP_JOBS", "1")))
    except ValueError:
        return 1


def pmap(fn, items, jobs: int = 1):
    """Ordered map, optionally over worker processes."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


@dataclass(frozen=True)
class ClimeConfig:
    n_tau: int = 100
    c_min: float = 1e-6
    c_max: float = 10.0
    # days used in the grid's log(max(p, N)); defaults to the panel length
    window_days: int | None = None


@dataclass(frozen=True)
class EvalConfig:
    n_intervals: int = 39
    expost: str = "clime"  # or "truth" on simulated data
    reference: str | None = "drmvp"
    dm_lag: int = 0
    max_lag: int = 20


def _build(cls, d):
    if d is None:
        return cls()
    if isinstance(d, cls):
        return d
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**d)


@dataclass
class RunConfig:
    out: str = "run"
    seed: int | None = None
    stages: dict = field(default_factory=lambda: {s: True for s in STAGES})
    sim: SimConfig = field(default_factory=SimConfig)
    preavg: PreAvgConfig = field(default_factory=PreAvgConfig)
    n_factors: int | None = 3
    sectors: str | None = None
    clime: ClimeConfig = field(default_factory=ClimeConfig)
    lag_spec: LagSpec = field(default_factory=LagSpec)
    lasso: LassoConfig = field(default_factory=LassoConfig)
    window: int = 60
    models: tuple = ("drmvp", "har", "martingale")
    eval: EvalConfig = field(default_factory=EvalConfig)
    replications: int = 1

    def __post_init__(self):
        unknown = set(self.stages) - set(STAGES)
        if unknown:
            raise ValueError(f"unknown stages: {sorted(unknown)}")
        self.stages = {s: bool(self.stages.get(s, False)) for s in STAGES}
        if self.seed is not None:
            self.sim = market_sim.with_overrides(self.sim, seed=int(self.seed))
        self.models = tuple(self.models)
        bad = set(self.models) - set(model.MODELS)
        if bad:
            raise ValueError(f"unknown models: {sorted(bad)}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if "sim" in d and isinstance(d["sim"], dict):
            d["sim"] = SimConfig.from_dict(d["sim"])
        if "lag_spec" in d and not isinstance(d["lag_spec"], LagSpec):
            d["lag_spec"] = LagSpec.from_dict(d["lag_spec"])
        for key, cls_ in (("preavg", PreAvgConfig), ("clime", ClimeConfig),
                          ("lasso", LassoConfig), ("eval", EvalConfig)):
            if key in d:
                d[key] = _build(cls_, d[key])
        if "stages" in d and isinstance(d["stages"], list):
            d["stages"] = {s: True for s in d["stages"]}
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sim"] = self.sim.to_dict()
        d["lag_spec"] = self.lag_spec.to_dict()
        d["models"] = list(self.models)
        return d


class Staging:
    """Write outputs as ``*.partial`` and rename them once the stage succeeds."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.files: list[Path] = []

    def path(self, rel) -> Path:
        final = self.root / rel
        final.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(final)
        return final.with_name(final.name + ".partial")

    def commit(self) -> list[Path]:
        for f in self.files:
            f.with_name(f.name + ".partial").replace(f)
        return list(self.files)


# --------------------------------------------------------------------- stages

def stage_simulate(cfg: SimConfig, out: Path) -> list[Path]:
    sim = market_sim.simulate(cfg)
    st = Staging(out)
    io.write_ticks(st.path("ticks.csv"), sim.ticks)
    io.write_day_matrices(st.path("truth/gamma_d.csv"), sim.true_gamma)
    io.write_day_matrices(st.path("truth/omega_d.csv"), sim.true_omega)
    io.write_day_vectors(st.path("truth/weights.csv"), sim.true_weights, "w",
                         {"w_normalized": sim.true_weights_normalized})
    io.write_day_vectors(st.path("truth/g.csv"), sim.true_g, "g")
    io.write_json(st.path("sim_config.json"), cfg.to_dict())
    return st.commit()


def _read_sectors(path, p):
    if path is None:
        return None
    c = io.read_columns(path)
    labels = np.empty(p, dtype=object)
    labels[c["asset_id"].astype(int)] = c["sector"]
    return labels


def _estimate_one(args):
    (t, y), d, preavg, n_factors, sectors = args
    rc = realized_vol.estimate_day(t, y, preavg, day=d)
    if n_factors is not None:
        rc = realized_vol.poet_regularize(rc, n_factors, sectors)
    return rc


def stage_estimate(ticks_path, out: Path, preavg=PreAvgConfig(), n_factors=3, sectors_path=None,
                   jobs: int = 1) -> list[Path]:
    ticks = io.read_ticks(ticks_path)
    sectors = _read_sectors(sectors_path, ticks.p)
    tasks = [(ticks.day_slice(d), d, preavg, n_factors, sectors) for d in range(ticks.days)]
    st = Staging(out)
    rows = []
    for rc in pmap(_estimate_one, tasks, jobs):
        io.write_matrix(st.path(f"gamma_hat/day_{rc.day}.csv"), rc.matrix)
        iu = np.triu_indices(ticks.p)
        rows.append([rc.day, float(np.median(rc.n_obs[iu])), rc.flagged,
                     rc.threshold if rc.threshold is not None else float("nan")])
    io.write_table(st.path("gamma_hat/meta.csv"), ["day", "median_obs", "flagged", "threshold"], rows)
    return st.commit()


def _invert_one(args):
    g, d, grid = args
    return clime.invert(g, grid, day=d)


def stage_invert(gamma_dir, out: Path, cfg: ClimeConfig = ClimeConfig(), jobs: int = 1) -> list[Path]:
    gamma_dir = Path(gamma_dir)
    files = io.day_files(gamma_dir)
    meta = io.read_columns(gamma_dir / "meta.csv") if (gamma_dir / "meta.csv").exists() else None
    n_days = cfg.window_days or len(files)
    tasks = []
    for k, (d, f) in enumerate(files):
        g = io.read_matrix(f)
        m_day = meta["median_obs"][k] if meta is not None else 390.0
        grid = clime.tau_grid(g.shape[0], n_days, max(m_day, 1.0), cfg.n_tau, cfg.c_min, cfg.c_max)
        tasks.append((g, d, grid))
    st = Staging(out)
    rows = []
    for inv in pmap(_invert_one, tasks, jobs):
        io.write_matrix(st.path(f"omega_hat/day_{inv.day}.csv"), inv.omega)
        w = inv.omega.sum(axis=1)
        try:
            wn = clime.normalize(w)
        except clime.DegenerateNormalizer:
            wn = np.full_like(w, np.nan)
        for i in range(w.size):
            rows.append([inv.day, i, w[i], wn[i], inv.tau_used, inv.feasibility_residual])
    io.write_table(st.path("weights.csv"),
                   ["day", "asset", "w", "w_normalized", "tau_used", "residual"], rows)
    return st.commit()


def read_weights(path, key: str = "w") -> np.ndarray:
    return io.to_panel(io.read_columns(path), key)


def stage_fit(weights_path, out: Path, spec: LagSpec = LagSpec(), lasso=LassoConfig()) -> list[Path]:
    w = read_weights(weights_path)
    panel = model.build_features(w, spec)
    fit = model.ebic_select(panel, lasso)
    st = Staging(out)
    labels = ["intercept"] + [f"t{t}_a{j}" for t in spec.terms for j in range(w.shape[1])]
    for i in range(fit.p):
        io.write_table(st.path(f"fit/theta_asset_{i}.csv"), ["term", "value"],
                       zip(labels, fit.theta()[i]))
    io.write_table(st.path("fit/diagnostics.csv"),
                   ["asset", "lambda", "ebic", "nonzero", "kkt_residual", "converged"],
                   ([i, fit.lambda_used[i], fit.ebic[i], fit.nonzero[i], fit.kkt[i],
                     fit.converged[i]] for i in range(fit.p)))
    io.write_json(st.path("fit/lag_spec.json"), spec.to_dict())
    return st.commit()


def load_fit(fit_dir) -> tuple[LagSpec, np.ndarray]:
    fit_dir = Path(fit_dir)
    spec = LagSpec.from_dict(io.read_json(fit_dir / "lag_spec.json"))
    thetas = [io.read_columns(f)["value"] for _, f in io.day_files(fit_dir, "theta_asset_")]
    return spec, np.array(thetas)


def stage_predict(weights_path, fit_dir, out: Path) -> list[Path]:
    w = read_weights(weights_path)
    spec, theta = load_fit(fit_dir)
    g = theta[:, 0] + theta[:, 1:] @ model.lag_features(w, spec)
    fallback = False
    try:
        wb = clime.normalize(g)
    except clime.DegenerateNormalizer:
        wb, fallback = clime.normalize(w[-1]), True
    day = w.shape[0]
    st = Staging(out)
    io.write_table(st.path("predictions.csv"),
                   ["model", "day", "asset", "g_hat", "w_bar_hat", "fallback_flag"],
                   (["drmvp", day, i, g[i], wb[i], fallback] for i in range(g.size)))
    return st.commit()


def stage_backtest(weights_path, out: Path, spec: LagSpec = LagSpec(), lasso=LassoConfig(),
                   window: int = 60, models=("drmvp", "har", "martingale"), jobs: int = 1) -> list[Path]:
    w = read_weights(weights_path)
    bts = pmap(_backtest_one, [(w, spec, window, name, lasso) for name in models], jobs)
    rows = []
    for bt in bts:
        for k, d in enumerate(bt.days):
            for i in range(w.shape[1]):
                rows.append([bt.model, d, i, bt.g_hat[k, i], bt.w_bar_hat[k, i], bt.fallback[k]])
    st = Staging(out)
    io.write_table(st.path("predictions.csv"),
                   ["model", "day", "asset", "g_hat", "w_bar_hat", "fallback_flag"], rows)
    return st.commit()


def _backtest_one(args):
    w, spec, window, name, lasso = args
    return model.rolling_backtest(w, spec, window, model=name, config=lasso)


def read_predictions(path) -> dict:
    c = io.read_columns(path)
    out = {}
    for name in dict.fromkeys(c["model"].tolist()):
        sel = c["model"] == name
        sub = {k: v[sel] for k, v in c.items()}
        days = np.unique(sub["day"].astype(int))
        out[name] = (days, io.to_panel(sub, "w_bar_hat"))
    return out


def stage_eval(predictions_path, ticks_path, expost_path, out: Path, cfg: EvalConfig = EvalConfig(),
               riskfree_path=None) -> list[Path]:
    preds = read_predictions(predictions_path)
    ticks = io.read_ticks(ticks_path)
    key = "w_normalized"
    expost_all = read_weights(expost_path, key)
    days = None
    for d, _ in preds.values():
        days = d if days is None else np.intersect1d(days, d)
    panels = {}
    for name, (d, wb) in preds.items():
        panels[name] = wb[np.searchsorted(d, days)]
    rets = evaluation.intraday_returns(ticks, cfg.n_intervals, days=days)
    closes = np.array([[evaluation.grid_prices(*[ticks.day_slice(d)[k][i] for k in (0, 1)], 1)[-1]
                        for i in range(ticks.p)] for d in range(ticks.days)])
    close_ret = np.diff(closes, axis=0)[days - 1] if days.min() >= 1 else None
    rf = None
    if riskfree_path is not None:
        c = io.read_columns(riskfree_path)
        rf = c["rate"][np.searchsorted(c["day"].astype(int), days)]
    reports = evaluation.evaluate(panels, expost_all[days], rets, close_ret, rf,
                                  cfg.reference if cfg.reference in panels else None, cfg.dm_lag)
    st = Staging(out)
    io.write_table(st.path("report.csv"),
                   ["model", "annualized_risk", "mean_relative_risk", "mean_rank",
                    "first_place_count", "mean_l2", "sharpe"],
                   ([r.model, r.annualized_risk, r.mean_relative_risk, r.mean_rank,
                     r.first_place_count, r.mean_l2, r.sharpe] for r in reports))
    dm_rows = [[r.model, other, pv] for r in reports for other, pv in r.dm_pvalues.items()]
    io.write_table(st.path("dm_tests.csv"), ["reference", "competitor", "p_value"], dm_rows)
    return st.commit()


def stage_acf(weights_path, out: Path, max_lag: int = 20) -> list[Path]:
    w = read_weights(weights_path, "w_normalized")
    res = evaluation.weight_acf(w, max_lag)
    st = Staging(out)
    io.write_table(st.path("acf_boxplot.csv"), ["asset", "lag", "acf", "band"],
                   ([i, k, res.acf[i, k], res.band] for i in range(res.acf.shape[0])
                    for k in range(1, max_lag + 1)))
    return st.commit()


# ------------------------------------------------------------------- manifest

class _Collect(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages = []

    def emit(self, record):
        self.messages.append(record.getMessage())


def _hashes(paths, root: Path) -> dict:
    return {str(Path(p).relative_to(root)): io.file_hash(p) for p in paths}


def _stage_plan(cfg: RunConfig, out: Path, jobs: int):
    """Per stage: (input files, stage config, runner)."""
    sectors = [Path(cfg.sectors)] if cfg.sectors else []
    gamma_dir = out / "gamma_hat"
    ticks, weights = out / "ticks.csv", out / "weights.csv"
    expost = out / ("truth/weights.csv" if cfg.eval.expost == "truth" else "weights.csv")
    return {
        "simulate": (lambda: [], cfg.sim.to_dict(), lambda: stage_simulate(cfg.sim, out)),
        "estimate": (lambda: [ticks, *sectors],
                     {"preavg": asdict(cfg.preavg), "n_factors": cfg.n_factors},
                     lambda: stage_estimate(ticks, out, cfg.preavg, cfg.n_factors, cfg.sectors, jobs)),
        "invert": (lambda: sorted(gamma_dir.glob("*.csv")), asdict(cfg.clime),
                   lambda: stage_invert(gamma_dir, out, cfg.clime, jobs)),
        "fit": (lambda: [weights], {"lag": cfg.lag_spec.to_dict(), "lasso": asdict(cfg.lasso)},
                lambda: stage_fit(weights, out, cfg.lag_spec, cfg.lasso)),
        "predict": (lambda: [weights, *sorted((out / "fit").glob("*"))], {},
                    lambda: stage_predict(weights, out / "fit", out / "next_day")),
        "backtest": (lambda: [weights],
                     {"lag": cfg.lag_spec.to_dict(), "lasso": asdict(cfg.lasso),
                      "window": cfg.window, "models": list(cfg.models)},
                     lambda: stage_backtest(weights, out, cfg.lag_spec, cfg.lasso, cfg.window,
                                            cfg.models, jobs)),
        "eval": (lambda: [out / "predictions.csv", ticks, expost], asdict(cfg.eval),
                 lambda: stage_eval(out / "predictions.csv", ticks, expost, out, cfg.eval)),
        "acf": (lambda: [weights], {"max_lag": cfg.eval.max_lag},
                lambda: stage_acf(weights, out, cfg.eval.max_lag)),
    }


def run_pipeline(cfg: RunConfig, force: bool = False, jobs: int | None = None) -> dict:
    """Run the enabled stages in order and write ``manifest.json`` last.

    A stage whose inputs, configuration and outputs are unchanged since the
    last run is skipped unless ``force`` is set.
    """
    jobs = default_jobs() if jobs is None else jobs
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mpath = out / "manifest.json"
    old = io.read_json(mpath) if mpath.exists() else {}
    manifest = {}
    plan = _stage_plan(cfg, out, jobs)
    for name in STAGES:
        if not cfg.stages[name]:
            continue
        inputs_fn, stage_cfg, runner = plan[name]
        inputs = inputs_fn()
        missing = [str(p) for p in inputs if not Path(p).exists()]
        if missing:
            raise FileNotFoundError(f"stage {name}: missing inputs {missing}")
        in_h = {str(p): io.file_hash(p) for p in inputs}
        c_h = io.config_hash(stage_cfg)
        prev = old.get(name)
        if not force and prev and prev["inputs"] == in_h and prev["config_hash"] == c_h and all(
                (out / f).exists() and io.file_hash(out / f) == h for f, h in prev["outputs"].items()):
            log.info("stage %s unchanged, skipped", name)
            manifest[name] = prev
            continue
        handler = _Collect()
        logging.getLogger("drmvp").addHandler(handler)
        t0 = time.perf_counter()
        try:
            outputs = runner()
        except Exception as exc:
            raise RuntimeError(f"stage {name} failed: {exc}") from exc
        finally:
            logging.getLogger("drmvp").removeHandler(handler)
        manifest[name] = {
            "inputs": in_h,
            "config_hash": c_h,
            "outputs": _hashes(outputs, out),
            "wall_time": time.perf_counter() - t0,
            "warnings": handler.messages,
            "seed": cfg.sim.seed,
        }
    io.write_json(mpath, manifest)
    return manifest


# -------------------------------------------------------------------- studies

@dataclass(frozen=True)
class StudyConfig:
    p: int = 10
    replications: int = 20
    ms: tuple = (390, 780, 2340)
    ns: tuple = (50, 125, 250)
    cells: tuple | None = None  # explicit (N, m) pairs; default pairs ns with ms
    ps: tuple = (10, 20, 40)
    n_paths: int = 2000
    n_test: int = 20
    seed: int = 0


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def _study_task(args):
    study, cell, rep, kw = args
    if study == "fig2":
        return studies.estimation_errors(**kw)
    if study in ("fig3", "fig4"):
        return studies.prediction_errors(**kw)
    if study == "fig5":
        return studies.portfolio_risks(**kw)
    if study == "prop1":
        return studies.normalization_gaps(**kw)
    if study == "fig1":
        r = studies.weight_acf_study(**kw)
        return {"acf": r["acf"], "band": r["band"]}
    raise ValueError(study)


def study_tasks(study: str, sc: StudyConfig):
    cells = sc.cells if sc.cells is not None else tuple(zip(sc.ns, sc.ms))
    tasks = []
    if study == "fig2":
        n = sc.ns[0]
        for c, m in enumerate(sc.ms):
            for r in range(sc.replications):
                tasks.append((study, {"N": n, "m": m}, r,
                              dict(p=sc.p, n_days=n, m=m, seed=derive_seed(sc.seed, r))))
    elif study in ("fig3", "fig4"):
        for c, (n, m) in enumerate(cells):
            for r in range(sc.replications):
                tasks.append((study, {"N": n, "m": m}, r,
                              dict(p=sc.p, n_days=n, m=m, seed=derive_seed(sc.seed, r),
                                   n_paths=sc.n_paths)))
    elif study == "fig5":
        for c, (n, m) in enumerate(cells):
            for r in range(sc.replications):
                tasks.append((study, {"N": n, "m": m}, r,
                              dict(p=sc.p, n_days=n, m=m, seed=derive_seed(sc.seed, r),
                                   n_test=sc.n_test)))
    elif study == "prop1":
        for c, p in enumerate(sc.ps):
            for r in range(sc.replications):
                tasks.append((study, {"p": p}, r,
                              dict(p=p, seed=derive_seed(sc.seed, r), n_paths=sc.n_paths)))
    elif study == "fig1":
        n, m = cells[-1]
        tasks.append((study, {"N": n, "m": m}, 0, dict(p=sc.p, n_days=n, m=m, seed=sc.seed)))
    else:
        raise ValueError(f"unknown study {study!r}")
    return tasks


def reproduce(study: str, sc: StudyConfig, out: Path, jobs: int = 1) -> list[Path]:
    """Run a study grid and write raw and per-cell mean CSVs."""
    if study == "martingale":
        return _reproduce_martingale(sc, Path(out))
    tasks = study_tasks(study, sc)
    results = pmap(_study_task, tasks, jobs)
    st = Staging(Path(out))
    if study == "fig1":
        r = results[0]
        acf = r["acf"]
        io.write_table(st.path("fig1.csv"), ["asset", "lag", "acf", "band"],
                       ([i, k, acf[i, k], r["band"]] for i in range(acf.shape[0])
                        for k in range(1, acf.shape[1])))
        return st.commit()
    cell_keys = list(tasks[0][1])
    metric_keys = list(results[0])
    rows = [[*t[1].values(), t[2], *(res[k] for k in metric_keys)] for t, res in zip(tasks, results)]
    io.write_table(st.path(f"{study}.csv"), [*cell_keys, "rep", *metric_keys], rows)
    summary = {}
    for t, res in zip(tasks, results):
        summary.setdefault(tuple(t[1].values()), []).append([res[k] for k in metric_keys])
    name = "risk_by_mn" if study == "fig5" else f"{study}_summary"
    io.write_table(st.path(f"{name}.csv"), [*cell_keys, "reps", *metric_keys],
                   ([*cell, len(v), *np.mean(v, axis=0)] for cell, v in summary.items()))
    return st.commit()


def _reproduce_martingale(sc: StudyConfig, out: Path) -> list[Path]:
    r = studies.martingale_check(p=5, n_days=2000, seed=sc.seed)
    p = r["mean"].shape[0]
    st = Staging(out)
    io.write_table(st.path("martingale.csv"), ["row", "col", "mean", "se"],
                   ([i, j, r["mean"][i, j], r["se"][i, j]] for i in range(p) for j in range(p)))
    return st.commit()
