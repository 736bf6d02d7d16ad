"""Experiment runners behind ``elastlab run``: one function per config kind.

Each runner writes its CSV files (and SVG plots) into ``out_dir`` and returns a
JSON-serialisable summary. A run that produces nothing usable raises
:class:`~elastlab.errors.NumericFailure`.
"""
import datetime
import json
import math
import os
import time

import numpy as np

from . import kernels
from .csvio import write_csv
from .data import gaussian_blobs, l1_norm_regression, make_rng, random_relu_features, relu_realizable
from .elasticity import (
    DHomModel,
    relu_change_upper_bound,
    relu_fictitious_change,
    relu_grad_loss,
    relu_predict,
    relu_srel_lower_bound,
    srel_dhom_limit_general,
    srel_diag_quad_time,
    srel_generic,
)
from .errors import NumericFailure
from .flows import DiagQuadFlowSpec, LinearFlowSpec, ReluFlowSpec
from .lab import (
    TrainConfig,
    distance_fan,
    spearman,
    train_classify_srel,
    train_regression_srel,
    write_series_summary,
)
from .sgd import (
    SgdConfig,
    aggregate_runs,
    gd_last_layer,
    random_last_layer_init,
    sgd_quad,
    sgd_relu,
    write_run_records,
)
from .svg import line_chart


def _num(v):
    """Float for JSON output (None for NaN/inf)."""
    v = float(v)
    return v if math.isfinite(v) else None


class Outputs:
    """Collects written files relative to the run directory."""

    def __init__(self, out_dir, plots=True):
        self.dir = out_dir
        self.plots = plots
        self.files = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.dir, name)

    def chart(self, name, series, **kw):
        if self.plots:
            line_chart(series, self.path(name), **kw)


# --- diagonal quadratic model --------------------------------------------------

def closed_form_curves(spec, pairs, times):
    """S_rel along the diagonal flow for each pair, two independent ways: ``(direct, via_limit)``."""
    direct = np.column_stack([srel_diag_quad_time(spec, p["x"], p["x_prime"], times) for p in pairs])
    via = np.full_like(direct, np.nan)
    for ti, t in enumerate(times):
        model = DHomModel.diagonal(spec.weights(t), 2)
        for pi, p in enumerate(pairs):
            v = srel_dhom_limit_general(model, p["x"], p["x_prime"])
            via[ti, pi] = np.nan if v is None else v
    return direct, via


def distance_profile(spec, x_prime, z_max, t):
    """S_rel at time ``t`` for sampled points ``x(z) = x' + sqrt(z) (1, ..., 1)``, ``z = 1..z_max``."""
    x_prime = np.asarray(x_prime, dtype=float)
    z = np.arange(1, z_max + 1, dtype=float)
    xs = x_prime + np.sqrt(z)[:, None] * np.ones_like(x_prime)
    vals = np.array([srel_diag_quad_time(spec, x, x_prime, t) for x in xs], dtype=float)
    return np.linalg.norm(xs - x_prime, axis=1), vals


def run_dhom(cfg, out):
    m = cfg["model"]
    spec = DiagQuadFlowSpec(np.array(m["a"]), np.array(m["b"]), m["theta"], np.array(m["w0_sq"]))
    c = cfg["curve"]
    times = np.arange(c["t_start"], c["t_stop"] + 0.5 * c["t_step"], c["t_step"])
    direct, via = closed_form_curves(spec, cfg.pairs, times)
    if np.all(np.isnan(direct)):
        raise NumericFailure("closed-form S_rel is undefined at every time")
    ids = [p["id"] for p in cfg.pairs]
    write_csv(out.path("closed_form.csv"), "closed_form/1", ["t", "pair_id", "srel", "srel_via_weights"],
              ([t, pid, direct[ti, pi], via[ti, pi]] for ti, t in enumerate(times) for pi, pid in enumerate(ids)))
    out.chart("closed_form.svg", [(pid, times, direct[:, i]) for i, pid in enumerate(ids)],
              title="closed-form S_rel", xlabel="t", ylabel="S_rel")
    summary = {
        "pairs": ids,
        "closed_form_final": [_num(v) for v in direct[-1]],
        "closed_form_vs_weights_max_rel": _num(np.nanmax(np.abs(via / direct - 1))),
    }
    d = cfg["distance"]
    if d["enabled"]:
        dist, vals = distance_profile(spec, d["x_prime"], d["z_max"], d["t"])
        write_csv(out.path("distance.csv"), "distance_profile/1", ["z", "distance", "srel"],
                  ([z + 1, dist[z], vals[z]] for z in range(dist.size)))
        out.chart("distance.svg", [("S_rel", dist, vals)], title=f"S_rel at t = {d['t']:g}",
                  xlabel="||x - x'||", ylabel="S_rel")
        summary["distance_spearman"] = _num(spearman(dist, vals))
    s = cfg["sgd"]
    if s["enabled"]:
        pairs = tuple((np.array(p["x"]), np.array(p["x_prime"])) for p in cfg.pairs)
        sc = SgdConfig(s["eta"], s["steps"], tuple(cfg.seeds), pairs, s["record_every"], s["record_until"],
                       s["tol"], pair_ids=tuple(ids))
        w_star = np.array(m["w_star"])
        recs = sgd_quad(w_star, np.sqrt(np.array(m["w0_sq"])), sc)
        series = aggregate_runs(recs)
        write_run_records(recs, out.path("sgd_runs.csv"))
        series.write_csv(out.path("sgd_series.csv"))
        flow_t = series.times * (s["eta"] / m["theta"])
        ref = np.column_stack([srel_diag_quad_time(spec, p["x"], p["x_prime"], flow_t.astype(float)) for p in cfg.pairs])
        mean = series.mean
        window = series.times >= 50
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.abs(mean[window] / ref[window] - 1)
        out.chart("sgd_series.svg",
                  [(f"{pid} SGD mean", series.times, mean[:, i]) for i, pid in enumerate(ids)]
                  + [(f"{pid} flow", series.times, ref[:, i]) for i, pid in enumerate(ids)],
                  title="SGD-averaged S_rel vs flow", xlabel="step", ylabel="S_rel")
        hits = [r.hit_step for r in recs]
        summary["sgd"] = {
            "runs": len(recs),
            "hit_tolerance": sum(h is not None for h in hits),
            "max_hit_step": max((h for h in hits if h is not None), default=None),
            "aborted": [r.seed for r in recs if not r.ok],
            "max_rel_error_vs_flow_from_step_50": [_num(v) for v in np.nanmax(rel, axis=0)] if rel.size else None,
            "backend": kernels.BACKEND,
        }
        if all(not r.ok for r in recs):
            raise NumericFailure("every SGD run diverged")
    return summary


# --- ReLU gate ---------------------------------------------------------------

def late_window_mean(series, fraction):
    """Mean over runs and over the records in the final ``fraction`` of the step range, per pair."""
    t = series.times
    cut = t[-1] - fraction * (t[-1] - t[0])
    v = series.values[:, t >= cut]
    count = np.sum(~np.isnan(v), axis=(0, 1))
    with np.errstate(invalid="ignore"):
        mean = np.where(count > 0, np.nansum(v, axis=(0, 1)) / np.maximum(count, 1), np.nan)
    return mean, count


def run_relu(cfg, out):
    m = cfg["model"]
    w_star = np.array(m["w_star"])
    ids = [p["id"] for p in cfg.pairs]
    pairs = tuple((np.array(p["x"]), np.array(p["x_prime"])) for p in cfg.pairs)
    sc = SgdConfig(m["eta"], m["steps"], tuple(cfg.seeds), pairs, m["record_every"], tol=0.0, pair_ids=tuple(ids))
    w0 = None if m["w0"] is None else np.array(m["w0"])
    recs = sgd_relu(w_star, sc, w0=w0)
    if all(not r.ok for r in recs):
        raise NumericFailure("every SGD run diverged")
    series = aggregate_runs(recs)
    write_run_records(recs, out.path("sgd_runs.csv"))
    series.write_csv(out.path("sgd_series.csv"))
    late, late_count = late_window_mean(series, m["late_fraction"])
    if np.all(late_count == 0):
        raise NumericFailure("S_rel is undefined everywhere in the late window")
    bounds = [relu_srel_lower_bound(p["x"], p["x_prime"]) for p in cfg.pairs]
    out.chart("sgd_series.svg",
              [(f"{pid} SGD mean", series.times, series.mean[:, i]) for i, pid in enumerate(ids)]
              + [(f"{pid} bound", series.times[[0, -1]], [bounds[i]] * 2) for i, pid in enumerate(ids)],
              title="SGD-averaged S_rel, ReLU gate", xlabel="step", ylabel="S_rel")
    summary = {
        "pairs": ids,
        "lower_bound": bounds,
        "late_mean": [_num(v) for v in late],
        "late_defined": [int(c) for c in late_count],
        "late_rel_deviation_from_bound": [_num(abs(v / b - 1)) if b else None for v, b in zip(late, bounds)],
        "final_distance_mean": _num(np.mean([np.linalg.norm(r.snapshots[-1] - w_star) for r in recs])),
        "aborted": [r.seed for r in recs if not r.ok],
        "backend": kernels.BACKEND,
    }
    f = cfg["flow"]
    if f["enabled"]:
        data = relu_realizable(w_star, f["n_moment"], cfg.seeds[0])
        start = w0 if w0 is not None else make_rng(cfg.seeds[0], 0).standard_normal(w_star.size)
        spec = ReluFlowSpec(data, f["beta"], w_star, start)
        times = np.linspace(0.0, f["t_stop"], f["points"])
        grad = relu_grad_loss(f["beta"])
        rows, worst = [], 0.0
        for t in times:
            w = spec.state(t)
            for p, pid in zip(cfg.pairs, ids):
                y = max(0.0, float(np.dot(w_star, p["x"])))
                s = srel_generic(relu_predict, grad, w, p["x"], p["x_prime"], y, f["eta"])
                change = relu_fictitious_change(spec, t, f["eta"], p["x"], p["x_prime"])
                bound = relu_change_upper_bound(spec, t, f["eta"], p["x"], p["x_prime"])
                worst = max(worst, change - bound)
                rows.append([t, pid, float(s), change, bound])
        write_csv(out.path("relu_flow.csv"), "relu_flow/1", ["t", "pair_id", "srel", "change", "change_bound"], rows)
        summary["flow"] = {"max_change_minus_bound": worst, "n_moment": f["n_moment"]}
    return summary


# --- last layer ----------------------------------------------------------------

def two_phase_stats(rec, final_fraction=0.2):
    """``(max S_rel in the first loss-halving window, min S_rel over the final fraction, halving step)``.

    The window runs from the start to the first record whose loss excess over
    the final loss is at most half the initial excess.
    """
    L, S = rec.emp_loss, rec.srel[:, 0]
    Lf = L[-1]
    half = int(np.argmax(L - Lf <= 0.5 * (L[0] - Lf)))
    early = np.nanmax(S[: half + 1]) if np.any(~np.isnan(S[: half + 1])) else np.nan
    cut = rec.steps[-1] * (1.0 - final_fraction)
    late_vals = S[rec.steps >= cut]
    late = np.nanmin(late_vals) if np.any(~np.isnan(late_vals)) else np.nan
    return float(early), float(late), int(rec.steps[half])


def lastlayer_setting(cfg, p, dims, seed):
    d, m, pr = cfg["data"], cfg["model"], cfg["pair"]
    ds = gaussian_blobs(dims, d["means"], d["variances"], d["n_per_class"], seed)
    bank = random_relu_features(dims, p, ds, seed)
    W0 = random_last_layer_init(bank.num_classes, p, seed, m["init_scale"])
    spec = LinearFlowSpec(bank, m["lambda1"], m["theta"], W0)
    rec = gd_last_layer(spec, m["steps"], m["record_every"], (tuple(pr["sampled"]), tuple(pr["test"])), seed)
    return spec, rec


def run_lastlayer(cfg, out):
    m = cfg["model"]
    rows, results, charts = [], [], []
    for p, dims in m["settings"]:
        for seed in cfg.seeds:
            spec, rec = lastlayer_setting(cfg, p, dims, seed)
            if not rec.ok:
                raise NumericFailure(f"gradient descent {rec.aborted} (p={p}, dims={dims}, seed={seed})")
            early, late, half = two_phase_stats(rec, m["final_fraction"])
            flow = spec.state(rec.steps[-1])
            drift = float(np.linalg.norm(rec.final_weights - flow) / max(np.linalg.norm(flow), 1e-300))
            results.append({"p": p, "dims": dims, "seed": seed, "early_max": _num(early), "late_min": _num(late),
                            "halving_step": half, "two_phase": bool(early < late), "gd_vs_flow_rel": drift})
            rows.extend([f"{p}x{dims}", seed, int(s), rec.srel[i, 0], rec.emp_loss[i]] for i, s in enumerate(rec.steps))
            if seed == cfg.seeds[0]:
                charts.append((f"p={p}, dim={dims}", rec.steps, rec.srel[:, 0]))
    write_csv(out.path("lastlayer.csv"), "lastlayer/1", ["setting", "seed", "step", "srel", "emp_loss"], rows)
    out.chart("lastlayer.svg", charts, title="last-layer S_rel", xlabel="step", ylabel="S_rel")
    return {"runs": results, "all_two_phase": all(r["two_phase"] for r in results)}


# --- neural nets ---------------------------------------------------------------

def _train_config(section, seeds):
    keys = ("optimizer", "eta", "batch", "epochs", "records_per_epoch", "srel_eta")
    extra = {"k": section["k"]} if "k" in section else {}
    return TrainConfig(seeds=tuple(seeds), **{k: section[k] for k in keys}, **extra)


def regression_probes(dims, probes, seed):
    """Test point ``x'``, the distance fan and the near/far time-series pairs."""
    x_prime = make_rng(seed, 10).standard_normal(dims)
    fan = distance_fan(x_prime, probes["radii"], seed)
    u = make_rng(seed, 11).standard_normal(dims)
    u /= np.linalg.norm(u)
    pairs = [(x_prime + probes["near"] * u, x_prime), (x_prime + probes["far"] * u, x_prime)]
    return x_prime, fan, pairs


def run_mlp_regress(cfg, out):
    d = cfg["data"]
    tc = _train_config(cfg["train"], cfg.seeds)
    x_prime, fan, pairs = regression_probes(d["dims"], cfg["probes"], cfg.seeds[0])
    widths = (d["dims"], *cfg["net"]["hidden"], 1)
    res = train_regression_srel(tc, lambda seed: l1_norm_regression(d["dims"], d["n"], seed), widths,
                                x_prime, fan, pairs, pair_ids=("near", "far"))
    rho = res.profile_spearman()
    warm = cfg["probes"]["warmup_records"]
    write_csv(out.path("profile.csv"), "distance_profile_nn/1", ["step", "seed", "distance", "srel"],
              ([int(t), seed, res.distances[i], res.profiles[si, ti, i]]
               for si, seed in enumerate(res.seeds) for ti, t in enumerate(res.steps)
               for i in range(res.distances.size)))
    write_series_summary(res.pairs, out.path("pairs.csv"))
    prof = res.mean_profile()
    order = np.argsort(res.distances)
    out.chart("profile.svg", [(f"step {int(res.steps[ti])}", res.distances[order], prof[ti, order])
                              for ti in np.linspace(0, res.steps.size - 1, min(6, res.steps.size)).astype(int)],
              title="S_rel vs distance", xlabel="||x - x'||", ylabel="S_rel")
    out.chart("pairs.svg", [(pid, res.steps, res.pairs.mean[:, i]) for i, pid in enumerate(res.pairs.pair_ids)],
              title="near vs far pair", xlabel="step", ylabel="S_rel")
    mean = res.pairs.mean[warm:]
    return {
        "profile_spearman_max_after_warmup": _num(np.nanmax(rho[:, warm:])),
        "snapshots_after_warmup": int(res.steps.size - warm),
        "near_above_far_fraction": _num(np.mean(mean[:, 0] >= mean[:, 1])),
        "final_loss": [_num(v) for v in res.final_loss],
    }


def classify_dataset(data):
    dims, sep = data["dims"], data["separation"]
    means = list(sep * np.eye(dims)[:3])
    return lambda seed: gaussian_blobs(dims, means, [data["variance"]] * 3, data["n_per_class"], seed)


def run_mlp_classify(cfg, out):
    d = cfg["data"]
    tc = _train_config(cfg["train"], cfg.seeds)
    res = train_classify_srel(tc, classify_dataset(d), (d["dims"], *cfg["net"]["hidden"], 3))
    series = res.series()
    write_series_summary(series, out.path("class_pairs.csv"))
    series.write_csv(out.path("class_pairs_runs.csv"))
    out.chart("class_pairs.svg", [(pid, series.times, series.mean[:, i]) for i, pid in enumerate(series.pair_ids)],
              title="class-pair smoothed S_rel (test->sampled)", xlabel="step", ylabel="S_rel", log_y=True)
    wins, trend = res.intra_wins(), res.inter_trend()
    if np.all(np.isnan(res.values)):
        raise NumericFailure("smoothed S_rel is undefined everywhere")
    return {
        "intra_win_fraction_min": _num(np.nanmin(wins)),
        "inter_trend_max": _num(np.nanmax(trend)),
        "per_seed_intra_win_min": [_num(np.nanmin(w)) for w in wins],
        "per_seed_inter_trend_max": [_num(np.nanmax(t)) for t in trend],
        "final_loss": [_num(v) for v in res.final_loss],
    }


RUNNERS = {
    "dhom": run_dhom,
    "relu": run_relu,
    "lastlayer": run_lastlayer,
    "mlp-regress": run_mlp_regress,
    "mlp-classify": run_mlp_classify,
}


def run_experiment(cfg, out_dir, quiet=True):
    """Run ``cfg`` into ``out_dir`` and write ``manifest.json``; returns the manifest dict."""
    from . import __version__

    out = Outputs(out_dir, plots=cfg.plots)
    started = time.time()
    summary = RUNNERS[cfg.kind](cfg, out)
    manifest = {
        "kind": cfg.kind,
        "title": cfg.title,
        "source": cfg.source,
        "seeds": list(cfg.seeds),
        "config": cfg.sections,
        "pairs": cfg.pairs,
        "backend": kernels.BACKEND,
        "version": __version__,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "elapsed_seconds": round(time.time() - started, 3),
        "files": out.files,
        "summary": summary,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=_json_default)
        fh.write("\n")
    return manifest


def _json_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")
