"""Experiment dispatch: JSON config in, CSV/JSON artifacts out.

Usage: mkdvlab run <config.json> [--workers K] [--out DIR] [--seed S]

Exit codes: 0 pass, 1 threshold failure, 2 configuration error.  Every run
writes its resolved configuration (config_echo.json) and a result.json next
to the CSV outputs; reruns of an identical config produce byte-identical
CSVs regardless of worker count.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import dynamics as dyn
from . import invariance as inv
from . import measures as ms
from . import pairing as pr
from .parallel import ensemble_map  # noqa: F401  (re-exported worker-pool helper)
from .spectral import NormSpec, SpectralField, fl_norm

OUTPUT_ROOT_ENV = "MKDVLAB_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str
    params: dict
    out_dir: str
    workers: int = 1


_COMMON_KEYS = {"experiment", "out", "workers", "seed"}

# experiment name -> (allowed keys, defaults)
_SCHEMA: dict[str, tuple[set, dict]] = {
    "sample": (
        {"N", "samples", "sign", "R"},
        {"N": 8, "samples": 100, "sign": 1, "R": 4.0, "seed": 0},
    ),
    "evolve": (
        {"N", "sign", "equation", "tol", "t", "n_out", "mode", "amplitude", "binary"},
        {
            "N": 8,
            "sign": 1,
            "equation": "mkdv2",
            "tol": 1e-9,
            "t": 1.0,
            "n_out": 10,
            "mode": None,
            "amplitude": 1.0,
            "binary": False,
            "seed": 0,
        },
    ),
    "conservation": (
        {"N", "sign", "t", "samples", "tol"},
        {"N": 8, "sign": 1, "t": 1.0, "samples": 4, "tol": 1e-9, "seed": 0},
    ),
    "e3star-decay": (
        {"N_grid", "R", "samples", "chi_on"},
        {"N_grid": [8, 16, 32, 64], "R": 4.0, "samples": 20000, "chi_on": True, "seed": 0},
    ),
    "invariance": (
        {"N_grid", "R", "t", "sign", "samples", "set", "set_radius", "set_mode"},
        {
            "N_grid": [8, 16, 32],
            "R": 4.0,
            "t": 0.5,
            "sign": 1,
            "samples": 20000,
            "set": "e1_ball",
            "set_radius": None,
            "set_mode": 1,
            "seed": 0,
        },
    ),
    "pairing-lemmas": (
        {"N_grid", "tilde_N", "tilde_draws"},
        {"N_grid": [16, 32, 64, 128, 256, 512], "tilde_N": 8, "tilde_draws": 20, "seed": 0},
    ),
    "convergence": (
        {"N_grid", "s", "s_prime", "p", "T", "sign", "tol"},
        {
            "N_grid": [8, 16, 32, 64],
            "s": 0.9,
            "s_prime": 0.5,
            "p": 4.0,
            "T": 0.2,
            "sign": 1,
            "tol": 1e-8,
            "seed": 0,
        },
    ),
    "tails": (
        {"N", "samples", "s", "p", "lambdas"},
        {"N": 16, "samples": 100000, "s": 0.5, "p": 4.0, "lambdas": [1.0, 1.5, 2.0], "seed": 0},
    ),
    "density-moments": (
        {"N_grid", "R", "sign", "q", "samples"},
        {"N_grid": [8, 16, 32], "R": 4.0, "sign": -1, "q": 2.0, "samples": 20000, "seed": 0},
    ),
    "gauge-check": (
        {"N", "sign", "t", "tol", "mode", "amplitude"},
        {"N": 8, "sign": 1, "t": 0.5, "tol": 1e-10, "mode": None, "amplitude": 0.7, "seed": 0},
    ),
}


def load_config(path: str, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a JSON config; unknown keys are rejected."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    name = raw.get("experiment")
    if name not in _SCHEMA:
        raise ConfigError(
            f"unknown experiment {name!r}; choose from {sorted(_SCHEMA)}"
        )
    allowed, defaults = _SCHEMA[name]
    unknown = set(raw) - allowed - _COMMON_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys for {name}: {sorted(unknown)}")
    params = dict(defaults)
    params.update({k: v for k, v in raw.items() if k not in ("experiment", "out", "workers")})
    workers = int(raw.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers >= 1 required")
    samples = params.get("samples")
    if samples is not None and int(samples) < 1:
        raise ConfigError("samples >= 1 required")
    out = raw.get("out")
    if out is None:
        root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out = os.path.join(root, f"{name}-{stamp}-seed{params.get('seed', 0)}")
    return RunConfig(name, params, out, workers)


def write_csv(path: str, columns: list[str], rows: list[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, (np.floating,)):
        return format(float(v), ".17g")
    return v


def write_trajectory_csv(path: str, traj):
    rows = []
    N = traj.max_freq
    for i, t in enumerate(traj.times):
        for k, n in enumerate(range(-N, N + 1)):
            c = traj.coeffs[i, k]
            rows.append({"t": float(t), "n": n, "re": c.real, "im": c.imag})
    write_csv(path, ["t", "n", "re", "im"], rows)


def write_trajectory_binary(path: str, traj):
    """Little-endian layout: uint64 N, uint64 steps, float64 times[steps],
    complex128 coeffs[steps][2N+1]."""
    with open(path, "wb") as fh:
        np.array([traj.max_freq, len(traj)], dtype="<u8").tofile(fh)
        traj.times.astype("<f8").tofile(fh)
        traj.coeffs.astype("<c16").tofile(fh)


def read_trajectory_binary(path: str):
    from .spectral import Trajectory

    with open(path, "rb") as fh:
        head = np.fromfile(fh, dtype="<u8", count=2)
        N, steps = int(head[0]), int(head[1])
        times = np.fromfile(fh, dtype="<f8", count=steps)
        coeffs = np.fromfile(fh, dtype="<c16", count=steps * (2 * N + 1))
    return Trajectory(times, coeffs.reshape(steps, 2 * N + 1), N)


# ---------------------------------------------------------------------------
# experiment runners: return (passed, outputs dict written to result.json)


def _run_sample(p, out_dir, workers):
    spec = ms.EnsembleSpec(N=int(p["N"]), master_seed=int(p["seed"]), count=int(p["samples"]),
                           sign=int(p["sign"]), R=float(p["R"]))
    rows = []
    for i in range(spec.count):
        u = ms.sample_field(spec, i)
        sw = ms.density_weight(u, spec.R, spec.N, spec.sign)
        rows.append({"index": i, "e1": sw.e1, "l4_fourth": sw.l4_fourth,
                     "chi": sw.chi, "weight": sw.weight})
    write_csv(os.path.join(out_dir, "samples.csv"),
              ["index", "e1", "l4_fourth", "chi", "weight"], rows)
    return True, {"count": spec.count}


def _run_evolve(p, out_dir, workers):
    N = int(p["N"])
    if p["mode"] is not None:
        u0 = SpectralField.from_modes(N, {int(p["mode"]): complex(p["amplitude"])})
    else:
        u0 = ms.sample_field(ms.EnsembleSpec(N=N, master_seed=int(p["seed"]), count=1), 0)
    cfg = dyn.FlowConfig(N=N, sign=int(p["sign"]), equation=p["equation"],
                         tol=float(p["tol"]), t_final=float(p["t"]))
    times = np.linspace(0.0, cfg.t_final, int(p["n_out"]) + 1)
    traj = dyn.flow(u0, cfg, output_times=times)
    write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), traj)
    if p["binary"]:
        write_trajectory_binary(os.path.join(out_dir, "trajectory.bin"), traj)
    e1 = [float(np.sum(np.abs(c) ** 2)) for c in traj.coeffs]
    drift = abs(e1[-1] - e1[0]) / max(e1[0], 1e-300)
    return drift <= 10 * cfg.tol, {"e1_drift": drift}


def _run_conservation(p, out_dir, workers):
    res = inv.conservation_suite(int(p["N"]), int(p["sign"]), float(p["t"]),
                                 int(p["samples"]), float(p["tol"]), int(p["seed"]))
    write_csv(os.path.join(out_dir, "conservation.csv"),
              ["experiment", "output", "value", "stderr", "exact"], res.flat_rows())
    return bool(res.passed), res.outputs


def _run_e3star_decay(p, out_dir, workers):
    rows = []
    ests = []
    for N in p["N_grid"]:
        est, se = pr.e3star_l2_mc(int(N), float(p["R"]), int(p["samples"]),
                                  bool(p["chi_on"]), int(p["seed"]))
        ests.append(est)
        rows.append({"experiment": "e3star", "N": int(N), "R": float(p["R"]),
                     "sign": 1, "q_or_lambda": "", "estimate": est, "stderr": se,
                     "samples": int(p["samples"]), "seed": int(p["seed"]),
                     "chi_on": int(bool(p["chi_on"]))})
    write_csv(os.path.join(out_dir, "e3star.csv"),
              ["experiment", "N", "R", "sign", "q_or_lambda", "estimate", "stderr",
               "samples", "seed", "chi_on"], rows)
    slope = float(np.polyfit(np.log2(np.array(p["N_grid"], float)), np.log2(ests), 1)[0])
    decreasing = all(ests[i + 1] < ests[i] for i in range(len(ests) - 1))
    return decreasing and slope <= -0.3, {"slope": slope, "decreasing": decreasing}


def _run_invariance(p, out_dir, workers):
    kind = p["set"]
    radius = p["set_radius"] if p["set_radius"] is not None else float(p["R"])
    sets = {"target": inv.TestSet(kind, radius=float(radius), mode=int(p["set_mode"]))}
    rows = []
    targets = []
    controls_ok = True
    for N in p["N_grid"]:
        out = inv.invariance_delta(sets, float(p["t"]), int(N), float(p["R"]),
                                   int(p["sign"]), int(p["samples"]),
                                   master_seed=int(p["seed"]), workers=workers)
        for label in ("target", "control"):
            d = out[label]
            rows.append({"experiment": f"invariance_{label}", "N": int(N),
                         "R": float(p["R"]), "sign": int(p["sign"]),
                         "q_or_lambda": float(p["t"]), "estimate": d.value,
                         "stderr": d.stderr, "samples": d.samples,
                         "seed": int(p["seed"])})
        targets.append(abs(out["target"].value))
        if abs(out["control"].value) > 3 * out["control"].stderr:
            controls_ok = False
    write_csv(os.path.join(out_dir, "invariance.csv"),
              ["experiment", "N", "R", "sign", "q_or_lambda", "estimate", "stderr",
               "samples", "seed"], rows)
    trend = mann_kendall_decreasing_p(targets)
    return controls_ok and trend <= 0.10, {"mk_p": trend, "controls_ok": controls_ok,
                                           "abs_targets": targets}


def _run_pairing(p, out_dir, workers):
    rows = [
        {"lemma": lemma, "N": int(N), "value": pr.lemma_sum(lemma, int(N)),
         "value_scaled": pr.lemma_sum(lemma, int(N)) * (int(N) / math.log(int(N))
                                                        if lemma == "Llog" else int(N))}
        for lemma in pr.LEMMA_NAMES
        for N in p["N_grid"]
    ]
    write_csv(os.path.join(out_dir, "lemma_sums.csv"),
              ["lemma", "N", "value", "value_scaled"], rows)
    counts = [{"pair": f"{k},{l}", "N": int(N), "count": pr.count_same_triplet(int(N), (k, l))}
              for (k, l) in pr.SAME_TRIPLET_PAIRS for N in (1, 2, 4, 8, 16, 32, 64)]
    write_csv(os.path.join(out_dir, "same_triplet_counts.csv"), ["pair", "N", "count"], counts)
    tn = int(p["tilde_N"])
    rng = np.random.default_rng(int(p["seed"]))
    resid_rows = []
    worst = 0.0
    for d in range(int(p["tilde_draws"])):
        g = (rng.standard_normal(2 * tn + 1) + 1j * rng.standard_normal(2 * tn + 1)) / np.sqrt(2)
        resid, scale = pr.tilde_cancellation(tn, g)
        rel = resid / max(scale, 1e-300)
        worst = max(worst, rel)
        resid_rows.append({"draw": d, "residual": resid, "scale": scale, "relative": rel})
    write_csv(os.path.join(out_dir, "tilde_residuals.csv"),
              ["draw", "residual", "scale", "relative"], resid_rows)
    all_empty = all(r["count"] == 0 for r in counts)
    scaled = {}
    for lemma in pr.ONE_OVER_N_LEMMAS:
        vals = [r["value_scaled"] for r in rows if r["lemma"] == lemma]
        scaled[lemma] = max(vals) / min(vals)
    bounded = all(v < 10 for v in scaled.values())
    return all_empty and worst < 1e-12 and bounded, {
        "same_triplet_all_empty": all_empty,
        "tilde_worst_rel": worst,
        "scaled_ratio": scaled,
    }


def _run_convergence(p, out_dir, workers):
    res = inv.convergence_study(tuple(int(n) for n in p["N_grid"]), float(p["s"]),
                                float(p["s_prime"]), float(p["p"]), float(p["T"]),
                                int(p["sign"]), int(p["seed"]), float(p["tol"]))
    write_csv(os.path.join(out_dir, "convergence.csv"),
              ["experiment", "output", "value", "stderr", "exact"], res.flat_rows())
    return bool(res.passed), res.outputs


def _run_tails(p, out_dir, workers):
    spec = ms.EnsembleSpec(N=int(p["N"]), master_seed=int(p["seed"]), count=int(p["samples"]))
    norm = NormSpec(float(p["s"]), float(p["p"]))
    rows = []
    pts = []
    for lam in p["lambdas"]:
        est = ms.tail_probability(spec, norm, float(lam))
        rows.append({"experiment": "tails", "N": spec.N, "R": "", "sign": 1,
                     "q_or_lambda": float(lam), "estimate": est.value,
                     "stderr": est.stderr, "samples": est.samples, "seed": spec.master_seed})
        if est.value > 0:
            pts.append((float(lam) ** 2, math.log(est.value)))
    write_csv(os.path.join(out_dir, "tails.csv"),
              ["experiment", "N", "R", "sign", "q_or_lambda", "estimate", "stderr",
               "samples", "seed"], rows)
    slope = float(np.polyfit([x for x, _ in pts], [y for _, y in pts], 1)[0]) if len(pts) > 1 else 0.0
    return slope < 0, {"log_tail_slope_vs_lambda_sq": slope}


def _run_density_moments(p, out_dir, workers):
    rows = []
    vals = []
    for N in p["N_grid"]:
        spec = ms.EnsembleSpec(N=int(N), master_seed=int(p["seed"]), count=int(p["samples"]),
                               sign=int(p["sign"]), R=float(p["R"]))
        est = ms.density_moment(spec, float(p["q"]))
        vals.append(est)
        rows.append({"experiment": "density_moment", "N": int(N), "R": spec.R,
                     "sign": spec.sign, "q_or_lambda": float(p["q"]),
                     "estimate": est.value, "stderr": est.stderr,
                     "samples": est.samples, "seed": spec.master_seed,
                     "max_share": est.max_share})
    write_csv(os.path.join(out_dir, "density_moments.csv"),
              ["experiment", "N", "R", "sign", "q_or_lambda", "estimate", "stderr",
               "samples", "seed", "max_share"], rows)
    lo = min(v.value - 3 * v.stderr for v in vals)
    hi = max(v.value + 3 * v.stderr for v in vals)
    consistent = all(v.value - 3 * v.stderr <= hi and v.value + 3 * v.stderr >= lo for v in vals)
    mutual = all(
        abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr)
        for a in vals for b in vals
    )
    return mutual and all(math.isfinite(v.value) for v in vals), {
        "values": [(v.value, v.stderr) for v in vals],
        "mutually_consistent": mutual,
        "consistent_band": consistent,
    }


def _run_gauge_check(p, out_dir, workers):
    N = int(p["N"])
    sign = int(p["sign"])
    if p["mode"] is not None:
        u0 = SpectralField.from_modes(N, {int(p["mode"]): complex(p["amplitude"])})
    else:
        u0 = ms.sample_field(ms.EnsembleSpec(N=N, master_seed=int(p["seed"]), count=1), 0)
        u0 = u0 * 0.7
    t = float(p["t"])
    h = 1e-6
    cfg = dyn.FlowConfig(N=N, sign=sign, equation="mkdv", tol=float(p["tol"]), t_final=t)
    probe = [0.25 * t, 0.5 * t, 0.75 * t, t]
    times = sorted({0.0, *probe, *(x - h for x in probe), *(x + h for x in probe)})
    traj = dyn.flow(u0, cfg, output_times=times)
    v = dyn.gauge_transform(traj, sign)
    n = np.arange(-N, N + 1)
    worst = 0.0
    cfg2 = dyn.FlowConfig(N=N, sign=sign, equation="mkdv2", tol=float(p["tol"]))
    for tc in probe:
        i = int(np.argmin(np.abs(v.times - tc)))
        ph = np.exp(-1j * n.astype(float) ** 3 * v.times[i])
        phm = np.exp(-1j * n.astype(float) ** 3 * v.times[i - 1])
        php = np.exp(-1j * n.astype(float) ** 3 * v.times[i + 1])
        ydot = (php * v.coeffs[i + 1] - phm * v.coeffs[i - 1]) / (v.times[i + 1] - v.times[i - 1])
        rhs = dyn.nonlinearity(SpectralField(N, v.coeffs[i]), cfg2).coeffs
        resid = np.linalg.norm(ydot - ph * rhs) / np.linalg.norm(v.coeffs[i])
        worst = max(worst, float(resid))
    return worst < 1e-6, {"max_residual": worst}


_RUNNERS = {
    "sample": _run_sample,
    "evolve": _run_evolve,
    "conservation": _run_conservation,
    "e3star-decay": _run_e3star_decay,
    "invariance": _run_invariance,
    "pairing-lemmas": _run_pairing,
    "convergence": _run_convergence,
    "tails": _run_tails,
    "density-moments": _run_density_moments,
    "gauge-check": _run_gauge_check,
}


def mann_kendall_decreasing_p(values) -> float:
    """Exact one-sided Mann-Kendall p-value for a decreasing trend."""
    from itertools import permutations as _perms

    vals = list(values)
    n = len(vals)

    def s_stat(seq):
        s = 0
        for i in range(n):
            for j in range(i + 1, n):
                s += (seq[j] > seq[i]) - (seq[j] < seq[i])
        return s

    observed = s_stat(vals)
    total = 0
    at_most = 0
    for perm in _perms(range(n)):
        total += 1
        if s_stat([vals[i] for i in perm]) <= observed:
            at_most += 1
    return at_most / total


def run(config_path: str, workers: int | None = None, out: str | None = None,
        seed: int | None = None) -> int:
    """Execute the experiment named in the config; see module docstring for codes."""
    try:
        cfg = load_config(config_path, {"workers": workers, "out": out, "seed": seed})
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    os.makedirs(cfg.out_dir, exist_ok=True)
    echo = {"experiment": cfg.experiment, "workers": cfg.workers, **cfg.params}
    with open(os.path.join(cfg.out_dir, "config_echo.json"), "w") as fh:
        json.dump(echo, fh, indent=2, sort_keys=True)
    t0 = time.time()
    try:
        passed, outputs = _RUNNERS[cfg.experiment](cfg.params, cfg.out_dir, cfg.workers)
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    result = {
        "experiment": cfg.experiment,
        "passed": bool(passed),
        "outputs": outputs,
        "wall_seconds": round(time.time() - t0, 3),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(os.path.join(cfg.out_dir, "result.json"), "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True, default=float)
    if not passed:
        print(f"{cfg.experiment}: threshold failure; see {cfg.out_dir}/result.json",
              file=sys.stderr)
    return 0 if passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mkdvlab")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run an experiment from a JSON config")
    runp.add_argument("config")
    runp.add_argument("--workers", type=int, default=None)
    runp.add_argument("--out", default=None)
    runp.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, args.workers, args.out, args.seed)
    return 2


if __name__ == "__main__":
    sys.exit(main())
