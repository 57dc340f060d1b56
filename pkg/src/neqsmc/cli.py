"""Configuration-driven experiment runner.

Subcommands: ``sample`` (walker ensemble along a parameter protocol),
``train`` (cross-entropy descent with optional baseline comparison),
``order-study`` (step-size sweep on an analytic Gaussian path), and
``oracle-check`` (the exactness suite against enumeration and algebraic
identities).

Configs are TOML files; ``--set key=value`` overrides nest by dots.
Unknown keys are hard errors: silent typos corrupt statistical
experiments.  All outputs are UTF-8 CSV and JSON with no timestamps, so
a fixed seed reproduces them byte for byte.

Exit codes: 0 success, 1 check failure, 2 config/input error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import interpolant, kernels, models, smc, trainer

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    """Invalid or incomplete run configuration."""


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

_MODEL_KEYS = {"family": None, "d": None, "components": None, "d_v": None, "d_h": None}

_SCHEMAS = {
    "sample": {
        "seed": None,
        "model": _MODEL_KEYS,
        "protocol": {"steps": None, "theta0": "any", "theta1": "any"},
        "kernel": {"name": None, "h": None, "scan_order": None},
        "sample": {"walkers": None, "ess_threshold": None, "observables": "any"},
    },
    "train": {
        "seed": None,
        "model": _MODEL_KEYS,
        "data": {"path": None, "kind": None, "header": None},
        "train": {
            "learning_rate": None,
            "steps": None,
            "walkers": None,
            "kernel": None,
            "step_size": None,
            "scan_order": None,
            "ess_threshold": None,
            "minibatch": None,
            "theta0": "any",
        },
        "baseline": {"k_steps": None, "true_mass_ratio": None},
    },
    "order-study": {
        "seed": None,
        "path": {
            "kind": None,
            "mean_start": "any",
            "mean_end": "any",
            "scale_start": None,
            "scale_end": None,
            "mean": "any",
            "scale": None,
            "dim": None,
        },
        "study": {"eps": None, "h_values": "any", "walkers": None, "steps": None},
    },
    "oracle-check": {
        "seed": None,
        "oracle": {
            "rbm_d_v": None,
            "rbm_d_h": None,
            "grbm_d_v": None,
            "grbm_d_h": None,
            "walkers": None,
            "steps": None,
            "probes": None,
        },
        "debug": {"corrupt_increment": None},
    },
}


def _load_config(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from None


def _parse_set_item(item):
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set needs key=value, got {item!r}")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw  # bare word: treat as string
    return key.strip(), value


def _apply_overrides(cfg, assignments):
    for item in assignments:
        key, value = _parse_set_item(item)
        parts = key.split(".")
        node = cfg
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {key!r} crosses a scalar value")
        node[parts[-1]] = value


def _check_keys(cfg, schema, prefix=""):
    for key, value in cfg.items():
        label = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key: {label}")
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {label} must be a table")
            _check_keys(value, sub, prefix=f"{label}.")
        # leaves (None or "any") accept whatever value was supplied


def _get(cfg, dotted, default=None):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def _require(cfg, dotted):
    sentinel = object()
    value = _get(cfg, dotted, sentinel)
    if value is sentinel:
        raise ConfigError(f"missing required key: {dotted}")
    return value


def _build_model(cfg):
    family = _require(cfg, "model.family")
    dims = {k: v for k, v in cfg.get("model", {}).items() if k != "family"}
    try:
        return models.make_model(family, **dims)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"bad model section: {e}") from None


def _resolve_theta(spec, model, what):
    """Parameter-endpoint spec: "zeros", an inline list, {file = path},
    or {random_seed = n, scale = s}."""
    n = model.n_params
    if spec is None or spec == "zeros":
        return np.zeros(n)
    if isinstance(spec, list):
        theta = np.asarray(spec, dtype=float)
        if theta.shape != (n,):
            raise ConfigError(
                f"{what}: inline vector has length {theta.size}, expected {n}"
            )
        return theta
    if isinstance(spec, dict):
        if "file" in spec:
            extra = set(spec) - {"file"}
            if extra:
                raise ConfigError(f"{what}: unknown keys {sorted(extra)}")
            try:
                loaded_model, theta = models.load_model(spec["file"])
            except (OSError, ValueError, KeyError) as e:
                raise ConfigError(f"{what}: cannot load {spec['file']}: {e}") from None
            if loaded_model != model:
                raise ConfigError(f"{what}: file {spec['file']} is for another model")
            return theta
        if "random_seed" in spec:
            extra = set(spec) - {"random_seed", "scale"}
            if extra:
                raise ConfigError(f"{what}: unknown keys {sorted(extra)}")
            scale = float(spec.get("scale", 1.0))
            rng = np.random.default_rng(int(spec["random_seed"]))
            return scale * rng.standard_normal(n)
        raise ConfigError(f"{what}: table must carry 'file' or 'random_seed'")
    raise ConfigError(f"{what}: cannot interpret {spec!r}")


def _json_dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _state_columns(model):
    if model.state_kind == "continuous":
        return [f"x{i}" for i in range(model.dims()["d"])]
    return [f"v{i}" for i in range(model.d_v)] + [f"h{i}" for i in range(model.d_h)]


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def _build_move_kernel(cfg, model):
    name = _require(cfg, "kernel.name")
    if name == "ula":
        h = _get(cfg, "kernel.h")
        if h is None:
            raise ConfigError("missing required key: kernel.h")
        try:
            return kernels.UlaKernel(model, float(h))
        except (ValueError, AttributeError) as e:
            raise ConfigError(f"bad kernel section: {e}") from None
    if name == "gibbs":
        try:
            return kernels.GibbsKernel(
                model, scan_order=_get(cfg, "kernel.scan_order", "reversed")
            )
        except ValueError as e:
            raise ConfigError(f"bad kernel section: {e}") from None
    raise ConfigError(f"unknown kernel name {name!r} (use 'ula' or 'gibbs')")


def _observable(model, theta, name):
    if name == "const_one":
        return lambda states: np.ones(smc._n_states(states))
    if name == "energy":
        return lambda states: np.atleast_1d(model.energy(theta, states))
    if name == "grad_theta_energy":
        return lambda states: np.atleast_2d(model.grad_theta(theta, states))
    if name == "visible_mean":
        if model.state_kind == "continuous":
            return lambda states: np.atleast_2d(states)
        return lambda states: np.atleast_2d(states[0])
    if name == "hidden_mean":
        if model.state_kind == "continuous":
            raise ConfigError("hidden_mean needs an RBM model")
        return lambda states: np.atleast_2d(states[1])
    raise ConfigError(
        f"unknown observable {name!r}; choose from {models.OBSERVABLE_NAMES}"
    )


def _observable_width(model, name):
    if name in ("const_one", "energy"):
        return 1
    if name == "grad_theta_energy":
        return model.n_params
    dims = model.dims()
    if name == "visible_mean":
        return dims.get("d_v", dims.get("d"))
    return dims["d_h"]


def run_sample(cfg, out_dir, threads=1):
    _check_keys(cfg, _SCHEMAS["sample"])
    model = _build_model(cfg)
    steps = int(_require(cfg, "protocol.steps"))
    if steps < 1:
        raise ConfigError("protocol.steps must be >= 1")
    theta0 = _resolve_theta(_get(cfg, "protocol.theta0", "zeros"), model, "protocol.theta0")
    theta1 = _resolve_theta(_get(cfg, "protocol.theta1", "zeros"), model, "protocol.theta1")
    kernel = _build_move_kernel(cfg, model)
    walkers = int(_get(cfg, "sample.walkers", 1000))
    tau = float(_get(cfg, "sample.ess_threshold", 0.5))
    if not (0.0 < tau <= 1.0):
        raise ConfigError("sample.ess_threshold must be in (0, 1]")
    obs_names = list(_get(cfg, "sample.observables", []))
    for name in obs_names:
        _observable(model, theta0, name)  # validate early
    seed = int(_get(cfg, "seed", 0))

    resolved = {
        "seed": seed,
        "model": {"family": model.family, **model.dims()},
        "protocol": {
            "steps": steps,
            "theta0": [float(v) for v in theta0],
            "theta1": [float(v) for v in theta1],
        },
        "kernel": dict(cfg.get("kernel", {})),
        "sample": {
            "walkers": walkers,
            "ess_threshold": tau,
            "observables": obs_names,
        },
    }

    rng = np.random.default_rng(seed)
    try:
        ens = smc.init_ensemble(model, theta0, walkers, rng)
    except ValueError as e:
        raise ConfigError(f"cannot initialize at theta0: {e}") from None

    def theta_at(k):
        return theta0 + (k / steps) * (theta1 - theta0)

    header = ["k", "ess", "log_z", "log_z_se", "resampled"]
    for name in obs_names:
        w = _observable_width(model, name)
        if w == 1:
            header += [name, f"{name}_se"]
        else:
            header += [f"{name}_{j}" for j in range(w)]
            header += [f"{name}_{j}_se" for j in range(w)]

    def record(k, ens, resampled):
        row = [
            k,
            str(float(smc.ess(ens))),
            str(float(smc.estimate_log_z(ens))),
            str(float(smc.estimate_log_z_std_error(ens))),
            int(resampled),
        ]
        theta_k = theta_at(k)
        for name in obs_names:
            est = smc.reweighted_expectation(ens, _observable(model, theta_k, name))
            vals = np.atleast_1d(est.value)
            ses = np.atleast_1d(est.std_error)
            row += [str(float(v)) for v in vals]
            row += [str(float(s)) for s in ses]
        return row

    rows = [record(0, ens, False)]
    resample_steps = []
    for k in range(steps):
        ens = smc.advance(ens, kernel, theta_at(k), theta_at(k + 1), rng)
        resampled = False
        if smc.ess(ens) < tau * walkers:
            ens = smc.systematic_resample(ens, rng)
            resampled = True
            resample_steps.append(k + 1)
        rows.append(record(k + 1, ens, resampled))

    out_dir = Path(out_dir)
    with open(out_dir / "steps.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    smc.ensemble_to_csv(out_dir / "ensemble.csv", ens, columns=_state_columns(model))
    summary = {
        "config": resolved,
        "final": smc.ensemble_summary(ens),
        "resample_steps": resample_steps,
    }
    _json_dump(out_dir / "summary.json", summary)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_train_dataset(cfg):
    path = _require(cfg, "data.path")
    kind = _get(cfg, "data.kind", "continuous")
    header = bool(_get(cfg, "data.header", False))
    try:
        return trainer.load_dataset(path, kind, header=header)
    except FileNotFoundError:
        raise ConfigError(f"dataset file not found: {path}") from None
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _train_config(cfg, model, seed):
    section = dict(cfg.get("train", {}))
    theta0_spec = section.pop("theta0", "zeros")
    theta0 = _resolve_theta(theta0_spec, model, "train.theta0")
    try:
        return trainer.TrainConfig(seed=seed, theta0=theta0, **section)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad train section: {e}") from None


def _run_contrastive(model, dataset, tc, method, k_steps, rng):
    """Matched-compute CD/PCD baseline loop; returns final theta."""
    theta = np.array(tc.theta0, dtype=float)
    kernel = trainer.build_kernel(model, tc)
    n = dataset.n_rows
    m = tc.minibatch if 0 < tc.minibatch < n else n
    persistent = None
    for _ in range(tc.steps):
        idx = rng.choice(n, size=m, replace=False) if m < n else np.arange(n)
        batch = model.states_from_rows(dataset.rows[idx])
        if method == "pcd":
            if persistent is None:
                persistent = batch
            g, persistent = trainer.pcd_gradient(
                persistent, model, theta, batch, kernel, rng
            )
        else:
            g = trainer.cd_gradient(model, theta, batch, k_steps, kernel, rng)
        norm = float(np.linalg.norm(g))
        if not np.isfinite(norm) or norm > trainer.GRAD_NORM_LIMIT:
            raise trainer.TrainingDivergedError(
                f"{method} baseline diverged (gradient norm {norm:.3g})"
            )
        theta = theta - tc.learning_rate * g
    return theta


def _bias_metric(model, dataset, theta, cfg):
    """(metric name, value, reference) for the bias-comparison table."""
    if model.family == "gaussian-mixture":
        ratio = trainer.mixture_mass_ratio(model, theta)
        truth = float(_get(cfg, "baseline.true_mass_ratio", 4.0))
        return "mode_mass_ratio", ratio, truth
    if model.family in ("bernoulli-rbm", "gaussian-rbm"):
        oracle = models.enumerate_oracle(model, theta, ["visible_mean"])
        ev = np.asarray(oracle.expectations["visible_mean"]).ravel()
        ref = dataset.rows[:, : model.d_v].mean(axis=0)
        return "visible_mean_rmse", float(np.sqrt(np.mean((ev - ref) ** 2))), 0.0
    raise ConfigError(f"no bias metric for family {model.family!r}")


def run_train(cfg, out_dir, threads=1, baseline=None):
    _check_keys(cfg, _SCHEMAS["train"])
    model = _build_model(cfg)
    dataset = _load_train_dataset(cfg)
    seed = int(_get(cfg, "seed", 0))
    tc = _train_config(cfg, model, seed)

    metrics = trainer.train(model, dataset, tc)

    out_dir = Path(out_dir)
    trainer.write_metrics_csv(out_dir / "metrics.csv", metrics)
    models.save_model(out_dir / "theta_final.json", model, metrics.theta_final)

    resolved = {
        "seed": seed,
        "model": {"family": model.family, **model.dims()},
        "data": dict(cfg.get("data", {})),
        "train": {
            "learning_rate": tc.learning_rate,
            "steps": tc.steps,
            "walkers": tc.walkers,
            "kernel": tc.kernel,
            "step_size": tc.step_size,
            "scan_order": tc.scan_order,
            "ess_threshold": tc.ess_threshold,
            "minibatch": tc.minibatch,
            "theta0": [float(v) for v in tc.theta0],
        },
        "baseline": dict(cfg.get("baseline", {})),
    }
    summary = {
        "config": resolved,
        "final_cross_entropy": float(metrics.cross_entropy[-1]),
        "final_log_z": float(metrics.log_z[-1]),
        "resample_count": int(metrics.resampled.sum()),
        "theta_file": "theta_final.json",
    }

    if baseline is not None:
        if baseline not in ("cd1", "cdk", "pcd"):
            raise ConfigError(f"unknown baseline {baseline!r} (cd1, cdk, or pcd)")
        k_steps = 1 if baseline == "cd1" else int(_get(cfg, "baseline.k_steps", 10))
        method = "pcd" if baseline == "pcd" else "cd"
        rng_b = np.random.default_rng([seed, 1])
        theta_b = _run_contrastive(model, dataset, tc, method, k_steps, rng_b)
        models.save_model(out_dir / "theta_baseline.json", model, theta_b)
        name, val_j, truth = _bias_metric(model, dataset, metrics.theta_final, cfg)
        _, val_b, _ = _bias_metric(model, dataset, theta_b, cfg)

        def rel_err(v):
            return abs(v - truth) / abs(truth) if truth != 0.0 else abs(v)

        with open(out_dir / "comparison.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "metric", "value", "reference", "rel_error"])
            writer.writerow(
                ["jarzynski", name, str(float(val_j)), str(float(truth)),
                 str(float(rel_err(val_j)))]
            )
            writer.writerow(
                [baseline, name, str(float(val_b)), str(float(truth)),
                 str(float(rel_err(val_b)))]
            )
        summary["baseline"] = {
            "method": baseline,
            "metric": name,
            "jarzynski_value": float(val_j),
            "baseline_value": float(val_b),
            "jarzynski_rel_error": float(rel_err(val_j)),
            "baseline_rel_error": float(rel_err(val_b)),
        }

    _json_dump(out_dir / "summary.json", summary)
    return EXIT_OK


# ---------------------------------------------------------------------------
# order study
# ---------------------------------------------------------------------------


def _build_path(cfg):
    kind = _get(cfg, "path.kind", "mean-shift")
    if kind == "benchmark":
        return interpolant.benchmark_path()
    if kind == "mean-shift":
        return interpolant.order_benchmark_path()
    if kind == "static":
        return interpolant.static_path(
            mean=_get(cfg, "path.mean", 0.0),
            scale=float(_get(cfg, "path.scale", 1.0)),
            dim=int(_get(cfg, "path.dim", 1)),
        )
    if kind == "smoothstep":
        return interpolant.smoothstep_path(
            _require(cfg, "path.mean_start"),
            _require(cfg, "path.mean_end"),
            float(_require(cfg, "path.scale_start")),
            float(_require(cfg, "path.scale_end")),
            dim=_get(cfg, "path.dim"),
        )
    raise ConfigError(f"unknown path kind {kind!r}")


def run_order_study(cfg, out_dir, threads=1):
    _check_keys(cfg, _SCHEMAS["order-study"])
    try:
        path = _build_path(cfg)
    except ValueError as e:
        raise ConfigError(f"bad path section: {e}") from None
    h_values = _get(cfg, "study.h_values")
    if not isinstance(h_values, list) or len(h_values) < 4:
        raise ConfigError("study.h_values must list at least 4 step sizes")
    eps = float(_get(cfg, "study.eps", 1.0))
    walkers = int(_get(cfg, "study.walkers", 4096))
    steps = _get(cfg, "study.steps")
    steps = None if steps in (None, 0) else int(steps)
    seed = int(_get(cfg, "seed", 0))

    try:
        report = interpolant.order_study(
            path,
            eps,
            h_values,
            walkers,
            steps=steps,
            seed=seed,
            threads=int(threads),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None

    out_dir = Path(out_dir)
    interpolant.write_order_study_csv(out_dir / "order_study.csv", report)
    summary = interpolant.order_study_summary(report)
    summary["config"] = {
        "seed": seed,
        "path": dict(cfg.get("path", {"kind": "mean-shift"})),
        "study": {
            "eps": eps,
            "h_values": [float(h) for h in h_values],
            "walkers": walkers,
            "steps": 0 if steps is None else steps,
        },
    }
    _json_dump(out_dir / "summary.json", summary)
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle check
# ---------------------------------------------------------------------------


class _SignFlipKernel:
    """Negative control: corrupts every weight increment's sign."""

    def __init__(self, inner):
        self.inner = inner

    def move(self, theta_k, theta_k1, states, rng):
        states, incr = self.inner.move(theta_k, theta_k1, states, rng)
        return states, -incr


def _fd_theta_grad(model, theta, states, step=1e-5):
    n = theta.size
    out = np.empty((smc._n_states(states), n))
    for j in range(n):
        up = theta.copy()
        up[j] += step
        dn = theta.copy()
        dn[j] -= step
        out[:, j] = (model.energy(up, states) - model.energy(dn, states)) / (2 * step)
    return out


def _rel_err(est, ref):
    return np.max(np.abs(est - ref) / np.maximum(1.0, np.abs(ref)))


def _check_gradients(probes, rng):
    worst = 0.0
    cases = []
    m = models.make_model("gaussian", d=3)
    cases.append((m, 0.5 * rng.standard_normal(m.n_params),
                  rng.standard_normal((probes, 3))))
    m = models.make_model("gaussian-mixture", d=2, components=2)
    cases.append((m, 0.5 * rng.standard_normal(m.n_params),
                  rng.standard_normal((probes, 2))))
    m = models.make_model("bernoulli-rbm", d_v=5, d_h=3)
    cases.append((m, 0.5 * rng.standard_normal(m.n_params),
                  ((rng.random((probes, 5)) < 0.5).astype(float),
                   (rng.random((probes, 3)) < 0.5).astype(float))))
    m = models.make_model("gaussian-rbm", d_v=4, d_h=3)
    cases.append((m, 0.3 * rng.standard_normal(m.n_params),
                  (rng.standard_normal((probes, 4)),
                   (rng.random((probes, 3)) < 0.5).astype(float))))
    for model, theta, states in cases:
        g = np.atleast_2d(model.grad_theta(theta, states))
        g_fd = _fd_theta_grad(model, theta, states)
        worst = max(worst, float(_rel_err(g, g_fd)))
        if model.state_kind == "continuous":
            x = states
            gx = np.atleast_2d(model.grad_x(theta, x))
            step = 1e-5
            gx_fd = np.empty_like(gx)
            for j in range(x.shape[1]):
                up = x.copy()
                up[:, j] += step
                dn = x.copy()
                dn[:, j] -= step
                gx_fd[:, j] = (model.energy(theta, up) - model.energy(theta, dn)) / (
                    2 * step
                )
            worst = max(worst, float(_rel_err(gx, gx_fd)))
    return worst < 1e-5, f"max rel err {worst:.3e} (tolerance 1e-5)"


def _check_detailed_balance(probes, rng):
    model = models.make_model("bernoulli-rbm", d_v=6, d_h=4)
    theta = 0.8 * rng.standard_normal(model.n_params)
    kernel = kernels.GibbsKernel(model, scan_order="reversed")
    v = (rng.random((probes, 6)) < 0.5).astype(float)
    h = (rng.random((probes, 4)) < 0.5).astype(float)
    _, incr = kernel.move(theta, theta, (v, h), rng)
    worst = float(np.max(np.abs(incr)))
    return worst < 1e-10, f"max |increment| {worst:.3e} at constant theta"


def _check_zeta_split(probes, rng):
    path = interpolant.benchmark_path()
    h, eps = 0.05, 0.7

    def u(t, x):
        return interpolant.potential_field(path, t, x)

    def b(t, x):
        return interpolant.drift_field(path, t, x)

    def s(t, x):
        return interpolant.score_field(path, t, x)

    worst = 0.0
    for _ in range(probes):
        t0, t1 = sorted(rng.random(2))
        x = 2.0 * rng.standard_normal((1, 1))
        y = 2.0 * rng.standard_normal((1, 1))
        z_fused = kernels.drifted_increment(u, b, s, t0, t1, x, y, h, eps)
        z_split = kernels.drifted_increment_split(u, b, s, t0, t1, x, y, h, eps)
        worst = max(worst, float(np.abs(z_fused - z_split)[0]))
    return worst < 1e-10, f"max |fused - split| {worst:.3e} over {probes} probes"


def _protocol_log_z(model, kernel, theta0, theta1, steps, walkers, rng, corrupt=False):
    if corrupt:
        kernel = _SignFlipKernel(kernel)
    ens = smc.init_ensemble(model, theta0, walkers, rng)
    for k in range(steps):
        tk = theta0 + (k / steps) * (theta1 - theta0)
        tk1 = theta0 + ((k + 1) / steps) * (theta1 - theta0)
        ens = smc.advance(ens, kernel, tk, tk1, rng)
        if smc.ess(ens) < 0.5 * walkers:
            ens = smc.systematic_resample(ens, rng)
    return ens


def _check_unbiasedness_bernoulli(cfg, rng, corrupt):
    d_v = int(_get(cfg, "oracle.rbm_d_v", 6))
    d_h = int(_get(cfg, "oracle.rbm_d_h", 4))
    if 2 ** (d_v + d_h) > models.MAX_ENUM_STATES:
        raise ConfigError(
            f"oracle too large: 2^{d_v + d_h} joint states exceeds the 2^24 cap"
        )
    walkers = int(_get(cfg, "oracle.walkers", 4000))
    steps = int(_get(cfg, "oracle.steps", 60))
    model = models.make_model("bernoulli-rbm", d_v=d_v, d_h=d_h)
    theta0 = np.zeros(model.n_params)
    theta1 = 0.5 * rng.standard_normal(model.n_params)
    kernel = kernels.GibbsKernel(model)
    ens = _protocol_log_z(model, kernel, theta0, theta1, steps, walkers, rng, corrupt)
    oracle = models.enumerate_oracle(model, theta1, ["grad_theta_energy"])
    log_z = smc.estimate_log_z(ens)
    log_z_se = smc.estimate_log_z_std_error(ens)
    z_ok = abs(log_z - oracle.log_z) <= 3.0 * log_z_se
    est = smc.reweighted_expectation(
        ens, lambda states: model.grad_theta(theta1, states)
    )
    ref = np.asarray(oracle.expectations["grad_theta_energy"]).ravel()
    g_ok = bool(np.all(np.abs(est.value - ref) <= 3.0 * est.std_error + 1e-12))
    detail = (
        f"log Z {log_z:.4f} vs exact {oracle.log_z:.4f} (SE {log_z_se:.4f}); "
        f"gradient max |z-score| "
        f"{float(np.max(np.abs(est.value - ref) / np.maximum(est.std_error, 1e-12))):.2f}"
    )
    return bool(z_ok and g_ok), detail


def _check_unbiasedness_gaussian_rbm(cfg, rng, corrupt):
    d_v = int(_get(cfg, "oracle.grbm_d_v", 4))
    d_h = int(_get(cfg, "oracle.grbm_d_h", 6))
    if 2**d_h > models.MAX_HIDDEN_SUM:
        raise ConfigError(
            f"oracle too large: 2^{d_h} hidden states exceeds the 2^20 cap"
        )
    walkers = int(_get(cfg, "oracle.walkers", 4000))
    steps = int(_get(cfg, "oracle.steps", 60))
    model = models.make_model("gaussian-rbm", d_v=d_v, d_h=d_h)
    theta0 = np.zeros(model.n_params)
    theta1 = 0.4 * rng.standard_normal(model.n_params)
    kernel = kernels.GibbsKernel(model)
    ens = _protocol_log_z(model, kernel, theta0, theta1, steps, walkers, rng, corrupt)
    oracle = models.enumerate_oracle(model, theta1)
    log_z = smc.estimate_log_z(ens)
    log_z_se = smc.estimate_log_z_std_error(ens)
    ok = abs(log_z - oracle.log_z) <= 3.0 * log_z_se
    return bool(ok), (
        f"log Z {log_z:.4f} vs exact {oracle.log_z:.4f} (SE {log_z_se:.4f})"
    )


def run_oracle_check(cfg, out_dir, threads=1):
    _check_keys(cfg, _SCHEMAS["oracle-check"])
    seed = int(_get(cfg, "seed", 0))
    probes = int(_get(cfg, "oracle.probes", 1000))
    corrupt = bool(_get(cfg, "debug.corrupt_increment", False))

    checks = []

    def run_check(name, fn, *args):
        passed, detail = fn(*args)
        checks.append({"name": name, "pass": bool(passed), "detail": detail})

    run_check("gradient_fd", _check_gradients, min(probes, 200),
              np.random.default_rng([seed, 11]))
    run_check("detailed_balance", _check_detailed_balance, probes,
              np.random.default_rng([seed, 12]))
    run_check("zeta_split_identity", _check_zeta_split, probes,
              np.random.default_rng([seed, 13]))
    run_check("unbiasedness_bernoulli_rbm", _check_unbiasedness_bernoulli,
              cfg, np.random.default_rng([seed, 14]), corrupt)
    run_check("unbiasedness_gaussian_rbm", _check_unbiasedness_gaussian_rbm,
              cfg, np.random.default_rng([seed, 15]), corrupt)

    all_pass = all(c["pass"] for c in checks)
    report = {
        "all_pass": all_pass,
        "checks": checks,
        "config": {
            "seed": seed,
            "oracle": dict(cfg.get("oracle", {})),
            "debug": {"corrupt_increment": corrupt},
        },
    }
    _json_dump(Path(out_dir) / "oracle_check.json", report)
    if not all_pass:
        first = next(c for c in checks if not c["pass"])
        print(f"check failed: {first['name']} ({first['detail']})", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="neqsmc",
        description="Reweighted-ensemble sampling, training, and exactness checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("sample", "train", "order-study", "oracle-check"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=1, help="worker thread cap")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (dotted path, TOML value)",
        )
        if name == "train":
            p.add_argument(
                "--baseline",
                choices=("cd1", "cdk", "pcd"),
                default=None,
                help="also run a contrastive-divergence baseline and compare",
            )
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config) if args.config else {}
        _apply_overrides(cfg, args.set)
        if args.seed is not None:
            cfg["seed"] = args.seed
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "sample":
            return run_sample(cfg, out_dir, threads=args.threads)
        if args.command == "train":
            return run_train(
                cfg, out_dir, threads=args.threads, baseline=args.baseline
            )
        if args.command == "order-study":
            return run_order_study(cfg, out_dir, threads=args.threads)
        return run_oracle_check(cfg, out_dir, threads=args.threads)
    except (ConfigError, models.OracleTooLargeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (smc.DegenerateWeightsError, trainer.TrainingDivergedError) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
