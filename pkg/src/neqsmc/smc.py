"""Walker ensemble with Jarzynski log-weights.

An ensemble of N walkers (x_i, a_i) tracks a time-dependent target: each
`advance` moves every walker with a transition kernel and adds the exact
one-step increment to its log-weight, so that at step k

    E[e^{a}] = Z_{theta_k} / Z_{theta_0}

holds exactly for any step size.  Reweighted ensemble averages are then
unbiased estimators of expectations under theta_k, and
log-mean-exp of the weights tracks the running log partition-function
ratio (a discrete Jarzynski equality).

Resampling resets the weights while absorbing their log-mean into
`log_z_resample_offset`, keeping `estimate_log_z` bit-identical across
the event.  If the weights have already collapsed (ESS below
1 + 1e-9 N) the resampler aborts with `DegenerateWeightsError` instead:
a collapsed ensemble signals a protocol too aggressive to rescue.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from typing import Any

import numpy as np

__all__ = [
    "Walker",
    "Ensemble",
    "WeightedEstimate",
    "DegenerateWeightsError",
    "init_ensemble",
    "advance",
    "reweighted_expectation",
    "estimate_log_z",
    "estimate_log_z_std_error",
    "ess",
    "systematic_resample",
    "log_mean_exp",
    "ensemble_to_csv",
    "ensemble_summary",
]


class DegenerateWeightsError(RuntimeError):
    """Raised when the weight distribution has collapsed onto ~one walker."""


def _n_states(states):
    if isinstance(states, tuple):
        return states[0].shape[0]
    return states.shape[0]


def _take(states, idx):
    if isinstance(states, tuple):
        return tuple(np.array(s[idx]) for s in states)
    return np.array(states[idx])


def _state_rows(states):
    if isinstance(states, tuple):
        return np.concatenate([np.atleast_2d(s) for s in states], axis=1)
    return np.atleast_2d(states)


@dataclass
class Walker:
    """One walker: position and Jarzynski log-weight."""

    x: Any
    a: float


@dataclass
class Ensemble:
    """N walkers stored as batched arrays.

    `states` is either an (N, d) array or a tuple of such arrays (RBM
    visible/hidden blocks).  `log_z_ref` is log Z at the initial
    parameters; `log_z_resample_offset` accumulates the log-mean weight
    absorbed at each resampling event; `log_z_var_acc` accumulates the
    matching delta-method variance contributions so the reported
    standard error survives resampling too.
    """

    states: Any
    log_weights: np.ndarray
    log_z_ref: float = 0.0
    log_z_resample_offset: float = 0.0
    step_count: int = 0
    log_z_var_acc: float = 0.0
    n_resamples: int = 0

    def __post_init__(self):
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        n = _n_states(self.states)
        if n < 2:
            raise ValueError("ensemble needs at least 2 walkers")
        if self.log_weights.shape != (n,):
            raise ValueError("log_weights must be one value per walker")

    @property
    def n_walkers(self) -> int:
        return _n_states(self.states)

    @property
    def walkers(self):
        """Materialize the per-walker view (copies; for inspection, not hot loops)."""
        return [
            Walker(x=_take(self.states, i), a=float(self.log_weights[i]))
            for i in range(self.n_walkers)
        ]


@dataclass
class WeightedEstimate:
    """Self-normalized estimate with its effective-sample-size context."""

    value: Any
    ess: float
    n_effective_fraction: float
    std_error: Any


def log_mean_exp(values):
    """log((1/N) sum exp(v_i)) with the max subtracted first.

    Exact (returns the common value) for constant input; [1000, 1000]
    evaluates without overflow.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("log_mean_exp of empty list")
    m = float(np.max(v))
    if m == -np.inf:
        return -np.inf
    return m + float(np.log(np.mean(np.exp(v - m))))


def _normalized_weights(log_weights):
    m = float(np.max(log_weights))
    if m == -np.inf or not np.isfinite(m):
        raise DegenerateWeightsError("all log-weights are -inf or non-finite")
    w = np.exp(log_weights - m)
    return w / w.sum()


def _ess_logw(log_weights) -> float:
    a = np.asarray(log_weights, dtype=float)
    m = float(np.max(a))
    if m == -np.inf:
        return 0.0
    w = np.exp(a - m)
    s1 = w.sum()
    s2 = (w**2).sum()
    return float(s1 * s1 / s2)


def ess(ensemble) -> float:
    """(sum e^a)^2 / sum e^{2a}, in [1, N]; N exactly for uniform weights."""
    return _ess_logw(ensemble.log_weights)


def init_ensemble(model, theta0, n_walkers, rng) -> Ensemble:
    """Exact draws from the analytic subfamily at theta0, all weights zero."""
    if n_walkers < 2:
        raise ValueError("need at least 2 walkers")
    states = model.sample_reference(theta0, n_walkers, rng)
    return Ensemble(
        states=states,
        log_weights=np.zeros(n_walkers),
        log_z_ref=float(model.log_z_reference(theta0)),
    )


def advance(ensemble, kernel, theta_k, theta_k1, rng) -> Ensemble:
    """Move every walker with the step-k kernel and apply the exact
    log-weight increment for the (theta_k, theta_{k+1}) pair."""
    new_states, incr = kernel.move(theta_k, theta_k1, ensemble.states, rng)
    incr = np.asarray(incr, dtype=float)
    bad = ~np.isfinite(incr)
    if bad.any():
        i = int(np.nonzero(bad)[0][0])
        raise ValueError(
            f"non-finite weight increment for walker {i} "
            f"at step {ensemble.step_count}"
        )
    return dataclasses.replace(
        ensemble,
        states=new_states,
        log_weights=ensemble.log_weights + incr,
        step_count=ensemble.step_count + 1,
    )


def reweighted_expectation(ensemble, f) -> WeightedEstimate:
    """Self-normalized weighted average of f over the ensemble.

    f takes the batched states and returns (N,) or (N, m).  Standard
    errors come from the delta method on the ratio estimator; for f = 1
    the value is exactly 1 with zero error.
    """
    wbar = _normalized_weights(ensemble.log_weights)
    vals = np.asarray(f(ensemble.states), dtype=float)
    scalar = vals.ndim == 1
    vmat = vals[:, None] if scalar else vals
    if vmat.shape[0] != ensemble.n_walkers:
        raise ValueError("observable must return one row per walker")
    value = wbar @ vmat
    resid = vmat - value
    se = np.sqrt((wbar[:, None] ** 2 * resid**2).sum(axis=0))
    n_eff = _ess_logw(ensemble.log_weights)
    frac = n_eff / ensemble.n_walkers
    if scalar:
        return WeightedEstimate(float(value[0]), n_eff, frac, float(se[0]))
    return WeightedEstimate(value, n_eff, frac, se)


def estimate_log_z(ensemble) -> float:
    """log_z_ref + resample offset + log-mean-exp of the current weights.

    The grouping (offset + log_mean_exp) is the same expression the
    resampler folds into the offset, which is what makes the estimate
    bit-identical across a resampling event.
    """
    lme = log_mean_exp(ensemble.log_weights)
    if lme == -np.inf:
        raise DegenerateWeightsError("all log-weights are -inf")
    return float(ensemble.log_z_ref + (ensemble.log_z_resample_offset + lme))


def _log_z_var_current(log_weights) -> float:
    # delta method for log of the mean weight, current segment only
    a = np.asarray(log_weights, dtype=float)
    n = a.size
    w = np.exp(a - float(np.max(a)))
    mean = w.mean()
    if mean == 0.0:
        return np.inf
    return float(np.var(w, ddof=1) / (n * mean * mean))


def estimate_log_z_std_error(ensemble) -> float:
    """Delta-method standard error of estimate_log_z, including the
    variance contributions accumulated at past resampling events."""
    return float(np.sqrt(ensemble.log_z_var_acc + _log_z_var_current(ensemble.log_weights)))


def systematic_resample(ensemble, rng) -> Ensemble:
    """Draw N offspring by systematic resampling and reset the weights.

    One uniform u places the comb (i + u)/N over the cumulative
    normalized weights.  The log-mean of the old weights moves into
    log_z_resample_offset (and its variance into log_z_var_acc), so
    estimate_log_z does not change.
    """
    n = ensemble.n_walkers
    if _ess_logw(ensemble.log_weights) < 1.0 + 1e-9 * n:
        raise DegenerateWeightsError(
            "weights collapsed onto a single walker; protocol too aggressive "
            "(shrink the per-step parameter change or add walkers)"
        )
    wbar = _normalized_weights(ensemble.log_weights)
    positions = (np.arange(n) + rng.random()) / n
    cum = np.cumsum(wbar)
    cum[-1] = 1.0  # guard against roundoff exclusion of the last slot
    idx = np.searchsorted(cum, positions, side="right")
    idx = np.minimum(idx, n - 1)
    return dataclasses.replace(
        ensemble,
        states=_take(ensemble.states, idx),
        log_weights=np.zeros(n),
        log_z_resample_offset=ensemble.log_z_resample_offset
        + log_mean_exp(ensemble.log_weights),
        log_z_var_acc=ensemble.log_z_var_acc
        + _log_z_var_current(ensemble.log_weights),
        n_resamples=ensemble.n_resamples + 1,
    )


def ensemble_to_csv(path, ensemble, columns=None):
    """Write a snapshot: walker index, state components, log-weight."""
    rows = _state_rows(ensemble.states)
    if columns is None:
        columns = [f"x{i}" for i in range(rows.shape[1])]
    if len(columns) != rows.shape[1]:
        raise ValueError("column names do not match state width")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["walker", *columns, "a"])
        for i in range(rows.shape[0]):
            writer.writerow(
                [i, *(str(float(x)) for x in rows[i]), str(float(ensemble.log_weights[i]))]
            )


def ensemble_summary(ensemble) -> dict:
    """JSON-ready summary of the current ensemble."""
    return {
        "k": int(ensemble.step_count),
        "n_walkers": int(ensemble.n_walkers),
        "ess": float(ess(ensemble)),
        "log_z": float(estimate_log_z(ensemble)),
        "log_z_std_error": float(estimate_log_z_std_error(ensemble)),
        "n_resamples": int(ensemble.n_resamples),
    }
