"""Energy-based model families with exact oracles.

Four families: diagonal Gaussian, diagonal Gaussian mixture, Bernoulli
restricted Boltzmann machine (RBM), and Gaussian-Bernoulli RBM.  Each
family exposes its energy U_theta, the gradients in parameters and (where
meaningful) in the state, exact reference sampling and log partition
function on an analytically tractable subfamily, and exact enumeration
oracles used as ground truth elsewhere in the package.

Parameters travel as flat float64 vectors.  Flat layouts (also the
on-disk JSON order):

- gaussian:          mean (d), log_scale (d)
- gaussian-mixture:  means (C*d, row-major), log_scales (C*d), logits (C)
- bernoulli-rbm:     W (d_v*d_h, row-major), b (d_v), c (d_h)
- gaussian-rbm:      W (d_v*d_h, row-major), b (d_v), c (d_h), log_sigma2 (d_v)

States are a real vector of length d (continuous families) or a pair
(v, h) of arrays (RBMs; h always binary, v binary or real).  Every
operation accepts a single state or a batch with a leading axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GaussianModel",
    "GaussianMixtureModel",
    "BernoulliRBM",
    "GaussianRBM",
    "OracleResult",
    "OracleTooLargeError",
    "enumerate_oracle",
    "enumerate_states",
    "sample_enumerated",
    "make_model",
    "model_to_json",
    "model_from_json",
    "save_model",
    "load_model",
    "sigmoid",
    "OBSERVABLE_NAMES",
]

LOG_2PI = float(np.log(2.0 * np.pi))

# Enumeration caps (spec'd sizes; anything larger is refused, not attempted).
MAX_ENUM_STATES = 2**24
MAX_HIDDEN_SUM = 2**20
_ENUM_CHUNK = 2**14


class OracleTooLargeError(ValueError):
    """State space exceeds the enumeration cap."""


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    # two-branch form avoids overflow for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    """log(1 + e^z), overflow-safe."""
    return np.logaddexp(0.0, np.asarray(z, dtype=np.float64))


def _bernoulli_logprob(bits, logits):
    """Sum over the last axis of log P(bit_i) with P(1) = sigmoid(logit_i)."""
    bits = np.asarray(bits, dtype=np.float64)
    # log sigma(z) = -softplus(-z); log(1-sigma(z)) = -softplus(z)
    return -(bits * _softplus(-logits) + (1.0 - bits) * _softplus(logits)).sum(axis=-1)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ValueError(f"state must be 1-d or 2-d, got shape {x.shape}")
    return x, False


def _check_binary(arr, what):
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError(f"{what} entries must be exactly 0 or 1")


def _squeeze(values, single):
    if not single:
        return values
    out = values[0]
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# model families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianModel:
    """Diagonal Gaussian: U(x) = sum_j (x_j - mean_j)^2 / (2 scale_j^2)."""

    d: int

    family = "gaussian"
    state_kind = "continuous"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")

    @property
    def n_params(self) -> int:
        return 2 * self.d

    def dims(self) -> dict:
        return {"d": self.d}

    def unpack(self, theta):
        theta = self.validate_theta(theta)
        return {"mean": theta[: self.d], "log_scale": theta[self.d :]}

    def pack(self, mean, log_scale):
        return np.concatenate(
            [np.asarray(mean, float).ravel(), np.asarray(log_scale, float).ravel()]
        )

    def validate_theta(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(
                f"theta has shape {theta.shape}, expected ({self.n_params},)"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite entries")
        return theta

    def _params(self, theta):
        seg = self.unpack(theta)
        return seg["mean"], np.exp(seg["log_scale"])

    def energy(self, theta, x):
        mean, scale = self._params(theta)
        xb, single = _as_batch(x)
        if xb.shape[1] != self.d:
            raise ValueError(f"state width {xb.shape[1]} != d={self.d}")
        u = 0.5 * (((xb - mean) / scale) ** 2).sum(axis=1)
        return _squeeze(u, single)

    def grad_x(self, theta, x):
        mean, scale = self._params(theta)
        xb, single = _as_batch(x)
        g = (xb - mean) / scale**2
        return _squeeze(g, single)

    def grad_theta(self, theta, x):
        mean, scale = self._params(theta)
        xb, single = _as_batch(x)
        z = (xb - mean) / scale
        g = np.concatenate([-z / scale, -(z**2)], axis=1)
        return _squeeze(g, single)

    def sample_reference(self, theta, n, rng):
        mean, scale = self._params(theta)
        return mean + scale * rng.standard_normal((n, self.d))

    def log_z_reference(self, theta):
        seg = self.unpack(theta)
        return 0.5 * self.d * LOG_2PI + float(seg["log_scale"].sum())

    def states_from_rows(self, rows):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape[1] != self.d:
            raise ValueError(f"row width {rows.shape[1]} != d={self.d}")
        return rows

    def rows_from_states(self, states):
        return np.asarray(states, dtype=np.float64)


@dataclass(frozen=True)
class GaussianMixtureModel:
    """Mixture of C diagonal Gaussians with softmax weights.

    U(x) = -log sum_c w_c N(x; mean_c, diag scale_c^2), w = softmax(logits).
    exp(-U) integrates to one, so the reference log Z is exactly 0; the
    family is exactly samplable at every theta (component draw + normal).
    """

    d: int
    components: int

    family = "gaussian-mixture"
    state_kind = "continuous"

    def __post_init__(self):
        if self.d < 1 or self.components < 1:
            raise ValueError("dimensions must be >= 1")

    @property
    def n_params(self) -> int:
        return 2 * self.components * self.d + self.components

    def dims(self) -> dict:
        return {"d": self.d, "components": self.components}

    def unpack(self, theta):
        theta = self.validate_theta(theta)
        cd = self.components * self.d
        return {
            "means": theta[:cd].reshape(self.components, self.d),
            "log_scales": theta[cd : 2 * cd].reshape(self.components, self.d),
            "logits": theta[2 * cd :],
        }

    def pack(self, means, log_scales, logits):
        return np.concatenate(
            [
                np.asarray(means, float).reshape(-1),
                np.asarray(log_scales, float).reshape(-1),
                np.asarray(logits, float).ravel(),
            ]
        )

    def validate_theta(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(
                f"theta has shape {theta.shape}, expected ({self.n_params},)"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite entries")
        return theta

    def _component_logdens(self, theta, xb):
        """Per-component log(w_c N_c(x)): shape (n, C)."""
        seg = self.unpack(theta)
        scales = np.exp(seg["log_scales"])  # (C, d)
        z = (xb[:, None, :] - seg["means"][None]) / scales[None]  # (n, C, d)
        log_n = (
            -0.5 * (z**2).sum(axis=2)
            - seg["log_scales"].sum(axis=1)[None]
            - 0.5 * self.d * LOG_2PI
        )
        log_w = seg["logits"] - _logsumexp_1d(seg["logits"])
        return log_n + log_w[None]

    def energy(self, theta, x):
        xb, single = _as_batch(x)
        if xb.shape[1] != self.d:
            raise ValueError(f"state width {xb.shape[1]} != d={self.d}")
        lc = self._component_logdens(theta, xb)
        m = lc.max(axis=1)
        u = -(m + np.log(np.exp(lc - m[:, None]).sum(axis=1)))
        return _squeeze(u, single)

    def _responsibilities(self, theta, xb):
        lc = self._component_logdens(theta, xb)
        lc -= lc.max(axis=1, keepdims=True)
        r = np.exp(lc)
        r /= r.sum(axis=1, keepdims=True)
        return r

    def grad_x(self, theta, x):
        seg = self.unpack(theta)
        scales = np.exp(seg["log_scales"])
        xb, single = _as_batch(x)
        r = self._responsibilities(theta, xb)
        pull = (xb[:, None, :] - seg["means"][None]) / scales[None] ** 2
        return _squeeze((r[:, :, None] * pull).sum(axis=1), single)

    def grad_theta(self, theta, x):
        seg = self.unpack(theta)
        scales = np.exp(seg["log_scales"])
        xb, single = _as_batch(x)
        n = xb.shape[0]
        r = self._responsibilities(theta, xb)  # (n, C)
        z = (xb[:, None, :] - seg["means"][None]) / scales[None]  # (n, C, d)
        g_means = -(r[:, :, None] * z / scales[None]).reshape(n, -1)
        g_logsc = -(r[:, :, None] * (z**2 - 1.0)).reshape(n, -1)
        w = np.exp(seg["logits"] - _logsumexp_1d(seg["logits"]))
        g_logits = -(r - w[None])
        return _squeeze(np.concatenate([g_means, g_logsc, g_logits], axis=1), single)

    def sample_reference(self, theta, n, rng):
        seg = self.unpack(theta)
        w = np.exp(seg["logits"] - _logsumexp_1d(seg["logits"]))
        w = w / w.sum()
        idx = rng.choice(self.components, size=n, p=w)
        scales = np.exp(seg["log_scales"])
        return seg["means"][idx] + scales[idx] * rng.standard_normal((n, self.d))

    def log_z_reference(self, theta):
        self.validate_theta(theta)
        return 0.0

    def states_from_rows(self, rows):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape[1] != self.d:
            raise ValueError(f"row width {rows.shape[1]} != d={self.d}")
        return rows

    def rows_from_states(self, states):
        return np.asarray(states, dtype=np.float64)


def _logsumexp_1d(v):
    m = v.max()
    return m + np.log(np.exp(v - m).sum())


class _RBMBase:
    """Shared plumbing for the two bipartite families."""

    def dims(self) -> dict:
        return {"d_v": self.d_v, "d_h": self.d_h}

    def validate_theta(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(
                f"theta has shape {theta.shape}, expected ({self.n_params},)"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite entries")
        return theta

    def _state_batch(self, state):
        v, h = state
        vb, single_v = _as_batch(v)
        hb, single_h = _as_batch(h)
        if vb.shape[1] != self.d_v or hb.shape[1] != self.d_h:
            raise ValueError(
                f"state widths ({vb.shape[1]},{hb.shape[1]}) != "
                f"({self.d_v},{self.d_h})"
            )
        if vb.shape[0] != hb.shape[0]:
            raise ValueError("v and h batch sizes differ")
        _check_binary(hb, "hidden")
        return vb, hb, single_v and single_h

    def states_from_rows(self, rows):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape[1] != self.d_v + self.d_h:
            raise ValueError(
                f"row width {rows.shape[1]} != d_v+d_h={self.d_v + self.d_h}"
            )
        return rows[:, : self.d_v].copy(), rows[:, self.d_v :].copy()

    def rows_from_states(self, states):
        v, h = states
        return np.concatenate([np.atleast_2d(v), np.atleast_2d(h)], axis=1)


@dataclass(frozen=True)
class BernoulliRBM(_RBMBase):
    """Binary RBM: U(v,h) = -b.v - c.h - v^T W h."""

    d_v: int
    d_h: int

    family = "bernoulli-rbm"
    state_kind = "binary"

    def __post_init__(self):
        if self.d_v < 1 or self.d_h < 1:
            raise ValueError("dimensions must be >= 1")

    @property
    def n_params(self) -> int:
        return self.d_v * self.d_h + self.d_v + self.d_h

    def unpack(self, theta):
        theta = self.validate_theta(theta)
        nw = self.d_v * self.d_h
        return {
            "W": theta[:nw].reshape(self.d_v, self.d_h),
            "b": theta[nw : nw + self.d_v],
            "c": theta[nw + self.d_v :],
        }

    def pack(self, W, b, c):
        return np.concatenate(
            [
                np.asarray(W, float).reshape(-1),
                np.asarray(b, float).ravel(),
                np.asarray(c, float).ravel(),
            ]
        )

    def energy(self, theta, state):
        seg = self.unpack(theta)
        vb, hb, single = self._state_batch(state)
        _check_binary(vb, "visible")
        u = -(vb @ seg["b"]) - (hb @ seg["c"]) - ((vb @ seg["W"]) * hb).sum(axis=1)
        return _squeeze(u, single)

    def grad_theta(self, theta, state):
        self.validate_theta(theta)
        vb, hb, single = self._state_batch(state)
        _check_binary(vb, "visible")
        n = vb.shape[0]
        g_w = -(vb[:, :, None] * hb[:, None, :]).reshape(n, -1)
        return _squeeze(np.concatenate([g_w, -vb, -hb], axis=1), single)

    def conditional_hidden(self, theta, v):
        """P(h_i = 1 | v), exact under the energy."""
        seg = self.unpack(theta)
        vb, single = _as_batch(v)
        return _squeeze(sigmoid(seg["c"] + vb @ seg["W"]), single)

    def conditional_visible(self, theta, h):
        """P(v_j = 1 | h), exact under the energy."""
        seg = self.unpack(theta)
        hb, single = _as_batch(h)
        return _squeeze(sigmoid(seg["b"] + hb @ seg["W"].T), single)

    def _require_factorized(self, theta):
        seg = self.unpack(theta)
        if np.any(seg["W"] != 0.0):
            raise ValueError("reference sampling needs W = 0 (factorized subfamily)")
        return seg

    def sample_reference(self, theta, n, rng):
        seg = self._require_factorized(theta)
        v = (rng.random((n, self.d_v)) < sigmoid(seg["b"])).astype(np.float64)
        h = (rng.random((n, self.d_h)) < sigmoid(seg["c"])).astype(np.float64)
        return v, h

    def log_z_reference(self, theta):
        seg = self._require_factorized(theta)
        return float(_softplus(seg["b"]).sum() + _softplus(seg["c"]).sum())


@dataclass(frozen=True)
class GaussianRBM(_RBMBase):
    """Gaussian-Bernoulli RBM.

    U(v,h) = sum_a (v_a - b_a)^2 / (2 sigma_a^2) - c.h
             - sum_{a,i} (v_a / sigma_a) W_{ai} h_i

    Visible units are real, hidden units binary; variances are carried as
    log sigma^2 so they stay positive under gradient descent.
    """

    d_v: int
    d_h: int

    family = "gaussian-rbm"
    state_kind = "hybrid"

    def __post_init__(self):
        if self.d_v < 1 or self.d_h < 1:
            raise ValueError("dimensions must be >= 1")

    @property
    def n_params(self) -> int:
        return self.d_v * self.d_h + 2 * self.d_v + self.d_h

    def unpack(self, theta):
        theta = self.validate_theta(theta)
        nw = self.d_v * self.d_h
        return {
            "W": theta[:nw].reshape(self.d_v, self.d_h),
            "b": theta[nw : nw + self.d_v],
            "c": theta[nw + self.d_v : nw + self.d_v + self.d_h],
            "log_sigma2": theta[nw + self.d_v + self.d_h :],
        }

    def pack(self, W, b, c, log_sigma2):
        return np.concatenate(
            [
                np.asarray(W, float).reshape(-1),
                np.asarray(b, float).ravel(),
                np.asarray(c, float).ravel(),
                np.asarray(log_sigma2, float).ravel(),
            ]
        )

    def _params(self, theta):
        seg = self.unpack(theta)
        sigma = np.exp(0.5 * seg["log_sigma2"])
        return seg, sigma

    def energy(self, theta, state):
        seg, sigma = self._params(theta)
        vb, hb, single = self._state_batch(state)
        dv = (vb - seg["b"]) / sigma
        u = (
            0.5 * (dv**2).sum(axis=1)
            - hb @ seg["c"]
            - (((vb / sigma) @ seg["W"]) * hb).sum(axis=1)
        )
        return _squeeze(u, single)

    def grad_theta(self, theta, state):
        seg, sigma = self._params(theta)
        vb, hb, single = self._state_batch(state)
        n = vb.shape[0]
        wh = hb @ seg["W"].T  # (n, d_v)
        g_w = -((vb / sigma)[:, :, None] * hb[:, None, :]).reshape(n, -1)
        g_b = -(vb - seg["b"]) / sigma**2
        g_c = -hb
        g_ls = -((vb - seg["b"]) ** 2) / (2.0 * sigma**2) + vb * wh / (2.0 * sigma)
        return _squeeze(np.concatenate([g_w, g_b, g_c, g_ls], axis=1), single)

    def grad_x(self, theta, state):
        """Gradient of the energy in the (continuous) visible block."""
        seg, sigma = self._params(theta)
        vb, hb, single = self._state_batch(state)
        wh = hb @ seg["W"].T
        return _squeeze((vb - seg["b"]) / sigma**2 - wh / sigma, single)

    def conditional_hidden(self, theta, v):
        """P(h_i = 1 | v), exact under the energy."""
        seg, sigma = self._params(theta)
        vb, single = _as_batch(v)
        return _squeeze(sigmoid(seg["c"] + (vb / sigma) @ seg["W"]), single)

    def conditional_visible(self, theta, h):
        """Gibbs-scan visible law: mean b + W h, variance sigma^2.

        This is the kernel's conditional, a normalized Gaussian for every
        theta; it coincides with the energy's exact conditional
        (mean b + sigma*(W h)) when sigma = 1.
        """
        seg, sigma = self._params(theta)
        hb, single = _as_batch(h)
        _check_binary(hb, "hidden")
        mean = seg["b"] + hb @ seg["W"].T
        var = np.broadcast_to(sigma**2, mean.shape).copy()
        if single:
            return mean[0], var[0]
        return mean, var

    def _require_factorized(self, theta):
        seg, sigma = self._params(theta)
        if np.any(seg["W"] != 0.0):
            raise ValueError("reference sampling needs W = 0 (factorized subfamily)")
        return seg, sigma

    def sample_reference(self, theta, n, rng):
        seg, sigma = self._require_factorized(theta)
        v = seg["b"] + sigma * rng.standard_normal((n, self.d_v))
        h = (rng.random((n, self.d_h)) < sigmoid(seg["c"])).astype(np.float64)
        return v, h

    def log_z_reference(self, theta):
        seg, sigma = self._require_factorized(theta)
        gauss = 0.5 * self.d_v * LOG_2PI + np.log(sigma).sum()
        return float(gauss + _softplus(seg["c"]).sum())


# ---------------------------------------------------------------------------
# exact oracles
# ---------------------------------------------------------------------------


@dataclass
class OracleResult:
    log_z: float
    expectations: dict = field(default_factory=dict)


OBSERVABLE_NAMES = ("const_one", "energy", "grad_theta_energy", "visible_mean", "hidden_mean")


def _observable_fn(model, theta, name):
    if callable(name):
        return name
    if name == "const_one":
        return lambda v, h: np.ones((v.shape[0], 1))
    if name == "energy":
        return lambda v, h: model.energy(theta, (v, h))[:, None]
    if name == "grad_theta_energy":
        return lambda v, h: model.grad_theta(theta, (v, h))
    if name == "visible_mean":
        return lambda v, h: v
    if name == "hidden_mean":
        return lambda v, h: h
    raise ValueError(f"unknown observable {name!r}")


def _bit_patterns(n_bits):
    idx = np.arange(2**n_bits, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n_bits)[None, :]) & 1).astype(np.float64)


def _bit_chunks(n_bits, chunk=_ENUM_CHUNK):
    total = 2**n_bits
    shifts = np.arange(n_bits)[None, :]
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        yield ((idx[:, None] >> shifts) & 1).astype(np.float64)


def enumerate_oracle(model, theta, observables=()):
    """Exact log Z and exact expectations by state-space summation.

    Bernoulli RBM: brute force over all 2^(d_v+d_h) joint states (capped
    at 2^24).  Gaussian RBM: sum over 2^d_h hidden states with the
    Gaussian integral over v done analytically per hidden state (capped
    at 2^20); only named observables are supported there because each
    needs its own analytic conditional moment.

    All mass arithmetic is in the log domain with max subtraction.
    """
    if model.family == "bernoulli-rbm":
        return _enumerate_bernoulli(model, theta, observables)
    if model.family == "gaussian-rbm":
        return _enumerate_gaussian_rbm(model, theta, observables)
    raise ValueError(f"no enumeration oracle for family {model.family!r}")


def _enumerate_bernoulli(model, theta, observables):
    n_bits = model.d_v + model.d_h
    if 2**n_bits > MAX_ENUM_STATES:
        raise OracleTooLargeError(
            f"oracle too large: 2^{n_bits} states exceeds the 2^24 cap"
        )
    theta = model.validate_theta(theta)
    dv = model.d_v

    # pass 1: global max of -U for safe exponentials
    m = -np.inf
    for bits in _bit_chunks(n_bits):
        u = model.energy(theta, (bits[:, :dv], bits[:, dv:]))
        m = max(m, float((-u).max()))

    fns = [(name, _observable_fn(model, theta, name)) for name in observables]
    total = 0.0
    sums = [None] * len(fns)
    for bits in _bit_chunks(n_bits):
        v, h = bits[:, :dv], bits[:, dv:]
        w = np.exp(-model.energy(theta, (v, h)) - m)
        total += float(w.sum())
        for i, (_, fn) in enumerate(fns):
            contrib = w @ np.atleast_2d(fn(v, h))
            sums[i] = contrib if sums[i] is None else sums[i] + contrib

    log_z = m + float(np.log(total))
    expectations = {
        (name if isinstance(name, str) else getattr(name, "__name__", "custom")): s / total
        for (name, _), s in zip(fns, sums)
    }
    return OracleResult(log_z=log_z, expectations=expectations)


def _enumerate_gaussian_rbm(model, theta, observables):
    if 2**model.d_h > MAX_HIDDEN_SUM:
        raise OracleTooLargeError(
            f"oracle too large: 2^{model.d_h} hidden states exceeds the 2^20 cap"
        )
    for name in observables:
        if not isinstance(name, str):
            raise ValueError("gaussian-rbm oracle supports named observables only")
    seg = model.unpack(theta)
    sigma = np.exp(0.5 * seg["log_sigma2"])
    b, c, W = seg["b"], seg["c"], seg["W"]

    h_all = _bit_patterns(model.d_h)  # (2^d_h, d_h)
    m_all = h_all @ W.T  # (2^d_h, d_v); m = (W h) per hidden state
    # log of integral over v of exp(-U(v,h)) for fixed h
    log_i = (
        h_all @ c
        + (0.5 * LOG_2PI + np.log(sigma)).sum()
        + (b / sigma * m_all).sum(axis=1)
        + 0.5 * (m_all**2).sum(axis=1)
    )
    mx = log_i.max()
    p = np.exp(log_i - mx)
    total = p.sum()
    log_z = float(mx + np.log(total))
    p = p / total

    # exact conditional moments given h: E[v|h] = b + sigma*m, Var = sigma^2
    expectations = {}
    for name in observables:
        if name == "const_one":
            val = np.array([1.0])
        elif name == "hidden_mean":
            val = p @ h_all
        elif name == "visible_mean":
            val = b + sigma * (p @ m_all)
        elif name == "energy":
            per_h = (0.5 - 0.5 * m_all**2 - (b / sigma) * m_all).sum(axis=1) - h_all @ c
            val = np.array([float(p @ per_h)])
        elif name == "grad_theta_energy":
            q = b / sigma + m_all  # E[v|h]/sigma, shape (2^d_h, d_v)
            g_w = -np.einsum("n,nj,ni->ji", p, q, h_all).reshape(-1)
            g_b = -(p @ m_all) / sigma
            g_c = -(p @ h_all)
            g_ls = -0.5 + (b / (2.0 * sigma)) * (p @ m_all)
            val = np.concatenate([g_w, g_b, g_c, g_ls])
        else:
            raise ValueError(f"unknown observable {name!r} for gaussian-rbm oracle")
        expectations[name] = val
    return OracleResult(log_z=log_z, expectations=expectations)


def enumerate_states(model, theta):
    """Full joint table (v_all, h_all, log_p) for small Bernoulli machines.

    Feeds conditional-probability cross-checks and exact joint sampling;
    refuses machines above 2^20 states since the table is materialized.
    """
    if model.family != "bernoulli-rbm":
        raise ValueError("state table only defined for bernoulli-rbm")
    n_bits = model.d_v + model.d_h
    if 2**n_bits > MAX_HIDDEN_SUM:
        raise OracleTooLargeError(f"state table too large: 2^{n_bits} states")
    bits = _bit_patterns(n_bits)
    v, h = bits[:, : model.d_v], bits[:, model.d_v :]
    neg_u = -model.energy(model.validate_theta(theta), (v, h))
    m = neg_u.max()
    log_z = m + np.log(np.exp(neg_u - m).sum())
    return v, h, neg_u - log_z


def sample_enumerated(model, theta, n, rng):
    """Exact joint draws from a small Bernoulli RBM via the full table."""
    v_all, h_all, log_p = enumerate_states(model, theta)
    p = np.exp(log_p)
    p = p / p.sum()
    idx = rng.choice(len(p), size=n, p=p)
    return v_all[idx], h_all[idx]


# ---------------------------------------------------------------------------
# descriptors and serialization
# ---------------------------------------------------------------------------

_FAMILIES = {
    "gaussian": GaussianModel,
    "gaussian-mixture": GaussianMixtureModel,
    "bernoulli-rbm": BernoulliRBM,
    "gaussian-rbm": GaussianRBM,
}


def make_model(family, **dims):
    if family not in _FAMILIES:
        raise ValueError(
            f"unknown family {family!r}; expected one of {sorted(_FAMILIES)}"
        )
    return _FAMILIES[family](**dims)


def model_to_json(model, theta):
    theta = model.validate_theta(theta)
    return {
        "family": model.family,
        "dims": model.dims(),
        "theta": [float(t) for t in theta],
    }


def model_from_json(doc):
    extra = set(doc) - {"family", "dims", "theta"}
    if extra:
        raise ValueError(f"unexpected keys in model document: {sorted(extra)}")
    model = make_model(doc["family"], **doc["dims"])
    theta = model.validate_theta(np.asarray(doc["theta"], dtype=np.float64))
    return model, theta


def save_model(path, model, theta):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(model, theta), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_json(json.load(fh))
