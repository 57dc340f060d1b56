"""Time-indexed Markov transition kernels with exact move log-densities.

Three kernel types drive the walker ensemble:

- ULA: ``x' = x - h grad U_theta(x) + sqrt(2h) xi``
- drifted (flow fields b, s): ``x' = x + h (b + eps s)(t, x) + sqrt(2 h eps) xi``
- Gibbs scans for the two RBM families (hidden block, then visible block)

Each kernel supplies a sampling step, the exact log-density of any
proposed move, and the fused one-step log-weight increment of the
ensemble recursion

    a' = a + U_k(x) - U_{k+1}(x') + log pi_{k+1}(x' -> x) - log pi_k(x -> x'),

where the move x -> x' is made under the step-k kernel and the reverse
factor is evaluated under the step-(k+1) kernel.  The reverse factor may
be any kernel normalized in its target argument; the increment is exact
(unbiased Z-ratio and expectations) for every step size.  All
log-densities here are written ``log pi(from -> to)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .models import LOG_2PI, _as_batch, _bernoulli_logprob, _check_binary

__all__ = [
    "MoveRecord",
    "UlaKernel",
    "GibbsKernel",
    "DriftedKernel",
    "ula_step",
    "ula_log_density",
    "ula_work_term",
    "ula_increment",
    "drifted_step",
    "drifted_log_forward",
    "drifted_log_backward",
    "drifted_forward_term",
    "drifted_backward_term",
    "drifted_increment",
    "drifted_increment_split",
    "gibbs_step",
    "gibbs_log_density",
    "gibbs_reverse_log_density",
    "gibbs_gauss_step",
    "gibbs_gauss_log_density",
    "gibbs_gauss_reverse_log_density",
]

@dataclass
class MoveRecord:
    """One sampled transition with its exact forward/reverse log-densities."""

    from_state: Any
    to_state: Any
    log_forward: Any
    log_reverse: Any
    time_index: int = 0


# ---------------------------------------------------------------------------
# ULA
# ---------------------------------------------------------------------------


def ula_step(model, theta, x, h, rng, xi=None):
    """One unadjusted-Langevin step under grad U_theta.

    `xi` overrides the Gaussian draw (zero array gives the deterministic
    drift-only map, used by debugging tests).
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    xb, single = _as_batch(x)
    g = np.atleast_2d(model.grad_x(theta, xb))
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite energy gradient in ULA step")
    if xi is None:
        xi = rng.standard_normal(xb.shape)
    out = xb - h * g + np.sqrt(2.0 * h) * xi
    return out[0] if single else out


def ula_log_density(model, theta, x_from, x_to, h):
    """log pi(from -> to): Gaussian, mean from - h grad U(from), covariance 2h I."""
    fb, single_f = _as_batch(x_from)
    tb, single_t = _as_batch(x_to)
    d = fb.shape[1]
    resid = tb - fb + h * np.atleast_2d(model.grad_x(theta, fb))
    out = -0.5 * d * np.log(4.0 * np.pi * h) - (resid**2).sum(axis=1) / (4.0 * h)
    return float(out[0]) if (single_f and single_t) else out


def ula_work_term(model, theta, x, y, h):
    """One-sided piece of the ULA weight increment.

    U(x) + (1/2)(y - x).grad U(x) + (h/4)|grad U(x)|^2; the increment for
    the move x -> y under (theta_k, theta_{k+1}) is the forward term at
    (theta_k, x, y) minus the same term at (theta_{k+1}, y, x).
    """
    xb, single_x = _as_batch(x)
    yb, single_y = _as_batch(y)
    g = np.atleast_2d(model.grad_x(theta, xb))
    u = np.atleast_1d(model.energy(theta, xb))
    out = u + 0.5 * ((yb - xb) * g).sum(axis=1) + 0.25 * h * (g**2).sum(axis=1)
    return float(out[0]) if (single_x and single_y) else out


def ula_increment(model, theta_k, theta_k1, x, y, h):
    """Fused log-weight increment for the ULA move x -> y."""
    return ula_work_term(model, theta_k, x, y, h) - ula_work_term(
        model, theta_k1, y, x, h
    )


@dataclass(frozen=True)
class UlaKernel:
    """ULA kernel bound to a continuous-state model and step size h."""

    model: Any
    h: float

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be > 0")
        if getattr(self.model, "state_kind", None) != "continuous":
            raise ValueError("ULA kernel requires a continuous-state model")

    def energy(self, theta, x):
        return self.model.energy(theta, x)

    def propagate(self, theta, x, rng):
        return ula_step(self.model, theta, x, self.h, rng)

    def log_forward(self, theta, x_from, x_to):
        return ula_log_density(self.model, theta, x_from, x_to, self.h)

    def log_reverse(self, theta, x_from, x_to):
        # reverse evaluation uses the same ULA form at the given theta
        return ula_log_density(self.model, theta, x_from, x_to, self.h)

    def move(self, theta_k, theta_k1, x, rng):
        x_new = ula_step(self.model, theta_k, x, self.h, rng)
        incr = ula_increment(self.model, theta_k, theta_k1, x, x_new, self.h)
        return x_new, incr


# ---------------------------------------------------------------------------
# drifted kernel (flow drift b plus score s at noise scale eps)
# ---------------------------------------------------------------------------


def drifted_step(b, s, t, x, h, eps, rng, xi=None):
    """Euler-Maruyama step x' = x + h (b + eps s)(t, x) + sqrt(2 h eps) xi."""
    if h <= 0 or eps <= 0:
        raise ValueError("h and eps must be > 0")
    xb, single = _as_batch(x)
    field = np.atleast_2d(b(t, xb)) + eps * np.atleast_2d(s(t, xb))
    if not np.all(np.isfinite(field)):
        raise ValueError("non-finite drift/score field in drifted step")
    if xi is None:
        xi = rng.standard_normal(xb.shape)
    out = xb + h * field + np.sqrt(2.0 * h * eps) * xi
    return out[0] if single else out


def _drifted_log_density(b, s, t, x_from, x_to, h, eps, sign):
    fb, single_f = _as_batch(x_from)
    tb, single_t = _as_batch(x_to)
    d = fb.shape[1]
    mean = fb + h * (sign * np.atleast_2d(b(t, fb)) + eps * np.atleast_2d(s(t, fb)))
    out = -0.5 * d * np.log(4.0 * np.pi * h * eps) - ((tb - mean) ** 2).sum(
        axis=1
    ) / (4.0 * h * eps)
    return float(out[0]) if (single_f and single_t) else out


def drifted_log_forward(b, s, t, x_from, x_to, h, eps):
    """log of the forward kernel: mean from + h(b + eps s), covariance 2 h eps I."""
    return _drifted_log_density(b, s, t, x_from, x_to, h, eps, +1.0)


def drifted_log_backward(b, s, t, x_from, x_to, h, eps):
    """log of the backward kernel: same with the drift sign flipped (-b + eps s)."""
    return _drifted_log_density(b, s, t, x_from, x_to, h, eps, -1.0)


def _field_term(U, b, s, t, x, y, h, eps, sign):
    xb, single_x = _as_batch(x)
    yb, single_y = _as_batch(y)
    f = sign * np.atleast_2d(b(t, xb)) + eps * np.atleast_2d(s(t, xb))
    u = np.atleast_1d(U(t, xb))
    out = (
        u
        - ((yb - xb) * f).sum(axis=1) / (2.0 * eps)
        + h * (f**2).sum(axis=1) / (4.0 * eps)
    )
    return float(out[0]) if (single_x and single_y) else out


def drifted_forward_term(U, b, s, t, x, y, h, eps):
    """One-sided forward-kernel piece of the drifted weight increment."""
    return _field_term(U, b, s, t, x, y, h, eps, +1.0)


def drifted_backward_term(U, b, s, t, x, y, h, eps):
    """One-sided backward-kernel piece (drift sign flipped)."""
    return _field_term(U, b, s, t, x, y, h, eps, -1.0)


def drifted_increment_split(U, b, s, t_k, t_k1, x, y, h, eps):
    """Weight increment as forward term at (t_k, x, y) minus backward term
    at (t_{k+1}, y, x)."""
    return drifted_forward_term(U, b, s, t_k, x, y, h, eps) - drifted_backward_term(
        U, b, s, t_k1, y, x, h, eps
    )


def drifted_increment(U, b, s, t_k, t_k1, x, y, h, eps):
    """Fused one-step log-weight increment for the drifted move x -> y.

    Algebraically identical to `drifted_increment_split`; written out as
    the expanded single expression (energy difference, mixed dot product,
    h/4 quadratic terms, h/2 cross terms) and kept as an independent code
    path so the two can cross-check each other to 1e-10.
    """
    xb, single_x = _as_batch(x)
    yb, single_y = _as_batch(y)
    bx = np.atleast_2d(b(t_k, xb))
    by = np.atleast_2d(b(t_k1, yb))
    sx = np.atleast_2d(s(t_k, xb))
    sy = np.atleast_2d(s(t_k1, yb))
    ux = np.atleast_1d(U(t_k, xb))
    uy = np.atleast_1d(U(t_k1, yb))
    diff = xb - yb
    mixed = 0.5 * (diff * ((bx - by) / eps + (sx + sy))).sum(axis=1)
    quad = 0.25 * h * (
        ((bx**2).sum(axis=1) - (by**2).sum(axis=1)) / eps
        + eps * ((sx**2).sum(axis=1) - (sy**2).sum(axis=1))
    )
    cross = 0.5 * h * ((bx * sx).sum(axis=1) + (by * sy).sum(axis=1))
    out = ux - uy + mixed + quad + cross
    return float(out[0]) if (single_x and single_y) else out


@dataclass(frozen=True)
class DriftedKernel:
    """Drifted kernel bound to flow fields; the protocol variable is time t.

    `potential` must be the normalized potential -log rho_t (constant
    included): with exact fields the increments are then pure
    discretization error and the Z-ratio estimate stays at 1.
    """

    drift: Callable
    score: Callable
    potential: Callable
    h: float
    eps: float = 1.0

    def __post_init__(self):
        if self.h <= 0 or self.eps <= 0:
            raise ValueError("h and eps must be > 0")

    def energy(self, t, x):
        return self.potential(t, x)

    def propagate(self, t, x, rng):
        return drifted_step(self.drift, self.score, t, x, self.h, self.eps, rng)

    def log_forward(self, t, x_from, x_to):
        return drifted_log_forward(
            self.drift, self.score, t, x_from, x_to, self.h, self.eps
        )

    def log_reverse(self, t, x_from, x_to):
        return drifted_log_backward(
            self.drift, self.score, t, x_from, x_to, self.h, self.eps
        )

    def move(self, t_k, t_k1, x, rng):
        x_new = self.propagate(t_k, x, rng)
        incr = drifted_increment(
            self.potential, self.drift, self.score, t_k, t_k1, x, x_new, self.h,
            self.eps,
        )
        return x_new, incr


# ---------------------------------------------------------------------------
# Gibbs scans
# ---------------------------------------------------------------------------


def _rbm_batch(state):
    v, h = state
    vb, single_v = _as_batch(v)
    hb, single_h = _as_batch(h)
    _check_binary(hb, "hidden")
    return vb, hb, single_v and single_h


def _gauss_logprob(v, mean, sigma):
    # independent Gaussians per visible unit
    return (
        -((v - mean) ** 2) / (2.0 * sigma**2) - 0.5 * LOG_2PI - np.log(sigma)
    ).sum(axis=1)


def gibbs_step(model, theta, state, rng, scan_order="reversed"):
    """One Gibbs sweep of a Bernoulli RBM: h' ~ P(.|v), then v' ~ P(.|h').

    Returns the new state and a MoveRecord holding the exact forward
    log-probability and the reverse log-probability under `scan_order`.
    """
    vb, hb, single = _rbm_batch(state)
    _check_binary(vb, "visible")
    p_h = np.atleast_2d(model.conditional_hidden(theta, vb))
    h_new = (rng.random(p_h.shape) < p_h).astype(np.float64)
    p_v = np.atleast_2d(model.conditional_visible(theta, h_new))
    v_new = (rng.random(p_v.shape) < p_v).astype(np.float64)
    new = (v_new[0], h_new[0]) if single else (v_new, h_new)
    rec = MoveRecord(
        from_state=state,
        to_state=new,
        log_forward=gibbs_log_density(model, theta, state, new),
        log_reverse=gibbs_reverse_log_density(model, theta, new, state, scan_order),
    )
    return new, rec


def gibbs_log_density(model, theta, from_state, to_state):
    """Exact log-probability of the sweep (v,h) -> (v',h').

    Sum of the hidden-block Bernoulli log-probabilities (logits from the
    source v only; the source h never enters) and the visible-block
    log-probabilities given the fresh h'.
    """
    seg = model.unpack(theta)
    vb, _, _ = _rbm_batch(from_state)
    vb2, hb2, single = _rbm_batch(to_state)
    _check_binary(vb, "visible")
    _check_binary(vb2, "visible")
    logit_h = seg["c"] + vb @ seg["W"]
    logit_v = seg["b"] + hb2 @ seg["W"].T
    out = _bernoulli_logprob(hb2, logit_h) + _bernoulli_logprob(vb2, logit_v)
    return float(out[0]) if single else out


def gibbs_reverse_log_density(model, theta, from_state, to_state, scan_order="reversed"):
    """Reverse-factor log-probability for the Bernoulli Gibbs kernel.

    scan_order "reversed" evaluates the visible block first and the
    hidden block second (v-then-h); at constant theta this makes the
    weight increment vanish pathwise by detailed balance.  "forward"
    evaluates the ordinary h-then-v sweep density of the reverse move.
    """
    if scan_order == "forward":
        return gibbs_log_density(model, theta, from_state, to_state)
    if scan_order != "reversed":
        raise ValueError(f"unknown scan_order {scan_order!r}")
    seg = model.unpack(theta)
    _, hb, _ = _rbm_batch(from_state)  # from = (v', h')
    vb2, hb2, single = _rbm_batch(to_state)  # to = (v, h)
    _check_binary(vb2, "visible")
    logit_v = seg["b"] + hb @ seg["W"].T
    logit_h = seg["c"] + vb2 @ seg["W"]
    out = _bernoulli_logprob(vb2, logit_v) + _bernoulli_logprob(hb2, logit_h)
    return float(out[0]) if single else out


def gibbs_gauss_step(model, theta, state, rng, scan_order="reversed"):
    """One Gibbs sweep of a Gaussian-Bernoulli RBM.

    h' ~ Bernoulli(sigmoid(c + (v/sigma) W)), then v' ~ N(b + W h', sigma^2).
    """
    seg = model.unpack(theta)
    sigma = np.exp(0.5 * seg["log_sigma2"])
    vb, hb, single = _rbm_batch(state)
    p_h = np.atleast_2d(model.conditional_hidden(theta, vb))
    h_new = (rng.random(p_h.shape) < p_h).astype(np.float64)
    mean = seg["b"] + h_new @ seg["W"].T
    v_new = mean + sigma * rng.standard_normal(mean.shape)
    new = (v_new[0], h_new[0]) if single else (v_new, h_new)
    rec = MoveRecord(
        from_state=state,
        to_state=new,
        log_forward=gibbs_gauss_log_density(model, theta, state, new),
        log_reverse=gibbs_gauss_reverse_log_density(
            model, theta, new, state, scan_order
        ),
    )
    return new, rec


def gibbs_gauss_log_density(model, theta, from_state, to_state):
    """Exact log-density of the hybrid sweep: Bernoulli part plus the
    Gaussian visible part with mean b + W h' and scales sigma."""
    seg = model.unpack(theta)
    sigma = np.exp(0.5 * seg["log_sigma2"])
    vb, _, _ = _rbm_batch(from_state)
    vb2, hb2, single = _rbm_batch(to_state)
    logit_h = seg["c"] + (vb / sigma) @ seg["W"]
    mean = seg["b"] + hb2 @ seg["W"].T
    out = _bernoulli_logprob(hb2, logit_h) + _gauss_logprob(vb2, mean, sigma)
    return float(out[0]) if single else out


def gibbs_gauss_reverse_log_density(
    model, theta, from_state, to_state, scan_order="reversed"
):
    if scan_order == "forward":
        return gibbs_gauss_log_density(model, theta, from_state, to_state)
    if scan_order != "reversed":
        raise ValueError(f"unknown scan_order {scan_order!r}")
    seg = model.unpack(theta)
    sigma = np.exp(0.5 * seg["log_sigma2"])
    _, hb, _ = _rbm_batch(from_state)  # from = (v', h')
    vb2, hb2, single = _rbm_batch(to_state)  # to = (v, h)
    mean = seg["b"] + hb @ seg["W"].T
    logit_h = seg["c"] + (vb2 / sigma) @ seg["W"]
    out = _gauss_logprob(vb2, mean, sigma) + _bernoulli_logprob(hb2, logit_h)
    return float(out[0]) if single else out


@dataclass(frozen=True)
class GibbsKernel:
    """Gibbs-sweep kernel for either RBM family.

    scan_order chooses how the reverse factor is evaluated; it never
    changes the sampled move.  Both choices are normalized, hence both
    give unbiased estimators; "reversed" gives pathwise-zero increments
    at constant theta.
    """

    model: Any
    scan_order: str = "reversed"

    def __post_init__(self):
        if self.scan_order not in ("reversed", "forward"):
            raise ValueError(f"unknown scan_order {self.scan_order!r}")
        if self.model.family not in ("bernoulli-rbm", "gaussian-rbm"):
            raise ValueError("Gibbs kernel requires an RBM family")

    @property
    def _gauss(self):
        return self.model.family == "gaussian-rbm"

    def energy(self, theta, state):
        return self.model.energy(theta, state)

    def propagate(self, theta, state, rng):
        vb, hb, single = _rbm_batch(state)
        p_h = np.atleast_2d(self.model.conditional_hidden(theta, vb))
        h_new = (rng.random(p_h.shape) < p_h).astype(np.float64)
        if self._gauss:
            mean, var = self.model.conditional_visible(theta, h_new)
            mean = np.atleast_2d(mean)
            v_new = mean + np.sqrt(np.atleast_2d(var)) * rng.standard_normal(mean.shape)
        else:
            p_v = np.atleast_2d(self.model.conditional_visible(theta, h_new))
            v_new = (rng.random(p_v.shape) < p_v).astype(np.float64)
        return (v_new[0], h_new[0]) if single else (v_new, h_new)

    def log_forward(self, theta, from_state, to_state):
        fn = gibbs_gauss_log_density if self._gauss else gibbs_log_density
        return fn(self.model, theta, from_state, to_state)

    def log_reverse(self, theta, from_state, to_state):
        fn = (
            gibbs_gauss_reverse_log_density
            if self._gauss
            else gibbs_reverse_log_density
        )
        return fn(self.model, theta, from_state, to_state, self.scan_order)

    def move(self, theta_k, theta_k1, state, rng):
        new = self.propagate(theta_k, state, rng)
        incr = (
            self.model.energy(theta_k, state)
            - self.model.energy(theta_k1, new)
            + self.log_reverse(theta_k1, new, state)
            - self.log_forward(theta_k, state, new)
        )
        return new, incr
