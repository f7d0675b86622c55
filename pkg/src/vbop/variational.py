"""Mean-field Gaussian variational machinery over flat parameter vectors.

Every network parameter gets an independent Gaussian with mean ``mu[i]`` and
standard deviation ``softplus(delta[i])``. Sampling uses the
reparameterization trick: ``theta = mu + softplus(delta) * kappa`` with
standard-normal noise ``kappa``, so gradients flow back to (mu, delta)
through a deterministic map. The mismatch against the standard-normal prior
is the closed-form Gaussian KL divergence.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

from .rng import lane_rng


def softplus(x):
    """Numerically stable log(1 + exp(x)); tends to x for large x and exp(x)
    for very negative x."""
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of softplus on positive inputs."""
    y = np.asarray(y, dtype=np.float64)
    out = np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))
    return float(out) if out.ndim == 0 else out


@dataclass
class VariationalParams:
    """Per-parameter posterior means and raw (pre-softplus) scales."""

    mu: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.delta = np.asarray(self.delta, dtype=np.float64)
        if self.mu.shape != self.delta.shape or self.mu.ndim != 1:
            raise ValueError("mu and delta must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.delta))):
            raise ValueError("variational parameters must be finite")

    @property
    def size(self) -> int:
        return self.mu.size

    @property
    def sigma(self) -> np.ndarray:
        return softplus(self.delta)

    def copy(self) -> "VariationalParams":
        return VariationalParams(self.mu.copy(), self.delta.copy())


@dataclass(frozen=True)
class NoiseDraw:
    """One reparameterization noise vector plus the key that regenerates it."""

    kappa: np.ndarray
    seed: int
    index: int


def draw_noise(size: int, seed: int, index: int) -> NoiseDraw:
    """Standard-normal noise keyed by (seed, index); same key, same draw."""
    kappa = lane_rng(seed, index).standard_normal(size)
    return NoiseDraw(kappa=kappa, seed=int(seed), index=int(index))


def zero_noise(size: int) -> NoiseDraw:
    return NoiseDraw(kappa=np.zeros(size), seed=0, index=-1)


def sample_params(vp: VariationalParams, noise: NoiseDraw) -> np.ndarray:
    if noise.kappa.shape != vp.mu.shape:
        raise ValueError("noise dimension does not match parameters")
    return vp.mu + softplus(vp.delta) * noise.kappa


def complexity_cost(vp: VariationalParams) -> float:
    """KL divergence from the factorized posterior to the standard-normal prior.

    Closed form: sum_i 0.5 * (sigma_i^2 + mu_i^2 - 1 - log sigma_i^2).
    Non-negative, and zero exactly when mu = 0 and sigma = 1.
    """
    sig = softplus(vp.delta)
    var = sig * sig
    return float(0.5 * np.sum(var + vp.mu * vp.mu - 1.0 - np.log(var)))


def complexity_cost_grads(vp: VariationalParams):
    """Direct gradients of the complexity cost w.r.t. mu and delta."""
    sig = softplus(vp.delta)
    dmu = vp.mu.copy()
    ddelta = (sig - 1.0 / sig) * sigmoid(vp.delta)
    return dmu, ddelta


def complexity_cost_sampled(vp: VariationalParams, n_samples: int, seed: int) -> float:
    """Monte Carlo estimate of the same KL from log-density ratios.

    Higher variance than the closed form; kept for fidelity experiments and
    as an independent oracle in tests.
    """
    rng = lane_rng(seed)
    sig = softplus(vp.delta)
    z = rng.standard_normal((n_samples, vp.size))
    theta = vp.mu + sig * z
    log_q = -0.5 * (z * z) - np.log(sig) - 0.5 * np.log(2.0 * np.pi)
    log_p = -0.5 * (theta * theta) - 0.5 * np.log(2.0 * np.pi)
    return float(np.mean(np.sum(log_q - log_p, axis=1)))


def backprop_variational(param_grad: np.ndarray, vp: VariationalParams,
                         noise: NoiseDraw, direct_mu_grad=None,
                         direct_delta_grad=None):
    """Convert a gradient w.r.t. sampled parameters into (mu, delta) gradients.

    The sampling map theta = mu + softplus(delta) * kappa contributes the
    full parameter gradient to mu and, to delta, the parameter gradient
    scaled by kappa times the softplus derivative kappa / (exp(-delta) + 1).
    Direct gradients of loss terms that touch (mu, delta) without going
    through theta are added on top.
    """
    g = np.asarray(param_grad, dtype=np.float64)
    if g.shape != vp.mu.shape or noise.kappa.shape != vp.mu.shape:
        raise ValueError("gradient/noise dimensions do not match parameters")
    dmu = g.copy()
    ddelta = g * noise.kappa * sigmoid(vp.delta)
    if direct_mu_grad is not None:
        dmu += direct_mu_grad
    if direct_delta_grad is not None:
        ddelta += direct_delta_grad
    return dmu, ddelta
