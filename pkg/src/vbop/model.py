"""Branch/trunk operator network with a two-node Gaussian output head.

The branch net consumes an input-function sample vector, the trunk net a
query location. Their outputs are merged elementwise and fed to a linear
head with two outputs: the predictive mean and a raw value mapped through
softplus (with a small floor) to the predictive standard deviation.

With the head's mean row set to all ones and zero bias, the merge-plus-head
reduces exactly to the classic dot-product combination of branch and trunk
outputs; the default "hadamard" merge is therefore a strict generalization.
A "scalar" merge (dot product fed to the head) is available for ablation.

The training loss is the complexity cost (prior-mismatch KL) plus the
negative log-likelihood of the batch averaged over a set of
reparameterization noise draws.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.special import expit as sigmoid

from . import net
from .errors import DivergenceError
from .net import LayerSpec, NetSpec
from .variational import (NoiseDraw, VariationalParams, complexity_cost,
                          complexity_cost_grads, sample_params, softplus)

MERGE_MODES = ("hadamard", "scalar")


@dataclass(frozen=True)
class DeepONetSpec:
    branch: NetSpec
    trunk: NetSpec
    head: LayerSpec
    merge: str = "hadamard"
    sigma_floor: float = 1e-6

    def __post_init__(self):
        if self.merge not in MERGE_MODES:
            raise ValueError(f"unknown merge mode {self.merge!r}")
        if self.branch.out_dim != self.trunk.out_dim:
            raise ValueError("branch and trunk output dims must match")
        if self.head.activation != "linear" or self.head.out_dim != 2:
            raise ValueError("head must be a linear layer with two outputs")
        expected_in = self.merge_dim if self.merge == "hadamard" else 1
        if self.head.in_dim != expected_in:
            raise ValueError(f"head in_dim must be {expected_in} for merge "
                             f"{self.merge!r}")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be positive")

    @property
    def merge_dim(self) -> int:
        return self.branch.out_dim

    @property
    def head_spec(self) -> NetSpec:
        return NetSpec((self.head,))

    def param_count(self) -> int:
        return (net.param_count(self.branch) + net.param_count(self.trunk)
                + net.param_count(self.head_spec))

    def param_slices(self):
        nb = net.param_count(self.branch)
        nt = net.param_count(self.trunk)
        nh = net.param_count(self.head_spec)
        return (slice(0, nb), slice(nb, nb + nt), slice(nb + nt, nb + nt + nh))


def build_spec(sensors: int, y_dim: int, width: int, depth: int,
               merge: str = "hadamard", sigma_floor: float = 1e-6) -> DeepONetSpec:
    """Equal-width ReLU branch and trunk stacks plus the two-node linear head."""
    branch = NetSpec.dense(sensors, [width] * depth, "relu", final_activation="relu")
    trunk = NetSpec.dense(y_dim, [width] * depth, "relu", final_activation="relu")
    head = LayerSpec(width if merge == "hadamard" else 1, 2, "linear")
    return DeepONetSpec(branch=branch, trunk=trunk, head=head, merge=merge,
                        sigma_floor=sigma_floor)


@dataclass
class GaussianOutput:
    mu: float
    sigma: float


@dataclass
class ModelCache:
    branch: net.ForwardCache
    trunk: net.ForwardCache
    head: net.ForwardCache
    B: np.ndarray
    T: np.ndarray
    delta_out: np.ndarray
    floor_mask: np.ndarray


def forward_batch(spec: DeepONetSpec, params: np.ndarray, U: np.ndarray,
                  Y: np.ndarray, need_cache: bool = True,
                  baseline_sigma: Optional[float] = None):
    """Evaluate (mu, sigma) for a batch of (input sample row, location) pairs."""
    sb, st, sh = spec.param_slices()
    B, cb = net.forward(spec.branch, params[sb], U, need_cache=need_cache)
    T, ct = net.forward(spec.trunk, params[st], Y, need_cache=need_cache)
    M = B * T if spec.merge == "hadamard" else np.sum(B * T, axis=1, keepdims=True)
    H, ch = net.forward(spec.head_spec, params[sh], M, need_cache=need_cache)
    mu = H[:, 0]
    delta_out = H[:, 1]
    if baseline_sigma is not None:
        sigma = np.full_like(mu, float(baseline_sigma))
        floor_mask = np.zeros_like(mu, dtype=bool)
    else:
        sp = softplus(delta_out)
        sigma = np.maximum(sp, spec.sigma_floor)
        floor_mask = sp > spec.sigma_floor
    cache = None
    if need_cache:
        cache = ModelCache(branch=cb, trunk=ct, head=ch, B=B, T=T,
                           delta_out=delta_out, floor_mask=floor_mask)
    return mu, sigma, cache


def backward_batch(spec: DeepONetSpec, params: np.ndarray, cache: ModelCache,
                   grad_mu: np.ndarray, grad_sigma: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the flat parameters.

    `grad_sigma` is the loss gradient w.r.t. the clamped sigma; it is routed
    through the softplus and zeroed wherever the floor was active.
    """
    sb, st, sh = spec.param_slices()
    G_head = np.empty((grad_mu.size, 2))
    G_head[:, 0] = grad_mu
    G_head[:, 1] = grad_sigma * sigmoid(cache.delta_out) * cache.floor_mask
    g_head, dM = net.backward(spec.head_spec, params[sh], cache.head, G_head)
    # for the scalar merge dM is (N, 1) and broadcasts across the merge width
    dB = dM * cache.T
    dT = dM * cache.B
    g_branch, _ = net.backward(spec.branch, params[sb], cache.branch, dB)
    g_trunk, _ = net.backward(spec.trunk, params[st], cache.trunk, dT)
    return np.concatenate([g_branch, g_trunk, g_head])


def model_forward(spec: DeepONetSpec, params: np.ndarray, u: np.ndarray,
                  y: np.ndarray):
    """Single-query evaluation returning a GaussianOutput plus its cache."""
    u = np.asarray(u, dtype=np.float64)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    mu, sigma, cache = forward_batch(spec, params, u[None, :], y[None, :])
    return GaussianOutput(mu=float(mu[0]), sigma=float(sigma[0])), cache


def gaussian_nll(out: GaussianOutput, s: float) -> float:
    """Negative log density of `s` under N(mu, sigma^2)."""
    r = (s - out.mu) / out.sigma
    return float(0.5 * np.log(2.0 * np.pi * out.sigma ** 2) + 0.5 * r * r)


def nll_terms(mu: np.ndarray, sigma: np.ndarray, s: np.ndarray) -> np.ndarray:
    r = (s - mu) / sigma
    return 0.5 * np.log(2.0 * np.pi * sigma * sigma) + 0.5 * r * r


@dataclass
class ElboResult:
    loss: float
    kl: float
    nll: float
    grad_mu: Optional[np.ndarray] = None
    grad_delta: Optional[np.ndarray] = None


def elbo_loss(spec: DeepONetSpec, vp: VariationalParams, U: np.ndarray,
              Y: np.ndarray, s: np.ndarray, draws: List[NoiseDraw],
              kl_scale: float = 1.0, want_grads: bool = True,
              baseline_sigma: Optional[float] = None,
              kl_estimator: str = "closed") -> ElboResult:
    """Complexity cost plus draw-averaged batch negative log-likelihood.

    For each noise draw, parameters are sampled by reparameterization, the
    batch likelihood cost is summed over rows, and its parameter gradient is
    chained back to (mu, delta). Accumulation runs in draw order so results
    are independent of any parallel execution of the draws.

    The complexity cost defaults to its closed form. With
    ``kl_estimator="sampled"`` it is instead estimated from the same
    parameter draws as the per-draw log density ratio against the prior
    (higher variance, kept for fidelity experiments; the gradient estimator
    stays unbiased).
    """
    if not draws:
        raise ValueError("need at least one noise draw")
    if kl_estimator not in ("closed", "sampled"):
        raise ValueError(f"unknown kl estimator {kl_estimator!r}")
    sampled_kl = kl_estimator == "sampled"
    sig_v = softplus(vp.delta)
    sig_prime = sigmoid(vp.delta)
    log_sig = np.log(sig_v)
    kl = 0.0
    if not sampled_kl:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            kl = complexity_cost(vp)
    nll_acc = 0.0
    g_mu = np.zeros(vp.size) if want_grads else None
    g_delta = np.zeros(vp.size) if want_grads else None
    for l, noise in enumerate(draws):
        theta = vp.mu + sig_v * noise.kappa
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            mu, sigma, cache = forward_batch(spec, theta, U, Y,
                                             need_cache=want_grads,
                                             baseline_sigma=baseline_sigma)
            nll_l = float(np.sum(nll_terms(mu, sigma, s)))
        if not np.isfinite(nll_l):
            raise DivergenceError(f"non-finite likelihood cost at noise draw {l}")
        nll_acc += nll_l
        if want_grads:
            inv_var = 1.0 / (sigma * sigma)
            grad_mu_out = (mu - s) * inv_var
            grad_sigma_out = (1.0 - (s - mu) ** 2 * inv_var) / sigma
            if baseline_sigma is not None:
                grad_sigma_out = np.zeros_like(grad_sigma_out)
            g_theta = backward_batch(spec, theta, cache, grad_mu_out,
                                     grad_sigma_out)
            g_mu += g_theta
            g_delta += g_theta * noise.kappa
        if sampled_kl:
            kappa = noise.kappa
            # log q(theta) - log p(theta); the 2*pi constants cancel
            kl += float(np.sum(-log_sig - 0.5 * kappa * kappa
                               + 0.5 * theta * theta))
            if want_grads:
                # path through theta, plus the direct dependence of log q on
                # (mu, delta); the softplus derivative is applied at the end
                g_kl_theta = theta - kappa / sig_v
                g_mu += kl_scale * g_kl_theta
                g_delta += kl_scale * (g_kl_theta * kappa
                                       + (kappa * kappa - 1.0) / sig_v)
    n_tilde = len(draws)
    nll_mean = nll_acc / n_tilde
    if sampled_kl:
        kl = kl / n_tilde
    loss = kl_scale * kl + nll_mean
    if not want_grads:
        return ElboResult(loss=loss, kl=kl, nll=nll_mean)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        grad_mu = g_mu / n_tilde
        grad_delta = (g_delta / n_tilde) * sig_prime
        if not sampled_kl:
            kl_dmu, kl_ddelta = complexity_cost_grads(vp)
            grad_mu = grad_mu + kl_scale * kl_dmu
            grad_delta = grad_delta + kl_scale * kl_ddelta
    return ElboResult(loss=loss, kl=kl, nll=nll_mean,
                      grad_mu=grad_mu, grad_delta=grad_delta)
