"""Posterior-predictive evaluation: ensembles, bands, coverage, error metrics.

Predictions are Monte Carlo ensembles over parameter samples: each sample
yields a per-query (mu, sigma) pair. The ensemble mean is the predictive
mean; the variance splits into an epistemic part (variance of the mu
samples) and an aleatoric part (mean of the sigma^2 samples), which sum to
the total by construction. Confidence intervals use Gaussian quantiles of
the total variance.
"""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy.stats import norm as _gaussian

from . import net
from .dataset import NormStats, TripletDataset, normalize_u_rows
from .errors import DegenerateDataError
from .model import DeepONetSpec, forward_batch
from .variational import VariationalParams, draw_noise, sample_params, softplus


@dataclass
class PredictiveEnsemble:
    mean: np.ndarray
    var_epistemic: np.ndarray
    var_aleatoric: np.ndarray
    var_total: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    level: float
    sample_count: int
    mu_samples: Optional[np.ndarray] = None      # (S, Q)
    sigma_samples: Optional[np.ndarray] = None   # (S, Q)


def _query_forward(spec: DeepONetSpec, theta: np.ndarray, U_in: np.ndarray,
                   queries: TripletDataset, baseline_sigma: Optional[float]):
    """(mu, sigma) for every query row under one parameter sample.

    Dense sets share one location grid across realizations, so the trunk is
    evaluated once and merged against each branch output.
    """
    sb, st, sh = spec.param_slices()
    if queries.dense:
        B, _ = net.forward(spec.branch, theta[sb], U_in, need_cache=False)
        T, _ = net.forward(spec.trunk, theta[st],
                           queries.y[:queries.per_input], need_cache=False)
        if spec.merge == "hadamard":
            M = (B[:, None, :] * T[None, :, :]).reshape(-1, spec.merge_dim)
        else:
            M = (B @ T.T).reshape(-1, 1)
        H, _ = net.forward(spec.head_spec, theta[sh], M, need_cache=False)
        mu = H[:, 0]
        if baseline_sigma is not None:
            sigma = np.full_like(mu, float(baseline_sigma))
        else:
            sigma = np.maximum(softplus(H[:, 1]), spec.sigma_floor)
        return mu, sigma
    U_rows = np.repeat(U_in, queries.per_input, axis=0)
    mu, sigma, _ = forward_batch(spec, theta, U_rows, queries.y,
                                 need_cache=False, baseline_sigma=baseline_sigma)
    return mu, sigma


def predict(vp: VariationalParams, spec: DeepONetSpec, queries: TripletDataset,
            n_samples: int, seed: int, norm: Optional[NormStats] = None,
            level: float = 0.95, keep_samples: Optional[bool] = None,
            baseline_sigma: Optional[float] = None) -> PredictiveEnsemble:
    """Monte Carlo predictive ensemble over `n_samples` parameter draws.

    Query inputs are normalized with the training statistics and the
    resulting (mu, sigma) are mapped back to raw target units. Deterministic
    given (vp, queries, n_samples, seed): sample ``i`` uses the noise stream
    keyed by (seed, i).
    """
    if n_samples < 2:
        raise ValueError("need at least two parameter samples")
    if queries.norm is not None and norm is None:
        raise ValueError("queries are normalized but no statistics were given")
    stats = norm
    if queries.norm is not None:
        U_in = queries.u  # already in normalized units
    else:
        U_in = normalize_u_rows(queries.u, stats)
    q_rows = queries.rows
    if keep_samples is None:
        keep_samples = n_samples * q_rows <= 20_000_000
    s_scale = stats.s_std if (stats is not None and stats.normalize_s) else 1.0
    s_shift = stats.s_mean if (stats is not None and stats.normalize_s) else 0.0

    # Welford accumulation: exact zero spread when every sample coincides
    mean = np.zeros(q_rows)
    m2 = np.zeros(q_rows)
    sum_var = np.zeros(q_rows)
    mu_keep = np.empty((n_samples, q_rows)) if keep_samples else None
    sig_keep = np.empty((n_samples, q_rows)) if keep_samples else None
    for i in range(n_samples):
        theta = sample_params(vp, draw_noise(vp.size, seed, i))
        mu, sigma = _query_forward(spec, theta, U_in, queries, baseline_sigma)
        mu = mu * s_scale + s_shift
        sigma = sigma * s_scale
        d = mu - mean
        mean += d / (i + 1)
        m2 += d * (mu - mean)
        sum_var += sigma * sigma
        if keep_samples:
            mu_keep[i] = mu
            sig_keep[i] = sigma
    var_epi = m2 / n_samples
    var_alea = sum_var / n_samples
    var_total = var_epi + var_alea
    z = _gaussian.ppf(0.5 + level / 2.0)
    half = z * np.sqrt(var_total)
    return PredictiveEnsemble(mean=mean, var_epistemic=var_epi,
                              var_aleatoric=var_alea, var_total=var_total,
                              ci_lo=mean - half, ci_hi=mean + half,
                              level=level, sample_count=n_samples,
                              mu_samples=mu_keep, sigma_samples=sig_keep)


def nmse(pred_mean: np.ndarray, truth: np.ndarray) -> float:
    """Normalized mean squared error: sum((pred-truth)^2) / sum(truth^2)."""
    pred_mean = np.asarray(pred_mean, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred_mean.shape != truth.shape:
        raise ValueError("prediction and truth must have equal lengths")
    denom = float(np.sum(truth * truth))
    if denom == 0.0:
        raise ValueError("truth is identically zero; NMSE undefined")
    err = pred_mean - truth
    return float(np.sum(err * err) / denom)


def coverage(ens: PredictiveEnsemble, truth: np.ndarray, level: float) -> float:
    """Fraction of queries whose truth lies inside the level interval."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    truth = np.asarray(truth, dtype=np.float64)
    z = _gaussian.ppf(0.5 + level / 2.0)
    half = z * np.sqrt(ens.var_total)
    inside = np.abs(truth - ens.mean) <= half
    return float(np.mean(inside))


# ---------------------------------------------------------------------------
# kernel density machinery for the pointwise distribution studies
# ---------------------------------------------------------------------------

def silverman_bandwidth(values: np.ndarray) -> float:
    """Rule-of-thumb Gaussian-kernel bandwidth 0.9 min(std, iqr/1.34) n^(-1/5)."""
    x = np.asarray(values, dtype=np.float64).ravel()
    std = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25)
    scale = min(std, iqr / 1.34) if iqr > 0 else std
    if scale <= 0:
        raise DegenerateDataError("values have no spread; bandwidth undefined")
    return 0.9 * scale * x.size ** (-0.2)


def _gauss_kde(values: np.ndarray, support: np.ndarray, h: float,
               chunk: int = 128) -> np.ndarray:
    inv = 1.0 / (h * np.sqrt(2.0 * np.pi) * values.size)
    out = np.empty(support.size)
    for a in range(0, support.size, chunk):
        g = support[a:a + chunk]
        z = (g[None, :] - values[:, None]) / h
        out[a:a + chunk] = np.exp(-0.5 * z * z).sum(axis=0) * inv
    return out


@dataclass
class PdfCurve:
    support: np.ndarray
    mean_density: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    bandwidth: float


def default_support(values: np.ndarray, points: int = 512,
                    pad_bandwidths: float = 5.0) -> np.ndarray:
    h = silverman_bandwidth(values)
    lo = float(np.min(values)) - pad_bandwidths * h
    hi = float(np.max(values)) + pad_bandwidths * h
    return np.linspace(lo, hi, points)


def pdf_estimate(values: np.ndarray, support: np.ndarray,
                 band: float = 0.95) -> PdfCurve:
    """Density curve with an uncertainty band from per-sample kernel estimates.

    `values` is a (samples x realizations) matrix of predicted draws at one
    fixed query location. Each sample row gets its own Gaussian kernel
    density over the realizations; the mean curve is their pointwise average
    and the band the pointwise (1-band)/2 and (1+band)/2 percentiles.
    """
    vals = np.atleast_2d(np.asarray(values, dtype=np.float64))
    support = np.asarray(support, dtype=np.float64)
    if float(np.ptp(vals)) < 1e-12:
        raise DegenerateDataError(
            "all predicted values coincide; the density would be a spike")
    h = silverman_bandwidth(vals)
    densities = np.empty((vals.shape[0], support.size))
    for i in range(vals.shape[0]):
        densities[i] = _gauss_kde(vals[i], support, h)
    lo_q = 100.0 * (1.0 - band) / 2.0
    band_lo, band_hi = np.percentile(densities, [lo_q, 100.0 - lo_q], axis=0)
    return PdfCurve(support=support, mean_density=densities.mean(axis=0),
                    band_lo=band_lo, band_hi=band_hi, bandwidth=h)


# ---------------------------------------------------------------------------
# delimited outputs
# ---------------------------------------------------------------------------

def write_prediction_csv(path, queries: TripletDataset, ens: PredictiveEnsemble,
                         truth: Optional[np.ndarray] = None) -> None:
    cols = [f"y_{j + 1}" for j in range(queries.y_dim)]
    blocks = [queries.y]
    if truth is not None:
        cols.append("truth")
        blocks.append(np.asarray(truth, dtype=np.float64)[:, None])
    cols += ["mean", "std_total", "std_epistemic", "std_aleatoric", "ci_lo", "ci_hi"]
    blocks += [ens.mean[:, None], np.sqrt(ens.var_total)[:, None],
               np.sqrt(ens.var_epistemic)[:, None],
               np.sqrt(ens.var_aleatoric)[:, None],
               ens.ci_lo[:, None], ens.ci_hi[:, None]]
    np.savetxt(path, np.hstack(blocks), delimiter=",", fmt="%.17g",
               header=",".join(cols), comments="")


def write_pdf_csv(path, curve: PdfCurve) -> None:
    table = np.column_stack([curve.support, curve.mean_density,
                             curve.band_lo, curve.band_hi])
    np.savetxt(path, table, delimiter=",", fmt="%.17g",
               header="support,mean_density,band_lo,band_hi", comments="")


def write_summary_csv(path, nmse_value: float,
                      coverages: Dict[float, float]) -> None:
    with open(path, "w") as fh:
        fh.write("metric,value\n")
        fh.write(f"nmse,{float(nmse_value)!r}\n")
        for level in sorted(coverages):
            fh.write(f"coverage_{int(round(level * 100))},"
                     f"{float(coverages[level])!r}\n")
