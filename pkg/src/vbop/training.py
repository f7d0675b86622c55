"""Training loop for the variational operator network.

Each step draws a fresh set of reparameterization noise vectors, evaluates
the draw-averaged loss and its (mu, delta) gradients, and applies an
adaptive first-order moment update (plain SGD is available for fidelity
runs). Noise is keyed by a global draw counter, so a run that is stopped
and resumed consumes exactly the same stream as an uninterrupted one.
"""

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .checkpoint import Checkpoint, OptimizerState, load_checkpoint, save_checkpoint
from .dataset import NormStats, TripletDataset
from .errors import CheckpointMismatchError, DivergenceError
from .model import DeepONetSpec, elbo_loss
from .net import param_count
from .rng import lane_rng, subseed
from .variational import VariationalParams, draw_noise, softplus_inv, zero_noise

BASELINE_DELTA = -50.0


@dataclass
class TrainConfig:
    epochs: int
    learning_rate: float = 1e-3
    n_tilde: int = 25
    batch_size: Optional[int] = None      # None means full batch
    seed: int = 0
    kl_scale: object = "auto"             # "auto" or an explicit float
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    baseline: bool = False
    baseline_sigma: float = 1.0
    init_sigma: float = 0.05
    checkpoint_every: int = 0             # epochs between checkpoints; 0 = final only

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.n_tilde < 1:
            raise ValueError("n_tilde must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("moment decay rates must lie in (0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TraceRow:
    epoch: int
    total_loss: float
    kl: float
    nll: float
    seconds: float


@dataclass
class TrainTrace:
    rows: List[TraceRow] = field(default_factory=list)

    def append(self, row: TraceRow):
        self.rows.append(row)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,total_loss,kl,nll,seconds\n")
            for r in self.rows:
                fh.write(f"{r.epoch},{r.total_loss:.17g},{r.kl:.17g},"
                         f"{r.nll:.17g},{r.seconds:.3f}\n")


def init_variational(spec: DeepONetSpec, seed: int,
                     init_sigma: float = 0.05) -> VariationalParams:
    """Near-deterministic starting point for the variational parameters.

    Means are drawn layer by layer from a zero-mean Gaussian with variance
    2 / (fan_in + fan_out); every raw scale starts at softplus_inv(init_sigma)
    so the initial network behaves almost deterministically while the prior
    stays standard normal.
    """
    rng = lane_rng(seed)
    mu = np.empty(spec.param_count())
    off = 0
    for sub in (spec.branch, spec.trunk, spec.head_spec):
        for layer in sub.layers:
            n = layer.in_dim * layer.out_dim + layer.out_dim
            std = np.sqrt(2.0 / (layer.in_dim + layer.out_dim))
            mu[off:off + n] = rng.standard_normal(n) * std
            off += n
    delta = np.full(mu.size, softplus_inv(init_sigma))
    return VariationalParams(mu=mu, delta=delta)


def _adam_update(z: np.ndarray, g: np.ndarray, opt: OptimizerState,
                 cfg: TrainConfig) -> np.ndarray:
    opt.step += 1
    opt.m = cfg.beta1 * opt.m + (1.0 - cfg.beta1) * g
    opt.v = cfg.beta2 * opt.v + (1.0 - cfg.beta2) * (g * g)
    m_hat = opt.m / (1.0 - cfg.beta1 ** opt.step)
    v_hat = opt.v / (1.0 - cfg.beta2 ** opt.step)
    return z - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


def _batch_bounds(n_rows: int, batch_size: Optional[int]):
    if batch_size is None or batch_size >= n_rows:
        return [(0, n_rows)]
    return [(a, min(a + batch_size, n_rows)) for a in range(0, n_rows, batch_size)]


def train(spec: DeepONetSpec, ds: TripletDataset, cfg: TrainConfig, *,
          init: Optional[VariationalParams] = None,
          opt: Optional[OptimizerState] = None,
          start_epoch: int = 0,
          trace: Optional[TrainTrace] = None,
          norm: Optional[NormStats] = None,
          checkpoint_path=None,
          progress: Optional[Callable[[str], None]] = None):
    """Run the epoch loop; returns (params, trace, optimizer state).

    Deterministic given the config seed in single-threaded execution. When
    `checkpoint_path` is set, checkpoints are written at the configured
    cadence and at the end; on numeric divergence the last good state is
    saved before the error propagates.
    """
    if ds.s is None:
        raise ValueError("training requires targets")
    if ds.sensors != spec.branch.in_dim or ds.y_dim != spec.trunk.in_dim:
        raise ValueError("dataset dimensions do not match the model spec")
    P = spec.param_count()
    vp = init.copy() if init is not None else init_variational(
        spec, subseed(cfg.seed, "init"), init_sigma=cfg.init_sigma)
    if cfg.baseline:
        vp.delta[:] = BASELINE_DELTA
    if vp.size != P:
        raise CheckpointMismatchError(
            f"parameter vector has {vp.size} entries, model needs {P}")
    opt = opt or OptimizerState(step=0, m=np.zeros(2 * P), v=np.zeros(2 * P))
    trace = trace or TrainTrace()

    U = ds.u_matrix
    Y = ds.y
    s = ds.s
    n_rows = ds.rows
    bounds = _batch_bounds(n_rows, cfg.batch_size)
    steps_per_epoch = len(bounds)
    full_batch = steps_per_epoch == 1
    noise_seed = subseed(cfg.seed, "noise")
    perm_seed = subseed(cfg.seed, "batch-perm")
    n_tilde = 1 if cfg.baseline else cfg.n_tilde
    baseline_sigma = cfg.baseline_sigma if cfg.baseline else None

    def write_ck(path, epoch):
        save_checkpoint(path, Checkpoint(spec=spec, params=vp, norm=norm,
                                         opt=opt, epoch=epoch,
                                         baseline=cfg.baseline))

    started = time.perf_counter()
    report_every = max(1, (cfg.epochs - start_epoch) // 20) if cfg.epochs else 1
    for epoch in range(start_epoch, cfg.epochs):
        if full_batch:
            order = None
        else:
            order = lane_rng(perm_seed, epoch).permutation(n_rows)
        loss_sum = kl_sum = nll_sum = 0.0
        for step, (a, b) in enumerate(bounds):
            if order is None:
                bU, bY, bs = U[a:b], Y[a:b], s[a:b]
            else:
                idx = order[a:b]
                bU, bY, bs = U[idx], Y[idx], s[idx]
            if cfg.baseline:
                kl_scale = 0.0
                draws = [zero_noise(P)]
            else:
                if cfg.kl_scale == "auto":
                    kl_scale = 1.0 if full_batch else (b - a) / n_rows
                else:
                    kl_scale = float(cfg.kl_scale)
                base = (epoch * steps_per_epoch + step) * n_tilde
                draws = [draw_noise(P, noise_seed, base + l) for l in range(n_tilde)]
            try:
                res = elbo_loss(spec, vp, bU, bY, bs, draws, kl_scale=kl_scale,
                                baseline_sigma=baseline_sigma)
                g = np.concatenate([res.grad_mu, res.grad_delta])
                if not np.isfinite(res.loss) or not np.all(np.isfinite(g)):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
            except DivergenceError:
                # keep the parameters from before the failing evaluation
                if checkpoint_path is not None:
                    write_ck(checkpoint_path, epoch)
                raise
            if cfg.baseline:
                g[P:] = 0.0  # raw scales stay frozen in the deterministic mode
            z = np.concatenate([vp.mu, vp.delta])
            if cfg.optimizer == "adam":
                z = _adam_update(z, g, opt, cfg)
            else:
                opt.step += 1
                z = z - cfg.learning_rate * g
            vp.mu = z[:P]
            vp.delta = z[P:]
            loss_sum += res.loss
            kl_sum += res.kl
            nll_sum += res.nll
        elapsed = time.perf_counter() - started
        trace.append(TraceRow(epoch=epoch + 1,
                              total_loss=loss_sum / steps_per_epoch,
                              kl=kl_sum / steps_per_epoch,
                              nll=nll_sum / steps_per_epoch,
                              seconds=elapsed))
        if progress is not None and ((epoch + 1 - start_epoch) % report_every == 0
                                     or epoch + 1 == cfg.epochs):
            progress(f"epoch {epoch + 1}/{cfg.epochs} "
                     f"loss={trace.rows[-1].total_loss:.6g} "
                     f"kl={trace.rows[-1].kl:.6g} nll={trace.rows[-1].nll:.6g}")
        if (checkpoint_path is not None and cfg.checkpoint_every > 0
                and (epoch + 1) % cfg.checkpoint_every == 0):
            write_ck(checkpoint_path, epoch + 1)
    if checkpoint_path is not None:
        write_ck(checkpoint_path, cfg.epochs)
    return vp, trace, opt


def resume(checkpoint_path, ds: TripletDataset, cfg: TrainConfig,
           spec: DeepONetSpec, *, trace: Optional[TrainTrace] = None,
           out_checkpoint=None, progress=None):
    """Continue a run from a checkpoint up to cfg.epochs total epochs."""
    ck = load_checkpoint(checkpoint_path)
    if ck.spec != spec:
        raise CheckpointMismatchError(
            "checkpoint architecture does not match the requested model")
    if ck.opt is None:
        raise CheckpointMismatchError("checkpoint carries no optimizer state")
    if ck.epoch > cfg.epochs:
        raise CheckpointMismatchError(
            f"checkpoint is at epoch {ck.epoch}, beyond the target {cfg.epochs}")
    return train(spec, ds, cfg, init=ck.params, opt=ck.opt,
                 start_epoch=ck.epoch, trace=trace, norm=ck.norm,
                 checkpoint_path=out_checkpoint or checkpoint_path,
                 progress=progress)
