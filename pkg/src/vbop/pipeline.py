"""End-to-end pipeline stages behind the CLI commands.

Data generation, training, evaluation, and the pointwise-distribution study
are expressed here as plain functions of a resolved RunConfig, so the same
code paths serve the command line and the test suite. Per-stage seeds are
derived from the global seed with stable string tags; no stage shares a
random stream with another.
"""

import hashlib
import json
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.stats import norm as _gaussian

from . import __version__, dataset as dsm, solvers
from .checkpoint import Checkpoint
from .config import ODE_PROBLEMS, RunConfig, dump_resolved
from .dataset import TripletDataset
from .errors import CheckpointMismatchError, ConfigError
from .grf import GrfEnsemble, SensorGrid, sample_grf
from .model import DeepONetSpec, build_spec
from .prediction import (default_support, nmse, pdf_estimate, predict,
                         write_pdf_csv, write_prediction_csv, write_summary_csv)
from .rng import lane_rng, subseed
from .training import TrainConfig

EVAL_CHUNK_ROWS = 200_000


def sensor_grid(cfg: RunConfig) -> SensorGrid:
    return SensorGrid.uniform(cfg.grf.sensors, endpoint=not cfg.periodic)


def time_grid(cfg: RunConfig) -> np.ndarray:
    if cfg.problem in ODE_PROBLEMS:
        return sensor_grid(cfg).points
    return np.linspace(0.0, 1.0, cfg.solver.time_points)


def build_model_spec(cfg: RunConfig) -> DeepONetSpec:
    return build_spec(sensors=cfg.grf.sensors, y_dim=cfg.y_dim,
                      width=cfg.model.width, depth=cfg.model.depth,
                      merge=cfg.model.merge, sigma_floor=cfg.model.sigma_floor)


def make_train_config(cfg: RunConfig, baseline: Optional[bool] = None) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        epochs=t.epochs, learning_rate=t.learning_rate, n_tilde=t.n_tilde,
        batch_size=None if t.batch_size == "full" else int(t.batch_size),
        seed=cfg.seed, kl_scale=t.kl_scale, optimizer=t.optimizer,
        beta1=t.beta1, beta2=t.beta2, eps=t.eps,
        baseline=t.baseline if baseline is None else baseline,
        baseline_sigma=t.baseline_sigma, init_sigma=t.init_sigma,
        checkpoint_every=t.checkpoint_every)


def solve_ensemble(cfg: RunConfig, ens: GrfEnsemble) -> List:
    """Ground-truth solver outputs for every realization of an ensemble."""
    grid = ens.grid
    t = time_grid(cfg)
    scfg = cfg.solver
    if cfg.problem == "ad":
        vals = solvers.solve_antiderivative_batch(
            ens.realizations, grid, t, substeps=scfg.antiderivative_substeps)
        return [solvers.OdeSolution(t, vals[i]) for i in range(ens.n)]
    if cfg.problem == "pendulum":
        vals = solvers.solve_pendulum_batch(
            ens.realizations, grid, t, s0=scfg.pendulum_s0,
            max_step=scfg.pendulum_max_step)
        return [solvers.OdeSolution(t, vals[i]) for i in range(ens.n)]
    if cfg.problem == "dr":
        fields = solvers.solve_diffusion_reaction_batch(
            ens.realizations, grid, t, diffusion=scfg.diffusion,
            reaction=scfg.reaction)
        return [solvers.FieldSolution(grid, t, fields[i]) for i in range(ens.n)]
    if cfg.problem == "advd":
        ic = np.sin(2.0 * np.pi * ens.realizations) ** 2
        fields = solvers.solve_advection_diffusion_batch(
            ic, grid, t, viscosity=scfg.viscosity)
        return [solvers.FieldSolution(grid, t, fields[i]) for i in range(ens.n)]
    raise ConfigError(f"unknown problem {cfg.problem!r}")


def generate_datasets(cfg: RunConfig):
    """(training triplets, dense truth-bearing test set) for the configured run."""
    grid = sensor_grid(cfg)
    train_ens = sample_grf(grid, cfg.grf.length_scale, cfg.dataset.n_train,
                           seed=subseed(cfg.seed, "gen", "train-grf"),
                           jitter=cfg.grf.jitter)
    train = dsm.assemble(train_ens, solve_ensemble(cfg, train_ens),
                         m=cfg.dataset.m_train,
                         seed=subseed(cfg.seed, "gen", "locations"))
    if cfg.dataset.normalize_u or cfg.dataset.normalize_s:
        train = dsm.normalize(train, normalize_u=cfg.dataset.normalize_u,
                              normalize_s=cfg.dataset.normalize_s)
    test_ens = sample_grf(grid, cfg.grf.length_scale, cfg.dataset.n_test,
                          seed=subseed(cfg.seed, "gen", "test-grf"),
                          jitter=cfg.grf.jitter)
    test = dsm.dense_truth_set(test_ens, solve_ensemble(cfg, test_ens))
    return train, test


def check_compatible(ck: Checkpoint, ds: TripletDataset):
    if ck.spec.branch.in_dim != ds.sensors or ck.spec.trunk.in_dim != ds.y_dim:
        raise CheckpointMismatchError(
            f"checkpoint expects {ck.spec.branch.in_dim} sensors and "
            f"{ck.spec.trunk.in_dim}-dim locations, dataset has "
            f"{ds.sensors} and {ds.y_dim}")


def evaluate_checkpoint(cfg: RunConfig, ck: Checkpoint, test: TripletDataset,
                        out_dir) -> dict:
    """Error and calibration metrics over a dense truth-bearing test set.

    Writes the metric summary, per-realization interval exports, and (for
    two-dimensional problems) the predicted-field grids of the first test
    realization: mean surface, absolute error, and standard deviation.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    check_compatible(ck, test)
    if test.s is None:
        raise ConfigError("evaluation requires a test set with targets")
    pcfg = cfg.predict
    baseline_sigma = cfg.train.baseline_sigma if ck.baseline else None
    seed = subseed(cfg.seed, "predict")
    levels = tuple(pcfg.levels)
    z_by_level = {l: _gaussian.ppf(0.5 + l / 2.0) for l in levels}

    chunk = max(1, EVAL_CHUNK_ROWS // test.per_input)
    err2 = truth2 = 0.0
    hits = {l: 0 for l in levels}
    total = 0
    exported = 0
    field_done = cfg.y_dim != 2
    for a in range(0, test.n_inputs, chunk):
        b = min(a + chunk, test.n_inputs)
        part = test.slice_inputs(a, b)
        ens = predict(ck.params, ck.spec, part, n_samples=pcfg.samples,
                      seed=seed, norm=ck.norm, keep_samples=False,
                      baseline_sigma=baseline_sigma)
        err = ens.mean - part.s
        err2 += float(np.sum(err * err))
        truth2 += float(np.sum(part.s * part.s))
        sd = np.sqrt(ens.var_total)
        for l in levels:
            hits[l] += int(np.sum(np.abs(err) <= z_by_level[l] * sd))
        total += part.rows
        while exported < min(pcfg.ci_realizations, test.n_inputs) and \
                a <= exported < b:
            r = exported - a
            sub = part.slice_inputs(r, r + 1)
            sub_ens = predict(ck.params, ck.spec, sub, n_samples=pcfg.samples,
                              seed=seed, norm=ck.norm, keep_samples=False,
                              baseline_sigma=baseline_sigma)
            write_prediction_csv(out_dir / f"realization_{exported:03d}.csv",
                                 sub, sub_ens, truth=sub.s)
            if not field_done:
                nx = cfg.grf.sensors
                nt = cfg.solver.time_points
                grids = {
                    "field_mean.csv": sub_ens.mean.reshape(nx, nt),
                    "field_abs_error.csv":
                        np.abs(sub_ens.mean - sub.s).reshape(nx, nt),
                    "field_std.csv": np.sqrt(sub_ens.var_total).reshape(nx, nt),
                }
                for name, table in grids.items():
                    np.savetxt(out_dir / name, table, delimiter=",", fmt="%.17g")
                field_done = True
            exported += 1

    nmse_value = err2 / truth2
    coverages = {l: hits[l] / total for l in levels}
    write_summary_csv(out_dir / "summary.csv", nmse_value, coverages)
    return {"nmse": nmse_value,
            "coverage": {str(l): coverages[l] for l in levels},
            "rows": total}


def truth_at_point(cfg: RunConfig, ens: GrfEnsemble, x_index: Optional[int],
                   t_index: int, chunk: int = 500) -> np.ndarray:
    """Solver truth at one grid point for every realization, chunked."""
    out = np.empty(ens.n)
    for a in range(0, ens.n, chunk):
        b = min(a + chunk, ens.n)
        part = GrfEnsemble(grid=ens.grid, realizations=ens.realizations[a:b],
                           length_scale=ens.length_scale, seed=ens.seed)
        sols = solve_ensemble(cfg, part)
        for i, sol in enumerate(sols):
            if isinstance(sol, solvers.OdeSolution):
                out[a + i] = sol.values[t_index]
            else:
                out[a + i] = sol.values[x_index, t_index]
    return out


def pdf_study(cfg: RunConfig, ck: Checkpoint, out_dir, t_index: int,
              x_index: Optional[int] = None):
    """Predicted-density curve with band at one grid point, over many inputs.

    Draws one predicted value per (posterior sample, realization) as
    mu + sigma * z, builds a kernel density per posterior sample, and writes
    the mean curve with its band alongside the ground-truth density.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = sensor_grid(cfg)
    t = time_grid(cfg)
    if not 0 <= t_index < t.size:
        raise ConfigError(f"t index {t_index} outside the {t.size}-point grid")
    if cfg.y_dim == 2:
        if x_index is None:
            raise ConfigError("two-dimensional problems need an x index")
        if not 0 <= x_index < grid.count:
            raise ConfigError(f"x index {x_index} outside the "
                              f"{grid.count}-point grid")
        point = np.array([[grid.points[x_index], t[t_index]]])
        stem = f"pdf_x{x_index}_t{t_index}"
    else:
        if x_index is not None:
            raise ConfigError("x index is only valid for two-dimensional problems")
        point = np.array([[t[t_index]]])
        stem = f"pdf_t{t_index}"

    pcfg = cfg.predict
    ens = sample_grf(grid, cfg.grf.length_scale, pcfg.pdf_realizations,
                     seed=subseed(cfg.seed, "pdf", "grf"), jitter=cfg.grf.jitter)
    queries = TripletDataset(u=ens.realizations.copy(),
                             y=np.tile(point, (ens.n, 1)), s=None,
                             per_input=1, dense=True)
    baseline_sigma = cfg.train.baseline_sigma if ck.baseline else None
    pred = predict(ck.params, ck.spec, queries, n_samples=pcfg.pdf_samples,
                   seed=subseed(cfg.seed, "pdf", "params"), norm=ck.norm,
                   keep_samples=True, baseline_sigma=baseline_sigma)
    z_seed = subseed(cfg.seed, "pdf", "draws")
    values = np.empty_like(pred.mu_samples)
    for i in range(pcfg.pdf_samples):
        z = lane_rng(z_seed, i).standard_normal(ens.n)
        values[i] = pred.mu_samples[i] + pred.sigma_samples[i] * z

    truth = truth_at_point(cfg, ens, x_index, t_index)
    support = default_support(np.concatenate([values.ravel(), truth]),
                              points=pcfg.support_points)
    curve = pdf_estimate(values, support)
    curve_path = out_dir / f"{stem}.csv"
    write_pdf_csv(curve_path, curve)
    truth_curve = pdf_estimate(truth[None, :], support)
    np.savetxt(out_dir / f"{stem}_truth.csv",
               np.column_stack([support, truth_curve.mean_density]),
               delimiter=",", fmt="%.17g", header="support,density",
               comments="")
    return curve_path


def predict_to_csv(cfg: RunConfig, ck: Checkpoint, queries: TripletDataset,
                   out_path) -> dict:
    """Per-query predictive summaries for an arbitrary triplet file."""
    check_compatible(ck, queries)
    baseline_sigma = cfg.train.baseline_sigma if ck.baseline else None
    ens = predict(ck.params, ck.spec, queries, n_samples=cfg.predict.samples,
                  seed=subseed(cfg.seed, "predict"), norm=ck.norm,
                  keep_samples=False, baseline_sigma=baseline_sigma)
    write_prediction_csv(out_path, queries, ens, truth=queries.s)
    out = {"rows": queries.rows}
    if queries.s is not None:
        out["nmse"] = nmse(ens.mean, queries.s)
    return out


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir, command: str, cfg: RunConfig, inputs=(),
                   outputs=(), extra: Optional[dict] = None) -> None:
    """Record the effective configuration and artifact checksums for a command."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "outputs": {str(p): file_sha256(p) for p in outputs},
    }
    if extra:
        doc.update(extra)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    dump_resolved(cfg, out_dir / "resolved_config.yaml")
