"""Deterministic command-line front end.

Subcommands: gen-data, train, resume, evaluate, predict, pdf, report. Every
command takes --config/--preset plus -O overrides, writes its outputs under
--out, and records a manifest with the fully resolved configuration and
artifact checksums. Exit codes: 0 success, 2 argument or configuration
error, 3 numeric divergence, 4 I/O or file-format failure.

Thread control happens before numpy loads: --threads (or the VBDO_THREADS
environment variable) pins the BLAS pools, which is what makes single-thread
runs byte-for-byte reproducible.
"""

import argparse
import os
import sys
from pathlib import Path


def _configure_threads(threads):
    n = threads if threads is not None else os.environ.get("VBDO_THREADS")
    if not n:
        return
    n = str(int(n))
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = n
    if "numpy" in sys.modules:  # already imported: fall back to pool control
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(limits=int(n))
        except ImportError:
            pass


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--preset", help="benchmark preset name")
    p.add_argument("--seed", type=int, help="global seed override")
    p.add_argument("--threads", type=int, help="BLAS thread count "
                   "(VBDO_THREADS is the environment fallback)")
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("-O", "--set", dest="overrides", action="append",
                   default=[], metavar="SECTION.KEY=VALUE",
                   help="override one configuration value")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vbop",
        description="Variational Bayesian operator learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate training and test datasets")
    _add_common(p)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset file")
    _add_common(p)
    p.add_argument("--data", help="training dataset (default <out>/train.vbds)")
    p.add_argument("--baseline", action="store_true",
                   help="train the deterministic zero-variance baseline")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("resume", help="continue training from a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="training dataset (default <out>/train.vbds)")
    p.set_defaults(handler=cmd_resume)

    p = sub.add_parser("evaluate", help="error and calibration metrics")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dense test dataset")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("predict", help="per-query predictive summaries")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="query dataset")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("pdf", help="pointwise predicted-density study")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--t-index", type=int, required=True)
    p.add_argument("--x-index", type=int, default=None)
    p.set_defaults(handler=cmd_pdf)

    p = sub.add_parser("report", help="render figures and comparison tables")
    _add_common(p)
    p.add_argument("--run", required=True, help="run directory to scan")
    p.set_defaults(handler=cmd_report)
    return parser


def _resolve(args):
    from .config import load_config_file, resolve_config

    doc = load_config_file(args.config) if args.config else {}
    return resolve_config(doc, preset=args.preset, seed=args.seed,
                          overrides=args.overrides)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _say(msg: str):
    print(msg, file=sys.stderr)


def cmd_gen_data(args) -> int:
    from . import dataset as dsm, pipeline

    cfg = _resolve(args)
    out = _out_dir(args)
    train, test = pipeline.generate_datasets(cfg)
    train_path = out / "train.vbds"
    test_path = out / "test.vbds"
    dsm.save(train, train_path)
    dsm.save(test, test_path)
    pipeline.write_manifest(out, "gen-data", cfg,
                            outputs=[train_path, test_path],
                            extra={"train_rows": train.rows,
                                   "test_rows": test.rows})
    _say(f"wrote {train_path} ({train.rows} rows) and {test_path} "
         f"({test.rows} rows)")
    return 0


def cmd_train(args) -> int:
    from . import dataset as dsm, pipeline, training

    cfg = _resolve(args)
    out = _out_dir(args)
    data_path = Path(args.data) if args.data else out / "train.vbds"
    ds = dsm.load(data_path)
    spec = pipeline.build_model_spec(cfg)
    tcfg = pipeline.make_train_config(cfg, baseline=args.baseline or None)
    ck_path = out / "checkpoint.vbck"
    vp, trace, _ = training.train(spec, ds, tcfg, norm=ds.norm,
                                  checkpoint_path=ck_path, progress=_say)
    trace_path = out / "trace.csv"
    trace.to_csv(trace_path)
    summary = out / "summary.txt"
    mode = "baseline" if tcfg.baseline else "variational"
    last = trace.rows[-1] if trace.rows else None
    with open(summary, "w") as fh:
        fh.write(f"mode: {mode}\nepochs: {tcfg.epochs}\n")
        if last is not None:
            fh.write(f"final_loss: {last.total_loss!r}\n"
                     f"final_kl: {last.kl!r}\nfinal_nll: {last.nll!r}\n")
    pipeline.write_manifest(out, "train", cfg, inputs=[data_path],
                            outputs=[ck_path, trace_path],
                            extra={"mode": mode})
    _say(f"checkpoint written to {ck_path}")
    return 0


def cmd_resume(args) -> int:
    from . import dataset as dsm, pipeline, training

    cfg = _resolve(args)
    out = _out_dir(args)
    data_path = Path(args.data) if args.data else out / "train.vbds"
    ds = dsm.load(data_path)
    spec = pipeline.build_model_spec(cfg)
    tcfg = pipeline.make_train_config(cfg)
    ck_path = out / "checkpoint.vbck"
    vp, trace, _ = training.resume(args.checkpoint, ds, tcfg, spec,
                                   out_checkpoint=ck_path, progress=_say)
    trace_path = out / "trace.csv"
    trace.to_csv(trace_path)
    pipeline.write_manifest(out, "resume", cfg,
                            inputs=[data_path, args.checkpoint],
                            outputs=[ck_path, trace_path])
    _say(f"resumed through epoch {tcfg.epochs}; checkpoint at {ck_path}")
    return 0


def cmd_evaluate(args) -> int:
    from . import dataset as dsm, pipeline
    from .checkpoint import load_checkpoint

    cfg = _resolve(args)
    out = _out_dir(args)
    ck = load_checkpoint(args.checkpoint)
    test = dsm.load(args.data)
    metrics = pipeline.evaluate_checkpoint(cfg, ck, test, out)
    pipeline.write_manifest(out, "evaluate", cfg,
                            inputs=[args.checkpoint, args.data],
                            outputs=[out / "summary.csv"], extra=metrics)
    _say(f"nmse={metrics['nmse']:.6g} coverage={metrics['coverage']}")
    return 0


def cmd_predict(args) -> int:
    from . import dataset as dsm, pipeline
    from .checkpoint import load_checkpoint

    cfg = _resolve(args)
    out = _out_dir(args)
    ck = load_checkpoint(args.checkpoint)
    queries = dsm.load(args.data)
    pred_path = out / "predictions.csv"
    metrics = pipeline.predict_to_csv(cfg, ck, queries, pred_path)
    pipeline.write_manifest(out, "predict", cfg,
                            inputs=[args.checkpoint, args.data],
                            outputs=[pred_path], extra=metrics)
    _say(f"wrote {pred_path}")
    return 0


def cmd_pdf(args) -> int:
    from . import pipeline
    from .checkpoint import load_checkpoint

    cfg = _resolve(args)
    out = _out_dir(args)
    ck = load_checkpoint(args.checkpoint)
    curve_path = pipeline.pdf_study(cfg, ck, out, t_index=args.t_index,
                                    x_index=args.x_index)
    pipeline.write_manifest(out, "pdf", cfg, inputs=[args.checkpoint],
                            outputs=[curve_path])
    _say(f"wrote {curve_path}")
    return 0


def cmd_report(args) -> int:
    from . import report

    out = args.out if args.out != "run" else args.run
    written = report.generate_report(args.run, out)
    for path in written:
        _say(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    _configure_threads(args.threads)
    from .errors import (ConfigError, DivergenceError, FactorizationError,
                         FormatError, ToolkitError)

    try:
        return args.handler(args)
    except ConfigError as exc:
        _say(f"error: {exc}")
        return 2
    except (DivergenceError, FactorizationError) as exc:
        _say(f"numeric divergence: {exc}")
        return 3
    except (FormatError, OSError) as exc:
        _say(f"i/o error: {exc}")
        return 4
    except ToolkitError as exc:
        _say(f"error: {exc}")
        return 2
    except ValueError as exc:
        _say(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
