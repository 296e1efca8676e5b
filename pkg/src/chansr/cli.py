"""Command-line front end: dataset generation, training stages, evaluation.

Subcommands: gen, train, fisher, train-cl, train-multitask, eval,
report-forgetting. Global flags: --config, --seed, --out, --force,
--precision {f32,f64}, --check. Exit codes: 0 success, 1 usage error,
2 data error (missing/corrupt files), 3 numerical failure.

Every run directory receives the resolved config echo (config.ini) and a
provenance file (seed, precision, backend, git describe, argv), enough to
reproduce its outputs bit-for-bit within one build. Output files carry no
timestamps; only default directory names do.
"""

import argparse
import datetime
import os
import subprocess
import sys

import numpy as np

from . import autodiff as ad
from . import kernels
from .config import RunConfig, load_config
from .dataset import (DOMAIN_TEST, DOMAIN_TRAIN, DOMAIN_VAL, concat_datasets, generate_dataset,
                      load_dataset, save_dataset)
from .evaluate import forgetting_report, ls_bilinear_estimator, model_estimator, sweep, write_report_csv
from .fio import atomic_write_text
from .model import init_params, load_params, save_params
from .training import (estimate_fisher, load_fisher, save_fisher, train_multitask, train_task,
                       train_task_cl, write_loss_csv)

_INIT_TAG = 0x696E6974  # parameter-init stream tag ("init")

_DOMAINS = {"train": DOMAIN_TRAIN, "val": DOMAIN_VAL, "test": DOMAIN_TEST}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_global_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file; flags override file values")
    p.add_argument("--seed", type=int, help="global seed override")
    p.add_argument("--out", help="output file or run directory (default: timestamped under runs/)")
    p.add_argument("--force", action="store_true", help="allow overwriting existing dataset files")
    p.add_argument("--precision", choices=("f32", "f64"), help="tensor precision (f64: verification mode)")
    p.add_argument("--check", action="store_true", help="enable numerical self-checks (exit 3 on failure)")


def build_parser() -> _Parser:
    root = _Parser(prog="chansr", description="Pilot-aided channel estimation lab")
    sub = root.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[], help="generate a CHDS dataset file")
    _add_global_flags(p)
    p.add_argument("--profile", required=True, help="tdl-a, tdl-d, or a tap-table path")
    p.add_argument("--snr", required=True, type=float, help="pilot SNR in dB (inf for noiseless)")
    p.add_argument("--n", required=True, type=int, help="sample count")
    p.add_argument("--split", choices=sorted(_DOMAINS), default="train", help="seed domain")

    p = sub.add_parser("train", help="train from random init on one dataset")
    _add_global_flags(p)
    p.add_argument("--data", required=True, help="CHDS training dataset")
    _add_train_overrides(p)

    p = sub.add_parser("fisher", help="estimate the Fisher diagonal at a checkpoint")
    _add_global_flags(p)
    p.add_argument("--data", required=True, help="CHDS dataset of the completed task")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint (.dasr)")
    p.add_argument("--task-label", default="", help="label stored in the Fisher file")
    p.add_argument("--batch-size", type=int, help="batch size override")

    p = sub.add_parser("train-cl", help="sequential training with the anchor penalty")
    _add_global_flags(p)
    p.add_argument("--data", required=True, help="CHDS dataset of the new task")
    p.add_argument("--checkpoint", required=True, help="checkpoint to continue from")
    p.add_argument("--fisher", required=True, help="Fisher file from the previous task")
    p.add_argument("--lambda", dest="lam", type=float, help="EWC importance override")
    p.add_argument("--alpha", type=float, help="EWC mixing weight override")
    _add_train_overrides(p)

    p = sub.add_parser("train-multitask", help="train on the shuffled union of datasets")
    _add_global_flags(p)
    p.add_argument("--data", required=True, action="append",
                   help="CHDS dataset (repeat the flag for each task)")
    _add_train_overrides(p)

    p = sub.add_parser("eval", help="NMSE sweep over SNR for one scheme")
    _add_global_flags(p)
    p.add_argument("--scheme", required=True, choices=("ls", "model", "model-noattn"))
    p.add_argument("--checkpoint", help="checkpoint for model schemes")
    p.add_argument("--profile", required=True, nargs="+",
                   help="profile name(s); two or more give a mixed test set")
    p.add_argument("--mc", type=int, help="total trial count override")
    p.add_argument("--snr-list", help="comma-separated SNR grid override")

    p = sub.add_parser("report-forgetting", help="NMSE matrix across the four scheme checkpoints")
    _add_global_flags(p)
    p.add_argument("--post1", required=True, help="post-task-I checkpoint")
    p.add_argument("--naive", required=True, help="naive sequential checkpoint")
    p.add_argument("--cl", required=True, help="anchor-penalty checkpoint")
    p.add_argument("--multitask", required=True, help="multi-task checkpoint")
    p.add_argument("--mc", type=int, help="per-profile trial count override")

    return root


def _add_train_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, help="epoch count override")
    p.add_argument("--batch-size", type=int, help="batch size override")
    p.add_argument("--lr", type=float, help="learning rate override")


def _setup(args) -> RunConfig:
    try:
        cfg = load_config(args.config)
    except ValueError as e:
        raise UsageError(str(e)) from e
    if args.seed is not None:
        cfg.set_value("seed", args.seed)
    if args.precision:
        cfg.set_value("precision", args.precision)
    ad.set_default_dtype(cfg.precision)
    ad.set_check_finite(args.check)
    return cfg


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _run_dir(args, prefix: str) -> str:
    if args.out:
        path = args.out
    else:
        stamp = datetime.datetime.now(datetime.timezone.utc).strftime("%Y%m%d-%H%M%S")
        path = os.path.join("runs", f"{prefix}-{stamp}")
    os.makedirs(path, exist_ok=True)
    return path


def _write_provenance(run_dir: str, cfg: RunConfig, argv) -> None:
    atomic_write_text(os.path.join(run_dir, "config.ini"), cfg.echo())
    lines = [
        f"seed = {cfg.seed}",
        f"precision = {cfg.precision}",
        f"backend = {kernels.backend_name()}",
        f"git = {_git_describe()}",
        f"argv = {' '.join(argv)}",
    ]
    atomic_write_text(os.path.join(run_dir, "provenance.txt"), "\n".join(lines) + "\n")


def _load_dataset(path: str):
    try:
        return load_dataset(path)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot load dataset {path}: {e}") from e


def _load_params(path: str):
    try:
        return load_params(path)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot load checkpoint {path}: {e}") from e


def _init_rng(cfg: RunConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(_INIT_TAG,)))


def _train_cfg(cfg: RunConfig, args, **extra):
    over = dict(extra)
    for name, attr in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr")):
        v = getattr(args, name, None)
        if v is not None:
            over[attr] = v
    try:
        return cfg.train_config(**over)
    except ValueError as e:
        raise UsageError(str(e)) from e


def cmd_gen(args, cfg: RunConfig, argv) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    out = args.out or f"{os.path.basename(args.profile)}_snr{args.snr:g}_{args.split}.chds"
    if os.path.exists(out) and not args.force:
        raise UsageError(f"{out} exists; pass --force to overwrite")
    try:
        profile = cfg.profile(args.profile)
        ds = generate_dataset(profile, cfg.ofdm(), cfg.pattern(), args.snr, args.n,
                              cfg.seed, _DOMAINS[args.split])
    except ValueError as e:
        raise DataError(str(e)) from e
    save_dataset(ds, out)
    print(f"wrote {out}: {args.n} samples, profile {profile.name}, snr {args.snr:g} dB, split {args.split}")
    return 0


def _finish_training(run_dir, params, trace, cfg, argv) -> None:
    save_params(params, os.path.join(run_dir, "checkpoint.dasr"))
    write_loss_csv(os.path.join(run_dir, "loss.csv"), trace)
    _write_provenance(run_dir, cfg, argv)


def cmd_train(args, cfg: RunConfig, argv) -> int:
    ds = _load_dataset(args.data)
    tc = _train_cfg(cfg, args)
    params = init_params(_init_rng(cfg))
    run_dir = _run_dir(args, "train")
    trace = train_task(params, ds, tc)
    _finish_training(run_dir, params, trace, cfg, argv)
    print(f"trained {tc.epochs} epochs on {len(ds)} samples; final loss {trace[-1]['loss']:.6e}; "
          f"run dir {run_dir}")
    return 0


def cmd_fisher(args, cfg: RunConfig, argv) -> int:
    ds = _load_dataset(args.data)
    params = _load_params(args.checkpoint)
    tc = _train_cfg(cfg, args)
    fd = estimate_fisher(params, ds, tc, task=args.task_label)
    run_dir = _run_dir(args, "fisher")
    save_fisher(fd, os.path.join(run_dir, "fisher.fish"))
    _write_provenance(run_dir, cfg, argv)
    print(f"estimated Fisher diagonal over {len(ds)} samples; run dir {run_dir}")
    return 0


def cmd_train_cl(args, cfg: RunConfig, argv) -> int:
    if not os.path.exists(args.fisher):
        raise DataError(f"Fisher file not found: {args.fisher}; run the 'fisher' stage on the "
                        f"previous task's data and checkpoint first")
    ds = _load_dataset(args.data)
    params = _load_params(args.checkpoint)
    try:
        fd = load_fisher(args.fisher)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot load Fisher file {args.fisher}: {e}") from e
    over = {}
    if args.lam is not None:
        over["lam"] = args.lam
    if args.alpha is not None:
        over["alpha"] = args.alpha
    tc = _train_cfg(cfg, args, **over)
    run_dir = _run_dir(args, "train-cl")
    trace = train_task_cl(params, ds, fd, tc)
    _finish_training(run_dir, params, trace, cfg, argv)
    print(f"sequential training done (lambda {tc.lam:g}, alpha {tc.alpha:g}); run dir {run_dir}")
    return 0


def cmd_train_multitask(args, cfg: RunConfig, argv) -> int:
    parts = [_load_dataset(p) for p in args.data]
    try:
        union = concat_datasets(parts)
    except ValueError as e:
        raise DataError(str(e)) from e
    tc = _train_cfg(cfg, args)
    params = init_params(_init_rng(cfg))
    run_dir = _run_dir(args, "train-multitask")
    trace = train_multitask(params, union, tc)
    _finish_training(run_dir, params, trace, cfg, argv)
    print(f"multi-task training on {len(union)} samples; run dir {run_dir}")
    return 0


def _parse_snr_list(args, cfg: RunConfig):
    if getattr(args, "snr_list", None):
        try:
            return tuple(float(v) for v in args.snr_list.replace(",", " ").split())
        except ValueError as e:
            raise UsageError(f"bad --snr-list: {e}") from e
    return cfg.snr_list


def _estimator_for(args, cfg: RunConfig):
    if args.scheme == "ls":
        return ls_bilinear_estimator(cfg.pattern(), cfg.ofdm())
    if not args.checkpoint:
        raise UsageError(f"scheme {args.scheme} needs --checkpoint")
    params = _load_params(args.checkpoint)
    return model_estimator(params, cfg.ofdm(), bypass_attention=args.scheme == "model-noattn")


def cmd_eval(args, cfg: RunConfig, argv) -> int:
    estimator = _estimator_for(args, cfg)
    try:
        profiles = [cfg.profile(p) for p in args.profile]
    except ValueError as e:
        raise DataError(str(e)) from e
    snr_list = _parse_snr_list(args, cfg)
    mc = args.mc if args.mc is not None else cfg.mc * len(profiles)
    try:
        report = sweep(estimator, args.scheme, profiles, snr_list, mc, cfg.seed,
                       cfg.ofdm(), cfg.pattern())
    except ValueError as e:
        raise DataError(str(e)) from e
    except FloatingPointError as e:
        raise NumericalError(str(e)) from e
    if args.check:
        bad = [v for v in report.nmse_linear if not (np.isfinite(v) and v >= 0)]
        if bad:
            raise NumericalError(f"NMSE self-check failed: {bad}")
    run_dir = _run_dir(args, "eval")
    write_report_csv(os.path.join(run_dir, "report.csv"), list(report.rows()))
    _write_provenance(run_dir, cfg, argv)
    print(f"evaluated {args.scheme} at {len(snr_list)} SNR points (M_c {report.mc}); run dir {run_dir}")
    return 0


def cmd_report_forgetting(args, cfg: RunConfig, argv) -> int:
    schemes = {
        "post_task1": model_estimator(_load_params(args.post1), cfg.ofdm()),
        "naive_seq": model_estimator(_load_params(args.naive), cfg.ofdm()),
        "cl": model_estimator(_load_params(args.cl), cfg.ofdm()),
        "multitask": model_estimator(_load_params(args.multitask), cfg.ofdm()),
    }
    mc = args.mc if args.mc is not None else cfg.mc
    try:
        rows = forgetting_report(schemes, cfg.profile(cfg.profile_1), cfg.profile(cfg.profile_2),
                                 cfg.snr_list, mc, cfg.seed, cfg.ofdm(), cfg.pattern())
    except ValueError as e:
        raise DataError(str(e)) from e
    except FloatingPointError as e:
        raise NumericalError(str(e)) from e
    run_dir = _run_dir(args, "forgetting")
    write_report_csv(os.path.join(run_dir, "forgetting.csv"), rows)
    _write_provenance(run_dir, cfg, argv)
    print(f"forgetting report over {len(rows)} rows; run dir {run_dir}")
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "fisher": cmd_fisher,
    "train-cl": cmd_train_cl,
    "train-multitask": cmd_train_multitask,
    "eval": cmd_eval,
    "report-forgetting": cmd_report_forgetting,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        cfg = _setup(args)
        return _COMMANDS[args.command](args, cfg, argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
