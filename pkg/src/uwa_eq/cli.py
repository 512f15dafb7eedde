"""Command line front end.

Subcommands: gen-dataset, train, evaluate, sweep, timing, inspect-channel.
Every run logs the resolved configuration and seed to stderr.  Exit code 0
on success, 1 on any handled error, 2 on usage errors (argparse).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from . import config as config_mod
from . import harness, udnet
from .channel import CirFormatError, load_cir, make_sliding_plan
from .signal import OfdmConfig
from .udnet import CheckpointFormatError, TrainingDivergedError

logger = logging.getLogger("uwa_eq.cli")


def _experiment_overrides(args) -> dict[str, str]:
    pairs = {
        "snr": "sweep.snr_db",
        "methods": "sweep.methods",
        "trials": "sweep.trials_per_point",
        "sigma": "sweep.csi_sigma",
        "clip": "sweep.clip_ratio",
        "block_size": "sweep.block_size",
        "seed": "run.seed",
    }
    out = {}
    for attr, dotted in pairs.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[dotted] = str(value)
    return out


def _load_experiment(args) -> harness.ExperimentConfig:
    cp = config_mod.read_config(args.config)
    cfg = config_mod.experiment_from_config(cp, _experiment_overrides(args))
    if getattr(args, "dataset", None):
        manifest = harness.load_manifest(args.dataset)
        cfg = replace(cfg, channel=harness.FileChannelSpec(
            paths=manifest.test, label=manifest.channel_id))
    logger.info("resolved config: %s", cfg)
    return cfg


def _load_model_arg(args) -> udnet.UdnetModel | None:
    path = getattr(args, "model", None)
    if path is None:
        return None
    model = udnet.load_model(path)
    logger.info("loaded model: %d layers, block %d, hidden %d",
                model.n_layers, model.block_size, model.hidden_dim)
    return model


def cmd_gen_dataset(args) -> int:
    cfg = _load_experiment(args)
    manifest = harness.gen_dataset(cfg, args.out)
    print(f"dataset '{manifest.channel_id}': {len(manifest.train)} train / "
          f"{len(manifest.test)} test realisations in {args.out}")
    return 0


def cmd_train(args) -> int:
    cp = config_mod.read_config(args.config)
    overrides = {}
    if args.epochs is not None:
        overrides["train.epochs"] = str(args.epochs)
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    train_cfg, dims = config_mod.train_settings_from_config(cp, overrides)
    exp_cfg = config_mod.experiment_from_config(cp, {})
    logger.info("resolved train config: %s dims=%s", train_cfg, dims)
    manifest = harness.load_manifest(args.dataset)
    cirs = [load_cir(p) for p in manifest.train]
    plan = make_sliding_plan(exp_cfg.ofdm.n_subcarriers, dims["block_size"])
    rng = np.random.default_rng(np.random.SeedSequence((train_cfg.seed, 1)))
    model = udnet.init_model(dims["block_size"], dims["n_layers"], rng,
                             hidden_dim=dims["hidden_dim"])
    model, history = udnet.train(cirs, model, train_cfg, plan, exp_cfg.noise,
                                 progress=lambda e, l: logger.info(
                                     "epoch %d: mean loss %.6f", e, l))
    udnet.save_model(model, args.out)
    print(f"trained {len(history)} epochs on {len(cirs)} realisations; "
          f"loss {history[0]:.6f} -> {history[-1]:.6f}; model saved to {args.out}")
    return 0


def _print_rows(rows) -> None:
    header = f"{'method':>8} {'snr_db':>7} {'sigma':>7} {'clip':>4} " \
             f"{'symbols':>9} {'errors':>8} {'ser':>12} {'s/symbol':>11}"
    print(header)
    for r in rows:
        print(f"{r.method:>8} {r.snr_db:>7.2f} {r.csi_sigma:>7.4f} "
              f"{int(r.clipped):>4} {r.symbols_tested:>9} {r.symbol_errors:>8} "
              f"{r.ser:>12.3e} {r.wall_time_per_symbol:>11.3e}")


def cmd_evaluate(args) -> int:
    cfg = _load_experiment(args)
    model = _load_model_arg(args)
    if any(m.name == "udnet" for m in cfg.methods) and model is None:
        raise ValueError("config lists method 'udnet'; pass a checkpoint with --model")
    result = harness.run_sweep(cfg, model=model)
    _print_rows(result.rows)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_experiment(args)
    model = _load_model_arg(args)
    if any(m.name == "udnet" for m in cfg.methods) and model is None:
        raise ValueError("config lists method 'udnet'; pass a checkpoint with --model")
    result = harness.run_sweep(cfg, model=model)
    harness.emit_csv(result, args.out_csv)
    print(f"wrote {len(result.rows)} rows to {args.out_csv}")
    if args.out_plot:
        harness.emit_plot_script(result, args.out_plot, args.out_csv)
        print(f"wrote plot script to {args.out_plot}")
    return 0


def cmd_timing(args) -> int:
    subcarriers = [int(tok) for tok in args.subcarriers.replace(",", " ").split()]
    rows = harness.timing_benchmark(
        subcarriers, block_size=args.block_size, n_layers=args.layers,
        hidden_dim=args.hidden, seed=args.seed)
    print(f"{'n':>6} {'method':>14} {'s/symbol':>12} {'symbols':>8}")
    for r in rows:
        print(f"{r['n_subcarriers']:>6} {r['method']:>14} "
              f"{r['seconds_per_symbol']:>12.3e} {r['symbols_timed']:>8}")
    return 0


def cmd_inspect_channel(args) -> int:
    if args.cir:
        cir = load_cir(args.cir)
        n = 1
        while 2 * n <= cir.sample_count:
            n *= 2
        cp_len = cir.sample_count - n
        if cp_len >= n:
            raise ValueError(f"cannot infer modem geometry from {cir.sample_count} samples")
        cfg = OfdmConfig(n_subcarriers=n, cp_len=cp_len)
        block = args.block_size
    else:
        if not args.config:
            raise ValueError("pass either --cir or --config")
        exp = _load_experiment(args)
        cirs, _ = harness._resolve_channel(exp)
        cir, cfg = cirs[0], exp.ofdm
        block = args.block_size or exp.block_size
    stats = harness.inspect_channel_stats(cir, cfg, block_size=block)
    print(f"subcarriers: {stats['n_subcarriers']}, taps: {stats['tap_count']}")
    for width, frac in stats["band_energy_fraction"].items():
        print(f"energy within {width:>3} of the diagonal: {frac:.6f}")
    if "block_energy_fraction" in stats:
        print(f"energy kept by {stats['block_size']}-wide diagonal blocks: "
              f"{stats['block_energy_fraction']:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uwa-eq",
                                description="OFDM equalization benchmark toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def add_experiment_flags(sp, dataset=True):
        sp.add_argument("--config", required=True, help="experiment config file")
        sp.add_argument("--snr", help="override SNR list, e.g. '10,15,20'")
        sp.add_argument("--methods", help="override method list, e.g. 'zf,mmse,udnet'")
        sp.add_argument("--trials", type=int, help="override trials per point")
        sp.add_argument("--sigma", type=float, help="override channel-knowledge error sigma")
        sp.add_argument("--clip", type=float, help="override clipping ratio")
        sp.add_argument("--block-size", dest="block_size", type=int,
                        help="override equalizer block size")
        sp.add_argument("--seed", type=int, help="override run seed")
        if dataset:
            sp.add_argument("--dataset", help="use a generated dataset's test split "
                                              "as the channel set")

    sp = sub.add_parser("gen-dataset", help="materialise a channel dataset with a "
                                            "train/test split")
    add_experiment_flags(sp, dataset=False)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_gen_dataset)

    sp = sub.add_parser("train", help="train the unfolded equalizer on a dataset")
    sp.add_argument("--config", required=True)
    sp.add_argument("--dataset", required=True, help="dataset directory (uses the train split)")
    sp.add_argument("--out", required=True, help="checkpoint output path")
    sp.add_argument("--epochs", type=int, help="override epoch count")
    sp.add_argument("--seed", type=int, help="override training seed")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="print SER table for a config (and model)")
    add_experiment_flags(sp)
    sp.add_argument("--model", help="trained checkpoint for method 'udnet'")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="run the SER sweep and write CSV / plot script")
    add_experiment_flags(sp)
    sp.add_argument("--model", help="trained checkpoint for method 'udnet'")
    sp.add_argument("--out-csv", dest="out_csv", required=True)
    sp.add_argument("--out-plot", dest="out_plot", help="gnuplot script output path")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("timing", help="per-symbol equalization time versus N")
    sp.add_argument("--subcarriers", default="512,1024,2048")
    sp.add_argument("--block-size", dest="block_size", type=int, default=32)
    sp.add_argument("--layers", type=int, default=6)
    sp.add_argument("--hidden", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_timing)

    sp = sub.add_parser("inspect-channel", help="band-energy statistics of a channel")
    sp.add_argument("--cir", help="channel realisation file")
    sp.add_argument("--config", help="experiment config (synthesises the first realisation)")
    sp.add_argument("--block-size", dest="block_size", type=int)
    sp.set_defaults(func=cmd_inspect_channel)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, CirFormatError, CheckpointFormatError,
            TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
