"""Command-line entry point tying the pipeline stages together.

Every subcommand is driven by one config file plus ``--key value``
overrides mirroring the config keys, and echoes the effective settings
into its output directory as ``meta`` so artifacts are self-describing.
"""

import argparse
import os
import sys

import numpy as np

from . import config as cfgmod
from . import ctf
from .metrics import evaluate, psnr, ssim
from .physics import fbp, forward_project, make_phantom, simulate_ldct
from .schedule import build_schedule, dump_csv
from .training import (ablate_sigma, load_model_checkpoint, reconstruct_set,
                       train)


def _write_meta(out_dir, cfg):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "meta"), "w") as fh:
        fh.write(cfgmod.serialize(cfg))


def _load_config(args, overrides):
    if args.config:
        cfg = cfgmod.parse_file(args.config)
    else:
        cfg = dict(cfgmod.DEFAULTS)
    cfgmod.apply_overrides(cfg, overrides)
    return cfg


def _collect_overrides(extras):
    """Turn leftover ['--key', 'value', ...] args into override pairs."""
    pairs = []
    i = 0
    while i < len(extras):
        flag = extras[i]
        if not flag.startswith("--") or i + 1 >= len(extras):
            raise cfgmod.ConfigError(f"cannot parse override {flag!r}; expected --key value")
        pairs.append((flag[2:], extras[i + 1]))
        i += 2
    return pairs


def _test_dataset(cfg):
    return cfg["paths.test_dataset"] or cfg["paths.dataset"]


def cmd_phantom(cfg):
    root = cfg["paths.dataset"]
    paths = ctf.init_dataset_dir(root)
    n = cfg["geometry.n"]
    kind = cfg["phantom.kind"]
    for i in range(cfg["phantom.count"]):
        img = make_phantom(kind, n, seed=cfg["seed"], index=i)
        ctf.write_array(os.path.join(paths["clean"], ctf.item_name(i)), img)
    _write_meta(root, cfg)
    return 0


def cmd_simulate(cfg):
    root = cfg["paths.dataset"]
    paths = ctf.init_dataset_dir(root)
    geom = cfgmod.to_geometry(cfg)
    noise = cfgmod.to_noise(cfg)
    names = ctf.list_arrays(paths["clean"])
    if not names:
        print(f"simulate: no clean images in {paths['clean']}", file=sys.stderr)
        return 1
    for i, name in enumerate(names):
        clean = ctf.read_array(os.path.join(paths["clean"], name))
        sino = forward_project(clean, geom)
        ldct = simulate_ldct(sino, noise, index=i)
        ctf.write_array(os.path.join(paths["sino_clean"], name), sino)
        ctf.write_array(os.path.join(paths["sino_ldct"], name), ldct)
        ctf.write_array(os.path.join(paths["fbp_ldct"], name), fbp(ldct, geom))
    _write_meta(root, cfg)
    return 0


def cmd_train(cfg, resume=None):
    geom = cfgmod.to_geometry(cfg)
    sched = build_schedule(cfgmod.to_schedule_config(cfg))
    tcfg = cfgmod.to_train_config(cfg)
    out_dir = cfg["paths.out"]
    _write_meta(out_dir, cfg)
    train(cfg["paths.dataset"], geom, sched, tcfg, out_dir,
          config_echo=cfgmod.serialize(cfg), resume=resume)
    return 0


def _load_for_sampling(cfg, ckpt):
    geom = cfgmod.to_geometry(cfg)
    tcfg = cfgmod.to_train_config(cfg)
    model, _, _ = load_model_checkpoint(ckpt, geom, tcfg)
    sched = build_schedule(cfgmod.to_schedule_config(cfg, K=model.K))
    root = _test_dataset(cfg)
    data = ctf.load_dataset(root, subdirs=("clean", "sino_ldct", "fbp_ldct"))
    return geom, model, sched, data


def cmd_sample(cfg, ckpt):
    geom, model, sched, data = _load_for_sampling(cfg, ckpt)
    recons = reconstruct_set(data["sino_ldct"], data["fbp_ldct"], model, geom, sched,
                             sigma_scale=cfg["sample.sigma_scale"],
                             final_noise=cfg["sample.final_noise"],
                             seed=cfg["seed"])
    out_dir = os.path.join(cfg["paths.out"], "recon")
    os.makedirs(out_dir, exist_ok=True)
    for name, rec in zip(data["names"], recons):
        ctf.write_array(os.path.join(out_dir, name), rec)
    _write_meta(cfg["paths.out"], cfg)
    return 0


def cmd_eval(cfg, recon_dir, ref_dir, out_csv):
    recon_dir = recon_dir or os.path.join(cfg["paths.out"], "recon")
    ref_dir = ref_dir or os.path.join(_test_dataset(cfg), "clean")
    out_csv = out_csv or os.path.join(cfg["paths.out"], "metrics.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out_csv)), exist_ok=True)
    evaluate(recon_dir, ref_dir, csv_path=out_csv)
    return 0


def cmd_schedule_dump(cfg, out):
    sched = build_schedule(cfgmod.to_schedule_config(cfg))
    if out:
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        dump_csv(sched, out)
    else:
        dump_csv(sched, sys.stdout)
    return 0


def cmd_ablate_sigma(cfg, ckpt, scales, out_csv):
    geom, model, sched, data = _load_for_sampling(cfg, ckpt)
    out_csv = out_csv or os.path.join(cfg["paths.out"], "ablate_sigma.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out_csv)), exist_ok=True)
    ablate_sigma(scales, data["clean"], data["sino_ldct"], data["fbp_ldct"],
                 model, geom, sched, seed=cfg["seed"], csv_path=out_csv,
                 final_noise=cfg["sample.final_noise"])
    return 0


def cmd_ablate_k(cfg, ks, out_csv):
    geom = cfgmod.to_geometry(cfg)
    out_root = cfg["paths.out"]
    out_csv = out_csv or os.path.join(out_root, "ablate_k.csv")
    test = ctf.load_dataset(_test_dataset(cfg), subdirs=("clean", "sino_ldct", "fbp_ldct"))
    rows = []
    for K in ks:
        sched = build_schedule(cfgmod.to_schedule_config(cfg, K=K))
        tcfg = cfgmod.to_train_config(cfg, K=K)
        k_dir = os.path.join(out_root, f"k{K}")
        result = train(cfg["paths.dataset"], geom, sched, tcfg, k_dir,
                       config_echo=cfgmod.serialize(cfg))
        recons = reconstruct_set(test["sino_ldct"], test["fbp_ldct"], result["model"],
                                 geom, sched, sigma_scale=cfg["sample.sigma_scale"],
                                 final_noise=cfg["sample.final_noise"], seed=cfg["seed"])
        ps = float(np.mean([psnr(r, c) for r, c in zip(recons, test["clean"])]))
        ss = float(np.mean([ssim(r, c) for r, c in zip(recons, test["clean"])]))
        rows.append((K, ps, ss))
    os.makedirs(os.path.dirname(os.path.abspath(out_csv)), exist_ok=True)
    with open(out_csv, "w") as fh:
        fh.write("K,psnr_db,ssim\n")
        for K, ps, ss in rows:
            fh.write(f"{K},{ps!r},{ss!r}\n")
    return 0


def _int_list(text):
    return [int(v) for v in text.split(",") if v]


def _float_list(text):
    return [float(v) for v in text.split(",") if v]


def build_parser():
    p = argparse.ArgumentParser(prog="ubct",
                                description="Unfolded bridge CT reconstruction pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, **kwargs):
        sp = sub.add_parser(name, **kwargs)
        sp.add_argument("--config", default=None, help="config file (key = value lines)")
        return sp

    add("phantom", help="generate clean phantom images")
    add("simulate", help="project, add low-dose noise, and FBP-reconstruct")
    sp = add("train", help="train the unfolded network")
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")
    sp = add("sample", help="reconstruct a dataset with a trained model")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--sigma-scale", type=float, default=None)
    sp.add_argument("--no-final-noise", action="store_true")
    sp = add("eval", help="compute PSNR/SSIM between two directories")
    sp.add_argument("--recon", default=None)
    sp.add_argument("--ref", default=None)
    sp.add_argument("--out", default=None)
    sp = add("schedule-dump", help="write the schedule table as CSV")
    sp.add_argument("--out", default=None)
    sp = add("ablate-sigma", help="sweep the sampling noise scale")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--scales", type=_float_list, default=[1, 3, 6, 9, 12, 15])
    sp.add_argument("--out", default=None)
    sp = add("ablate-k", help="retrain and evaluate across layer counts")
    sp.add_argument("--k", type=_int_list, default=[5, 6, 7, 8, 9])
    sp.add_argument("--out", default=None)
    return p


def main(argv=None):
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        overrides = _collect_overrides(extras)
        cfg = _load_config(args, overrides)
        if args.command == "sample":
            if args.sigma_scale is not None:
                cfg["sample.sigma_scale"] = args.sigma_scale
            if args.no_final_noise:
                cfg["sample.final_noise"] = False
    except cfgmod.ConfigError as exc:
        print(f"ubct: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "phantom":
            return cmd_phantom(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        if args.command == "sample":
            return cmd_sample(cfg, args.ckpt)
        if args.command == "eval":
            return cmd_eval(cfg, args.recon, args.ref, args.out)
        if args.command == "schedule-dump":
            return cmd_schedule_dump(cfg, args.out)
        if args.command == "ablate-sigma":
            return cmd_ablate_sigma(cfg, args.ckpt, args.scales, args.out)
        if args.command == "ablate-k":
            return cmd_ablate_k(cfg, args.k, args.out)
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"ubct: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
