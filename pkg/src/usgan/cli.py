"""Command-line orchestration.

Subcommands: ``phantom`` (generate the dataset), ``train`` (one GAN stage
or the classifier), ``synth`` (sample a trained generator), ``eval-gan``
(IS/FID report row) and ``experiment`` (the full ablation grid).

Every run writes its fully resolved configuration next to its outputs.
Checkpoints carry a ``<path>.meta`` sidecar with the architecture knobs
needed to rebuild the model.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import checkpoint, data, experiment, metrics, optim
from .classifier import CompactCNN
from .config import RunConfig
from .gan import GanConfig, GanModel, Network, build_gan


def _load_config(path, overrides=None):
    if path:
        return RunConfig.load(path, overrides)
    cfg = RunConfig()
    for k, v in (overrides or {}).items():
        setattr(cfg, k, v)
    return cfg


def _write_meta(path, entries):
    with open(path + ".meta", "w") as fh:
        for k, v in entries.items():
            fh.write(f"{k} = {v}\n")


def _read_meta(path):
    meta = {}
    with open(path + ".meta") as fh:
        for line in fh:
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k.strip()] = v.strip()
    return meta


def save_gan_checkpoint(path, model: GanModel, variant, stage):
    arrays = dict(model.g1.tree.state_arrays())
    arrays.update(model.d1.tree.state_arrays())
    if stage == 2:
        arrays.update(model.g2.tree.state_arrays())
        arrays.update(model.d2.tree.state_arrays())
    checkpoint.save(path, f"gan_stage{stage}", arrays)
    c = model.config
    _write_meta(
        path,
        {
            "variant": variant,
            "stage": stage,
            "nz": c.nz,
            "ngf": c.ngf,
            "ndf": c.ndf,
            "r1": c.r1,
            "r2": c.r2,
            "sa_resolution": c.sa_resolution,
        },
    )


def load_gan_checkpoint(path):
    kind, arrays = checkpoint.load(path)
    if not kind.startswith("gan_stage"):
        raise checkpoint.CheckpointError(f"{path}: expected a GAN checkpoint, got {kind}")
    meta = _read_meta(path)
    stage = int(meta["stage"])
    variant = meta["variant"]
    cfg = GanConfig(
        nz=int(meta["nz"]),
        ngf=int(meta["ngf"]),
        ndf=int(meta["ndf"]),
        r1=int(meta["r1"]),
        r2=int(meta["r2"]),
        use_sn="sn" in variant.split("_"),
        use_sa="sa" in variant.split("_"),
        use_stage2=stage == 2,
        sa_resolution=int(meta["sa_resolution"]),
    )
    model = build_gan(cfg, seed=0)
    model.g1.tree.load_state({k: v for k, v in arrays.items() if k.startswith("g1/")})
    model.d1.tree.load_state({k: v for k, v in arrays.items() if k.startswith("d1/")})
    if stage == 2:
        model.g2.tree.load_state({k: v for k, v in arrays.items() if k.startswith("g2/")})
        model.d2.tree.load_state({k: v for k, v in arrays.items() if k.startswith("d2/")})
    return model, variant


def save_classifier_checkpoint(path, net):
    checkpoint.save(path, "classifier", net.tree.state_arrays())
    _write_meta(path, {"resolution": net.module.resolution,
                       "channels": ",".join(map(str, net.module.channels)),
                       "n_classes": net.module.n_classes})


def load_classifier_checkpoint(path):
    kind, arrays = checkpoint.load(path)
    if kind != "classifier":
        raise checkpoint.CheckpointError(f"{path}: expected a classifier, got {kind}")
    meta = _read_meta(path)
    mod = CompactCNN(
        int(meta["resolution"]),
        tuple(int(c) for c in meta["channels"].split(",")),
        int(meta["n_classes"]),
    )
    net = Network(mod, mod.init_parameters(0))
    net.tree.load_state(arrays)
    return net


def _load_labeled_dir(path):
    """Images plus labels from a dataset dir (manifest.txt) or from
    ``diseased/`` / ``healthy/`` subdirectories of PGM files."""
    if os.path.exists(os.path.join(path, "manifest.txt")):
        ds = data.load_dataset(path)
        x, y, _ = ds.images_and_labels()
        return x, y
    xs, ys = [], []
    for name, label in (("diseased", data.DISEASED), ("healthy", data.HEALTHY)):
        sub = os.path.join(path, name)
        if not os.path.isdir(sub):
            raise FileNotFoundError(
                f"{path}: need manifest.txt or diseased/ and healthy/ subdirectories"
            )
        for fn in sorted(os.listdir(sub)):
            if fn.endswith(".pgm"):
                xs.append(data.to_unit(data.read_pgm(os.path.join(sub, fn)))[None])
                ys.append(label)
    if not xs:
        raise FileNotFoundError(f"{path}: no PGM images found")
    return np.stack(xs), np.asarray(ys)


# -- subcommands --------------------------------------------------------------


def cmd_phantom(args):
    cfg = _load_config(args.config, {"seed": args.seed} if args.seed is not None else None)
    dataset = data.generate_dataset(
        data.DatasetConfig(cfg.n_diseased, cfg.n_healthy, cfg.resolution), cfg.seed
    )
    os.makedirs(args.out, exist_ok=True)
    data.write_dataset(dataset, args.out)
    cfg.save(os.path.join(args.out, "resolved_config.txt"))
    print(f"wrote {sum(s.images.shape[0] for s in dataset.subjects)} images to {args.out}")
    return 0


def _class_images(cfg, args, resolution):
    src = args.data or cfg.data_dir
    if not src:
        raise ValueError("no dataset: pass --data or set data_dir in the config")
    ds = data.load_dataset(src)
    x, y, _ = ds.images_and_labels()
    label = data.LABEL_CODES[args.cls]
    imgs = x[y == label]
    if imgs.shape[-1] != resolution:
        imgs = data.resize_batch(imgs, resolution)
    return ds, imgs


def cmd_train(args):
    cfg = _load_config(args.config, {"seed": args.seed} if args.seed is not None else None)
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "resolved_config.txt"))
    if args.stage == "1":
        gcfg = cfg.gan_config(args.variant)
        _, imgs = _class_images(cfg, args, gcfg.r1)
        model, log = optim.train_stage1(
            imgs, gcfg, cfg.seed, steps=cfg.stage1_steps, batch_size=cfg.batch_size
        )
        ckpt = os.path.join(args.out, "checkpoint.ckpt")
        save_gan_checkpoint(ckpt, model, args.variant, stage=1)
    elif args.stage == "2":
        if not args.stage1_ckpt:
            raise SystemExit("--stage 2 requires --stage1-ckpt")
        base_model, variant = load_gan_checkpoint(args.stage1_ckpt)
        gcfg = cfg.gan_config(variant + "_ours")
        if gcfg.r1 != base_model.config.r1:
            raise ValueError(
                f"stage-1 checkpoint resolution {base_model.config.r1} != configured r1 {gcfg.r1}"
            )
        model = build_gan(gcfg, cfg.seed)
        model.g1.tree.load_state(base_model.g1.tree.state_arrays())
        model.d1.tree.load_state(base_model.d1.tree.state_arrays())
        _, imgs = _class_images(cfg, args, gcfg.r2)
        model, log = optim.train_stage2(
            model, imgs, gcfg, cfg.seed, steps=cfg.stage2_steps, batch_size=cfg.batch_size
        )
        ckpt = os.path.join(args.out, "checkpoint.ckpt")
        save_gan_checkpoint(ckpt, model, variant, stage=2)
    else:  # clf
        src = args.data or cfg.data_dir
        if not src:
            raise ValueError("no dataset: pass --data or set data_dir in the config")
        ds = data.load_dataset(src)
        x, y, _ = ds.images_and_labels()
        net, log = optim.train_classifier(
            x, y, cfg.resolution, cfg.seed, steps=cfg.classifier_steps,
            batch_size=cfg.batch_size, lr=cfg.classifier_lr,
        )
        ckpt = os.path.join(args.out, "checkpoint.ckpt")
        save_classifier_checkpoint(ckpt, net)
    log.to_csv(os.path.join(args.out, "trainlog.csv"))
    print(f"wrote {ckpt}")
    return 0


def cmd_synth(args):
    if args.n <= 0:
        raise ValueError(f"--n must be positive, got {args.n}")
    model, _ = load_gan_checkpoint(args.ckpt)
    images = optim.synthesize(model, args.n, args.seed)
    os.makedirs(args.out, exist_ok=True)
    for i in range(images.shape[0]):
        data.write_pgm(
            os.path.join(args.out, f"synth_{i:05d}.pgm"), data.from_unit(images[i, 0])
        )
    print(f"wrote {args.n} images to {args.out}")
    return 0


def cmd_eval_gan(args):
    extractor = load_classifier_checkpoint(args.extractor_ckpt)
    real_x, real_y = _load_labeled_dir(args.real_dir)
    fake_x, fake_y = _load_labeled_dir(args.fake_dir)
    row = {"variant": args.variant}
    for label, tag in ((data.DISEASED, "abn"), (data.HEALTHY, "norm")):
        rf, _ = metrics.feature_extract(extractor, real_x[real_y == label])
        ff, fp = metrics.feature_extract(extractor, fake_x[fake_y == label])
        n_splits = metrics.default_split_count(fp.shape[0])
        im, istd = metrics.inception_score(fp, n_splits)
        row[f"is_mean_{tag}"] = im
        row[f"is_std_{tag}"] = istd
        row[f"fid_{tag}"] = metrics.frechet_distance(rf, ff)
    new_file = not os.path.exists(args.out)
    with open(args.out, "a", newline="") as fh:
        w = csv.writer(fh)
        if new_file:
            w.writerow(experiment.TABLE1_COLUMNS)
        w.writerow([str(row[c]) for c in experiment.TABLE1_COLUMNS])
    print(",".join(f"{c}={row[c]}" for c in experiment.TABLE1_COLUMNS))
    return 0


def cmd_experiment(args):
    cfg = _load_config(args.config, {"data_dir": args.data} if args.data else None)
    ok = experiment.run_experiment(cfg, args.out)
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="usgan")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("phantom", help="generate the phantom dataset")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_phantom)

    sp = sub.add_parser("train", help="train a GAN stage or the classifier")
    sp.add_argument("--stage", choices=["1", "2", "clf"], required=True)
    sp.add_argument(
        "--variant", choices=["dcgan", "dcgan_sn", "dcgan_sn_sa"], default="dcgan"
    )
    sp.add_argument("--class", dest="cls", choices=["diseased", "healthy"],
                    default="diseased")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--stage1-ckpt")
    sp.add_argument("--data")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("synth", help="sample images from a checkpoint")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("eval-gan", help="IS/FID report row for a fake-image set")
    sp.add_argument("--real-dir", required=True)
    sp.add_argument("--fake-dir", required=True)
    sp.add_argument("--extractor-ckpt", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--variant", default="run")
    sp.set_defaults(func=cmd_eval_gan)

    sp = sub.add_parser("experiment", help="run the full ablation grid")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--data")
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
