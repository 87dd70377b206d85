"""End-to-end ablation harness.

For each of the configured repeats and variants: train per-class GANs on
the subject-grouped training split, synthesize per-class pools, score
them (IS, FID against real training images), assemble the augmented
training set, train the classifier and evaluate it on the held-out test
images.  Emits table1.csv / table2.csv / ttests.csv with per-repeat
detail files; a failing grid cell is recorded and skipped, not fatal.
"""

from __future__ import annotations

import csv
import os
import traceback

from . import data, metrics, optim, seeds
from .config import RunConfig

TABLE1_COLUMNS = [
    "variant",
    "is_mean_abn",
    "is_std_abn",
    "is_mean_norm",
    "is_std_norm",
    "fid_abn",
    "fid_norm",
]
TABLE2_COLUMNS = ["variant", "accuracy", "precision", "recall", "f1"]
TTEST_COLUMNS = ["variant", "t_statistic", "df", "p_value", "note"]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([str(v) for v in row])


def _split_arrays(dataset, plan):
    train_x, train_y, _ = dataset.images_and_labels(plan.train_subjects)
    test_x, test_y, _ = dataset.images_and_labels(plan.test_subjects)
    return train_x, train_y, test_x, test_y


def _train_variant_gans(cfg: RunConfig, variant, train_x, train_y, master, rep):
    """One GAN per class; returns {label: synth pool at dataset resolution}."""
    gcfg = cfg.gan_config(variant)
    pools = {}
    for label in (data.DISEASED, data.HEALTHY):
        cls = data.LABEL_NAMES[label]
        cls_imgs = train_x[train_y == label]
        imgs_r1 = (
            cls_imgs
            if gcfg.r1 == cls_imgs.shape[-1]
            else data.resize_batch(cls_imgs, gcfg.r1)
        )
        s1_seed = seeds.derive(master, f"rep{rep}/{variant}/{cls}/stage1")
        model, _ = optim.train_stage1(
            imgs_r1, gcfg, s1_seed, steps=cfg.stage1_steps, batch_size=cfg.batch_size
        )
        if gcfg.use_stage2:
            imgs_r2 = (
                cls_imgs
                if gcfg.r2 == cls_imgs.shape[-1]
                else data.resize_batch(cls_imgs, gcfg.r2)
            )
            s2_seed = seeds.derive(master, f"rep{rep}/{variant}/{cls}/stage2")
            model, _ = optim.train_stage2(
                model, imgs_r2, gcfg, s2_seed, steps=cfg.stage2_steps,
                batch_size=cfg.batch_size,
            )
        pool = optim.synthesize(
            model, cfg.synth_pool, seeds.derive(master, f"rep{rep}/{variant}/{cls}/synth")
        )
        if pool.shape[-1] != cfg.resolution:
            pool = data.resize_batch(pool, cfg.resolution)
        pools[label] = pool
    return pools


def _gan_scores(cfg, extractor, train_x, train_y, pools):
    row = {}
    for label, tag in ((data.DISEASED, "abn"), (data.HEALTHY, "norm")):
        real_feats, _ = metrics.feature_extract(extractor, train_x[train_y == label])
        fake_feats, fake_probs = metrics.feature_extract(extractor, pools[label])
        n_splits = cfg.is_splits or metrics.default_split_count(fake_probs.shape[0])
        is_mean, is_std = metrics.inception_score(fake_probs, n_splits)
        row[f"is_mean_{tag}"] = is_mean
        row[f"is_std_{tag}"] = is_std
        row[f"fid_{tag}"] = metrics.frechet_distance(real_feats, fake_feats)
    return row


def _classifier_metrics(net, test_x, test_y):
    preds = optim.classify(net, test_x)
    acc, prec, rec, f1 = metrics.classification_report(preds, test_y)
    mprec, mrec, mf1 = metrics.macro_report(preds, test_y)
    return {
        "accuracy": acc,
        "precision": prec,
        "recall": rec,
        "f1": f1,
        "macro_precision": mprec,
        "macro_recall": mrec,
        "macro_f1": mf1,
    }


def run_experiment(cfg: RunConfig, out_dir, dataset=None):
    """Run the full repeats x variants grid.  Returns True when every cell
    succeeded."""
    os.makedirs(out_dir, exist_ok=True)
    cfg.save(os.path.join(out_dir, "resolved_config.txt"))
    if dataset is None:
        if cfg.data_dir:
            dataset = data.load_dataset(cfg.data_dir)
        else:
            dataset = data.generate_dataset(
                data.DatasetConfig(cfg.n_diseased, cfg.n_healthy, cfg.resolution),
                cfg.seed,
            )
    if dataset.resolution != cfg.resolution:
        raise ValueError(
            f"dataset resolution {dataset.resolution} != configured {cfg.resolution}"
        )
    master = cfg.seed
    variants = cfg.variant_list()
    t1_detail, t2_detail, failures = [], [], []
    acc_by_variant = {v: {} for v in ["original"] + variants}

    for rep in range(cfg.repeats):
        plan = data.split_dataset(dataset, master, rep, cfg.test_per_class)
        train_x, train_y, test_x, test_y = _split_arrays(dataset, plan)

        clf_seed = seeds.derive(master, f"rep{rep}/clf/original")
        baseline, _ = optim.train_classifier(
            train_x, train_y, cfg.resolution, clf_seed,
            steps=cfg.classifier_steps, batch_size=cfg.batch_size,
            lr=cfg.classifier_lr,
        )
        base_row = _classifier_metrics(baseline, test_x, test_y)
        acc_by_variant["original"][rep] = base_row["accuracy"]
        t2_detail.append([rep, "original"] + [base_row[k] for k in (
            "accuracy", "precision", "recall", "f1",
            "macro_precision", "macro_recall", "macro_f1")])

        for variant in variants:
            try:
                pools = _train_variant_gans(cfg, variant, train_x, train_y, master, rep)
                scores = _gan_scores(cfg, baseline, train_x, train_y, pools)
                t1_detail.append(
                    [rep, variant] + [scores[c] for c in TABLE1_COLUMNS[1:]]
                )
                aug_x, aug_y, _prov = data.assemble_augmented_trainset(
                    train_x, train_y,
                    pools[data.DISEASED], pools[data.HEALTHY],
                    cfg.target_per_class,
                )
                aug_seed = seeds.derive(master, f"rep{rep}/clf/{variant}")
                clf, _ = optim.train_classifier(
                    aug_x, aug_y, cfg.resolution, aug_seed,
                    steps=cfg.classifier_steps, batch_size=cfg.batch_size,
                    lr=cfg.classifier_lr,
                )
                row = _classifier_metrics(clf, test_x, test_y)
                acc_by_variant[variant][rep] = row["accuracy"]
                t2_detail.append([rep, variant] + [row[k] for k in (
                    "accuracy", "precision", "recall", "f1",
                    "macro_precision", "macro_recall", "macro_f1")])
            except Exception as exc:  # cell isolation: record and move on
                failures.append([rep, variant, repr(exc)])
                traceback.print_exc()

    _write_csv(
        os.path.join(out_dir, "table1_detail.csv"),
        ["repeat"] + TABLE1_COLUMNS, t1_detail,
    )
    _write_csv(
        os.path.join(out_dir, "table2_detail.csv"),
        ["repeat", "variant", "accuracy", "precision", "recall", "f1",
         "macro_precision", "macro_recall", "macro_f1"],
        t2_detail,
    )

    t1_rows = []
    for variant in variants:
        rows = [r for r in t1_detail if r[1] == variant]
        if rows:
            means = [sum(r[i + 2] for r in rows) / len(rows) for i in range(6)]
            t1_rows.append([variant] + means)
    _write_csv(os.path.join(out_dir, "table1.csv"), TABLE1_COLUMNS, t1_rows)

    t2_rows = []
    for variant in ["original"] + variants:
        rows = [r for r in t2_detail if r[1] == variant]
        if rows:
            means = [sum(r[i + 2] for r in rows) / len(rows) for i in range(4)]
            t2_rows.append([variant] + means)
    _write_csv(os.path.join(out_dir, "table2.csv"), TABLE2_COLUMNS, t2_rows)

    tt_rows = []
    for variant in variants:
        shared = sorted(
            set(acc_by_variant[variant]) & set(acc_by_variant["original"])
        )
        if len(shared) < 2:
            tt_rows.append([variant, "nan", len(shared) - 1, "nan", "insufficient"])
            continue
        a = [acc_by_variant[variant][r] for r in shared]
        b = [acc_by_variant["original"][r] for r in shared]
        try:
            t, df, p = metrics.paired_t_test(a, b)
            tt_rows.append([variant, t, df, p, ""])
        except metrics.DegenerateTTest:
            tt_rows.append([variant, "nan", len(shared) - 1, "nan", "degenerate"])
    _write_csv(os.path.join(out_dir, "ttests.csv"), TTEST_COLUMNS, tt_rows)

    _write_csv(
        os.path.join(out_dir, "failures.csv"), ["repeat", "variant", "error"], failures
    )
    return not failures
