"""Training and evaluation orchestration.

Pretraining, classification fine-tuning, few-shot episodes, masking
ablations, and reconstruction export. Every run is a pure function of
(config, master seed): data order, augmentation, patchification, and masking
all draw from seeds derived per (epoch, item), so resuming from a checkpoint
replays the identical stream.
"""

import copy
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NumericsError, Tensor, backward
from .config import RunConfig
from .data import augment, build_dataset, save_ply
from .geometry import PointCloud, chamfer_l2
from .model import (MaskedAutoencoder, PointCloudClassifier, cross_entropy,
                    cross_entropy_batch)
from .params import AdamW, ParamStore, cosine_lr, read_container, write_container
from .seeding import derive_rng, derive_seed


class TrainingAbort(RuntimeError):
    """Raised on NaN/Inf during training; carries the offending batch seed."""

    def __init__(self, message, item_seed=None, epoch=None):
        super().__init__(message)
        self.item_seed = item_seed
        self.epoch = epoch


@dataclass
class Metrics:
    """Append-only per-epoch records with strictly increasing epoch index."""

    records: list = field(default_factory=list)

    def append(self, **fields):
        if self.records and fields["epoch"] <= self.records[-1]["epoch"]:
            raise ValueError("epoch indices must be strictly increasing")
        self.records.append(fields)

    def to_jsonl(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def save(self, path):
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    def deterministic_records(self):
        """Records minus wall-clock fields, for run-to-run comparison."""
        return [{k: v for k, v in r.items() if k != "wall_time"}
                for r in self.records]

    def final(self, key):
        return self.records[-1][key]


@dataclass
class Checkpoint:
    """Model parameters, optimizer moments, config, and progress counters."""

    params: dict
    opt_m: dict
    opt_v: dict
    meta: dict

    @classmethod
    def capture(cls, model, opt, config, epoch, global_step, extra=None):
        meta = {
            "config": config.to_dict(),
            "epoch": epoch,
            "global_step": global_step,
            "opt_step_count": opt.step_count,
            "seed": config.seed,
        }
        if extra:
            meta.update(extra)
        meta = json.loads(json.dumps(meta, sort_keys=True))  # normalize tuples
        return cls(
            params={k: v.copy() for k, v in model.store.state_arrays().items()},
            opt_m={k: v.copy() for k, v in opt.m.items()},
            opt_v={k: v.copy() for k, v in opt.v.items()},
            meta=meta,
        )

    def to_bytes(self):
        arrays = {}
        for k, v in self.params.items():
            arrays[f"param/{k}"] = v
        for k, v in self.opt_m.items():
            arrays[f"opt_m/{k}"] = v
        for k, v in self.opt_v.items():
            arrays[f"opt_v/{k}"] = v
        return write_container(arrays, self.meta)

    @classmethod
    def from_bytes(cls, blob):
        arrays, meta = read_container(blob)
        params, opt_m, opt_v = {}, {}, {}
        for k, v in arrays.items():
            kind, name = k.split("/", 1)
            {"param": params, "opt_m": opt_m, "opt_v": opt_v}[kind][name] = v
        return cls(params=params, opt_m=opt_m, opt_v=opt_v, meta=meta)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())

    def config(self):
        return RunConfig.from_dict(self.meta["config"])

    def build_model(self):
        cfg = self.config()
        model = MaskedAutoencoder(cfg.model, cfg.patch_size,
                                  seed=derive_seed(cfg.seed, "init"))
        model.store.load_arrays(self.params)
        return model


def pretrain(config: RunConfig, resume: Checkpoint | None = None,
             out_dir=None, checkpoint_every=0, dataset=None, quiet=True):
    """Masked-reconstruction pretraining. Returns (Checkpoint, Metrics).

    Per batch: augment, patchify, mask, forward, backward, AdamW step under a
    warmup+cosine schedule. Logs the per-epoch mean loss (x1000). A NaN/Inf
    raises TrainingAbort with the offending item seed; with ``out_dir`` set, a
    diagnostic dump is written first.
    """
    seed = config.seed
    if dataset is None:
        dataset = build_dataset(config.data, config.points, derive_seed(seed, "dataset"))
    train = dataset.train
    model = MaskedAutoencoder(config.model, config.patch_size,
                              seed=derive_seed(seed, "init"))
    opt = AdamW(model.store, lr=config.lr_max, weight_decay=config.weight_decay)

    steps_per_epoch = max(1, math.ceil(len(train) / config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    warmup_steps = config.warmup_epochs * steps_per_epoch
    if total_steps > 0 and warmup_steps >= total_steps:
        raise ValueError("warmup_epochs must be smaller than epochs")

    start_epoch = 0
    global_step = 0
    if resume is not None:
        model.store.load_arrays(resume.params)
        opt.load_state({**{f"m/{k}": v for k, v in resume.opt_m.items()},
                        **{f"v/{k}": v for k, v in resume.opt_v.items()}},
                       resume.meta["opt_step_count"])
        start_epoch = resume.meta["epoch"]
        global_step = resume.meta["global_step"]

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    metrics = Metrics()
    lr = 0.0
    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        order = derive_rng(seed, "order", epoch).permutation(len(train))
        epoch_losses = []
        for b in range(steps_per_epoch):
            batch = order[b * config.batch_size:(b + 1) * config.batch_size]
            if batch.size == 0:
                continue
            model.store.zero_grad()
            item_seeds = [derive_seed(seed, "item", epoch, int(idx)) for idx in batch]
            clouds = [augment(train[idx], derive_seed(s, "aug"))
                      for idx, s in zip(batch, item_seeds)]
            try:
                loss, _ = model.pretrain_forward_batch(
                    clouds, config.n_patches, config.mask_ratio,
                    seeds=item_seeds, mask_type=config.mask_type)
                if loss.requires_grad:
                    backward(loss)
            except NumericsError as exc:
                _dump_abort(out_path, epoch, item_seeds, exc)
                raise TrainingAbort(
                    f"non-finite loss at epoch {epoch}, batch seeds {item_seeds}: {exc}",
                    item_seed=item_seeds, epoch=epoch) from exc
            epoch_losses.extend([float(loss.data)] * batch.size)
            lr = cosine_lr(global_step, total_steps, config.lr_max,
                           config.lr_min, warmup_steps)
            opt.step(lr=lr)
            global_step += 1
        record = {
            "epoch": epoch,
            "loss_x1000": float(np.mean(epoch_losses)) * 1000.0,
            "lr": lr,
            "wall_time": time.perf_counter() - t0,
        }
        metrics.append(**record)
        if not quiet:
            print(f"epoch {epoch:4d}  loss(x1000) {record['loss_x1000']:9.4f}  "
                  f"lr {lr:.2e}")
        if out_path is not None and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            Checkpoint.capture(model, opt, config, epoch + 1, global_step).save(
                out_path / f"checkpoint_{epoch + 1:04d}.bin")

    final = Checkpoint.capture(model, opt, config, config.epochs, global_step)
    if out_path is not None:
        final.save(out_path / "checkpoint_final.bin")
        metrics.save(out_path / "metrics.jsonl")
    return final, metrics


def _dump_abort(out_path, epoch, item_seed, exc):
    if out_path is None:
        return
    out_path.mkdir(parents=True, exist_ok=True)
    (out_path / "abort.json").write_text(json.dumps({
        "epoch": epoch, "item_seed": item_seed, "error": str(exc)}, indent=2))


def finetune_classify(dataset, config: RunConfig, checkpoint: Checkpoint | None = None,
                      seed=None, quiet=True):
    """Train a classifier (encoder + pooled head) and report test accuracy.

    With ``checkpoint`` the encoder starts from pretrained weights, otherwise
    from scratch. No masking and no augmentation at evaluation time.
    Returns (accuracy, classifier, Metrics).
    """
    seed = config.seed if seed is None else seed
    labels = sorted({c.label for c in dataset.train})
    label_pos = {lab: i for i, lab in enumerate(labels)}
    n_classes = len(labels)
    if checkpoint is not None and checkpoint.meta.get("n_classes") not in (None, n_classes):
        raise ValueError(
            f"checkpoint head expects {checkpoint.meta['n_classes']} classes, "
            f"dataset has {n_classes}")

    clf = PointCloudClassifier(config.model, config.patch_size, config.n_patches,
                               n_classes, seed=derive_seed(seed, "cls_init"))
    if checkpoint is not None:
        clf.load_backbone(checkpoint.params)
    opt = AdamW(clf.store, lr=config.finetune_lr, weight_decay=config.weight_decay)

    train = dataset.train
    steps_per_epoch = max(1, math.ceil(len(train) / config.batch_size))
    total_steps = config.finetune_epochs * steps_per_epoch
    warmup_steps = max(1, total_steps // 10)
    global_step = 0
    metrics = Metrics()
    lr = 0.0
    for epoch in range(config.finetune_epochs):
        t0 = time.perf_counter()
        order = derive_rng(seed, "ft_order", epoch).permutation(len(train))
        epoch_losses = []
        for b in range(steps_per_epoch):
            batch = order[b * config.batch_size:(b + 1) * config.batch_size]
            if batch.size == 0:
                continue
            clf.store.zero_grad()
            # patch views are fixed per item; only the augmentation varies
            view_seeds = [derive_seed(seed, "view", int(idx)) for idx in batch]
            clouds = [augment(train[idx], derive_seed(seed, "aug", epoch, int(idx)))
                      for idx in batch]
            labels = [label_pos[train[idx].label] for idx in batch]
            logits = clf.logits_batch(clouds, view_seeds, train=True)
            loss = cross_entropy_batch(logits, labels)
            backward(loss)
            epoch_losses.append(float(loss.data))
            lr = cosine_lr(global_step, total_steps, config.finetune_lr,
                           config.lr_min, warmup_steps)
            opt.step(lr=lr)
            global_step += 1
        metrics.append(epoch=epoch, loss_x1000=float(np.mean(epoch_losses)) * 1000.0,
                       lr=lr, wall_time=time.perf_counter() - t0)
        if not quiet:
            print(f"finetune epoch {epoch:3d}  ce {np.mean(epoch_losses):7.4f}")

    accuracy = evaluate_classifier(clf, dataset.test, label_pos, seed)
    return accuracy, clf, metrics


def evaluate_classifier(clf, items, label_pos, seed, batch_size=16):
    """Plain accuracy; no augmentation or masking at evaluation."""
    correct = 0
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        seeds = [derive_seed(seed, "eval", start + i) for i in range(len(chunk))]
        logits = clf.logits_batch(chunk, seeds, train=False)
        preds = np.argmax(logits.data, axis=1)
        correct += sum(int(p) == label_pos[c.label] for p, c in zip(preds, chunk))
    return correct / len(items)


def fewshot_eval(checkpoint: Checkpoint, pool, n_way, m_shot, runs=10,
                 test_per_class=20, seed=0, head_epochs=60, head_lr=5e-4):
    """n-way / m-shot episodic evaluation over frozen encoder features.

    Per run: sample classes, supports, and queries with a run-indexed seed,
    train a small head on the supports, report query accuracy. Returns a dict
    with the mean, the population standard deviation over runs, and the
    per-run accuracies.
    """
    by_class = {}
    for cloud in pool:
        by_class.setdefault(cloud.label, []).append(cloud)
    if len(by_class) < n_way:
        raise ValueError(f"need {n_way} classes, pool has {len(by_class)}")
    needed = m_shot + test_per_class
    for label, items in sorted(by_class.items()):
        if len(items) < needed:
            raise ValueError(
                f"class {label} has {len(items)} items, needs {needed}")

    cfg = checkpoint.config()
    clf_like = PointCloudClassifier(cfg.model, cfg.patch_size, cfg.n_patches,
                                    n_classes=2, seed=0)
    clf_like.load_backbone(checkpoint.params)

    feature_cache = {}

    def features_of(cloud, key):
        if key not in feature_cache:
            f = clf_like.features(cloud, seed=derive_seed(seed, "feat", key))
            feature_cache[key] = f.data.copy()
        return feature_cache[key]

    pool_index = {id(c): i for i, c in enumerate(pool)}
    labels_sorted = sorted(by_class.keys())
    accuracies = []
    for run in range(runs):
        rng = derive_rng(seed, "episode", run)
        classes = list(rng.choice(labels_sorted, size=n_way, replace=False))
        supports, queries = [], []
        for ci, label in enumerate(classes):
            items = by_class[label]
            picked = rng.permutation(len(items))[:needed]
            for j in picked[:m_shot]:
                supports.append((items[j], ci))
            for j in picked[m_shot:]:
                queries.append((items[j], ci))

        head = _train_fewshot_head(
            cfg.model, n_way,
            [(features_of(c, pool_index[id(c)]), y) for c, y in supports],
            derive_seed(seed, "head", run), head_epochs, head_lr)
        correct = 0
        for cloud, y in queries:
            logits = _head_logits(head, features_of(cloud, pool_index[id(cloud)]))
            if int(np.argmax(logits.data)) == y:
                correct += 1
        accuracies.append(correct / len(queries))

    acc = np.array(accuracies)
    return {
        "mean": float(acc.mean()),
        "std": float(acc.std()),  # population std: one value -> 0
        "per_run": accuracies,
        "n_way": n_way,
        "m_shot": m_shot,
        "runs": runs,
    }


def _train_fewshot_head(cfg, n_way, support_features, seed, epochs, lr):
    store = ParamStore(seed)
    dim = cfg.dim
    head = {
        "w1": store.add("w1", (2 * dim, dim)),
        "b1": store.add("b1", (dim,), init="zeros"),
        "w2": store.add("w2", (dim, n_way)),
        "b2": store.add("b2", (n_way,), init="zeros"),
        "store": store,
    }
    opt = AdamW(store, lr=lr, weight_decay=0.0)
    order_rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = order_rng.permutation(len(support_features))
        store.zero_grad()
        for idx in order:
            feat, y = support_features[idx]
            loss = cross_entropy(_head_logits(head, feat), y)
            backward(loss * (1.0 / len(support_features)))
        opt.step()
    return head


def _head_logits(head, feature_array):
    x = Tensor(feature_array)
    h = ad.gelu(ad.linear(x, head["w1"], head["b1"]))
    return ad.linear(h, head["w2"], head["b2"])


def ablate_mask(config: RunConfig, types=("random",), ratios=(0.4, 0.6, 0.8),
                encoder_cell=True, quiet=True):
    """Pretrain + finetune per (mask type, ratio) cell; returns row dicts.

    Cells are pairwise independent: each derives fresh seeds from the master
    seed and its cell index. ``encoder_cell`` adds the mask-tokens-at-encoder
    variant at the config's own ratio.
    """
    cells = [(t, r, "decoder") for t in types for r in ratios]
    if encoder_cell:
        cells.append(("random", config.mask_ratio, "encoder"))
    rows = []
    for ci, (mask_type, ratio, placement) in enumerate(cells):
        cell_cfg = copy.deepcopy(config)
        cell_cfg.mask_type = mask_type
        cell_cfg.mask_ratio = float(ratio)
        cell_cfg.model.mask_token_placement = placement
        cell_cfg.seed = derive_seed(config.seed, "ablate", ci)
        ckpt, metrics = pretrain(cell_cfg, quiet=quiet)
        dataset = build_dataset(cell_cfg.data, cell_cfg.points,
                                derive_seed(cell_cfg.seed, "dataset"))
        accuracy, _, _ = finetune_classify(dataset, cell_cfg, checkpoint=ckpt)
        rows.append({
            "mask_type": mask_type,
            "ratio": float(ratio),
            "placement": placement,
            "loss_x1000": metrics.final("loss_x1000"),
            "accuracy": accuracy,
        })
        if not quiet:
            print(format_ablation_table(rows[-1:]))
    return rows


def format_ablation_table(rows):
    header = f"{'type':<8} {'ratio':>5} {'tokens-at':>10} {'loss(x1000)':>12} {'acc':>7}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['mask_type']:<8} {r['ratio']:>5.2f} {r['placement']:>10} "
                     f"{r['loss_x1000']:>12.4f} {r['accuracy']:>7.4f}")
    return "\n".join(lines)


def chamfer_value(a, b):
    """Non-differentiable Chamfer number between two (p,3) arrays."""
    return float(chamfer_l2(Tensor(np.asarray(a)), Tensor(np.asarray(b))).data)


def reconstruction_report(model, cloud, n_patches, ratio, seed):
    """Reconstruct one cloud and compare against the centers-only baseline.

    The reconstruction is the union of the visible input points and the
    predicted masked patches re-anchored at their centers; the baseline
    replaces each predicted patch with k copies of its center.
    """
    _, diag = model.pretrain_forward(cloud, n_patches, ratio, seed=seed,
                                     train=False)
    ps, spec = diag["patchset"], diag["mask"]
    vis_idx = np.unique(ps.point_indices[spec.visible].reshape(-1))
    visible_pts = cloud.points[vis_idx]
    centers_m = ps.centers[spec.masked]
    predicted_abs = (diag["predicted"] + centers_m[:, None, :]).reshape(-1, 3)
    k = ps.k
    baseline_abs = np.repeat(centers_m, k, axis=0)

    if len(spec.masked) == 0:
        recon = cloud.points
        baseline = cloud.points
    else:
        recon = np.concatenate([visible_pts, predicted_abs]) if visible_pts.size \
            else predicted_abs
        baseline = np.concatenate([visible_pts, baseline_abs]) if visible_pts.size \
            else baseline_abs
    return {
        "visible_points": visible_pts,
        "predicted_points": predicted_abs,
        "reconstruction": recon,
        "chamfer": chamfer_value(recon, cloud.points),
        "baseline_chamfer": chamfer_value(baseline, cloud.points),
        "mask": spec,
        "patchset": ps,
    }


def reconstruct(checkpoint: Checkpoint, cloud, ratio, out_dir, seed=0):
    """Write the {input, masked, reconstruction} PLY triad for one cloud."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio {ratio} outside [0, 1]")
    cfg = checkpoint.config()
    model = checkpoint.build_model()
    report = reconstruction_report(model, cloud, cfg.n_patches, ratio,
                                   seed=derive_seed(seed, "reconstruct"))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "input": out / "input.ply",
        "masked": out / "masked.ply",
        "reconstruction": out / "reconstruction.ply",
    }
    save_ply(paths["input"], [cloud.points], colors=[(160, 160, 160)])
    save_ply(paths["masked"], [report["visible_points"]], colors=[(70, 130, 220)])
    if len(report["mask"].masked) == 0:
        save_ply(paths["reconstruction"], [cloud.points], colors=[(70, 130, 220)])
    else:
        save_ply(paths["reconstruction"],
                 [report["visible_points"], report["predicted_points"]],
                 colors=[(70, 130, 220), (220, 80, 60)])
    return paths, report
