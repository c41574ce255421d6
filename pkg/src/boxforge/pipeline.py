"""Pipeline commands: train, synthesize, evaluate, downstream comparison, toygen.

Each command takes a validated :class:`~boxforge.config.RunConfig`, writes its
machine-readable results under ``config.output_dir`` (alongside the archived
config, tool version, and input manifest hashes), and returns the primary
artifact path or result. Logs go to the supplied ``log`` callable so the CLI
can route them to stderr.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import __version__
from .analog_bits import ClassAlphabet
from .config import ConfigError, RunConfig
from .dataset import (
    DatasetManifest,
    DatasetRecord,
    ToySpec,
    generate_toy_dataset,
    load_manifest,
    load_sample,
    save_generated,
    save_manifest,
    split_dataset,
)
from .denoiser import ConditionalUNet, DenoiserConfig
from .diffusion import (
    TrainingError,
    conditioning_channels,
    decode_sample,
    encode_joint_state,
    load_checkpoint,
    sample,
    sampling_timesteps,
    save_checkpoint,
    training_loss,
)
from .geometry import compute_maps_fast
from .metrics import (
    AlignmentReport,
    alignment_report,
    clip_labels_to_boxes,
    pixel_f1,
    pool_reports,
    render_report_table,
)
from .schedule import build_schedule


def _log_stderr(message: str) -> None:
    print(message, file=sys.stderr)


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def archive_run_metadata(
    out_dir: Path, config: RunConfig, command: str, input_manifests: list[Path]
) -> None:
    """Drop config.json + meta.json so any output directory is self-describing."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "config.json")
    meta = {
        "tool": "boxforge",
        "version": __version__,
        "command": command,
        "input_manifest_sha256": {str(p): _sha256(p) for p in input_manifests},
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _load_training_tensors(manifest: DatasetManifest, records: list[DatasetRecord]):
    """Cache the whole split as joint-state and conditioning tensor stacks."""
    x0s, conds = [], []
    for rec in records:
        item = load_sample(rec, manifest.root, manifest.alphabet)
        h, w = item.mask.shape
        x0s.append(encode_joint_state(item.image, item.mask, manifest.alphabet))
        maps = compute_maps_fast(item.boxes, h, w)
        conds.append(conditioning_channels(maps, manifest.alphabet))
    return torch.stack(x0s), torch.stack(conds)


def _ema_init(model: nn.Module) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def _ema_update(shadow: dict[str, torch.Tensor], model: nn.Module, decay: float) -> None:
    for k, v in model.state_dict().items():
        if v.dtype.is_floating_point:
            shadow[k].mul_(decay).add_(v.detach(), alpha=1.0 - decay)
        else:
            shadow[k].copy_(v)


def _save_train_checkpoint(path, model, schedule, alphabet, config, state):
    weights = dict(model.state_dict())
    extra = {
        "epoch": state["epoch"],
        "height": state["height"],
        "width": state["width"],
        "optimizer_state": state["optimizer"].state_dict(),
        "generator_state": state["generator"].get_state(),
        "ema": config.ema,
    }
    if config.ema:
        extra["raw_model_state"] = weights
        model_to_save = state["ema_shadow"]
    else:
        model_to_save = weights
    saved = ConditionalUNet(model.config)
    saved.load_state_dict(model_to_save)
    save_checkpoint(path, saved, schedule, alphabet, seed=config.diffusion_seed, extra=extra)


def cmd_train(config: RunConfig, log=_log_stderr) -> Path:
    """Fit the denoiser on the manifest's diffusion_train split."""
    config.validate()
    manifest = load_manifest(Path(config.manifest))
    records = [r for r in manifest.records if r.split == "diffusion_train"]
    if not records:
        raise ConfigError(f"{config.manifest} has no diffusion_train split")
    alphabet = manifest.alphabet
    out_dir = Path(config.output_dir)
    archive_run_metadata(out_dir, config, "train", [Path(config.manifest)])

    x0, cond = _load_training_tensors(manifest, records)
    n_samples, _, height, width = x0.shape
    schedule = build_schedule(config.num_steps, config.beta_start, config.beta_end)
    torch.manual_seed(config.diffusion_seed)
    model = ConditionalUNet(
        DenoiserConfig(
            bit_width=alphabet.bit_width,
            base_width=config.base_width,
            depth=config.depth,
            time_embed_dim=config.time_embed_dim,
        )
    )
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    generator = torch.Generator().manual_seed(config.diffusion_seed)
    ema_shadow = _ema_init(model) if config.ema else None
    start_epoch = 0
    checkpoint_path = out_dir / "model.ckpt"
    curve_path = out_dir / "loss_curve.csv"

    if config.resume:
        resume_from = Path(config.checkpoint) if config.checkpoint else checkpoint_path
        if not resume_from.exists():
            raise ConfigError(f"resume requested but no checkpoint at {resume_from}")
        ckpt = load_checkpoint(resume_from)
        raw_state = ckpt.extra.get("raw_model_state") or ckpt.denoiser.state_dict()
        model.load_state_dict(raw_state)
        optimizer.load_state_dict(ckpt.extra["optimizer_state"])
        generator.set_state(ckpt.extra["generator_state"])
        start_epoch = int(ckpt.extra["epoch"])
        if config.ema:
            ema_shadow = dict(ckpt.denoiser.state_dict())
        log(f"resumed from {resume_from} at epoch {start_epoch}")
    if not (config.resume and curve_path.exists()):
        curve_path.write_text("epoch,step,loss\n")

    state = {
        "epoch": start_epoch,
        "height": height,
        "width": width,
        "optimizer": optimizer,
        "generator": generator,
        "ema_shadow": ema_shadow,
    }
    if config.epochs == 0 or start_epoch >= config.epochs:
        log("warning: zero training epochs requested; writing initialized weights")
        _save_train_checkpoint(checkpoint_path, model, schedule, alphabet, config, state)
        return checkpoint_path

    preview_every = config.preview_every or max(1, config.epochs // 5)
    steps_per_epoch = math.ceil(n_samples / config.batch_size)
    with open(curve_path, "a", newline="") as curve_file:
        writer = csv.writer(curve_file)
        for epoch in range(start_epoch, config.epochs):
            perm = torch.randperm(n_samples, generator=generator)
            epoch_losses = []
            for step in range(steps_per_epoch):
                idx = perm[step * config.batch_size : (step + 1) * config.batch_size]
                batch_x0, batch_cond = x0[idx], cond[idx]
                t = torch.randint(
                    1, schedule.num_steps + 1, (len(idx),), generator=generator
                )
                noise = torch.empty_like(batch_x0).normal_(generator=generator)
                try:
                    loss = training_loss(batch_x0, batch_cond, t, noise, model, schedule)
                except TrainingError as e:
                    raise TrainingError(f"epoch {epoch + 1}, step {step + 1}: {e}") from e
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                if ema_shadow is not None:
                    _ema_update(ema_shadow, model, config.ema_decay)
                loss_value = float(loss.detach())
                epoch_losses.append(loss_value)
                writer.writerow([epoch + 1, step + 1, f"{loss_value:.8f}"])
            state["epoch"] = epoch + 1
            _save_train_checkpoint(checkpoint_path, model, schedule, alphabet, config, state)
            log(
                f"epoch {epoch + 1}/{config.epochs} "
                f"mean loss {sum(epoch_losses) / len(epoch_losses):.5f}"
            )
            if (epoch + 1) % preview_every == 0:
                _write_preview_grid(out_dir, epoch + 1, records, model, schedule, alphabet, config, log)
    return checkpoint_path


def _write_preview_grid(out_dir, epoch, records, model, schedule, alphabet, config, log):
    preview_dir = Path(out_dir) / "previews" / f"epoch_{epoch:04d}"
    steps = min(50, schedule.num_steps)
    manifest_root = Path(config.manifest).parent
    for n, rec in enumerate(records[:2]):
        item = load_sample(rec, manifest_root, alphabet)
        h, w = item.mask.shape
        maps = compute_maps_fast(rec.boxes, h, w)
        cond = conditioning_channels(maps, alphabet)
        x = sample(cond, model, schedule, seed=config.sampling_seed + n, t_sample=steps)
        generated = decode_sample(x, alphabet)
        generated.boxes = list(rec.boxes)
        save_generated(generated, preview_dir, f"{n:05d}", alphabet)
    log(f"previews written to {preview_dir}")


def cmd_sample(config: RunConfig, log=_log_stderr) -> Path:
    """Generate one synthetic pair per annotation row; emit a new manifest."""
    config.validate()
    if not config.checkpoint:
        raise ConfigError("sample requires a checkpoint path")
    ckpt = load_checkpoint(config.checkpoint)
    annotations = load_manifest(Path(config.manifest))
    if annotations.alphabet.num_classes != ckpt.alphabet.num_classes:
        raise ConfigError(
            f"checkpoint alphabet has {ckpt.alphabet.num_classes} classes but the "
            f"annotation manifest declares {annotations.alphabet.num_classes}"
        )
    if "height" not in ckpt.extra or "width" not in ckpt.extra:
        raise ConfigError("checkpoint does not record its training image size")
    height, width = int(ckpt.extra["height"]), int(ckpt.extra["width"])
    out_dir = Path(config.output_dir)
    archive_run_metadata(out_dir, config, "sample", [Path(config.manifest)])

    rows = annotations.records
    if config.sample_limit:
        rows = rows[: config.sample_limit]
    t_sample = config.sample_steps or None
    steps_used = len(sampling_timesteps(ckpt.schedule, t_sample))
    per_row = config.samples_per_annotation

    records, reports = [], []
    for n, row in enumerate(rows):
        for b in row.boxes:
            b.validate(height, width)
        maps = compute_maps_fast(row.boxes, height, width)
        cond = conditioning_channels(maps, ckpt.alphabet)
        if config.ablate_conditioning:
            cond = torch.zeros_like(cond)
        for k in range(per_row):
            seed = config.sampling_seed + n * per_row + k
            x = sample(cond, ckpt.denoiser, ckpt.schedule, seed=seed, t_sample=t_sample)
            generated = decode_sample(x, ckpt.alphabet)
            generated.boxes = list(row.boxes)
            generated.seed = seed
            generated.steps = steps_used
            report = alignment_report(
                generated.mask, row.boxes, ckpt.alphabet, config.class_agnostic
            )
            generated.sae = report.sae_micro
            generated.ebr = report.ebr_avg
            stem = f"{n:05d}" if per_row == 1 else f"{n:05d}_{k:02d}"
            record = save_generated(generated, out_dir, stem, ckpt.alphabet)
            record.split = "synth"
            records.append(record)
            reports.append(report)
        if (n + 1) % 16 == 0 or n + 1 == len(rows):
            log(f"sampled {n + 1}/{len(rows)} annotation rows")

    manifest = DatasetManifest(root=out_dir, records=records, alphabet=ckpt.alphabet)
    manifest_path = save_manifest(manifest)
    pooled = pool_reports(reports)
    payload = {
        "pooled": pooled.to_dict(),
        "per_sample": [r.to_dict() for r in reports],
        "steps_used": steps_used,
    }
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    log(render_report_table(pooled))
    return manifest_path


def cmd_evaluate(config: RunConfig, log=_log_stderr) -> AlignmentReport:
    """Recompute alignment metrics for an existing (synthetic) manifest."""
    config.validate()
    manifest_path = Path(config.synthetic_manifest or config.manifest)
    manifest = load_manifest(manifest_path)
    out_dir = Path(config.output_dir)
    archive_run_metadata(out_dir, config, "evaluate", [manifest_path])

    reports = []
    for rec in manifest.records:
        item = load_sample(rec, manifest.root, manifest.alphabet)
        reports.append(
            alignment_report(item.mask, item.boxes, manifest.alphabet, config.class_agnostic)
        )
    if not reports:
        raise ConfigError(f"{manifest_path} has no records to evaluate")
    pooled = pool_reports(reports)
    payload = {"pooled": pooled.to_dict(), "per_sample": [r.to_dict() for r in reports]}
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    table = render_report_table(pooled)
    (out_dir / "report_table.txt").write_text(table + "\n")
    log(table)
    return pooled


# ---------------------------------------------------------------------------
# Downstream segmentation comparison.
# ---------------------------------------------------------------------------


class SmallSegmenter(nn.Module):
    """Four-layer convolutional segmenter for toy-scale images."""

    def __init__(self, out_channels: int, width: int = 32):
        super().__init__()
        def block(c_in, c_out):
            return nn.Sequential(
                nn.Conv2d(c_in, c_out, 3, padding=1),
                nn.GroupNorm(min(8, c_out), c_out),
                nn.SiLU(),
            )

        self.net = nn.Sequential(
            block(3, width), block(width, width), block(width, width),
            nn.Conv2d(width, out_channels, 1),
        )

    def forward(self, x):
        return self.net(x)


def _segmentation_tensors(records, root, alphabet, clip_to_boxes=False):
    images, targets = [], []
    for rec in records:
        item = load_sample(rec, root, alphabet)
        mask = clip_labels_to_boxes(item.mask, item.boxes) if clip_to_boxes else item.mask
        images.append(
            torch.from_numpy(
                (item.image.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1).copy()
            )
        )
        targets.append(torch.from_numpy((mask - 1).astype(np.int64)))
    return torch.stack(images), torch.stack(targets)


def _train_segmenter(images, targets, out_channels, config: RunConfig, binary_class=None):
    """Train one segmenter deterministically; ``binary_class`` selects the
    one-network-per-class protocol (0-based target class)."""
    torch.manual_seed(config.downstream_seed)
    model = SmallSegmenter(1 if binary_class is not None else out_channels)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.downstream_lr)
    generator = torch.Generator().manual_seed(config.downstream_seed)
    n = images.shape[0]
    for _epoch in range(config.downstream_epochs):
        perm = torch.randperm(n, generator=generator)
        for start in range(0, n, config.downstream_batch_size):
            idx = perm[start : start + config.downstream_batch_size]
            logits = model(images[idx])
            if binary_class is None:
                loss = nn.functional.cross_entropy(logits, targets[idx])
            else:
                positive = (targets[idx] == binary_class).float().unsqueeze(1)
                loss = nn.functional.binary_cross_entropy_with_logits(logits, positive)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    model.eval()
    return model


@torch.no_grad()
def _predict_masks(models, images, alphabet: ClassAlphabet, per_class: bool) -> np.ndarray:
    """Predicted mask values {1..C} for a stack of images."""
    if not per_class:
        logits = models[0](images)
        return (logits.argmax(dim=1) + 1).numpy()
    # One binary network per defect class; background wins when none fires.
    scores = [torch.zeros(images.shape[0], 1, *images.shape[-2:])]
    for model in models:
        scores.append(model(images))
    return (torch.cat(scores, dim=1).argmax(dim=1) + 1).numpy()


def _fit_regime(images, targets, alphabet, config: RunConfig):
    if config.per_class:
        return [
            _train_segmenter(images, targets, alphabet.num_classes, config, binary_class=c)
            for c in range(1, alphabet.num_classes)
        ]
    return [_train_segmenter(images, targets, alphabet.num_classes, config)]


def cmd_downstream(config: RunConfig, log=_log_stderr) -> dict:
    """Train real / synth / real+synth segmenters and compare F1 on real test."""
    config.validate()
    real = load_manifest(Path(config.manifest))
    synth = load_manifest(Path(config.synthetic_manifest))
    if real.alphabet.num_classes != synth.alphabet.num_classes:
        raise ConfigError("real and synthetic manifests disagree on class count")
    alphabet = real.alphabet
    train_records = [r for r in real.records if r.split == "seg_train"]
    test_records = [r for r in real.records if r.split == "test"]
    if not train_records:
        raise ConfigError("real manifest has no seg_train split")
    if not test_records:
        raise ConfigError("real manifest has no test split")
    if not synth.records:
        raise ConfigError("synthetic manifest is empty")
    out_dir = Path(config.output_dir)
    archive_run_metadata(
        out_dir, config, "downstream", [Path(config.manifest), Path(config.synthetic_manifest)]
    )

    real_x, real_y = _segmentation_tensors(train_records, real.root, alphabet)
    synth_x, synth_y = _segmentation_tensors(
        synth.records, synth.root, alphabet, clip_to_boxes=True
    )
    test_x, test_y = _segmentation_tensors(test_records, real.root, alphabet)
    regimes = {
        "real": (real_x, real_y),
        "synth": (synth_x, synth_y),
        "real_synth": (torch.cat([real_x, synth_x]), torch.cat([real_y, synth_y])),
    }

    results = {}
    truth = (test_y.numpy() + 1).reshape(-1, test_y.shape[-1])
    for name, (images, targets) in regimes.items():
        models = _fit_regime(images, targets, alphabet, config)
        predicted = _predict_masks(models, test_x, alphabet, config.per_class)
        predicted = predicted.reshape(-1, predicted.shape[-1])
        per_class, macro = pixel_f1(predicted, truth, alphabet)
        results[name] = {
            "per_class_f1": {str(c): v for c, v in per_class.items()},
            "macro_f1": macro,
        }
        log(f"regime {name}: macro F1 {macro if macro is None else round(macro, 2)}")

    (out_dir / "downstream.json").write_text(json.dumps(results, indent=2) + "\n")
    (out_dir / "downstream_table.txt").write_text(_downstream_table(results, alphabet) + "\n")
    log(_downstream_table(results, alphabet))
    return results


def _downstream_table(results: dict, alphabet: ClassAlphabet) -> str:
    classes = list(range(1, alphabet.num_classes))
    headers = ["regime"] + [
        alphabet.class_names[alphabet.mask_value_for_box_class(c) - 1] for c in classes
    ] + ["macro"]

    def fmt(v):
        return "-" if v is None else f"{v:.2f}"

    rows = []
    for name, payload in results.items():
        rows.append(
            [name]
            + [fmt(payload["per_class_f1"].get(str(c))) for c in classes]
            + [fmt(payload["macro_f1"])]
        )
    widths = [max(len(str(r[k])) for r in [headers] + rows) for k in range(len(headers))]
    return "\n".join(
        "  ".join(str(cell).ljust(widths[k]) for k, cell in enumerate(r))
        for r in [headers] + rows
    )


def cmd_toygen(config: RunConfig, log=_log_stderr) -> Path:
    """Generate the procedural toy dataset and assign splits."""
    config.validate()
    out_dir = Path(config.output_dir)
    spec = ToySpec(
        height=config.toy_height,
        width=config.toy_width,
        num_defect_classes=config.toy_defect_classes,
        boxes_min=config.toy_boxes_min,
        boxes_max=config.toy_boxes_max,
        seed=config.data_seed,
    )
    manifest = generate_toy_dataset(spec, config.toy_count, out_dir)
    manifest = split_dataset(manifest, config.split_fractions, seed=config.data_seed)
    manifest_path = save_manifest(manifest)
    archive_run_metadata(out_dir, config, "toygen", [manifest_path])
    counts = {name: 0 for name in ("diffusion_train", "seg_train", "test")}
    for rec in manifest.records:
        counts[rec.split] = counts.get(rec.split, 0) + 1
    log(f"toy dataset written to {out_dir}: {counts}")
    return manifest_path
