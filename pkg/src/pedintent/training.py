"""Training regimes: detector only, auxiliary head on a frozen detector, and
end-to-end multitask; plus the crop baseline and checkpoint evaluation."""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from pedintent.association import pipeline_single_shot
from pedintent.config import RunConfig
from pedintent.errors import ConfigError, NumericError, TrainingDiverged, UndefinedMetricsError
from pedintent.eval_bench.metrics import MetricsBundle, detection_map, intent_metrics
from pedintent.grid_codec import GridSpec, encode_targets
from pedintent.models import (
    AuxiliaryConfig,
    DetectorConfig,
    IntentModel,
    SequentialBaseline,
    SequentialBaselineConfig,
    crop_sequence,
    detection_loss,
    freeze,
    intent_loss,
    load_checkpoint,
    save_checkpoint,
    tensors_hash,
)
from pedintent.scenario_gen import INTENT_INDEX, AgentClass, AgentState, load_manifest, load_sequence

log = logging.getLogger(__name__)

REGIMES = ("detector_only", "auxiliary_frozen", "multitask")
AUGMENTATIONS = ("none", "flip")


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "multitask"
    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    lambda_det: float = 1.0
    lambda_int: float = 1.0
    seed: int = 0
    grad_clip: float = 5.0
    halve_on_plateau: bool = False
    augment: str = "flip"

    def validate(self, detector_checkpoint=None) -> "TrainConfig":
        if self.regime not in REGIMES + ("sequential",):
            raise ConfigError("regime", f"unknown regime {self.regime!r}")
        if self.lambda_det < 0 or self.lambda_int < 0:
            raise ConfigError("lambda", "loss weights must be >= 0")
        if self.regime == "multitask" and not (self.lambda_det > 0 and self.lambda_int > 0):
            raise ConfigError("lambda", "multitask needs both loss weights > 0")
        if self.regime == "auxiliary_frozen" and detector_checkpoint is None:
            raise ConfigError("detector_checkpoint", "auxiliary_frozen needs a trained detector checkpoint")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ConfigError("optimizer", f"unknown optimizer {self.optimizer!r}")
        if self.augment not in AUGMENTATIONS:
            raise ConfigError("augment", f"augment must be one of {AUGMENTATIONS}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs", "epochs and batch_size must be >= 1")
        return self

    @classmethod
    def from_run_config(cls, rc: RunConfig, regime: str, **overrides) -> "TrainConfig":
        d = dict(rc.raw["train"])
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls(regime=regime, **d)


@dataclass
class SplitData:
    """One split held in memory: uint8 frames plus final-frame targets."""

    frames: torch.Tensor  # (N, t, C, H, W) uint8; palette values are k/255
    det_target: torch.Tensor  # (N, H, W, A, D)
    intent_target: torch.Tensor  # (N, H, W, A, N_I)
    intent_mask: torch.Tensor  # (N, H, W, A)
    annotations: list  # per sequence, per frame AgentState lists
    collisions: int = 0
    variant_targets: tuple | None = None  # filled by flip_variants: (N, V, ...) per target

    def __len__(self) -> int:
        return self.frames.shape[0]

    def float_frames(self, idx) -> torch.Tensor:
        return self.frames[idx].float() / 255.0


def flip_agent(a: AgentState, height: int, width: int, horizontal: bool, vertical: bool) -> AgentState:
    (cx, cy), (vx, vy), (hx, hy) = a.center, a.velocity, a.heading
    if horizontal:
        cx, vx, hx = width - cx, -vx, -hx
    if vertical:
        cy, vy, hy = height - cy, -vy, -hy
    return replace(a, center=(cx, cy), velocity=(vx + 0.0, vy + 0.0), heading=(hx + 0.0, hy + 0.0))


def flip_variants(data: SplitData, grid: GridSpec, vertical: bool) -> list[tuple[bool, bool]]:
    """Flip combinations that preserve the road layout, with targets re-encoded for each.

    Variant 0 is the identity. Vertical flips are only label preserving when
    the road band is centered in the image.
    """
    variants = [(False, False), (True, False)] + ([(False, True), (True, True)] if vertical else [])
    det, intent, mask = [data.det_target], [data.intent_target], [data.intent_mask]
    for h, v in variants[1:]:
        d, i, m = [], [], []
        for anns in data.annotations:
            enc = encode_targets([flip_agent(a, grid.image_size[0], grid.image_size[1], h, v) for a in anns[-1]], grid)
            d.append(torch.from_numpy(enc.detection).float())
            i.append(torch.from_numpy(enc.intent).float())
            m.append(torch.from_numpy(enc.mask).float())
        det.append(torch.stack(d))
        intent.append(torch.stack(i))
        mask.append(torch.stack(m))
    data.variant_targets = (torch.stack(det, 1), torch.stack(intent, 1), torch.stack(mask, 1))
    return variants


def _flip_frames(frames: torch.Tensor, horizontal: bool, vertical: bool) -> torch.Tensor:
    dims = [d for d, on in ((-1, horizontal), (-2, vertical)) if on]
    return frames.flip(dims) if dims else frames


def load_split(manifest_path, split: str, grid: GridSpec) -> SplitData:
    manifest, root = load_manifest(manifest_path)
    entries = manifest["splits"].get(split)
    if entries is None:
        raise ConfigError("split", f"manifest has no {split!r} split")
    frames, det, intent, mask, anns = [], [], [], [], []
    collisions = 0
    for e in entries:
        seq = load_sequence(root / e["path"])
        stacked = seq.stacked()
        frames.append(torch.from_numpy(np.rint(stacked * 255.0).astype(np.uint8)))
        enc = encode_targets(seq.annotations[-1], grid)
        collisions += enc.dropped
        det.append(torch.from_numpy(enc.detection).float())
        intent.append(torch.from_numpy(enc.intent).float())
        mask.append(torch.from_numpy(enc.mask).float())
        anns.append(seq.annotations)
    if not frames:
        raise ConfigError("split", f"{split!r} split is empty")
    return SplitData(torch.stack(frames), torch.stack(det), torch.stack(intent), torch.stack(mask), anns, collisions)


@dataclass
class TrainRun:
    config: TrainConfig
    model: torch.nn.Module
    epoch_losses: list[dict] = field(default_factory=list)
    wall_s: float = 0.0
    checkpoint: Path | None = None
    detector_hash_before: str | None = None
    detector_hash_after: str | None = None
    meta: dict = field(default_factory=dict)


def _optimizer(params, cfg: TrainConfig):
    params = [p for p in params if p.requires_grad]
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    return torch.optim.SGD(params, lr=cfg.learning_rate, momentum=0.9)


def detector_state(model: IntentModel) -> dict[str, torch.Tensor]:
    return {f"detector.{k}": v.detach().clone() for k, v in model.detector.state_dict().items()}


def compute_losses(model: IntentModel, frames, det_t, int_t, mask, cfg: TrainConfig, n_classes: int, taps=None) -> dict:
    """Loss terms for one batch under ``cfg.regime``; ``total`` is the optimized scalar."""
    if cfg.regime == "detector_only":
        _, raw = model.detector(frames[:, -1])
        det_total, terms = detection_loss(raw, det_t, n_classes)
        return {"total": det_total, "detection": det_total, **terms}
    if cfg.regime == "auxiliary_frozen":
        if taps is None:
            with torch.no_grad():
                b, t = frames.shape[:2]
                taps = model.detector.forward_tap(frames.flatten(0, 1))
                taps = taps.view(b, t, *taps.shape[1:])
        lint = intent_loss(model.auxiliary(taps), int_t, mask)
        return {"total": lint, "intent": lint}
    raw, logits = model(frames)
    det_total, terms = detection_loss(raw, det_t, n_classes)
    lint = intent_loss(logits, int_t, mask)
    total = cfg.lambda_det * det_total + cfg.lambda_int * lint
    return {"total": total, "detection": det_total, "intent": lint, **terms}


def build_model(rc: RunConfig, regime: str, tap_layer: int | None = None) -> IntentModel:
    det_cfg = rc.detector if tap_layer is None else rc.detector.with_tap(tap_layer)
    det_cfg.validate(rc.grid.stride)
    aux_cfg = None if regime == "detector_only" else rc.auxiliary(det_cfg)
    return IntentModel(det_cfg, aux_cfg)


def model_meta(model: IntentModel, rc: RunConfig, cfg: TrainConfig) -> dict:
    return {
        "regime": cfg.regime,
        "train": asdict(cfg),
        "grid": rc.grid.to_dict(),
        "detector": model.detector.config.to_dict(),
        "auxiliary": model.auxiliary.config.to_dict() if model.auxiliary is not None else None,
        "run_config": rc.raw,
    }


def load_model(path) -> tuple[IntentModel, dict]:
    tensors, meta = load_checkpoint(path)
    if "detector" not in meta:
        raise OSError(f"{path}: sidecar lacks model configuration")
    det_cfg = DetectorConfig.from_dict(meta["detector"])
    aux_cfg = AuxiliaryConfig.from_dict(meta["auxiliary"]) if meta.get("auxiliary") else None
    model = IntentModel(det_cfg, aux_cfg)
    state = {k: v for k, v in tensors.items() if k.startswith(("detector.", "auxiliary."))}
    model.load_state_dict(state)
    model.eval()
    return model, meta


def train(
    regime: str,
    manifest,
    config: TrainConfig | None = None,
    run_config: RunConfig | None = None,
    out_dir=None,
    detector_checkpoint=None,
    tap_layer: int | None = None,
    data: SplitData | None = None,
) -> TrainRun:
    rc = run_config or RunConfig()
    cfg = config or TrainConfig.from_run_config(rc, regime)
    if cfg.regime != regime:
        cfg = TrainConfig(**{**asdict(cfg), "regime": regime})
    cfg.validate(detector_checkpoint)
    grid = rc.grid
    data = data if data is not None else load_split(manifest, "train", grid)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(cfg.seed)
    model = build_model(rc, regime, tap_layer)
    run = TrainRun(cfg, model)

    if cfg.augment == "flip":
        top, bottom = rc.world.road_band
        variants = flip_variants(data, grid, vertical=top + bottom == grid.image_size[0])
    else:
        variants = [(False, False)]
        data.variant_targets = tuple(x.unsqueeze(1) for x in (data.det_target, data.intent_target, data.intent_mask))
    det_v, int_v, mask_v = data.variant_targets

    cached_taps = None
    if regime == "auxiliary_frozen":
        tensors, _ = load_checkpoint(detector_checkpoint)
        det_state = {k[len("detector.") :]: v for k, v in tensors.items() if k.startswith("detector.")}
        model.detector.load_state_dict(det_state)
        freeze(model.detector)
        run.detector_hash_before = tensors_hash(detector_state(model))
        # frozen detector -> taps never change; compute once per flip variant
        with torch.no_grad():
            chunks = []
            for start in range(0, len(data), 8):
                f = data.float_frames(slice(start, start + 8))
                b, t = f.shape[:2]
                per_variant = []
                for h, v in variants:
                    tap = model.detector.forward_tap(_flip_frames(f, h, v).flatten(0, 1))
                    per_variant.append(tap.view(b, t, *tap.shape[1:]))
                chunks.append(torch.stack(per_variant, 1))
            cached_taps = torch.cat(chunks)

    params = model.auxiliary.parameters() if regime == "auxiliary_frozen" else model.parameters()
    opt = _optimizer(params, cfg)
    gen = torch.Generator().manual_seed(cfg.seed)
    log_fh = open(out / "train_log.jsonl", "w") if out is not None else None
    start_wall = time.perf_counter()
    best = float("inf")
    stale = 0
    try:
        for epoch in range(cfg.epochs):
            good_state = copy.deepcopy(model.state_dict())
            model.train()
            if regime == "auxiliary_frozen":
                model.detector.eval()
            t_epoch = time.perf_counter()
            order = torch.randperm(len(data), generator=gen)
            flips = torch.randint(len(variants), (len(data),), generator=gen)
            sums: dict[str, float] = {}
            n_batches = 0
            for start in range(0, len(data), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                var = flips[idx]
                taps = cached_taps[idx, var] if cached_taps is not None else None
                frames = None
                if taps is None:
                    frames = torch.stack([_flip_frames(data.float_frames(int(n)), *variants[int(v)]) for n, v in zip(idx, var)])
                try:
                    losses = compute_losses(model, frames, det_v[idx, var], int_v[idx, var], mask_v[idx, var], cfg, grid.n_classes, taps)
                    finite = bool(torch.isfinite(losses["total"]))
                except NumericError:
                    finite = False
                if not finite:
                    model.load_state_dict(good_state)
                    ckpt = None
                    if out is not None:
                        ckpt = out / "last_good.gsck"
                        save_checkpoint(ckpt, model.state_dict(), model_meta(model, rc, cfg))
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}", ckpt)
                opt.zero_grad(set_to_none=True)
                losses["total"].backward()
                if cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_([p for p in model.parameters() if p.requires_grad], cfg.grad_clip)
                opt.step()
                for k, v in losses.items():
                    sums[k] = sums.get(k, 0.0) + float(v.detach())
                n_batches += 1
            record = {"regime": regime, "epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
            record["wall_ms"] = (time.perf_counter() - t_epoch) * 1000.0
            run.epoch_losses.append(record)
            log.info("%s epoch %d loss %.4f", regime, epoch, record["total"])
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if cfg.halve_on_plateau:
                if record["total"] < best - 1e-4:
                    best, stale = record["total"], 0
                else:
                    stale += 1
                    if stale >= 3:
                        for g in opt.param_groups:
                            g["lr"] *= 0.5
                        stale = 0
    finally:
        if log_fh is not None:
            log_fh.close()
    run.wall_s = time.perf_counter() - start_wall
    model.eval()
    if regime == "auxiliary_frozen":
        run.detector_hash_after = tensors_hash(detector_state(model))
    run.meta = model_meta(model, rc, cfg)
    run.meta["epoch_losses"] = run.epoch_losses
    run.meta["wall_s"] = run.wall_s
    if regime == "auxiliary_frozen":
        run.meta["detector_checkpoint"] = str(detector_checkpoint)
    if out is not None:
        run.checkpoint = out / "model.gsck"
        save_checkpoint(run.checkpoint, model.state_dict(), run.meta)
    return run


# ----------------------------------------------------------- sequential baseline


def pedestrian_crops(data: SplitData, config: SequentialBaselineConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """Ground-truth crop sequences and labels for every final-frame pedestrian."""
    from pedintent.association import track_boxes

    crops, labels = [], []
    for n, anns in enumerate(data.annotations):
        frames = data.float_frames(n)
        for ped in (a for a in anns[-1] if a.cls == AgentClass.PEDESTRIAN):
            crops.append(crop_sequence(frames, track_boxes(anns, ped.track_id, ped.box), config.crop_size))
            labels.append(float(INTENT_INDEX[ped.intent]))
    return torch.stack(crops), torch.tensor(labels)


def train_sequential(
    manifest,
    config: TrainConfig | None = None,
    run_config: RunConfig | None = None,
    out_dir=None,
    data: SplitData | None = None,
) -> TrainRun:
    """Train the crop baseline on ground-truth pedestrian tracks."""
    rc = run_config or RunConfig()
    cfg = config or TrainConfig.from_run_config(rc, "sequential")
    data = data if data is not None else load_split(manifest, "train", rc.grid)
    torch.manual_seed(cfg.seed)
    model = SequentialBaseline(rc.sequential)
    crops, labels = pedestrian_crops(data, rc.sequential)
    opt = _optimizer(model.parameters(), cfg)
    gen = torch.Generator().manual_seed(cfg.seed)
    run = TrainRun(cfg, model)
    start_wall = time.perf_counter()
    bs = cfg.batch_size * 4
    for epoch in range(cfg.epochs):
        model.train()
        t_epoch = time.perf_counter()
        order = torch.randperm(len(labels), generator=gen)
        total, n = 0.0, 0
        for start in range(0, len(labels), bs):
            idx = order[start : start + bs]
            loss = F.binary_cross_entropy_with_logits(model(crops[idx]), labels[idx])
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            total += float(loss.detach())
            n += 1
        run.epoch_losses.append(
            {"regime": "sequential", "epoch": epoch, "total": total / n, "wall_ms": (time.perf_counter() - t_epoch) * 1000.0}
        )
    model.eval()
    run.wall_s = time.perf_counter() - start_wall
    run.meta = {
        "regime": "sequential",
        "train": asdict(cfg),
        "sequential": rc.sequential.to_dict(),
        "epoch_losses": run.epoch_losses,
        "run_config": rc.raw,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        run.checkpoint = out / "baseline.gsck"
        save_checkpoint(run.checkpoint, {f"baseline.{k}": v for k, v in model.state_dict().items()}, run.meta)
    return run


def load_baseline(path) -> tuple[SequentialBaseline, dict]:
    tensors, meta = load_checkpoint(path)
    model = SequentialBaseline(SequentialBaselineConfig.from_dict(meta["sequential"]))
    model.load_state_dict({k[len("baseline.") :]: v for k, v in tensors.items() if k.startswith("baseline.")})
    model.eval()
    return model, meta


# -------------------------------------------------------------------- evaluation


def evaluate_model(
    model: IntentModel,
    data: SplitData,
    grid: GridSpec,
    conf_threshold: float = 0.5,
    nms_iou: float = 0.45,
    height_filters=(0.0,),
) -> MetricsBundle:
    """Run the single-shot pipeline over every sequence and score it."""
    all_dets, all_gt, frames_for_intent = [], [], []
    low_conf = 0
    for n in range(len(data)):
        gt = data.annotations[n][-1]
        if model.auxiliary is not None:
            out = pipeline_single_shot(data.float_frames(n), model, grid, conf_threshold, nms_iou)
            frames_for_intent.append((out.assignments, gt))
            low_conf += sum(a.low_confidence for a in out.assignments)
            dets = out.detections
        else:
            from pedintent.grid_codec import decode_predictions

            with torch.no_grad():
                model.eval()
                _, raw = model.detector(data.float_frames(n)[-1:])
            dets = decode_predictions(raw[0].numpy(), grid, conf_threshold, nms_iou)
        all_dets.append(dets)
        all_gt.append(gt)
    m, per_class = detection_map(all_dets, all_gt, 0.5, grid.n_classes)
    by_height = {}
    primary = None
    if model.auxiliary is not None:
        for h in height_filters:
            if primary is None:
                primary = intent_metrics(frames_for_intent, h)
                by_height[str(float(h))] = primary.to_dict()
                continue
            try:  # a secondary filter may leave nobody to score
                by_height[str(float(h))] = intent_metrics(frames_for_intent, h).to_dict()
            except UndefinedMetricsError as exc:
                by_height[str(float(h))] = {"undefined": str(exc)}
    return MetricsBundle(
        intent_accuracy=primary.accuracy if primary else None,
        intent_f1=primary.f1 if primary else None,
        detection_map=m,
        per_class_ap=per_class,
        confusion=primary.confusion if primary else None,
        height_filter_px=primary.height_filter_px if primary else float(height_filters[0]),
        by_height=by_height,
        low_confidence=low_conf,
        collisions=data.collisions,
    )


def evaluate_checkpoint(checkpoint, test_manifest, run_config: RunConfig | None = None, data: SplitData | None = None) -> MetricsBundle:
    model, meta = load_model(checkpoint)
    grid = GridSpec.from_dict(meta["grid"])
    rc = run_config or (RunConfig(meta["run_config"]) if "run_config" in meta else RunConfig())
    ev = rc.raw["eval"]
    data = data if data is not None else load_split(test_manifest, "test", grid)
    return evaluate_model(model, data, grid, ev["conf_threshold"], ev["nms_iou"], tuple(ev["height_filters"]))
