"""Three-stage training: the purificatory pathway learns first, then the two
attention subnetworks against it, then everything jointly. SGD with a poly
learning-rate schedule that resets per stage; the backbone trains at the base
rate and every other parameter ten times faster.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig, config_hash
from .data import Sample, batches, collate, preprocess
from .network import PurificatoryNet
from .superpixel import cached_slic

CHECKPOINT_FORMAT = 1

STAGE_LOSSES = {1: ("l_rm", "l_ss"), 2: ("l_p", "l_ro", "l_re"), 3: ("total",)}


def poly_lr(base: float, iteration: int, max_iter: int, power: float) -> float:
    """base * (1 - iteration/max_iter)^power."""
    if max_iter <= 0:
        raise ValueError("max_iter must be positive")
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return base * (1.0 - iteration / max_iter) ** power


def apply_stage_freeze(model: PurificatoryNet, stage: int) -> None:
    """Stage 1 trains extractor + purificatory; stage 2 freezes purificatory
    and trains the rest; stage 3 trains everything."""
    if stage not in (1, 2, 3):
        raise ValueError(f"stage must be 1, 2 or 3, got {stage}")
    for p in model.parameters():
        p.requires_grad_(True)
    frozen = {1: ("promotion", "rectification"), 2: ("purificatory",), 3: ()}[stage]
    subnets = model.subnet_modules()
    for name in frozen:
        for p in subnets[name].parameters():
            p.requires_grad_(False)


def _optimizer(model: PurificatoryNet, cfg: ExperimentConfig) -> torch.optim.SGD:
    t = cfg.train
    backbone = [p for p in model.encoder.parameters() if p.requires_grad]
    backbone_ids = {id(p) for p in backbone}
    rest = [
        p
        for p in model.parameters()
        if p.requires_grad and id(p) not in backbone_ids
    ]
    groups = [
        {"params": backbone, "lr": t.base_lr, "base": t.base_lr},
        {
            "params": rest,
            "lr": t.base_lr * t.head_lr_multiplier,
            "base": t.base_lr * t.head_lr_multiplier,
        },
    ]
    return torch.optim.SGD(
        groups, lr=t.base_lr, momentum=t.momentum, weight_decay=t.weight_decay
    )


def _stage_loss(bundle, stage: int) -> torch.Tensor:
    terms = STAGE_LOSSES[stage]
    if terms == ("total",):
        return bundle.total
    return sum(getattr(bundle, t) for t in terms)


def _segmentations(batch: list[Sample], cfg: ExperimentConfig, memo: dict):
    return [
        s.segmentation
        if s.segmentation is not None
        else cached_slic(
            s.image,
            cfg.data.n_regions,
            cfg.data.compactness,
            cfg.data.cache_dir,
            memo,
        )
        for s in batch
    ]


def run_stage(
    model: PurificatoryNet,
    samples: list[Sample],
    cfg: ExperimentConfig,
    stage: int,
    log_path: str | Path | None = None,
    memo: dict | None = None,
) -> tuple[list[dict], torch.optim.SGD]:
    """Run one stage for its configured iteration budget.

    Returns the per-iteration log and the optimizer (for checkpointing).
    Raises RuntimeError on a non-finite loss.
    """
    apply_stage_freeze(model, stage)
    opt = _optimizer(model, cfg)
    max_iter = cfg.train.stage_iters[stage - 1]
    memo = {} if memo is None else memo
    flip_rng = np.random.default_rng([cfg.train.seed, stage, 17])
    log: list[dict] = []
    log_fh = open(log_path, "a") if log_path is not None else None

    model.train()
    try:
        iteration = 0
        epoch = 0
        while iteration < max_iter:
            for batch in batches(
                samples, cfg.train.batch_size, seed=cfg.train.seed + 7919 * stage, epoch=epoch
            ):
                if iteration >= max_iter:
                    break
                prepped = [
                    preprocess(s, cfg.train.input_size, train=True, rng=flip_rng)
                    for s in batch
                ]
                segs = _segmentations(prepped, cfg, memo)
                images, masks = collate(prepped)

                for group in opt.param_groups:
                    group["lr"] = poly_lr(
                        group["base"], iteration, max_iter, cfg.train.poly_power
                    )
                opt.zero_grad()
                outputs = model(images)
                bundle = model.compute_losses(outputs, masks, segs)
                loss = _stage_loss(bundle, stage)
                record = {
                    "stage": stage,
                    "iteration": iteration,
                    "lr_backbone": opt.param_groups[0]["lr"],
                    "lr_rest": opt.param_groups[1]["lr"],
                    **bundle.detached(),
                }
                if not all(np.isfinite(v) for v in record.values()):
                    raise RuntimeError(
                        f"non-finite loss at stage {stage} iteration {iteration}: {record}"
                    )
                loss.backward()
                opt.step()
                log.append(record)
                if log_fh is not None:
                    log_fh.write(json.dumps(record) + "\n")
                iteration += 1
            epoch += 1
    finally:
        if log_fh is not None:
            log_fh.close()
    return log, opt


def save_checkpoint(
    path: str | Path,
    model: PurificatoryNet,
    cfg: ExperimentConfig,
    stage: int,
    iteration: int,
    optimizer: torch.optim.SGD | None = None,
) -> None:
    from .config import experiment_to_dict

    payload = {
        "format_version": CHECKPOINT_FORMAT,
        "config_hash": config_hash(cfg),
        "config": experiment_to_dict(cfg),
        "stage": stage,
        "iteration": iteration,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format: {payload.get('format_version')}")
    return payload


def model_from_checkpoint(payload: dict) -> tuple[PurificatoryNet, ExperimentConfig]:
    from .config import experiment_from_dict

    cfg = experiment_from_dict(payload["config"])
    model = PurificatoryNet(cfg.encoder)
    model.load_state_dict(payload["model_state"])
    return model, cfg


def checkpoint_hash(model_state: dict) -> str:
    """Digest of all parameter/buffer tensors, keyed and ordered by name."""
    digest = hashlib.sha256()
    for name in sorted(model_state):
        digest.update(name.encode())
        t = model_state[name].detach().cpu().contiguous()
        digest.update(t.numpy().tobytes())
    return digest.hexdigest()


def train(
    cfg: ExperimentConfig, samples: list[Sample], out_dir: str | Path | None = None
) -> Path:
    """Run stages 1-3, writing stage checkpoints and a training log.

    Returns the path of the final checkpoint.
    """
    if cfg.train.reference_mode:
        torch.set_num_threads(1)
    torch.manual_seed(cfg.train.seed)
    model = PurificatoryNet(cfg.encoder)

    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    log_path.unlink(missing_ok=True)

    memo: dict = {}
    last_opt = None
    for stage in (1, 2, 3):
        _, last_opt = run_stage(model, samples, cfg, stage, log_path, memo)
        save_checkpoint(
            out / f"stage{stage}.ckpt",
            model,
            cfg,
            stage,
            cfg.train.stage_iters[stage - 1],
            last_opt,
        )
    final = out / "final.ckpt"
    save_checkpoint(final, model, cfg, 3, cfg.train.stage_iters[2], last_opt)
    return final


def predict(
    model: PurificatoryNet, image: np.ndarray, input_size: int
) -> np.ndarray:
    """Saliency map for one (H, W, 3) image in [0, 1]: the finest side output,
    at input_size x input_size."""
    maps = predict_sides(model, image, input_size)
    return maps["s1"]


def predict_sides(
    model: PurificatoryNet, image: np.ndarray, input_size: int
) -> dict[str, np.ndarray]:
    """All five side outputs plus their fusion, each (input_size, input_size)."""
    sample = Sample(image=image, mask=np.zeros(image.shape[:2]), id="_query")
    prepped = preprocess(sample, input_size, train=False)
    images, _ = collate([prepped])
    model.eval()
    with torch.no_grad():
        outs = model(images).purificatory
    maps = {f"s{i + 1}": outs.sides[i][0, 0].numpy() for i in range(5)}
    maps["fusion"] = outs.fusion[0, 0].numpy()
    return maps
