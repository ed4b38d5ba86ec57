"""Command-line surface: train, predict, eval, plot.

Every failure exits nonzero with a single ``error: ...`` line on stderr.
"""

import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from .config import ConfigError, load_experiment
from .data import DatasetError, load_dataset
from .metrics import evaluate_pairs, read_curve, write_curve, write_report

_EXPECTED = (ConfigError, DatasetError, ValueError, RuntimeError, OSError)


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


@click.group()
def main():
    """Salient object detection: training, inference, and evaluation."""


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(), help="experiment config file")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="override the config's output directory")
@click.option("--seed", type=int, default=None, help="override the config's seed")
def cmd_train(config_path, out_dir, seed):
    """Run the three-stage training schedule."""
    from .train import train

    try:
        cfg = load_experiment(config_path)
        if seed is not None:
            cfg.train.seed = seed
        samples = load_dataset(cfg.data.root)
        final = train(cfg, samples, out_dir)
    except _EXPECTED as exc:
        _fail(str(exc))
    click.echo(f"final checkpoint: {final}")


def _write_map(values: np.ndarray, size_wh: tuple[int, int], path: Path) -> None:
    img = Image.fromarray(values.astype(np.float32), mode="F")
    if img.size != size_wh:
        img = img.resize(size_wh, Image.BILINEAR)
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


@main.command("predict")
@click.argument("input_dir", type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path(), help="trained checkpoint")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="output directory")
@click.option("--sides", is_flag=True, help="also write all five side outputs and their fusion")
def cmd_predict(input_dir, checkpoint, out_dir, sides):
    """Write one 8-bit grayscale saliency PNG per input image."""
    from .train import load_checkpoint, model_from_checkpoint, predict_sides

    try:
        payload = load_checkpoint(checkpoint)
        model, cfg = model_from_checkpoint(payload)
        if cfg.train.reference_mode:
            import torch

            torch.set_num_threads(1)
        in_dir = Path(input_dir)
        if not in_dir.is_dir():
            raise DatasetError(f"input directory not found: {in_dir}")
        paths = sorted(
            (p for p in in_dir.iterdir() if p.suffix.lower() in (".png", ".jpg")),
            key=lambda p: p.stem,
        )
        if not paths:
            raise DatasetError(f"no .png/.jpg images in {in_dir}")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for path in paths:
            with Image.open(path) as img:
                rgb = img.convert("RGB")
                original_size = rgb.size
                image = np.asarray(rgb, dtype=np.float64) / 255.0
            maps = predict_sides(model, image, cfg.train.input_size)
            _write_map(maps["s1"], original_size, out / f"{path.stem}.png")
            if sides:
                for name in ("s1", "s2", "s3", "s4", "s5", "fusion"):
                    sub = out / name
                    sub.mkdir(exist_ok=True)
                    _write_map(maps[name], original_size, sub / f"{path.stem}.png")
    except _EXPECTED as exc:
        _fail(str(exc))
    click.echo(f"wrote {len(paths)} prediction(s) to {out}")


def _load_eval_pairs(pred_dir: Path, gt_dir: Path):
    preds = {p.stem: p for p in pred_dir.glob("*.png")}
    gts = {p.stem: p for p in gt_dir.glob("*.png")}
    for stem in sorted(set(preds) ^ set(gts)):
        side = "prediction" if stem in preds else "ground truth"
        raise DatasetError(f"unpaired {side} file: '{stem}'")
    if not preds:
        raise DatasetError(f"no .png files to evaluate in {pred_dir}")
    pairs = []
    for stem in sorted(preds):
        with Image.open(preds[stem]) as img:
            p = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
        with Image.open(gts[stem]) as img:
            g = (np.asarray(img.convert("L")) >= 128).astype(np.float64)
        if p.shape != g.shape:
            raise DatasetError(
                f"size mismatch for '{stem}': prediction {p.shape} vs mask {g.shape}"
            )
        pairs.append((p, g))
    return pairs


@main.command("eval")
@click.argument("pred_dir", type=click.Path())
@click.argument("gt_dir", type=click.Path())
@click.option("--out", "out_dir", type=click.Path(), default=".", help="where to write metrics.json and fcurve.csv")
def cmd_eval(pred_dir, gt_dir, out_dir):
    """Compare predictions against ground-truth masks, paired by stem."""
    try:
        pairs = _load_eval_pairs(Path(pred_dir), Path(gt_dir))
        report, curve = evaluate_pairs(pairs)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report(report, out / "metrics.json")
        write_curve(curve, out / "fcurve.csv")
    except _EXPECTED as exc:
        _fail(str(exc))
    click.echo(
        "mae={mae:.6f} adaptive_f_beta={adaptive_f_beta:.6f} "
        "weighted_f_beta={weighted_f_beta:.6f} n={n_images}".format(**report)
    )


@main.command("plot")
@click.argument("curve_tables", nargs=-1, required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path(), help="output image file")
def cmd_plot(curve_tables, out_path):
    """Render F-measure curves (one line per table) to a static image."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    try:
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for table in curve_tables:
            curve = read_curve(table)
            ax.plot(curve.thresholds, curve.f, label=Path(table).stem)
        ax.set_xlabel("threshold")
        ax.set_ylabel("F-measure")
        ax.set_xlim(0, 255)
        ax.set_ylim(0.0, 1.0)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_path, dpi=150)
        plt.close(fig)
    except _EXPECTED as exc:
        _fail(str(exc))
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
