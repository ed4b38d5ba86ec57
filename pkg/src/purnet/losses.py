"""Loss primitives for the detection objective.

All functions take torch tensors and preserve autograd. Saliency maps may be
shaped (H, W), (B, H, W) or (B, 1, H, W); reductions follow a fixed
convention: sum over pixels within each image, mean over the batch.
"""

from dataclasses import dataclass

import torch

BCE_EPS = 1e-7
DIST_EPS = 1e-6


def canon_map(x: torch.Tensor) -> torch.Tensor:
    """Canonicalize a map tensor to (batch, H, W)."""
    if x.dim() == 2:
        return x.unsqueeze(0)
    if x.dim() == 3:
        return x
    if x.dim() == 4 and x.shape[1] == 1:
        return x[:, 0]
    raise ValueError(f"expected (H,W), (B,H,W) or (B,1,H,W) map, got {tuple(x.shape)}")


def _aligned(*xs: torch.Tensor) -> list[torch.Tensor]:
    out = [canon_map(x) for x in xs]
    shapes = {tuple(o.shape) for o in out}
    if len(shapes) > 1:
        raise ValueError(f"map shape mismatch: {sorted(shapes)}")
    return out


def bce(p: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy, summed over pixels and averaged over the batch.

    Predictions are clamped to [eps, 1-eps] before the logs.
    """
    pc, gc = _aligned(p, g)
    pc = pc.clamp(BCE_EPS, 1.0 - BCE_EPS)
    per_pixel = -(gc * pc.log() + (1.0 - gc) * (1.0 - pc).log())
    return per_pixel.flatten(1).sum(dim=1).mean()


def ibce(p: torch.Tensor, g: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
    """BCE with each pixel's term scaled by 1 + |e|.

    ``e`` is an error estimate in [-1, 1]; it acts as a constant weight and
    carries no gradient.
    """
    pc, gc, ec = _aligned(p, g, e)
    w = 1.0 + ec.detach().abs()
    pc = pc.clamp(BCE_EPS, 1.0 - BCE_EPS)
    per_pixel = -(gc * pc.log() + (1.0 - gc) * (1.0 - pc).log())
    return (w * per_pixel).flatten(1).sum(dim=1).mean()


def kl_div(g_dist: torch.Tensor, p_dist: torch.Tensor) -> torch.Tensor:
    """KL(g || p) between two unit-sum distributions of matching shape."""
    if g_dist.shape != p_dist.shape:
        raise ValueError(f"shape mismatch: {tuple(g_dist.shape)} vs {tuple(p_dist.shape)}")
    g = g_dist.reshape(-1)
    p = p_dist.reshape(-1)
    if float(g.sum()) <= 0.0 or float(p.sum()) <= 0.0:
        raise ValueError("kl_div needs inputs with positive total mass")
    return torch.xlogy(g, g / p).sum()


def shift_to_unit(x: torch.Tensor) -> torch.Tensor:
    """Affinely map values from [-1, 1] into [0, 1]."""
    return (x + 1.0) / 2.0


def to_distribution(x: torch.Tensor, eps: float = DIST_EPS) -> torch.Tensor:
    """Smooth a nonnegative map and normalize it to a unit-sum distribution."""
    x = x + eps
    return x / x.sum()


def error_map_kl(target: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    """Divergence between two signed maps in [-1, 1].

    Both maps are shifted into [0, 1], smoothed, normalized per image to a
    unit-sum distribution, then compared with KL(target || pred); the result
    is averaged over the batch.
    """
    tc, pc = _aligned(shift_to_unit(target), shift_to_unit(pred))
    tf = tc.flatten(1) + DIST_EPS
    pf = pc.flatten(1) + DIST_EPS
    tf = tf / tf.sum(dim=1, keepdim=True)
    pf = pf / pf.sum(dim=1, keepdim=True)
    return torch.xlogy(tf, tf / pf).sum(dim=1).mean()


def structural_matrix(v: torch.Tensor) -> torch.Tensor:
    """Pairwise-difference matrix m[i, j] = v[i] - v[j] of a region vector.

    Antisymmetric with a zero diagonal by construction.
    """
    if v.dim() != 1:
        raise ValueError(f"expected a rank-1 region vector, got {tuple(v.shape)}")
    return v.unsqueeze(1) - v.unsqueeze(0)


def region_means_t(map2d: torch.Tensor, labels: torch.Tensor, n_regions: int) -> torch.Tensor:
    """Differentiable per-region mean of a 2-D map under an integer label grid."""
    if map2d.shape != labels.shape:
        raise ValueError(
            f"map/labels shape mismatch: {tuple(map2d.shape)} vs {tuple(labels.shape)}"
        )
    flat = map2d.reshape(-1)
    idx = labels.reshape(-1).long()
    sums = torch.zeros(n_regions, dtype=map2d.dtype, device=map2d.device)
    sums = sums.index_add(0, idx, flat)
    counts = torch.zeros(n_regions, dtype=map2d.dtype, device=map2d.device)
    counts = counts.index_add(0, idx, torch.ones_like(flat))
    return sums / counts.clamp(min=1.0)


def _seg_labels(seg) -> tuple[torch.Tensor, int]:
    """Accept a segmentation object (labels/region_count) or a raw label grid."""
    labels = getattr(seg, "labels", seg)
    labels = torch.as_tensor(labels, dtype=torch.long)
    n = getattr(seg, "region_count", None)
    if n is None:
        n = int(labels.max()) + 1
    return labels, int(n)


def ssl(p: torch.Tensor, g: torch.Tensor, seg) -> torch.Tensor:
    """Structural similarity loss between one prediction and its ground truth.

    Both maps are pooled to per-region means over the segmentation, turned
    into pairwise-difference matrices, shifted into [0, 1], normalized to
    unit-sum distributions, and compared with KL(ground truth || prediction).
    Sensitive only to the relational structure of region saliencies: constant
    maps (of any value) are indistinguishable.
    """
    labels, n_regions = _seg_labels(seg)
    if p.dim() != 2 or g.shape != p.shape:
        raise ValueError("ssl expects two aligned 2-D maps")
    pv = region_means_t(p, labels, n_regions)
    gv = region_means_t(g.to(p.dtype), labels, n_regions)
    qg = to_distribution(shift_to_unit(structural_matrix(gv)))
    qp = to_distribution(shift_to_unit(structural_matrix(pv)))
    return torch.xlogy(qg, qg / qp).sum()


def _ssl_batch(p: torch.Tensor, g: torch.Tensor, segs) -> torch.Tensor:
    pc, gc = _aligned(p, g)
    if len(segs) != pc.shape[0]:
        raise ValueError(f"expected {pc.shape[0]} segmentations, got {len(segs)}")
    per = [ssl(pc[b], gc[b], segs[b]) for b in range(pc.shape[0])]
    return torch.stack(per).mean()


def ssl_deep(sides, g: torch.Tensor, segs) -> torch.Tensor:
    """Sum of per-side structural similarity losses (batch-averaged each)."""
    total = None
    for s in sides:
        term = _ssl_batch(s, g, segs)
        total = term if total is None else total + term
    return total


@dataclass
class LossBundle:
    """The five objective components; ``total`` is their unit-weight sum."""

    l_p: torch.Tensor
    l_ro: torch.Tensor
    l_re: torch.Tensor
    l_rm: torch.Tensor
    l_ss: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.l_p + self.l_ro + self.l_re + self.l_rm + self.l_ss

    def detached(self) -> dict[str, float]:
        return {
            "l_p": float(self.l_p.detach()),
            "l_ro": float(self.l_ro.detach()),
            "l_re": float(self.l_re.detach()),
            "l_rm": float(self.l_rm.detach()),
            "l_ss": float(self.l_ss.detach()),
            "total": float(self.total.detach()),
        }


def total_loss(
    promotion_sides,
    object_preds,
    error_preds,
    purificatory_sides,
    g: torch.Tensor,
    segs,
) -> LossBundle:
    """Combine all supervision terms into the overall objective.

    - l_p: BCE of the five promotion side outputs.
    - l_ro: BCE of the five object predictions.
    - l_re: divergence between regressed error maps and the residual between
      ground truth and the (detached) object predictions.
    - l_rm: error-weighted BCE of the five purificatory side outputs, with
      the regressed error maps as constant weights.
    - l_ss: structural similarity of the five purificatory side outputs.
    """
    l_p = sum(bce(s, g) for s in promotion_sides)
    l_ro = sum(bce(o, g) for o in object_preds)
    gc = canon_map(g)
    l_re = sum(
        error_map_kl(gc - canon_map(o).detach(), e)
        for o, e in zip(object_preds, error_preds)
    )
    l_rm = sum(ibce(s, g, e) for s, e in zip(purificatory_sides, error_preds))
    l_ss = ssl_deep(purificatory_sides, g, segs)
    return LossBundle(l_p=l_p, l_ro=l_ro, l_re=l_re, l_rm=l_rm, l_ss=l_ss)
