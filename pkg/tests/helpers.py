"""Shared test utilities: a central finite-difference gradient checker."""

import torch


def finite_diff_grad(fn, x: torch.Tensor, h: float = 1e-6) -> torch.Tensor:
    """Central-difference gradient of a scalar function at x (perturbed in place)."""
    grad = torch.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        hi = float(fn(x))
        flat[i] = orig - h
        lo = float(fn(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def analytic_grad(fn, x: torch.Tensor) -> torch.Tensor:
    leaf = x.detach().clone().requires_grad_(True)
    fn(leaf).backward()
    return leaf.grad


def max_rel_err(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """Largest elementwise deviation, relative to the gradient's scale."""
    scale = float(numeric.abs().max().clamp(min=1e-8))
    return float((analytic - numeric).abs().max()) / scale


def check_gradient(fn, x: torch.Tensor, tol: float = 1e-4) -> float:
    err = max_rel_err(analytic_grad(fn, x), finite_diff_grad(fn, x))
    assert err < tol, f"gradient mismatch: max relative error {err:.3e} >= {tol}"
    return err
