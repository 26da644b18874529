"""Central finite differences, used as the oracle for autograd gradients."""

import torch


def numeric_grad(fn, tensor: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    g = grad.view(-1)
    for n in range(flat.numel()):
        orig = flat[n].item()
        flat[n] = orig + eps
        hi = float(fn())
        flat[n] = orig - eps
        lo = float(fn())
        flat[n] = orig
        g[n] = (hi - lo) / (2 * eps)
    return grad


def max_rel_error(fn, tensors: dict[str, torch.Tensor], eps: float = 1e-6) -> dict[str, float]:
    """Worst elementwise |analytic - numeric| / max(|analytic|, |numeric|, floor) per tensor.

    ``floor`` is 1e-3 of the tensor's largest analytic gradient, so entries
    that are numerically zero do not blow up the ratio with rounding noise.
    """
    for t in tensors.values():
        t.grad = None
    fn().backward()
    analytic = {k: t.grad.detach().clone() for k, t in tensors.items()}
    out = {}
    with torch.no_grad():
        for k, t in tensors.items():
            num = numeric_grad(fn, t, eps)
            floor = max(1e-3 * float(analytic[k].abs().max()), 1e-12)
            denom = torch.maximum(torch.maximum(analytic[k].abs(), num.abs()), torch.tensor(floor, dtype=num.dtype))
            out[k] = float(((analytic[k] - num).abs() / denom).max())
    return out
