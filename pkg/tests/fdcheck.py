"""Central finite-difference gradients for float64 tensors."""

import torch


def numeric_grad(fn, x: torch.Tensor, step: float = 1e-6) -> torch.Tensor:
    """d fn / d x by central differences; fn returns a scalar tensor."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    g = grad.view(-1)
    with torch.no_grad():
        for k in range(flat.numel()):
            orig = flat[k].item()
            flat[k] = orig + step
            up = fn(x).item()
            flat[k] = orig - step
            down = fn(x).item()
            flat[k] = orig
            g[k] = (up - down) / (2 * step)
    return grad


def analytic_grad(fn, x: torch.Tensor) -> torch.Tensor:
    x = x.detach().clone().requires_grad_(True)
    (g,) = torch.autograd.grad(fn(x), x)
    return g


def max_relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    """Largest entrywise difference relative to the larger gradient's max magnitude."""
    scale = max(a.abs().max().item(), b.abs().max().item(), 1e-12)
    return (a - b).abs().max().item() / scale


def param_fd_error(loss_fn, params, step: float = 1e-6) -> float:
    """Relative error of the full parameter gradient (all tensors in ``params`` jointly).

    Evaluations keep autograd enabled because some losses differentiate internally.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    analytic, numeric = [], []
    for p, ga in zip(params, grads):
        ga = torch.zeros_like(p) if ga is None else ga
        gn = torch.zeros_like(p)
        flat = p.data.view(-1)
        for k in range(flat.numel()):
            orig = flat[k].item()
            flat[k] = orig + step
            up = loss_fn().item()
            flat[k] = orig - step
            down = loss_fn().item()
            flat[k] = orig
            gn.view(-1)[k] = (up - down) / (2 * step)
        analytic.append(ga.detach().flatten())
        numeric.append(gn.flatten())
    return max_relative_error(torch.cat(analytic), torch.cat(numeric))
