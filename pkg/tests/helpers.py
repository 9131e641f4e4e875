"""Shared test utilities: the central finite-difference gradient oracle."""

import numpy as np
import torch


def finite_difference_check(params, loss_fn, n_coords=48, h=1e-5, seed=0):
    """Compare autograd gradients against central finite differences.

    ``params`` must be float64 leaf tensors with requires_grad; ``loss_fn``
    rebuilds the forward graph on every call. Samples ``n_coords``
    coordinates across the concatenated parameter vector and returns the
    aggregate relative error ||fd - analytic|| / ||analytic||.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)

    sizes = [p.numel() for p in params]
    offsets = np.cumsum([0] + sizes)
    total = offsets[-1]
    rng = np.random.default_rng(seed)
    coords = rng.choice(total, size=min(n_coords, total), replace=False)

    analytic, fd = [], []
    with torch.no_grad():
        for c in coords:
            p_idx = int(np.searchsorted(offsets, c, side="right") - 1)
            local = int(c - offsets[p_idx])
            flat = params[p_idx].view(-1)
            orig = flat[local].item()
            flat[local] = orig + h
            loss_plus = loss_fn().item()
            flat[local] = orig - h
            loss_minus = loss_fn().item()
            flat[local] = orig
            fd.append((loss_plus - loss_minus) / (2.0 * h))
            analytic.append(grads[p_idx].view(-1)[local].item())

    analytic = np.asarray(analytic)
    fd = np.asarray(fd)
    denom = np.linalg.norm(analytic)
    if denom == 0.0:
        return float(np.linalg.norm(fd))
    return float(np.linalg.norm(fd - analytic) / denom)
