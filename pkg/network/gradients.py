# network/gradients.py
from typing import Callable, Dict, List, Optional

import numpy as np
import torch
import torch.nn as nn
from torch.func import functional_call

from utils.logger import setup_logger

logger = setup_logger("gradients")

FD_EPS = 1e-5
FD_RTOL = 1e-4
FD_ATOL = 1e-6


def gradcheck_module(module: nn.Module, *inputs: torch.Tensor,
                     output_fn: Optional[Callable] = None, check_inputs: bool = True,
                     eps: float = FD_EPS, rtol: float = FD_RTOL, atol: float = FD_ATOL,
                     **forward_kwargs) -> bool:
    """
    Finite-difference check of a module's Jacobian w.r.t. all of its parameters
    (and its floating inputs when check_inputs). Expects a float64 module.
    """
    names = [n for n, p in module.named_parameters() if p.requires_grad]
    params = tuple(dict(module.named_parameters())[n].detach().clone().requires_grad_(True) for n in names)
    args = tuple(
        x.detach().clone().requires_grad_(check_inputs and x.is_floating_point()) for x in inputs
    )

    def fn(*flat):
        out = functional_call(module, dict(zip(names, flat[:len(names)])), flat[len(names):],
                              kwargs=forward_kwargs)
        return output_fn(out) if output_fn else out

    return torch.autograd.gradcheck(fn, params + args, eps=eps, rtol=rtol, atol=atol)


def spot_check_parameters(model: nn.Module, loss_fn: Callable[[], torch.Tensor], n: int = 8,
                          seed: int = 0, eps: float = FD_EPS) -> List[Dict]:
    """
    Compare autograd against central differences on n randomly drawn parameter entries.
    loss_fn evaluates the scalar loss using `model` as it currently stands.
    """
    model.zero_grad()
    loss_fn().backward()
    candidates = [(name, p) for name, p in model.named_parameters() if p.grad is not None]
    sizes = np.array([p.numel() for _, p in candidates])
    rng = np.random.default_rng(seed)
    picks = rng.choice(int(sizes.sum()), size=min(n, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    results = []
    with torch.no_grad():
        for flat in sorted(picks):
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            name, param = candidates[k]
            index = int(flat - offsets[k])
            view = param.view(-1)
            original = view[index].item()

            view[index] = original + eps
            plus = loss_fn().item()
            view[index] = original - eps
            minus = loss_fn().item()
            view[index] = original

            numeric = (plus - minus) / (2 * eps)
            analytic = param.grad.view(-1)[index].item()
            rel_error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), FD_ATOL)
            results.append({"name": name, "index": index, "analytic": analytic,
                            "numeric": numeric, "rel_error": rel_error})

    worst = max((r["rel_error"] for r in results), default=0.0)
    logger.info(f"Spot-checked {len(results)} parameters, worst relative error {worst:.2e}")
    return results
