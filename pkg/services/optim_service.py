# services/optim_service.py
import math
from typing import Dict, List, Tuple

import torch
import torch.nn as nn

from utils.exceptions import NonFiniteGradient, ShapeMismatch
from utils.logger import setup_logger

logger = setup_logger("optim")


# --- LEARNING RATE ---

def warmup_steps(total_steps: int, warmup_ratio: float) -> int:
    return int(round(warmup_ratio * total_steps))


def cosine_lr(step: int, total_steps: int, config) -> float:
    """Linear warmup 0 -> lr_base, then cosine decay lr_base -> 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = warmup_steps(total_steps, config.warmup_ratio)
    if warmup > 0 and step <= warmup:
        return config.lr_base * step / warmup
    progress = (step - warmup) / max(total_steps - warmup, 1)
    return config.lr_base * 0.5 * (1.0 + math.cos(math.pi * progress))


# --- ADAMW ---

def adamw_update(param: torch.Tensor, grad: torch.Tensor, state: Dict, lr: float,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0) -> None:
    """
    One in-place AdamW step on a single tensor. `state` holds step, exp_avg, exp_avg_sq
    and is created on first use.
    """
    if grad.shape != param.shape:
        raise ShapeMismatch(f"gradient shape {tuple(grad.shape)} != parameter shape {tuple(param.shape)}")
    if not torch.isfinite(grad).all():
        raise NonFiniteGradient("Gradient contains NaN or Inf")

    if not state:
        state["step"] = 0
        state["exp_avg"] = torch.zeros_like(param, memory_format=torch.preserve_format)
        state["exp_avg_sq"] = torch.zeros_like(param, memory_format=torch.preserve_format)

    beta1, beta2 = betas
    exp_avg, exp_avg_sq = state["exp_avg"], state["exp_avg_sq"]
    state["step"] += 1
    t = state["step"]

    exp_avg.mul_(beta1).add_(grad, alpha=1 - beta1)
    exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)

    bias_correction1 = 1 - beta1 ** t
    bias_correction2 = 1 - beta2 ** t
    denom = (exp_avg_sq.sqrt() / math.sqrt(bias_correction2)).add_(eps)

    if weight_decay != 0:
        param.mul_(1 - lr * weight_decay)
    param.addcdiv_(exp_avg, denom, value=-lr / bias_correction1)


class AdamW(torch.optim.Optimizer):
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        defaults = dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        for group in self.param_groups:
            for p in group["params"]:
                if p.grad is None:
                    continue
                if p.grad.is_sparse:
                    raise RuntimeError("AdamW does not support sparse gradients")
                adamw_update(p, p.grad, self.state[p], group["lr"], group["betas"],
                             group["eps"], group["weight_decay"])
        return loss

    def set_lr(self, lr: float) -> None:
        for group in self.param_groups:
            group["lr"] = lr


def parameter_groups(model: nn.Module, weight_decay: float) -> List[Dict]:
    """Biases, norm affines and scalar gains (ndim < 2) are not decayed."""
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        (decay if p.ndim >= 2 else no_decay).append(p)
    logger.debug(f"Param groups - decayed: {len(decay)}, not decayed: {len(no_decay)}")
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


def build_optimizer(model: nn.Module, config) -> AdamW:
    return AdamW(parameter_groups(model, config.weight_decay), lr=0.0,
                 betas=tuple(config.betas), eps=config.eps)
