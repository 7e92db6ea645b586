"""Sharpness-aware minimization.

One step: take the gradient at the current weights, perturb the weights
along it (sign rule by default, an L2-normalized rule as the alternative
solution of the norm-constrained ascent problem), take the gradient again at
the perturbed point, restore the weights bitwise, and feed the second
gradient to the base optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch

RULES = ("sign", "l2_normalized")


@dataclass
class SamConfig:
    gamma: float = 0.07
    rule: str = "sign"
    enabled: bool = True

    def validate(self) -> None:
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}, got {self.rule!r}")


def compute_perturbation(
    grads: Sequence[torch.Tensor | None],
    gamma: float,
    rule: str = "sign",
) -> list[torch.Tensor | None]:
    """Per-parameter perturbations from gradients; None entries pass through."""
    if rule not in RULES:
        raise ValueError(f"rule must be one of {RULES}, got {rule!r}")
    present = [g for g in grads if g is not None]
    for g in present:
        if not torch.isfinite(g).all():
            raise FloatingPointError("non-finite gradient; cannot build a perturbation")
    if rule == "sign":
        return [None if g is None else gamma * torch.sign(g) for g in grads]
    norm = torch.sqrt(sum((g.double() ** 2).sum() for g in present)) if present else torch.tensor(0.0)
    if float(norm) == 0.0 or gamma == 0.0:
        return [None if g is None else torch.zeros_like(g) for g in grads]
    scale = gamma / norm
    return [None if g is None else (g.double() * scale).to(g.dtype) for g in grads]


@dataclass
class SamStepResult:
    loss: float  # L(theta)
    loss_perturbed: float | None  # L(theta + eps), None in plain mode
    aux: object = None
    aux_perturbed: object = None


def sam_step(
    model: torch.nn.Module,
    loss_fn: Callable[[], tuple[torch.Tensor, object]],
    base_optimizer: torch.optim.Optimizer,
    config: SamConfig,
) -> SamStepResult:
    """One optimization step; exactly two forward/backward passes when SAM is
    enabled, one otherwise. The pre-step weights are restored bitwise before
    the base optimizer update, even if the second pass raises.

    ``loss_fn`` must return ``(loss, aux)`` and be deterministic for the
    duration of the step (mine any in-batch randomness beforehand).
    """
    config.validate()
    params = [p for p in model.parameters() if p.requires_grad]

    if not config.enabled:
        base_optimizer.zero_grad(set_to_none=True)
        loss, aux = loss_fn()
        loss.backward()
        base_optimizer.step()
        return SamStepResult(loss=float(loss.detach()), loss_perturbed=None, aux=aux)

    base_optimizer.zero_grad(set_to_none=True)
    loss, aux = loss_fn()
    loss.backward()
    eps = compute_perturbation([p.grad for p in params], config.gamma, config.rule)

    originals = [p.detach().clone() for p in params]
    with torch.no_grad():
        for p, e in zip(params, eps):
            if e is not None:
                p.add_(e)
    try:
        base_optimizer.zero_grad(set_to_none=True)
        loss2, aux2 = loss_fn()
        loss2.backward()
    finally:
        with torch.no_grad():
            for p, orig in zip(params, originals):
                p.copy_(orig)
    base_optimizer.step()
    return SamStepResult(
        loss=float(loss.detach()),
        loss_perturbed=float(loss2.detach()),
        aux=aux,
        aux_perturbed=aux2,
    )
