"""Small differentiable core on float64 torch tensors.

Layers, activations, attention and the time embedding used by the policy and
critic networks, plus reverse-mode gradients over named parameter sets, the
adaptive-moment optimizer and a central-difference gradient checker.
"""
import logging
import math
from collections import OrderedDict
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import torch
from torch import nn

from aigc.adsac.exceptions import ContractViolation, InvalidConfig

lg = logging.getLogger(__name__)

DTYPE = torch.float64

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def linear_forward(W: torch.Tensor, b: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Wx + b for a single vector or a batch of row vectors."""
    if W.dim() != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ContractViolation(
            f"linear shapes do not conform: W{tuple(W.shape)} b{tuple(b.shape)} x{tuple(x.shape)}"
        )
    return x @ W.T + b


def softmax(x: torch.Tensor) -> torch.Tensor:
    shifted = x - x.max(dim=-1, keepdim=True).values
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


def entropy(probs: torch.Tensor) -> torch.Tensor:
    """−Σ p ln p over the last axis, with 0 ln 0 = 0."""
    safe = torch.where(probs > 0, probs, torch.ones_like(probs))
    return -(probs * torch.log(safe)).sum(dim=-1)


def sinusoidal_embed(t, d: int) -> torch.Tensor:
    """Interleaved (sin, cos) pairs at frequencies 10000^(−2i/d).

    `t` is an integer or a 1-d tensor of timesteps; the result has one row per
    timestep.
    """
    if d <= 0 or d % 2:
        raise InvalidConfig(f"embedding dimension must be positive and even, got {d}")
    steps = torch.as_tensor(t, dtype=DTYPE)
    if torch.any(steps < 0):
        raise ContractViolation("timesteps must be >= 0")
    freqs = torch.pow(torch.tensor(10000.0, dtype=DTYPE), -torch.arange(0, d, 2, dtype=DTYPE) / d)
    angles = steps.reshape(-1, 1) * freqs
    out = torch.stack((torch.sin(angles), torch.cos(angles)), dim=-1).reshape(-1, d)
    return out[0] if steps.dim() == 0 else out


def attention(Q: torch.Tensor, K: torch.Tensor, V: torch.Tensor) -> torch.Tensor:
    """softmax(QKᵀ/√d_k)V, row-wise, over the last two axes."""
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ContractViolation(
            f"attention shapes do not conform: "
            f"Q{tuple(Q.shape)} K{tuple(K.shape)} V{tuple(V.shape)}"
        )
    scores = Q @ K.transpose(-2, -1) / math.sqrt(Q.shape[-1])
    return softmax(scores) @ V


def mlp(sizes: Sequence[int], zero: bool = False) -> nn.Sequential:
    """Linear layers with ReLU between them and a linear output."""
    layers: List[nn.Module] = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(n_in, n_out, dtype=DTYPE))
        if i < len(sizes) - 2:
            layers.append(nn.ReLU())
    net = nn.Sequential(*layers)
    if zero:
        zero_(net)
    return net


def zero_(module: nn.Module) -> nn.Module:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


class ParamSet:
    """Named parameters of one or more modules with matching gradient slots."""

    def __init__(self, **modules: nn.Module):
        self._params: "OrderedDict[str, nn.Parameter]" = OrderedDict()
        for prefix, module in modules.items():
            for name, p in module.named_parameters():
                self._params[f"{prefix}.{name}"] = p

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(self._params.values())

    def items(self):
        return self._params.items()

    def names(self) -> List[str]:
        return list(self._params)

    def numel(self) -> int:
        return sum(p.numel() for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def grads(self) -> Dict[str, torch.Tensor]:
        return {
            n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
            for n, p in self._params.items()
        }

    def backward(self, loss: Optional[torch.Tensor]) -> Dict[str, torch.Tensor]:
        """Fill the gradient slot of every parameter; unreachable ones get zero."""
        if not isinstance(loss, torch.Tensor):
            raise ContractViolation("backward needs the scalar output of a recorded forward pass")
        if loss.numel() != 1:
            raise ContractViolation(f"backward needs a scalar, got shape {tuple(loss.shape)}")
        params = list(self._params.values())
        if loss.requires_grad:
            grads = torch.autograd.grad(loss, params, allow_unused=True)
        else:
            grads = [None] * len(params)
        for p, g in zip(params, grads):
            p.grad = torch.zeros_like(p) if g is None else g.detach()
        return self.grads()


def make_optimizer(params: Iterable[torch.Tensor], lr: float) -> torch.optim.Adam:
    """Adaptive-moment optimizer state for one parameter group."""
    return torch.optim.Adam(list(params), lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)


def adam_step(
    params: ParamSet, loss: torch.Tensor, opt: torch.optim.Optimizer
) -> Dict[str, torch.Tensor]:
    """One bias-corrected adaptive-moment update of `params` on `loss`."""
    grads = params.backward(loss)
    opt.step()
    return grads


def grad_check(
    f: Callable[[], torch.Tensor],
    params: ParamSet,
    h: float = 1e-5,
    per_tensor: int = 6,
    generator: Optional[torch.Generator] = None,
    floor: float = 1e-6,
    retry_above: float = 1e-6,
) -> float:
    """Max relative error between autograd and central differences.

    Checks up to `per_tensor` randomly chosen coordinates of every parameter.
    The relative error of one coordinate is |a − fd| / max(|a|, |fd|, floor);
    `floor` sits above the rounding noise of a central difference on float64
    losses of order one (about 1e-16 / h), so near-zero gradients are not
    reported as relative blow-ups.

    A coordinate off by more than `retry_above` is re-measured with step h/10.
    If its forward and backward one-sided differences still disagree by at
    least half that error, a ReLU kink lies inside [θ − h/10, θ + h/10]: the
    coordinate is skipped and another one drawn in its place.
    """
    analytic = params.backward(f())

    def at(flat: torch.Tensor, idx: int, value: float) -> float:
        flat[idx] = value
        return f().item()

    def rel(a: float, fd: float) -> float:
        return abs(a - fd) / max(abs(a), abs(fd), floor)

    worst = 0.0
    kinks = 0
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            checked = 0
            for idx in torch.randperm(flat.numel(), generator=generator).tolist():
                if checked == per_tensor:
                    break
                a = analytic[name].view(-1)[idx].item()
                orig = flat[idx].item()
                fd = (at(flat, idx, orig + h) - at(flat, idx, orig - h)) / (2 * h)
                err = rel(a, fd)
                if err > retry_above:
                    step = h / 10
                    mid = at(flat, idx, orig)
                    up = at(flat, idx, orig + step)
                    down = at(flat, idx, orig - step)
                    fwd, bwd = (up - mid) / step, (mid - down) / step
                    fd = (up - down) / (2 * step)
                    if abs(fwd - bwd) >= 0.5 * abs(a - fd):
                        flat[idx] = orig
                        kinks += 1
                        lg.debug("grad check %s[%d]: kink, one-sided %.3e / %.3e",
                                 name, idx, fwd, bwd)
                        continue
                    err = min(err, rel(a, fd))
                flat[idx] = orig
                checked += 1
                if err > worst:
                    worst = err
                    lg.debug("grad check %s[%d]: analytic %.6e fd %.6e", name, idx, a, fd)
    if kinks:
        lg.debug("grad check skipped %d coordinate(s) at ReLU kinks", kinks)
    return worst
