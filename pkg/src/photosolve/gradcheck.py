"""Finite-difference validation of analytic adjoints.

Central differences are the independent oracle: they never touch autograd,
only repeated forward evaluations of the objective.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import torch
from torch import Tensor

Objective = Callable[..., Tensor]


def central_difference_grad(
    fn: Objective, params: dict[str, Tensor], name: str, step: float = 1e-4
) -> Tensor:
    """Coordinate-wise central differences of a scalar objective.

    Perturbs params[name] one coordinate at a time; every other entry of
    `params` is passed through unchanged.
    """
    base = params[name].detach().clone()
    flat = base.reshape(-1)
    grad = torch.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            f_plus = float(fn(**{**params, name: flat.reshape(base.shape)}))
            flat[i] = orig - step
            f_minus = float(fn(**{**params, name: flat.reshape(base.shape)}))
            flat[i] = orig
            grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad.reshape(base.shape)


def autograd_grad(fn: Objective, params: dict[str, Tensor], names: Iterable[str]) -> dict[str, Tensor]:
    """Analytic gradients of a scalar objective for the named blocks."""
    names = list(names)
    leaves = {k: v.detach().clone() for k, v in params.items()}
    for n in names:
        leaves[n].requires_grad_(True)
    out = fn(**leaves)
    grads = torch.autograd.grad(out, [leaves[n] for n in names], allow_unused=True)
    result = {}
    for n, g in zip(names, grads):
        result[n] = torch.zeros_like(leaves[n]) if g is None else g
    return result


@dataclass
class BlockCheck:
    """Comparison of analytic vs finite-difference gradients for one block."""

    name: str
    n_tested: int
    n_excluded: int
    n_ok: int
    max_rel_err: float

    @property
    def frac_ok(self) -> float:
        return 1.0 if self.n_tested == 0 else self.n_ok / self.n_tested

    def summary(self) -> str:
        return (
            f"{self.name}: {self.n_ok}/{self.n_tested} coords ok "
            f"(excluded {self.n_excluded}), max rel err {self.max_rel_err:.3e}"
        )


def compare_gradients(
    name: str,
    analytic: Tensor,
    fd: Tensor,
    tol: float = 1e-4,
    exclude: Optional[Tensor] = None,
) -> BlockCheck:
    """Relative-error comparison with a magnitude floor.

    The floor keeps near-zero coordinates (where finite differences are all
    round-off) from dominating; `exclude` masks known kink points.
    """
    a = analytic.reshape(-1)
    f = fd.reshape(-1)
    scale = float(torch.maximum(a.abs().max(), f.abs().max())) if a.numel() else 0.0
    floor = max(scale, 1.0) * 1e-7
    rel = (a - f).abs() / torch.clamp(torch.maximum(a.abs(), f.abs()), min=floor)
    keep = torch.ones_like(rel, dtype=torch.bool)
    if exclude is not None:
        keep = ~exclude.reshape(-1)
    tested = rel[keep]
    n_tested = int(tested.numel())
    n_ok = int((tested < tol).sum()) if n_tested else 0
    max_err = float(tested.max()) if n_tested else 0.0
    return BlockCheck(
        name=name,
        n_tested=n_tested,
        n_excluded=int((~keep).sum()),
        n_ok=n_ok,
        max_rel_err=max_err,
    )


def check_blocks(
    fn: Objective,
    params: dict[str, Tensor],
    block_names: Iterable[str],
    step: float = 1e-4,
    tol: float = 1e-4,
    exclude: Optional[dict[str, Tensor]] = None,
) -> list[BlockCheck]:
    """Run the analytic-vs-central-difference check for several blocks."""
    names = list(block_names)
    analytic = autograd_grad(fn, params, names)
    checks = []
    for n in names:
        fd = central_difference_grad(fn, params, n, step=step)
        mask = None if exclude is None else exclude.get(n)
        checks.append(compare_gradients(n, analytic[n], fd, tol=tol, exclude=mask))
    return checks
