"""Central finite-difference verification of analytic gradients.

The contract checked here: for a scalar-valued function of named parameter
tensors, the gradients produced by the backward tape must match central
differences elementwise. Run in float64; float32 round-off swamps the
comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .tensor import NumericError, Tensor


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    worst_analytic: float
    worst_fd: float


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def worst(self) -> GradCheckEntry | None:
        return max(self.entries, key=lambda e: e.max_rel_err, default=None)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def lines(self) -> list[str]:
        out = [f"{e.name}: max rel err {e.max_rel_err:.3e}" for e in self.entries]
        w = self.worst
        verdict = "PASS" if self.passed else "FAIL"
        if w is not None:
            out.append(
                f"{verdict}: worst parameter {w.name} rel err {w.max_rel_err:.3e}"
                f" (analytic {w.worst_analytic:.6e}, fd {w.worst_fd:.6e}, tol {self.tolerance:.1e})"
            )
        return out


def _rel_err(a: float, b: float, atol: float) -> float:
    if abs(a) <= atol and abs(b) <= atol:
        # below central-difference measurement resolution; treat as matching
        return 0.0
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def check_gradients(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    atol: float = 1e-7,
    corrupt_adjoint: Callable[[str, np.ndarray], np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare backward-tape gradients of ``f()`` against central differences.

    ``f`` must rebuild its computation from the current parameter values on
    every call. Elements where both gradients fall below ``atol`` count as
    matching: central differences in float64 cannot certify relative accuracy
    below that scale (fd noise is roughly eps*|loss|/step, ~1e-11 here, which
    is 1e-4 of a 1e-7 gradient). ``corrupt_adjoint`` is a negative-control hook
    that maps (name, analytic gradient) to a replacement before comparison.
    """
    loss = f()
    if not np.isfinite(loss.item()):
        raise NumericError("gradient check: loss is not finite")
    for p in params.values():
        p.zero_grad()
    loss.backward()
    analytic = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if corrupt_adjoint is not None:
            g = corrupt_adjoint(name, g.copy())
        analytic[name] = np.array(g, copy=True)

    entries = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ga = analytic[name].reshape(-1)
        worst = (0.0, 0.0, 0.0)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            fd = (up - down) / (2.0 * step)
            err = _rel_err(float(ga[i]), fd, atol)
            if err > worst[0]:
                worst = (err, float(ga[i]), fd)
        entries.append(GradCheckEntry(name, worst[0], worst[1], worst[2]))
    return GradCheckReport(entries=entries, tolerance=tolerance)
