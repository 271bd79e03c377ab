"""Storage I/O sizing calculator for offloaded-activation training steps.

Estimates the sustained random-read IOPS a training iteration needs when
activations are paged from storage, and the break-even iteration time
under a given IOPS capacity. A scatter factor sigma >= 1 converts ideal
contiguous page reads into effective I/O operations.
"""

import math
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class IoWorkload:
    """One iteration's paging workload.

    G: global batch in sequences; s: sequence length in tokens; b: bytes
    per token; P: page size in bytes; t: iteration time in seconds; I_max:
    IOPS capacity; sigma: scatter factor; m: extra page faults per sample.
    """

    G: int
    s: int
    b: float
    P: int
    t: float
    I_max: float
    sigma: float = 1.0
    m: float = 0.0

    def validate(self) -> "IoWorkload":
        for name in ("G", "s", "b", "P", "t", "I_max"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.sigma < 1.0:
            raise ConfigError("sigma must be >= 1")
        if self.m < 0.0:
            raise ConfigError("m must be >= 0")
        return self


def pages_per_iteration(workload: IoWorkload) -> int:
    """ceil(G * s * b / P): pages touched by one iteration's activations."""
    workload.validate()
    total = workload.G * workload.s * workload.b
    if isinstance(workload.b, int) or float(workload.b).is_integer():
        return (int(total) + workload.P - 1) // workload.P
    return math.ceil(total / workload.P)


def iops_needed(workload: IoWorkload) -> float:
    """Sustained IOPS requirement (sigma / t) * ceil(G*s*b/P)."""
    return workload.sigma / workload.t * pages_per_iteration(workload)


def t_break(workload: IoWorkload) -> float:
    """Break-even iteration time (sigma / I_max) * ceil(G*s*b/P).

    Iterations faster than this outrun the storage budget.
    """
    return workload.sigma / workload.I_max * pages_per_iteration(workload)


def scatter_estimate(m: float, P: int, s: int, b: float) -> float:
    """Practical scatter-factor approximation sigma = 1 + m * P / (s * b)."""
    if s * b <= 0:
        raise ConfigError("s * b must be positive")
    if m < 0:
        raise ConfigError("m must be >= 0")
    return 1.0 + m * P / (s * b)


def sizing_report(workload: IoWorkload) -> str:
    """One-page human-readable sizing summary."""
    pages = pages_per_iteration(workload)
    need = iops_needed(workload)
    brk = t_break(workload)
    lines = [
        "storage sizing report",
        "---------------------",
        f"global batch G        : {workload.G}",
        f"sequence length s     : {workload.s}",
        f"bytes per token b     : {workload.b}",
        f"page size P           : {workload.P}",
        f"iteration time t      : {workload.t} s",
        f"IOPS capacity I_max   : {workload.I_max}",
        f"scatter factor sigma  : {workload.sigma}",
        f"pages per iteration   : {pages}",
        f"IOPS needed           : {need:.1f}",
        f"break-even time       : {brk:.3f} s",
        f"iteration {'fits' if brk < workload.t else 'DOES NOT fit'} the IOPS budget"
        f" (t = {workload.t} s vs t_break = {brk:.3f} s)",
    ]
    return "\n".join(lines) + "\n"
