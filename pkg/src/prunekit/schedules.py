"""Sparsity and learning-rate schedules.

Every schedule is a pure function of the iteration counter ``t``. A
``ScheduleSpec`` describes one (non-periodic) curve over ``[0, T]``; a
``CyclicalSchedule`` repeats an inner spec ``k`` times with a per-cycle
starting sparsity.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Union

SPARSITY_KINDS = ("constant", "step", "linear", "cubic")
LR_KINDS = ("constant", "exponential_decay", "piecewise_step_decay")
KINDS = ("constant", "step", "linear", "cubic", "exponential_decay", "piecewise_step_decay")


def _check_fraction(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class ScheduleSpec:
    """One schedule curve over iterations ``0..total_iters``.

    Args:
        kind: one of ``KINDS``.
        total_iters: the horizon T.
        s_init: starting sparsity (linear, cubic).
        s_t: target sparsity.
        step_iter: first iteration at which the step schedule is at ``s_t``.
        ramp_iters: linear/cubic reach ``s_t`` at this iteration and hold it
            afterwards. Defaults to ``total_iters``.
        base_value: learning rate at t=0 for learning-rate kinds.
        decay_factor: multiplicative drop for learning-rate kinds.
        decay_interval: iterations between exponential drops.
        drop_at: fraction of T at which the piecewise schedule drops.
    """

    kind: str
    total_iters: int
    s_init: float = 0.0
    s_t: float = 0.0
    step_iter: int = 0
    ramp_iters: int | None = None
    base_value: float = 1e-2
    decay_factor: float = 0.1
    decay_interval: int = 1
    drop_at: float = 0.75

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if int(self.total_iters) != self.total_iters or self.total_iters < 1:
            raise ValueError(f"total_iters must be a positive integer, got {self.total_iters!r}")
        _check_fraction("s_init", self.s_init)
        _check_fraction("s_t", self.s_t)
        _check_fraction("drop_at", self.drop_at)
        if self.ramp_iters is not None and not (1 <= self.ramp_iters <= self.total_iters):
            raise ValueError("ramp_iters must lie in [1, total_iters]")
        if self.step_iter < 0:
            raise ValueError("step_iter must be non-negative")
        if self.kind in LR_KINDS:
            if not self.base_value > 0:
                raise ValueError(f"base_value must be positive, got {self.base_value!r}")
            if not self.decay_factor > 0:
                raise ValueError(f"decay_factor must be positive, got {self.decay_factor!r}")
            if self.decay_interval < 1:
                raise ValueError("decay_interval must be >= 1")

    @property
    def is_sparsity(self) -> bool:
        return self.kind in SPARSITY_KINDS

    @property
    def is_learning_rate(self) -> bool:
        return self.kind in LR_KINDS

    def sparsity(self, t: int) -> float:
        _check_t(t, self.total_iters)
        if self.kind == "constant":
            s = self.s_t
        elif self.kind == "step":
            s = 0.0 if t < self.step_iter else self.s_t
        elif self.kind in ("linear", "cubic"):
            ramp = self.ramp_iters or self.total_iters
            if t >= ramp:
                return self.s_t
            # written as a convex combination so both endpoints are exact
            frac = 1.0 - t / ramp
            if self.kind == "cubic":
                frac = frac**3
            s = self.s_init * frac + self.s_t * (1.0 - frac)
        else:
            raise ValueError(f"{self.kind!r} is a learning-rate schedule, not a sparsity schedule")
        return min(1.0, max(0.0, s))

    def learning_rate(self, t: int) -> float:
        _check_t(t, self.total_iters)
        if self.kind == "constant":
            return self.base_value
        if self.kind == "piecewise_step_decay":
            if t >= self.drop_at * self.total_iters:
                return self.base_value * self.decay_factor
            return self.base_value
        if self.kind == "exponential_decay":
            return self.base_value * self.decay_factor ** (t // self.decay_interval)
        raise ValueError(f"{self.kind!r} is a sparsity schedule, not a learning-rate schedule")

    def to_dict(self) -> dict[str, Any]:
        return {"type": "spec", **asdict(self)}


@dataclass(frozen=True)
class CyclicalSchedule:
    """Repeats ``inner`` over ``k`` cycles spanning ``total_iters`` iterations.

    ``cycle_len = total_iters // k``; the last cycle absorbs the remainder and
    holds the inner schedule's end value through it. The inner spec's own
    ``total_iters`` should equal ``cycle_len``; it is rescaled otherwise.
    For sparsity kinds the first cycle starts at ``first_cycle_s_init`` and
    later cycles at ``later_cycle_s_init`` (default ``0.5 * s_t``).
    """

    inner: ScheduleSpec
    k: int
    total_iters: int
    first_cycle_s_init: float = 0.0
    later_cycle_s_init: float | None = None
    _cycles: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.total_iters < self.k:
            raise ValueError("total_iters must be at least k")
        _check_fraction("first_cycle_s_init", self.first_cycle_s_init)
        later = self.later_cycle_s_init
        if later is None:
            later = 0.5 * self.inner.s_t
        _check_fraction("later_cycle_s_init", later)
        inner = self.inner
        if inner.total_iters != self.cycle_len:
            scale = self.cycle_len / inner.total_iters
            ramp = inner.ramp_iters
            if ramp is not None:
                ramp = min(self.cycle_len, max(1, round(ramp * scale)))
            inner = replace(inner, total_iters=self.cycle_len, ramp_iters=ramp,
                            step_iter=round(inner.step_iter * scale),
                            decay_interval=max(1, round(inner.decay_interval * scale)))
        first = replace(inner, s_init=self.first_cycle_s_init)
        rest = replace(inner, s_init=later)
        object.__setattr__(self, "_cycles", (first, rest))

    @property
    def cycle_len(self) -> int:
        return self.total_iters // self.k

    @property
    def is_sparsity(self) -> bool:
        return self.inner.is_sparsity

    @property
    def is_learning_rate(self) -> bool:
        return self.inner.is_learning_rate

    def cycle_of(self, t: int) -> int:
        """Zero-based cycle index containing iteration ``t``."""
        _check_t(t, self.total_iters)
        return min(t // self.cycle_len, self.k - 1)

    def _locate(self, t: int) -> tuple[ScheduleSpec, int]:
        m = self.cycle_of(t)
        local = min(t - m * self.cycle_len, self.cycle_len)
        return self._cycles[0 if m == 0 else 1], local

    def sparsity(self, t: int) -> float:
        spec, local = self._locate(t)
        return spec.sparsity(local)

    def learning_rate(self, t: int) -> float:
        spec, local = self._locate(t)
        return spec.learning_rate(local)

    def boundaries(self) -> list[int]:
        """Iterations at which cycles 2..k start."""
        return [m * self.cycle_len for m in range(1, self.k)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "cyclical",
            "inner": self.inner.to_dict(),
            "k": self.k,
            "total_iters": self.total_iters,
            "first_cycle_s_init": self.first_cycle_s_init,
            "later_cycle_s_init": self.later_cycle_s_init,
        }


Schedule = Union[ScheduleSpec, CyclicalSchedule]


def _check_t(t: int, total: int) -> None:
    if not (0 <= t <= total):
        raise ValueError(f"iteration {t} outside [0, {total}]")


def eval_sparsity(spec: Schedule, t: int) -> float:
    """Sparsity fraction prescribed at iteration ``t``."""
    return spec.sparsity(t)


def eval_learning_rate(spec: Schedule, t: int) -> float:
    """Learning rate prescribed at iteration ``t``."""
    return spec.learning_rate(t)


def schedule_from_dict(data: dict[str, Any]) -> Schedule:
    """Inverse of ``to_dict`` for both schedule types."""
    data = dict(data)
    kind = data.pop("type", "spec")
    if kind == "cyclical":
        inner = schedule_from_dict(data.pop("inner"))
        if not isinstance(inner, ScheduleSpec):
            raise ValueError("cyclical inner schedule must be a plain spec")
        return CyclicalSchedule(inner=inner, **data)
    if kind != "spec":
        raise ValueError(f"unknown schedule type {kind!r}")
    return ScheduleSpec(**data)


def dump_rows(sparsity: Schedule | None, lr: Schedule | None, total_iters: int) -> list[tuple[int, float, float]]:
    """Rows ``(t, sparsity, lr)`` for t in ``0..total_iters``; missing schedules give 0."""
    rows = []
    for t in range(total_iters + 1):
        s = sparsity.sparsity(t) if sparsity is not None else 0.0
        eta = lr.learning_rate(t) if lr is not None else 0.0
        rows.append((t, s, eta))
    return rows
