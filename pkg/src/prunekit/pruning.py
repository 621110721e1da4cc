"""Magnitude pruning and the time-varying projected gradient descent loop.

The loop alternates an (S)GD step with a magnitude-pruning projection whose
sparsity and learning rate both depend on the iteration. One-shot, iterative,
cubic-gradual, cyclical and classical PGD pruning are all instances of it and
are available as ``TvPgdConfig`` constructors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Protocol

import numpy as np

from .schedules import CyclicalSchedule, Schedule, ScheduleSpec

logger = logging.getLogger(__name__)

LOCAL = "local"
GLOBAL = "global"
IN_PLACE = "in_place_every_step"
AT_PRUNE = "at_prune_steps_only"


class ParamSet:
    """Ordered named layers of real parameters; the flat vector theta."""

    def __init__(self, layers: Iterable[tuple[str, np.ndarray]] | dict[str, np.ndarray]):
        items = layers.items() if isinstance(layers, dict) else layers
        self.layers: dict[str, np.ndarray] = {}
        for name, values in items:
            if name in self.layers:
                raise ValueError(f"duplicate layer name {name!r}")
            self.layers[name] = np.asarray(values, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.layers[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    def items(self):
        return self.layers.items()

    @property
    def names(self) -> list[str]:
        return list(self.layers)

    @property
    def total_dim(self) -> int:
        return sum(v.size for v in self.layers.values())

    def flat(self) -> np.ndarray:
        if not self.layers:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self.layers.values()])

    def copy(self) -> "ParamSet":
        return ParamSet((k, v.copy()) for k, v in self.layers.items())

    def zeros_like(self) -> "ParamSet":
        return ParamSet((k, np.zeros_like(v)) for k, v in self.layers.items())

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.layers.values())

    def same_shape(self, other: "ParamSet") -> bool:
        return self.names == other.names and all(
            self.layers[k].shape == other.layers[k].shape for k in self.layers
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParamSet):
            return NotImplemented
        return self.same_shape(other) and all(
            np.array_equal(self.layers[k], other.layers[k]) for k in self.layers
        )

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}{tuple(v.shape)}" for k, v in self.layers.items())
        return f"ParamSet({shapes})"


@dataclass
class PruneMask:
    """Binary keep-mask (1 = kept) for a subset of a ParamSet's layers.

    Layers of the ParamSet that are absent from the mask are never pruned.
    """

    layers: dict[str, np.ndarray]
    scope: str = LOCAL

    @classmethod
    def ones(cls, params: ParamSet, names: Iterable[str] | None = None, scope: str = LOCAL) -> "PruneMask":
        names = params.names if names is None else list(names)
        return cls({k: np.ones(params[k].shape, dtype=bool) for k in names}, scope)

    @property
    def names(self) -> list[str]:
        return list(self.layers)

    @property
    def size(self) -> int:
        return sum(m.size for m in self.layers.values())

    def flat(self) -> np.ndarray:
        if not self.layers:
            return np.zeros(0, dtype=bool)
        return np.concatenate([m.ravel() for m in self.layers.values()])

    def sparsity(self) -> float:
        """Fraction of masked-out entries."""
        n = self.size
        return 0.0 if n == 0 else 1.0 - self.flat().sum() / n

    def layer_sparsity(self) -> dict[str, float]:
        return {k: 1.0 - m.sum() / m.size for k, m in self.layers.items()}

    def copy(self) -> "PruneMask":
        return PruneMask({k: m.copy() for k, m in self.layers.items()}, self.scope)

    def same_shape(self, other: "PruneMask") -> bool:
        return self.names == other.names and all(
            self.layers[k].shape == other.layers[k].shape for k in self.layers
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PruneMask):
            return NotImplemented
        return self.same_shape(other) and all(
            np.array_equal(self.layers[k], other.layers[k]) for k in self.layers
        )


def magprune(params: ParamSet, s: float, scope: str = LOCAL, names: Iterable[str] | None = None) -> PruneMask:
    """Mask that zeroes the ``floor(s * n)`` smallest-magnitude entries.

    With ``scope="local"`` the count is taken per layer; with ``"global"``
    over the concatenation of the selected layers. Ties go to the lowest
    (layer, element) position.

    Args:
        params: weights to rank.
        s: sparsity ratio in [0, 1].
        scope: ``"local"`` or ``"global"``.
        names: layers eligible for pruning (default: all).
    """
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"sparsity must lie in [0, 1], got {s!r}")
    if scope not in (LOCAL, GLOBAL):
        raise ValueError(f"unknown pruning scope {scope!r}")
    names = params.names if names is None else list(names)
    if scope == LOCAL:
        return PruneMask({k: _prune_flat(params[k].ravel(), s).reshape(params[k].shape) for k in names}, scope)
    flat = np.concatenate([params[k].ravel() for k in names]) if names else np.zeros(0)
    keep = _prune_flat(flat, s)
    out, start = {}, 0
    for k in names:
        n = params[k].size
        out[k] = keep[start:start + n].reshape(params[k].shape)
        start += n
    return PruneMask(out, scope)


def _prune_flat(values: np.ndarray, s: float) -> np.ndarray:
    n_prune = int(np.floor(s * values.size + 1e-9))
    keep = np.ones(values.size, dtype=bool)
    if n_prune:
        order = np.argsort(np.abs(values), kind="stable")
        keep[order[:n_prune]] = False
    return keep


def apply_mask(params: ParamSet, mask: PruneMask) -> ParamSet:
    """Element-wise product of ``params`` with ``mask``; unmasked layers copied."""
    out = {}
    for k, v in params.items():
        if k in mask.layers:
            m = mask.layers[k]
            if m.shape != v.shape:
                raise ValueError(f"mask shape {m.shape} does not match layer {k!r} shape {v.shape}")
            out[k] = v * m
        else:
            out[k] = v.copy()
    missing = set(mask.layers) - set(params.layers)
    if missing:
        raise ValueError(f"mask refers to unknown layers {sorted(missing)}")
    return ParamSet(out)


def achieved_sparsity(params: ParamSet, names: Iterable[str] | None = None) -> float:
    """Fraction of exactly-zero entries among the given layers."""
    names = params.names if names is None else list(names)
    total = sum(params[k].size for k in names)
    if total == 0:
        return 0.0
    return sum(int((params[k] == 0).sum()) for k in names) / total


@dataclass
class MaskHistory:
    """Masks recorded at every prune event, keyed by iteration."""

    iterations: list[int] = field(default_factory=list)
    masks: list[PruneMask] = field(default_factory=list)
    ever_pruned: np.ndarray | None = None

    def record(self, t: int, mask: PruneMask) -> None:
        if self.iterations and t <= self.iterations[-1]:
            raise ValueError(f"snapshot iteration {t} not after {self.iterations[-1]}")
        flat = mask.flat()
        if self.ever_pruned is None:
            self.ever_pruned = ~flat
        else:
            if flat.shape != self.ever_pruned.shape:
                raise ValueError("mask shape changed between snapshots")
            self.ever_pruned = self.ever_pruned | ~flat
        self.iterations.append(int(t))
        self.masks.append(mask.copy())

    def __len__(self) -> int:
        return len(self.iterations)

    @property
    def snapshots(self) -> list[tuple[int, PruneMask]]:
        return list(zip(self.iterations, self.masks))

    def index_of(self, t: int) -> int:
        try:
            return self.iterations.index(t)
        except ValueError:
            raise ValueError(f"iteration {t} is not a snapshot iteration") from None

    def latest_at(self, t: int) -> int:
        """Index of the last snapshot taken at or before ``t``."""
        idx = int(np.searchsorted(self.iterations, t, side="right")) - 1
        if idx < 0:
            raise ValueError(f"no snapshot at or before iteration {t}")
        return idx


def recovery_events(history: MaskHistory) -> list[tuple[int, int, int]]:
    """All ``(j, t1, t2)`` with ``t2 > t1``, weight j pruned at t1 and kept at t2.

    Indices refer to the flattened mask. The list can be large for long
    cyclical runs; use ``count_recovered`` when only totals matter.
    """
    if len(history) < 2:
        return []
    flats = [m.flat() for m in history.masks]
    events = []
    for a in range(len(flats)):
        pruned_a = ~flats[a]
        if not pruned_a.any():
            continue
        for b in range(a + 1, len(flats)):
            for j in np.flatnonzero(pruned_a & flats[b]):
                events.append((int(j), history.iterations[a], history.iterations[b]))
    return events


def count_recovered(history: MaskHistory) -> int:
    """Number of distinct weights that recovered at least once."""
    if len(history) < 2:
        return 0
    pruned_before = ~history.masks[0].flat()
    recovered = np.zeros_like(pruned_before)
    for m in history.masks[1:]:
        f = m.flat()
        recovered |= pruned_before & f
        pruned_before |= ~f
    return int(recovered.sum())


def regrown_fraction(history: MaskHistory, t: int) -> float:
    """Share of the mask kept at ``t`` that had been pruned at an earlier snapshot."""
    idx = history.index_of(t)
    current = history.masks[idx].flat()
    if idx == 0:
        return 0.0
    before = np.zeros_like(current)
    for m in history.masks[:idx]:
        before |= ~m.flat()
    return float((current & before).sum() / current.size)


def regrown_series(history: MaskHistory) -> list[float]:
    """``regrown_fraction`` at every snapshot, in one pass."""
    out = []
    before = None
    for m in history.masks:
        f = m.flat()
        if before is None:
            out.append(0.0)
            before = ~f
        else:
            out.append(float((f & before).sum() / f.size))
            before |= ~f
    return out


def jaccard_mask_distance(a: PruneMask, b: PruneMask) -> float:
    """1 - |Za & Zb| / |Za | Zb| over the pruned sets; 0 when both are empty."""
    if not a.same_shape(b):
        raise ValueError("masks have different shapes")
    za, zb = ~a.flat(), ~b.flat()
    union = int((za | zb).sum())
    if union == 0:
        return 0.0
    return 1.0 - int((za & zb).sum()) / union


class DifferentiableModel(Protocol):
    """What ``tv_pgd`` needs from a model."""

    def initial_params(self) -> ParamSet: ...

    def loss_grad(self, params: ParamSet, t: int) -> tuple[float, ParamSet]:
        """Loss and gradient at ``params`` for iteration ``t``'s batch."""
        ...


@dataclass
class TvPgdConfig:
    """Settings for one TV-PGD run.

    ``sparsity_schedule=None`` disables re-pruning: the starting mask (all ones
    unless one is passed to ``tv_pgd``) is kept fixed, i.e. plain fine-tuning.
    ``prune_interval > total_iters`` prunes only at t=0 (one-shot).
    ``zero_lr_on_prune`` skips the gradient step on prune iterations, so the
    mask is recomputed on already-masked weights.
    """

    total_iters: int
    prune_interval: int
    sparsity_schedule: Schedule | None
    lr_schedule: Schedule
    mask_mode: str = IN_PLACE
    scope: str = LOCAL
    prunable: tuple[str, ...] | None = None
    momentum: float = 0.9
    zero_momentum_of_pruned: bool = False
    zero_lr_on_prune: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.total_iters < 1:
            raise ValueError("total_iters must be >= 1")
        if self.prune_interval < 1:
            raise ValueError("prune_interval must be >= 1")
        if self.mask_mode not in (IN_PLACE, AT_PRUNE):
            raise ValueError(f"unknown mask_mode {self.mask_mode!r}")
        if self.scope not in (LOCAL, GLOBAL):
            raise ValueError(f"unknown scope {self.scope!r}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.sparsity_schedule is not None and not self.sparsity_schedule.is_sparsity:
            raise ValueError("sparsity_schedule must be a sparsity kind")
        if not self.lr_schedule.is_learning_rate:
            raise ValueError("lr_schedule must be a learning-rate kind")
        if self.prunable is not None:
            self.prunable = tuple(self.prunable)

    # Named specializations.

    @classmethod
    def one_shot(cls, total_iters: int, s_t: float, lr: Schedule, **kw) -> "TvPgdConfig":
        """Prune once at t=0 to ``s_t`` and fine-tune with the mask frozen."""
        return cls(
            total_iters=total_iters,
            prune_interval=total_iters + 1,
            sparsity_schedule=ScheduleSpec("step", total_iters, s_t=s_t, step_iter=0),
            lr_schedule=lr,
            zero_lr_on_prune=True,
            **kw,
        )

    @classmethod
    def iterative(cls, total_iters: int, s_t: float, prune_interval: int, lr: Schedule, **kw) -> "TvPgdConfig":
        """Linear sparsity ramp, few prune steps, cyclical lr with eta=0 at prunes."""
        return cls(
            total_iters=total_iters,
            prune_interval=prune_interval,
            sparsity_schedule=ScheduleSpec("linear", total_iters, s_t=s_t),
            lr_schedule=lr,
            zero_lr_on_prune=True,
            **kw,
        )

    @classmethod
    def gradual(cls, total_iters: int, s_t: float, prune_interval: int, lr: Schedule,
                s_init: float = 0.0, ramp_frac: float = 1.0, **kw) -> "TvPgdConfig":
        """Cubic sparsity ramp with frequent pruning and a monotone lr."""
        ramp = max(1, round(ramp_frac * total_iters))
        return cls(
            total_iters=total_iters,
            prune_interval=prune_interval,
            sparsity_schedule=ScheduleSpec("cubic", total_iters, s_init=s_init, s_t=s_t, ramp_iters=ramp),
            lr_schedule=lr,
            **kw,
        )

    @classmethod
    def cyclical(cls, total_iters: int, k: int, s_t: float, prune_interval: int, lr: ScheduleSpec,
                 inner_kind: str = "cubic", ramp_frac: float = 1.0, step_frac: float = 0.5,
                 first_cycle_s_init: float = 0.0, later_cycle_s_init: float | None = None,
                 **kw) -> "TvPgdConfig":
        """Per-cycle sparsity schedule repeated ``k`` times, lr reset every cycle.

        ``lr`` describes one cycle's learning-rate curve.
        """
        cycle_len = total_iters // k
        ramp = max(1, round(ramp_frac * cycle_len))
        if inner_kind == "step":
            inner = ScheduleSpec("step", cycle_len, s_t=s_t, step_iter=round(step_frac * cycle_len))
        else:
            inner = ScheduleSpec(inner_kind, cycle_len, s_t=s_t, ramp_iters=ramp)
        return cls(
            total_iters=total_iters,
            prune_interval=prune_interval,
            sparsity_schedule=CyclicalSchedule(inner, k, total_iters, first_cycle_s_init, later_cycle_s_init),
            lr_schedule=CyclicalSchedule(lr, k, total_iters),
            **kw,
        )

    @classmethod
    def pgd(cls, total_iters: int, s_t: float, lr: float, **kw) -> "TvPgdConfig":
        """Classical PGD / iterative hard thresholding: prune every step at constant sparsity."""
        return cls(
            total_iters=total_iters,
            prune_interval=1,
            sparsity_schedule=ScheduleSpec("constant", total_iters, s_t=s_t),
            lr_schedule=ScheduleSpec("constant", total_iters, base_value=lr),
            **kw,
        )


@dataclass
class TvPgdResult:
    params: ParamSet
    mask: PruneMask
    history: MaskHistory
    trace: list[dict]


class NonFiniteError(FloatingPointError):
    """Loss or gradient became NaN/inf during training."""


def tv_pgd(
    model: DifferentiableModel,
    config: TvPgdConfig,
    params: ParamSet | None = None,
    mask: PruneMask | None = None,
    callback: Callable[[int, ParamSet, PruneMask], None] | None = None,
) -> TvPgdResult:
    """Run time-varying projected gradient descent.

    For t in 0..T-1: take an SGD(+momentum) step with lr eta(t); every
    ``prune_interval`` iterations recompute the mask by magnitude pruning at
    s(t); then apply the mask (every step, or only at prune events in
    ``at_prune_steps_only`` mode).

    Args:
        model: supplies the starting parameters and minibatch loss/gradient.
        config: schedules and mode flags.
        params: starting parameters; defaults to ``model.initial_params()``.
        mask: starting mask; defaults to all ones over the prunable layers.
        callback: called as ``callback(t, params, mask)`` at the end of every
            iteration.

    Returns:
        Final params and mask, the mask history and a per-iteration trace of
        ``loss``, ``sparsity``, ``lr`` and the recovery-condition margin.
    """
    theta = (params if params is not None else model.initial_params()).copy()
    names = list(config.prunable) if config.prunable is not None else theta.names
    mask = PruneMask.ones(theta, names, config.scope) if mask is None else mask.copy()
    velocity = theta.zeros_like()
    history = MaskHistory()
    trace: list[dict] = []
    T = config.total_iters

    for t in range(T):
        prune_now = config.sparsity_schedule is not None and t % config.prune_interval == 0
        lr = config.lr_schedule.learning_rate(t)
        if prune_now and config.zero_lr_on_prune:
            lr = 0.0

        loss, grad = model.loss_grad(theta, t)
        if not np.isfinite(loss) or not grad.is_finite():
            raise NonFiniteError(f"non-finite loss or gradient at iteration {t} (loss={loss})")

        margin = _recovery_margin(theta, grad, lr, mask)
        if lr != 0.0:
            for k in theta:
                v = velocity.layers[k]
                v *= config.momentum
                v += grad.layers[k]
                theta.layers[k] -= lr * v

        if prune_now:
            s = config.sparsity_schedule.sparsity(t)
            mask = magprune(theta, s, config.scope, names)
            history.record(t, mask)
        if config.mask_mode == IN_PLACE or prune_now:
            for k, m in mask.layers.items():
                theta.layers[k] *= m
                if config.zero_momentum_of_pruned:
                    velocity.layers[k] *= m

        trace.append({
            "t": t,
            "loss": float(loss),
            "sparsity": achieved_sparsity(theta, names),
            "lr": lr,
            "recovery_margin": margin,
        })
        if callback is not None:
            callback(t, theta, mask)

    return TvPgdResult(theta, mask, history, trace)


def _recovery_margin(theta: ParamSet, grad: ParamSet, lr: float, mask: PruneMask) -> float:
    """max_j (lr*g_j)^2 over pruned j minus min_k theta_k^2 over kept nonzero k.

    Positive values mean a single step could lift a pruned weight above the
    smallest kept one. NaN when either set is empty.
    """
    step_sq = []
    kept_sq = []
    for k, m in mask.layers.items():
        if (~m).any():
            step_sq.append(np.max((lr * grad.layers[k][~m]) ** 2))
        w = theta.layers[k][m]
        w = w[w != 0]
        if w.size:
            kept_sq.append(np.min(w**2))
    if not step_sq or not kept_sq:
        return float("nan")
    return float(max(step_sq) - min(kept_sq))
