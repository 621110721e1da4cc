"""A small ReLU MLP with hand-written backprop, synthetic blobs data, and the
desk-scale pruning experiments built on top of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pruning import (
    IN_PLACE,
    LOCAL,
    MaskHistory,
    ParamSet,
    PruneMask,
    TvPgdConfig,
    count_recovered,
    jaccard_mask_distance,
    regrown_fraction,
    tv_pgd,
)
from .schedules import CyclicalSchedule, ScheduleSpec


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or self.labels.ndim != 1 or len(self.inputs) != len(self.labels):
            raise ValueError("inputs must be (m, dim) and labels (m,)")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes, self.split)


def make_blobs(num_classes: int = 4, dim: int = 20, samples_per_class: int = 500,
               spread: float = 0.3, seed: int = 0, test_frac: float = 0.2) -> tuple[Dataset, Dataset]:
    """Gaussian clusters around random unit-sphere centres; returns (train, test)."""
    if num_classes < 1 or dim < 1 or samples_per_class < 1:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((num_classes, dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    inputs = centres[labels] + spread * rng.standard_normal((labels.size, dim))
    perm = rng.permutation(labels.size)
    inputs, labels = inputs[perm], labels[perm]
    n_test = int(round(test_frac * labels.size))
    n_train = labels.size - n_test
    train = Dataset(inputs[:n_train], labels[:n_train], num_classes, "train")
    test = Dataset(inputs[n_train:], labels[n_train:], num_classes, "test")
    return train, test


class Mlp:
    """ReLU hidden layers, softmax cross-entropy output.

    Parameters are stored in a ParamSet with layers ``W0, b0, W1, b1, ...``;
    ``Wi`` has shape (fan_in, fan_out).
    """

    def __init__(self, layer_dims: list[int] | tuple[int, ...] = (20, 64, 64, 4), seed: int = 0,
                 params: ParamSet | None = None):
        if len(layer_dims) < 2 or any(int(d) < 1 for d in layer_dims):
            raise ValueError("layer_dims needs at least two positive entries")
        self.layer_dims = tuple(int(d) for d in layer_dims)
        self.params = params if params is not None else self.init_params(seed)

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def weight_names(self) -> tuple[str, ...]:
        return tuple(f"W{i}" for i in range(self.num_layers))

    def init_params(self, seed: int) -> ParamSet:
        # He-style uniform fan-in init, zero biases
        rng = np.random.default_rng(seed)
        layers = []
        for i, (a, b) in enumerate(zip(self.layer_dims[:-1], self.layer_dims[1:])):
            bound = np.sqrt(6.0 / a)
            layers.append((f"W{i}", rng.uniform(-bound, bound, size=(a, b))))
            layers.append((f"b{i}", np.zeros(b)))
        return ParamSet(layers)

    def _check(self, X: np.ndarray) -> None:
        if X.ndim != 2 or X.shape[1] != self.layer_dims[0]:
            raise ValueError(f"expected inputs of shape (m, {self.layer_dims[0]}), got {X.shape}")
        if X.shape[0] == 0:
            raise ValueError("empty batch")

    def _forward(self, X: np.ndarray, params: ParamSet) -> tuple[list[np.ndarray], np.ndarray]:
        acts = [X]
        h = X
        for i in range(self.num_layers):
            z = h @ params[f"W{i}"] + params[f"b{i}"]
            if not np.isfinite(z).all():
                raise FloatingPointError(f"non-finite activations in layer {i}")
            h = np.maximum(z, 0.0) if i < self.num_layers - 1 else z
            acts.append(h)
        return acts, acts[-1]

    def forward(self, X: np.ndarray, params: ParamSet | None = None) -> np.ndarray:
        """Class probabilities, one row per input."""
        self._check(X)
        _, logits = self._forward(X, self.params if params is None else params)
        return _softmax(logits)

    def loss_and_grad(self, X: np.ndarray, y: np.ndarray,
                      params: ParamSet | None = None) -> tuple[float, float, ParamSet]:
        """Mean cross-entropy, accuracy and its gradient w.r.t. every parameter."""
        self._check(X)
        params = self.params if params is None else params
        acts, logits = self._forward(X, params)
        m = X.shape[0]
        probs = _softmax(logits)
        loss = _xent(logits, y)
        acc = float((logits.argmax(axis=1) == y).mean())
        delta = probs
        delta[np.arange(m), y] -= 1.0
        delta /= m
        grads = {}
        for i in reversed(range(self.num_layers)):
            grads[f"W{i}"] = acts[i].T @ delta
            grads[f"b{i}"] = delta.sum(axis=0)
            if i:
                delta = (delta @ params[f"W{i}"].T) * (acts[i] > 0)
        return loss, acc, ParamSet((k, grads[k]) for k in params.names)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _xent(logits: np.ndarray, y: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(logsum - z[np.arange(len(y)), y]))


def forward_loss(model: Mlp, batch: Dataset, params: ParamSet | None = None) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) on ``batch``."""
    model._check(batch.inputs)
    _, logits = model._forward(batch.inputs, model.params if params is None else params)
    acc = float((logits.argmax(axis=1) == batch.labels).mean())
    return _xent(logits, batch.labels), acc


def gradient(model: Mlp, batch: Dataset, params: ParamSet | None = None) -> ParamSet:
    """Backprop gradient of the mean batch loss."""
    return model.loss_and_grad(batch.inputs, batch.labels, params)[2]


class MlpObjective:
    """Minibatch SGD objective over a training set for ``tv_pgd``.

    Iteration t uses batch ``t % batches_per_epoch`` of epoch
    ``t // batches_per_epoch``; each epoch's permutation is seeded by
    (seed, epoch) so any iteration's batch is reproducible on its own.
    """

    def __init__(self, model: Mlp, data: Dataset, batch_size: int = 32, seed: int = 0):
        self.model = model
        self.data = data
        self.batch_size = batch_size
        self.seed = seed
        self.batches_per_epoch = max(1, len(data) // batch_size)
        self._perm_epoch = -1
        self._perm: np.ndarray | None = None

    def initial_params(self) -> ParamSet:
        return self.model.params

    def batch_indices(self, t: int) -> np.ndarray:
        epoch, b = divmod(t, self.batches_per_epoch)
        if epoch != self._perm_epoch:
            self._perm = np.random.default_rng([self.seed, epoch]).permutation(len(self.data))
            self._perm_epoch = epoch
        return self._perm[b * self.batch_size:(b + 1) * self.batch_size]

    def loss_grad(self, params: ParamSet, t: int) -> tuple[float, ParamSet]:
        idx = self.batch_indices(t)
        loss, _, grads = self.model.loss_and_grad(self.data.inputs[idx], self.data.labels[idx], params)
        return loss, grads


def accuracy(model: Mlp, data: Dataset, params: ParamSet | None = None) -> float:
    return forward_loss(model, data, params)[1]


def train_dense(model: Mlp, data: Dataset, iters: int, lr: float = 0.05, momentum: float = 0.9,
                batch_size: int = 32, seed: int = 0) -> ParamSet:
    """Plain SGD training (TV-PGD with no pruning); returns the final parameters."""
    cfg = TvPgdConfig(
        total_iters=iters,
        prune_interval=iters + 1,
        sparsity_schedule=None,
        lr_schedule=ScheduleSpec("piecewise_step_decay", iters, base_value=lr),
        momentum=momentum,
        seed=seed,
    )
    return tv_pgd(MlpObjective(model, data, batch_size, seed), cfg).params


# Pruning recipes shared by the CLI and the acceptance checks.

METHODS = ("one_shot", "gradual", "cyclical")


@dataclass
class PruneRecipe:
    """Budget and schedule knobs for ``pruning_config``.

    Defaults are the desk-scale recipe used for the 95%-sparsity comparison
    on the default blobs task.
    """

    total_iters: int = 6000
    lr: float = 0.1
    lr_drop: float = 0.1
    drop_at: float = 0.75
    prune_interval: int = 20
    ramp_frac: float = 0.8
    k: int = 5
    later_cycle_s_init: float | None = None
    momentum: float = 0.9
    mask_mode: str = IN_PLACE
    scope: str = LOCAL


def pruning_config(method: str, s_t: float, recipe: PruneRecipe, prunable: tuple[str, ...],
                   seed: int = 0, inner_kind: str = "cubic") -> TvPgdConfig:
    """TvPgdConfig for ``method`` with the same iteration budget for every method.

    One-shot and gradual use one piecewise lr curve over the whole budget;
    cyclical restarts it every cycle.
    """
    T = recipe.total_iters
    common = dict(momentum=recipe.momentum, mask_mode=recipe.mask_mode, scope=recipe.scope,
                  prunable=prunable, seed=seed)
    if method == "one_shot":
        lr = ScheduleSpec("piecewise_step_decay", T, base_value=recipe.lr,
                          decay_factor=recipe.lr_drop, drop_at=recipe.drop_at)
        return TvPgdConfig.one_shot(T, s_t, lr, **common)
    if method == "gradual":
        lr = ScheduleSpec("piecewise_step_decay", T, base_value=recipe.lr,
                          decay_factor=recipe.lr_drop, drop_at=recipe.drop_at)
        return TvPgdConfig.gradual(T, s_t, recipe.prune_interval, lr, ramp_frac=recipe.ramp_frac, **common)
    if method == "cyclical":
        cycle_len = T // recipe.k
        lr = ScheduleSpec("piecewise_step_decay", cycle_len, base_value=recipe.lr,
                          decay_factor=recipe.lr_drop, drop_at=recipe.drop_at)
        return TvPgdConfig.cyclical(T, recipe.k, s_t, recipe.prune_interval, lr, inner_kind=inner_kind,
                                    ramp_frac=recipe.ramp_frac,
                                    later_cycle_s_init=recipe.later_cycle_s_init, **common)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


@dataclass
class PruneTrainResult:
    method: str
    test_accuracy: float
    train_accuracy: float
    sparsity: float
    recovered: int
    result: object


def prune_train(model: Mlp, train: Dataset, test: Dataset, method: str, s_t: float,
                recipe: PruneRecipe | None = None, seed: int = 0, batch_size: int = 32) -> PruneTrainResult:
    """Prune ``model.params`` with ``method`` and report final accuracies."""
    recipe = recipe or PruneRecipe()
    cfg = pruning_config(method, s_t, recipe, model.weight_names, seed)
    res = tv_pgd(MlpObjective(model, train, batch_size, seed), cfg)
    return PruneTrainResult(
        method=method,
        test_accuracy=accuracy(model, test, res.params),
        train_accuracy=accuracy(model, train, res.params),
        sparsity=res.mask.sparsity(),
        recovered=count_recovered(res.history),
        result=res,
    )


def pretrained_blobs_model(seed: int = 0, layer_dims: tuple[int, ...] = (20, 64, 64, 4),
                           iters: int = 1500, lr: float = 0.05, **blob_kw) -> tuple[Mlp, Dataset, Dataset]:
    """Default blobs task with a densely trained MLP: (model, train, test)."""
    train, test = make_blobs(seed=seed, **blob_kw)
    model = Mlp(layer_dims, seed=seed)
    model.params = train_dense(model, train, iters=iters, lr=lr, seed=seed)
    return model, train, test


def compare_methods(seeds: list[int] | range, s_t: float = 0.95, recipe: PruneRecipe | None = None,
                    methods: tuple[str, ...] = METHODS) -> dict[str, list[float]]:
    """Final test accuracy per method and seed, all pruning the same dense model."""
    out: dict[str, list[float]] = {m: [] for m in methods}
    for seed in seeds:
        model, train, test = pretrained_blobs_model(seed)
        for method in methods:
            out[method].append(prune_train(model, train, test, method, s_t, recipe, seed=seed).test_accuracy)
    return out


ABLATION_KINDS = ("cubic", "linear", "step", "finetune_only")


@dataclass
class CycleStats:
    cycle: int
    accuracy: float
    mask_jaccard: float
    regrown_fraction: float


def cycle_ablation(model: Mlp, train: Dataset, test: Dataset, kind: str, k: int, s_t: float,
                   recipe: PruneRecipe | None = None, seed: int = 0, batch_size: int = 32) -> list[CycleStats]:
    """Per-cycle test accuracy and mask distance to the cycle-1 mask.

    ``cubic``/``linear``/``step`` run cyclical pruning with that per-cycle
    sparsity schedule. ``finetune_only`` prunes like cyclical cubic in the
    first cycle, then keeps the mask frozen and only fine-tunes, restarting
    the learning-rate curve each cycle.
    """
    if k < 2:
        raise ValueError("cycle ablation needs k >= 2")
    if kind not in ABLATION_KINDS:
        raise ValueError(f"unknown ablation kind {kind!r}; expected one of {ABLATION_KINDS}")
    recipe = recipe or PruneRecipe()
    T = recipe.total_iters
    cycle_len = T // k
    prunable = model.weight_names
    objective = MlpObjective(model, train, batch_size, seed)
    ends: dict[int, tuple[ParamSet, PruneMask]] = {}

    if kind == "finetune_only":
        first = PruneRecipe(**{**recipe.__dict__, "total_iters": cycle_len, "k": 1})
        cfg = pruning_config("cyclical", s_t, first, prunable, seed)
        res = tv_pgd(objective, cfg)
        params, mask = res.params, res.mask
        ends[0] = (params.copy(), mask.copy())
        lr = ScheduleSpec("piecewise_step_decay", cycle_len, base_value=recipe.lr,
                          decay_factor=recipe.lr_drop, drop_at=recipe.drop_at)
        for m in range(1, k):
            ft = TvPgdConfig(total_iters=cycle_len, prune_interval=cycle_len + 1, sparsity_schedule=None,
                             lr_schedule=lr, momentum=recipe.momentum, mask_mode=IN_PLACE,
                             scope=recipe.scope, prunable=prunable, seed=seed)
            shifted = _ShiftedObjective(objective, m * cycle_len)
            res = tv_pgd(shifted, ft, params=params, mask=mask)
            params = res.params
            ends[m] = (params.copy(), mask.copy())
        base = ends[0][1]
        # the mask never changes after cycle 1, so nothing can regrow
        return [CycleStats(m + 1, accuracy(model, test, p), jaccard_mask_distance(base, msk), 0.0)
                for m, (p, msk) in sorted(ends.items())]

    cfg = pruning_config("cyclical", s_t, PruneRecipe(**{**recipe.__dict__, "k": k}), prunable, seed,
                         inner_kind=kind)
    end_iters = {m * cycle_len - 1: m - 1 for m in range(1, k)}
    end_iters[T - 1] = k - 1

    def grab(t: int, params: ParamSet, mask: PruneMask) -> None:
        if t in end_iters:
            ends[end_iters[t]] = (params.copy(), mask.copy())

    res = tv_pgd(objective, cfg, callback=grab)
    history = res.history
    base = ends[0][1]
    out = []
    for m, (p, msk) in sorted(ends.items()):
        end_t = (m + 1) * cycle_len - 1 if m < k - 1 else T - 1
        regrown = _regrown_at(history, end_t)
        out.append(CycleStats(m + 1, accuracy(model, test, p), jaccard_mask_distance(base, msk), regrown))
    return out


def _regrown_at(history: MaskHistory, t: int) -> float:
    if not len(history):
        return 0.0
    idx = history.latest_at(t)
    return regrown_fraction(history, history.iterations[idx])


class _ShiftedObjective:
    """Objective whose iteration counter starts at ``offset`` (keeps batches continuing)."""

    def __init__(self, inner: MlpObjective, offset: int):
        self.inner = inner
        self.offset = offset

    def initial_params(self) -> ParamSet:
        return self.inner.initial_params()

    def loss_grad(self, params: ParamSet, t: int):
        return self.inner.loss_grad(params, t + self.offset)


def cycle_boundary_regrowth(history: MaskHistory, schedule: CyclicalSchedule) -> list[float]:
    """Regrown fraction at each cycle-2..k boundary snapshot."""
    return [regrown_fraction(history, t) for t in schedule.boundaries()]
