"""Sparse linear regression experiments with a single pruned weight.

Data follow ``y = alpha^T X`` with ``X`` of shape (d, n) and one zero entry
``alpha[c]``. Dense training is ridge regression; one-shot pruning drops the
smallest ridge coordinate and refits, PGD is iterative hard thresholding
started from the ridge solution.
"""

from __future__ import annotations

import math
from itertools import combinations
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .seeding import rng_for

ALPHA_MODES = ("random", "adversarial")
WILSON_Z = 1.959963984540054


@dataclass
class LinearProblem:
    X: np.ndarray
    y: np.ndarray
    alpha: np.ndarray
    c: int
    lam: float = 1e-2

    @classmethod
    def from_alpha(cls, X: np.ndarray, alpha: np.ndarray, c: int, lam: float = 1e-2) -> "LinearProblem":
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha[c] != 0:
            raise ValueError("alpha[c] must be zero")
        return cls(X=X, y=alpha @ X, alpha=alpha, c=c, lam=lam)

    @property
    def d(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]


def sample_rip_matrix(d: int, n: int, seed: int | np.random.Generator) -> np.ndarray:
    """d x n matrix of i.i.d. N(0, 1/n) entries."""
    if d < 1 or n < 1:
        raise ValueError("d and n must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_normal((d, n)) / math.sqrt(n)


def _ridge_system(X: np.ndarray, lam: float) -> np.ndarray:
    G = X @ X.T
    if lam <= 0 and np.linalg.matrix_rank(G) < G.shape[0]:
        raise np.linalg.LinAlgError("X X^T is singular and lambda <= 0")
    return G + lam * np.eye(G.shape[0])


def ridge_solution(X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Minimiser of ||y - w^T X||^2 + lam ||w||^2, i.e. (X X^T + lam I)^-1 X y."""
    H = _ridge_system(X, lam)
    rhs = X @ y
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return np.linalg.solve(H, rhs)
    return np.linalg.solve(L.T, np.linalg.solve(L, rhs))


def ridge_matrix(X: np.ndarray, lam: float) -> np.ndarray:
    """A = (X X^T + lam I)^-1 X X^T, so that the ridge solution is A alpha."""
    return np.linalg.solve(_ridge_system(X, lam), X @ X.T)


def adversarial_alpha(X: np.ndarray, lam: float, c: int) -> np.ndarray:
    """Ground truth taken from row c of the ridge matrix, with alpha[c] = 0.

    Makes the ridge solution large at c, so magnitude pruning tends to keep c.
    """
    d = X.shape[0]
    if not 0 <= c < d:
        raise ValueError(f"c={c} outside [0, {d})")
    alpha = ridge_matrix(X, lam)[c].copy()
    alpha[c] = 0.0
    return alpha


def restricted_lstsq(X: np.ndarray, y: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Least squares over the coordinates in ``support`` (min-norm if underdetermined)."""
    w = np.zeros(X.shape[0])
    support = np.asarray(support)
    if support.dtype == bool:
        support = np.flatnonzero(support)
    if support.size:
        w[support] = np.linalg.lstsq(X[support].T, y, rcond=None)[0]
    return w


def squared_loss(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    r = y - w @ X
    return float(r @ r)


@dataclass
class OneShotResult:
    w: np.ndarray
    pruned: list[int]
    w_dense: np.ndarray


def one_shot_linear(problem: LinearProblem, n_prune: int = 1) -> OneShotResult:
    """Ridge fit, prune the smallest coordinate(s), refit on the remaining support."""
    w_dense = ridge_solution(problem.X, problem.y, problem.lam)
    order = np.argsort(np.abs(w_dense), kind="stable")
    pruned = sorted(int(i) for i in order[:n_prune])
    keep = np.ones(problem.d, dtype=bool)
    keep[pruned] = False
    w = restricted_lstsq(problem.X, problem.y, keep)
    return OneShotResult(w=w, pruned=pruned, w_dense=w_dense)


@dataclass
class PgdResult:
    w: np.ndarray
    pruned_trajectory: np.ndarray
    diverged: bool = False

    @property
    def pruned(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.w == 0)]


def default_eta(X: np.ndarray) -> float:
    return 0.1 / np.linalg.norm(X, 2) ** 2


def pgd_linear(problem: LinearProblem, eta: float | None = None, steps: int = 500,
               w0: np.ndarray | None = None, n_prune: int = 1) -> PgdResult:
    """Iterative hard thresholding on ||y - w^T X||^2.

    Each step is a full-batch gradient step followed by zeroing the
    ``n_prune`` smallest-magnitude coordinates. Starts from the ridge solution
    unless ``w0`` is given. Divergence is reported through ``diverged``.
    """
    X, y = problem.X, problem.y
    if eta is None:
        eta = default_eta(X)
    if eta <= 0:
        raise ValueError("eta must be positive")
    w = ridge_solution(X, y, problem.lam) if w0 is None else np.array(w0, dtype=np.float64)
    G2 = 2.0 * eta * (X @ X.T)
    b2 = 2.0 * eta * (X @ y)
    trajectory = np.empty((steps, n_prune), dtype=np.int64)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(steps):
            w = w - (G2 @ w - b2)
            idx = np.argpartition(np.abs(w), n_prune - 1)[:n_prune] if n_prune > 1 else [np.argmin(np.abs(w))]
            w[idx] = 0.0
            trajectory[i] = np.sort(idx)
            if i % 64 == 63 and not np.isfinite(w).all():
                return PgdResult(w=w, pruned_trajectory=trajectory[: i + 1], diverged=True)
    diverged = not np.isfinite(w).all() or np.abs(w).max() > 1e12
    return PgdResult(w=w, pruned_trajectory=trajectory, diverged=diverged)


@dataclass
class RecoveryTrialConfig:
    d: int = 5
    n: int = 4
    alpha_mode: str = "random"
    trials: int = 1000
    lam: float = 1e-2
    eta: float | None = None
    pgd_steps: int = 500
    success_tol: float = 1e-3
    c: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d < 1 or self.n < 1:
            raise ValueError("d and n must be positive")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.success_tol > 0:
            raise ValueError("success_tol must be positive")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")
        if not 0 <= self.c < self.d:
            raise ValueError("c must index into alpha")
        if self.eta is not None and self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.pgd_steps < 1:
            raise ValueError("pgd_steps must be >= 1")


def make_problem(config: RecoveryTrialConfig, trial: int) -> LinearProblem:
    """The problem instance for ``trial``; depends only on (seed, trial)."""
    rng = rng_for(config.seed, trial)
    X = sample_rip_matrix(config.d, config.n, rng)
    if config.alpha_mode == "adversarial":
        alpha = adversarial_alpha(X, config.lam, config.c)
    else:
        alpha = rng.standard_normal(config.d)
        alpha[config.c] = 0.0
    return LinearProblem.from_alpha(X, alpha, config.c, config.lam)


@dataclass
class TrialOutcome:
    one_shot_value: bool
    pgd_value: bool
    one_shot_support: bool
    pgd_support: bool
    pgd_diverged: bool


def run_trial(config: RecoveryTrialConfig, trial: int) -> TrialOutcome:
    p = make_problem(config, trial)
    os_res = one_shot_linear(p)
    pgd_res = pgd_linear(p, eta=config.eta, steps=config.pgd_steps)
    tol = config.success_tol
    pgd_ok = not pgd_res.diverged and float(np.max(np.abs(pgd_res.w - p.alpha))) <= tol
    return TrialOutcome(
        one_shot_value=float(np.max(np.abs(os_res.w - p.alpha))) <= tol,
        pgd_value=bool(pgd_ok),
        one_shot_support=os_res.pruned == [p.c],
        pgd_support=not pgd_res.diverged and pgd_res.w[p.c] == 0,
        pgd_diverged=pgd_res.diverged,
    )


def _count_range(config: RecoveryTrialConfig, start: int, stop: int) -> dict[str, int]:
    counts = dict.fromkeys(("one_shot_value", "pgd_value", "one_shot_support", "pgd_support", "pgd_diverged"), 0)
    for i in range(start, stop):
        out = asdict(run_trial(config, i))
        for k in counts:
            counts[k] += int(out[k])
    return counts


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials == 0:
        return (0.0, 1.0)
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return (lo, hi)


@dataclass
class RecoveryResult:
    config: RecoveryTrialConfig
    counts: dict[str, int]
    p_one_shot: float = field(init=False)
    p_pgd: float = field(init=False)
    ci_one_shot: tuple[float, float] = field(init=False)
    ci_pgd: tuple[float, float] = field(init=False)

    def __post_init__(self) -> None:
        t = self.config.trials
        self.p_one_shot = self.counts["one_shot_value"] / t
        self.p_pgd = self.counts["pgd_value"] / t
        self.ci_one_shot = wilson_interval(self.counts["one_shot_value"], t)
        self.ci_pgd = wilson_interval(self.counts["pgd_value"], t)

    @property
    def p_one_shot_support(self) -> float:
        return self.counts["one_shot_support"] / self.config.trials

    @property
    def p_pgd_support(self) -> float:
        return self.counts["pgd_support"] / self.config.trials

    @staticmethod
    def half_width(ci: tuple[float, float]) -> float:
        return (ci[1] - ci[0]) / 2

    def summary(self) -> dict:
        return {
            "p_one_shot": self.p_one_shot,
            "p_pgd": self.p_pgd,
            "ci_one_shot": list(self.ci_one_shot),
            "ci_pgd": list(self.ci_pgd),
            "p_one_shot_support": self.p_one_shot_support,
            "p_pgd_support": self.p_pgd_support,
            "pgd_diverged": self.counts["pgd_diverged"],
        }


def recovery_experiment(config: RecoveryTrialConfig, jobs: int = 1) -> RecoveryResult:
    """Success rates of one-shot pruning and PGD over independent trials.

    A trial succeeds when the final weights are within ``success_tol`` of
    alpha in max-norm; support-match rates (pruned index == c) are counted
    alongside. Counts are identical for any ``jobs``.
    """
    if jobs <= 1:
        counts = _count_range(config, 0, config.trials)
    else:
        bounds = np.linspace(0, config.trials, jobs + 1).astype(int)
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_count_range, [config] * jobs, bounds[:-1], bounds[1:]))
        counts = {k: sum(p[k] for p in parts) for k in parts[0]}
    return RecoveryResult(config, counts)


def adversarial_pick_rate(d: int = 5, n: int = 4, c: int = 2, lam: float = 1e-2,
                          samples: int = 10_000, seed: int = 0) -> float:
    """Fraction of sampled X for which magnitude pruning of A alpha picks c."""
    hits = 0
    for i in range(samples):
        X = sample_rip_matrix(d, n, rng_for(seed, i))
        alpha = adversarial_alpha(X, lam, c)
        w = ridge_matrix(X, lam) @ alpha
        hits += int(np.argmin(w**2)) == c
    return hits / samples


def sparse_solution_bound(d: int, n: int) -> int:
    """Upper bound C(d, d-n) on the number of n-sparse solutions."""
    if not d > n >= 0:
        raise ValueError("need d > n >= 0")
    return math.comb(d, d - n)


def left_null_space(X: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (as columns) of {v : v^T X = 0}."""
    d, n = X.shape
    Q, R = np.linalg.qr(X, mode="complete")
    diag = np.abs(np.diag(R)) if n else np.zeros(0)
    scale = max(1.0, float(np.abs(X).max(initial=0.0)))
    rank = int((diag > tol * scale).sum())
    if rank < min(d, n):
        # rank-deficient: fall back to SVD, QR without pivoting cannot tell
        U, sv, _ = np.linalg.svd(X)
        rank = int((sv > tol * scale).sum())
        return U[:, rank:]
    return Q[:, rank:]


def construct_sparser_solution(X: np.ndarray, alpha: np.ndarray, i: int, j: int,
                               tol: float = 1e-10) -> np.ndarray | None:
    """Exact solution of w^T X = alpha^T X with w_i = w_j = 0, or None if degenerate.

    Moves alpha within the span of the first two left-null-space vectors
    v1, v2: solves g1 v1[i] + g2 v2[i] = -alpha[i] (same for j).
    """
    d, n = X.shape
    if d - n < 2:
        raise ValueError("need at least two left-null-space dimensions (d - n >= 2)")
    if i == j:
        raise ValueError("i and j must differ")
    V = left_null_space(X)
    if V.shape[1] < 2:
        return None
    v1, v2 = V[:, 0], V[:, 1]
    M = np.array([[v1[i], v2[i]], [v1[j], v2[j]]])
    if abs(np.linalg.det(M)) < tol:
        return None
    gamma = np.linalg.solve(M, -np.array([alpha[i], alpha[j]]))
    w = alpha + gamma[0] * v1 + gamma[1] * v2
    w[i] = w[j] = 0.0
    return w


def best_support_oracle(X: np.ndarray, y: np.ndarray, n_prune: int = 1) -> tuple[list[tuple[int, ...]], float]:
    """Brute force over all supports with ``n_prune`` coordinates removed.

    Returns the list of pruned index tuples whose restricted least-squares
    loss equals the minimum (within a relative 1e-9), and that minimum.
    """
    d = X.shape[0]
    losses = {}
    for pruned in combinations(range(d), n_prune):
        keep = np.ones(d, dtype=bool)
        keep[list(pruned)] = False
        losses[pruned] = squared_loss(X, y, restricted_lstsq(X, y, keep))
    best = min(losses.values())
    slack = 1e-9 * max(float(y @ y), 1e-300) + 1e-24
    return [p for p, v in losses.items() if v <= best + slack], best
