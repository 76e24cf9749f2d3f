"""Sparse subgoal-structure discovery.

Each node's next value is modelled as a thresholded linear score of the
current state. Two fitting engines are provided: an L1-penalised logistic
surrogate solved by proximal-Newton coordinate descent, and an exhaustive
oracle over small AND/OR parent sets scored by misclassification plus a
per-parent penalty.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ascm import PERSISTENT, Dataset
from .graph import CapacityError, Edge, NodeKind, SubgoalGraph, one_sided_valid_assignments

log = logging.getLogger(__name__)

COEF_TOL = 1e-6
DEFAULT_LAMBDA = 1e-4
DEFAULT_LAMBDA_GRID = tuple(float(v) for v in np.logspace(-4, -1, 10))
ORACLE_MAX_NODES = 20
ORACLE_MAX_PARENTS = 5
_SATURATED_INTERCEPT = 10.0


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    beta0: float
    parents: frozenset[int]
    kind_guess: NodeKind
    empirical_loss: float
    converged: bool = True
    n_pairs: int = 0

    def score(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.beta + self.beta0


@dataclass
class RecoveredGraph:
    n: int
    parents: dict[int, frozenset[int]] = field(default_factory=dict)
    evidence: dict[int, FitResult] = field(default_factory=dict)
    kinds: dict[int, NodeKind] = field(default_factory=dict)
    errors: dict[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for node, ps in self.parents.items():
            if node in ps:
                raise ValueError(f"node {node} lists itself as a parent")

    def parents_of(self, node: int) -> frozenset[int]:
        return self.parents.get(node, frozenset())

    def children_of(self, node: int) -> set[int]:
        return {c for c, ps in self.parents.items() if node in ps}

    def edges(self) -> frozenset[Edge]:
        return frozenset((p, c) for c, ps in self.parents.items() for p in ps)

    def merged(self, newer: "RecoveredGraph") -> "RecoveredGraph":
        """Overlay ``newer`` on this graph; nodes refitted in ``newer`` replace old entries."""
        out = RecoveredGraph(self.n, dict(self.parents), dict(self.evidence), dict(self.kinds), dict(self.errors))
        out.parents.update(newer.parents)
        out.evidence.update(newer.evidence)
        out.kinds.update(newer.kinds)
        out.errors.update(newer.errors)
        return out

    def to_graph(self, final: int, names: Sequence[str] | None = None) -> SubgoalGraph:
        kinds = [self.kinds.get(i, NodeKind.OR) for i in range(self.n)]
        return SubgoalGraph.from_edges(self.n, self.edges(), kinds, final=final, names=names)

    def coefficients_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["node", "beta0", "kind_guess", "empirical_loss", "converged", "n_pairs"]
                        + [f"beta_{j}" for j in range(self.n)])
        for node in sorted(self.evidence):
            fit = self.evidence[node]
            writer.writerow([node, f"{fit.beta0:.6g}", fit.kind_guess.value, f"{fit.empirical_loss:.6g}",
                             int(fit.converged), fit.n_pairs] + [f"{b:.6g}" for b in fit.beta])
        return buf.getvalue()


# -- design --------------------------------------------------------------


def build_design(dataset: Dataset, target: int) -> tuple[np.ndarray, np.ndarray]:
    """Supervised pairs (state, next value of ``target``).

    Pairs are dropped when the target is being forced, and in persistent
    mode when the target is already achieved.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    xs, ys = [], []
    sticky = dataset.mode == PERSISTENT
    for tr in dataset.transitions():
        if target in tr.forced_nodes():
            continue
        if sticky and tr.x_before[target]:
            continue
        xs.append(tr.x_before)
        ys.append(tr.x_after[target])
    if not xs:
        return np.zeros((0, dataset.n), dtype=bool), np.zeros(0, dtype=bool)
    return np.array(xs, dtype=bool), np.array(ys, dtype=bool)


def _compress(X: np.ndarray, y: np.ndarray, cols: Sequence[int]):
    """Collapse identical rows (restricted to ``cols``) into counts of positive and total labels."""
    sub = np.asarray(X, dtype=bool)[:, list(cols)]
    if sub.shape[1] <= 62:
        codes = sub.astype(np.int64) @ (np.int64(1) << np.arange(sub.shape[1], dtype=np.int64))
        _, first, inverse = np.unique(codes, return_index=True, return_inverse=True)
        rows = sub[first]
    else:
        rows, inverse = np.unique(sub, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    total = np.bincount(inverse, minlength=len(rows)).astype(float)
    pos = np.bincount(inverse, weights=np.asarray(y, dtype=float), minlength=len(rows))
    return rows.astype(float), pos, total


def _kind_from_coefficients(beta0: float, pos: np.ndarray) -> NodeKind:
    if len(pos) and beta0 + pos.max() <= 0 < beta0 + pos.sum():
        return NodeKind.AND
    return NodeKind.OR


def _candidates(n: int, target: int, candidates: Iterable[int] | None) -> list[int]:
    cands = range(n) if candidates is None else candidates
    return sorted({int(c) for c in cands if c != target})


def _misclassification(X: np.ndarray, y: np.ndarray, beta: np.ndarray, beta0: float) -> float:
    if len(y) == 0:
        return 0.0
    pred = np.asarray(X, dtype=float) @ beta + beta0 > 0
    return float(np.mean(pred != np.asarray(y, dtype=bool)))


def _empty_fit(n: int, beta0: float = -_SATURATED_INTERCEPT, n_pairs: int = 0, loss: float = 0.0) -> FitResult:
    return FitResult(np.zeros(n), beta0, frozenset(), NodeKind.OR, loss, True, n_pairs)


# -- L1 logistic engine ----------------------------------------------------


def _logistic_objective(z: np.ndarray, pos: np.ndarray, total: np.ndarray, beta: np.ndarray, lam: float, N: float) -> float:
    return float((total * np.logaddexp(0.0, z) - pos * z).sum() / N + lam * np.abs(beta).sum())


def fit_l1(
    X: np.ndarray,
    y: np.ndarray,
    target: int,
    lam: float = DEFAULT_LAMBDA,
    candidates: Iterable[int] | None = None,
    max_iter: int = 200,
    tol: float = 1e-9,
    coef_tol: float = COEF_TOL,
) -> FitResult:
    """L1-penalised logistic regression by proximal Newton with coordinate-descent inner solves.

    The mean negative log-likelihood plus ``lam * sum|beta_j|`` is minimised
    over the candidate columns; the intercept is unpenalised.
    """
    X = np.asarray(X, dtype=bool)
    y = np.asarray(y, dtype=bool)
    n = X.shape[1]
    N = float(len(y))
    if N == 0:
        raise ValueError("no supervised pairs to fit")
    cols = _candidates(n, target, candidates)
    if y.all() or not y.any():
        b0 = _SATURATED_INTERCEPT if y.all() else -_SATURATED_INTERCEPT
        return _empty_fit(n, b0, int(N), 0.0)

    A, pos, total = _compress(X, y, cols)
    k = len(cols)
    ybar = pos.sum() / N
    b0 = float(np.log(ybar / (1 - ybar)))
    beta = np.zeros(k)
    z = A @ beta + b0
    obj = _logistic_objective(z, pos, total, beta, lam, N)
    converged = False
    for _ in range(max_iter):
        p = 1.0 / (1.0 + np.exp(-z))
        grad = (total * p - pos) / N
        w = np.maximum(total * p * (1 - p) / N, 1e-14)
        d0, d = 0.0, np.zeros(k)
        dz = np.zeros_like(z)
        for _sweep in range(100):
            biggest = 0.0
            g0 = grad.sum() + (w * dz).sum()
            step0 = -g0 / w.sum()
            d0 += step0
            dz += step0
            biggest = abs(step0)
            for j in range(k):
                a = A[:, j]
                hj = (w * a).sum() + 1e-12
                gj = (grad * a).sum() + (w * a * dz).sum()
                cur = beta[j] + d[j]
                raw = cur - gj / hj
                new = np.sign(raw) * max(abs(raw) - lam / hj, 0.0)
                if new != cur:
                    delta = new - cur
                    d[j] += delta
                    dz += delta * a
                    biggest = max(biggest, abs(delta))
            if biggest < 1e-12:
                break
        descent = (grad * dz).sum() + lam * (np.abs(beta + d).sum() - np.abs(beta).sum())
        t = 1.0
        while True:
            z_new = z + t * dz
            beta_new = beta + t * d
            obj_new = _logistic_objective(z_new, pos, total, beta_new, lam, N)
            if obj_new <= obj + 0.01 * t * descent or t < 1e-10:
                break
            t *= 0.5
        move = t * max(abs(d0), np.abs(d).max(initial=0.0))
        improved = obj - obj_new
        if obj_new <= obj:
            b0 += t * d0
            beta, z, obj = beta_new, z_new, obj_new
        if move < tol or 0 <= improved < tol * 1e-3:
            converged = True
            break
    full = np.zeros(n)
    full[cols] = beta
    parents = frozenset(int(cols[j]) for j in range(k) if beta[j] > coef_tol)
    kind = _kind_from_coefficients(b0, full[sorted(parents)])
    if not converged:
        log.warning("fit_l1 for node %d did not converge in %d iterations", target, max_iter)
    return FitResult(full, b0, parents, kind, _misclassification(X, y, full, b0), converged, int(N))


# -- exhaustive oracle ---------------------------------------------------


def fit_oracle(
    X: np.ndarray,
    y: np.ndarray,
    target: int,
    lam: float = DEFAULT_LAMBDA,
    candidates: Iterable[int] | None = None,
    max_parents: int = ORACLE_MAX_PARENTS,
) -> FitResult:
    """Best AND/OR hypothesis by misclassification + lam * |parent set|.

    Ties go to the smaller set, then the lexicographically smaller set, then OR.
    """
    X = np.asarray(X, dtype=bool)
    y = np.asarray(y, dtype=bool)
    n = X.shape[1]
    if n > ORACLE_MAX_NODES:
        raise CapacityError(f"oracle supports at most {ORACLE_MAX_NODES} nodes")
    if max_parents > ORACLE_MAX_PARENTS:
        raise CapacityError(f"oracle supports at most {ORACLE_MAX_PARENTS} parents")
    N = len(y)
    if N == 0:
        raise ValueError("no supervised pairs to fit")
    cols = _candidates(n, target, candidates)
    A, pos, total = _compress(X, y, cols)
    A = A.astype(bool)
    neg = total - pos

    majority = pos.sum() > neg.sum()
    best_loss = float(neg.sum() if majority else pos.sum()) / N
    best = (best_loss, 0, (), 0)  # score, size, subset, kind rank
    best_kind = NodeKind.OR
    best_const = majority
    for size in range(1, min(max_parents, len(cols)) + 1):
        if lam * size > best[0] + 1e-12:
            break
        for combo in itertools.combinations(range(len(cols)), size):
            sub = A[:, combo]
            for rank, kind in enumerate((NodeKind.OR, NodeKind.AND)):
                if size == 1 and kind is NodeKind.AND:
                    continue
                pred = sub.any(axis=1) if kind is NodeKind.OR else sub.all(axis=1)
                errs = np.where(pred, neg, pos).sum()
                score = errs / N + lam * size
                if score < best[0] - 1e-12:
                    best = (score, size, combo, rank)
                    best_kind = kind
    _, size, combo, _ = best
    beta = np.zeros(n)
    if size == 0:
        beta0 = 0.5 if best_const else -0.5
        kind = NodeKind.OR
    else:
        for j in combo:
            beta[cols[j]] = 1.0
        kind = best_kind
        beta0 = -0.5 if kind is NodeKind.OR else -(size - 0.5)
    parents = frozenset(cols[j] for j in combo)
    return FitResult(beta, beta0, parents, kind, _misclassification(X, y, beta, beta0), True, N)


# -- discovery -------------------------------------------------------------

ENGINES = ("l1", "oracle")


def fit_node(X: np.ndarray, y: np.ndarray, target: int, lam: float, engine: str,
             candidates: Iterable[int] | None = None) -> FitResult:
    if engine == "l1":
        return fit_l1(X, y, target, lam, candidates)
    if engine == "oracle":
        return fit_oracle(X, y, target, lam, candidates)
    raise ValueError(f"unknown discovery engine {engine!r}")


def discover(
    dataset: Dataset,
    intervention_set: Iterable[int],
    all_nodes: Iterable[int],
    lam: float = DEFAULT_LAMBDA,
    engine: str = "l1",
    targets: Iterable[int] | None = None,
    candidates: Iterable[int] | None = None,
) -> RecoveredGraph:
    """Fit every node outside the intervention set using intervention-set members as regressors.

    ``targets`` and ``candidates`` override those defaults (used for offline evaluation).
    """
    IS = set(intervention_set)
    nodes = sorted(set(all_nodes))
    out = RecoveredGraph(dataset.n)
    if len(dataset) == 0:
        return out
    fit_targets = sorted(set(targets)) if targets is not None else [v for v in nodes if v not in IS]
    for target in fit_targets:
        cands = sorted((set(candidates) if candidates is not None else IS) - {target})
        try:
            X, y = build_design(dataset, target)
            if len(y) == 0:
                fit = _empty_fit(dataset.n)
            else:
                fit = fit_node(X, y, target, lam, engine, cands)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            out.errors[target] = str(exc)
            log.warning("discovery failed for node %d: %s", target, exc)
            continue
        out.parents[target] = fit.parents
        out.evidence[target] = fit
        out.kinds[target] = fit.kind_guess
    return out


def valid_assignment_design(graph: SubgoalGraph, target: int, valid: np.ndarray | None = None
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Every one-sided valid assignment paired with the target's noiseless next value."""
    X = one_sided_valid_assignments(graph) if valid is None else valid
    return X, graph.mechanism(X)[:, target]


def sampled_design(graph: SubgoalGraph, target: int, samples: int, rho: float,
                   rng: np.random.Generator, valid: np.ndarray | None = None
                   ) -> tuple[np.ndarray, np.ndarray]:
    """States drawn uniformly from the one-sided valid assignments; labels carry XOR noise."""
    pool = one_sided_valid_assignments(graph) if valid is None else valid
    X = pool[rng.integers(len(pool), size=samples)]
    y = graph.mechanism(X)[:, target] ^ (rng.random(samples) < rho)
    return X, y


def fit_graph(graph: SubgoalGraph, designs: Mapping[int, tuple[np.ndarray, np.ndarray]],
              lam: float, engine: str) -> RecoveredGraph:
    out = RecoveredGraph(graph.n)
    for target, (X, y) in designs.items():
        fit = fit_node(X, y, target, lam, engine) if len(y) else _empty_fit(graph.n)
        out.parents[target] = fit.parents
        out.evidence[target] = fit
        out.kinds[target] = fit.kind_guess
    return out
