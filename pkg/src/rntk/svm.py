"""C-SVM on precomputed kernels: SMO dual solver plus one-vs-one multiclass.

Solves min 1/2 a'Qa - sum(a) over 0 <= a <= C, y'a = 0 with Q = yy' * K,
using maximal-violating-pair working-set selection. Grams are consumed as
dense matrices; no kernel evaluations happen here. A slow projected
gradient solver for the same dual is included as an independent reference
for testing.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Union

import numpy as np

from .kernels import ShapeError

log = logging.getLogger("rntk.svm")

_TAU = 1e-12
# negative eigenvalues above this fraction of the mean diagonal are treated
# as roundoff; below it the matrix is genuinely indefinite
_PSD_FRACTION = 1e-6


class DegenerateProblemError(ValueError):
    """Training data cannot define the classifier (e.g. one class only)."""


class ConvergenceError(RuntimeError):
    """The dual solver hit its iteration cap without meeting the tolerance."""


@dataclass(frozen=True)
class DualModel:
    """Solution of one binary subproblem.

    alphas holds the signed dual coefficients alpha_i * y_i for the
    support vectors only, aligned with support_indices (positions in the
    full training set). class_pair is (positive label, negative label);
    the positive side is always the smaller original label.
    """

    support_indices: np.ndarray
    alphas: np.ndarray
    bias: float
    C: float
    class_pair: tuple

    def __post_init__(self):
        if self.support_indices.shape != self.alphas.shape:
            raise ShapeError("support_indices and alphas must align")
        if np.any(np.abs(self.alphas) > self.C * (1 + 1e-12)):
            raise ValueError("dual coefficients exceed the box constraint")
        if abs(float(self.alphas.sum())) > 1e-8 * max(1.0, self.C):
            raise ValueError("equality constraint violated: sum of signed alphas != 0")


@dataclass(frozen=True)
class ConstantVote:
    """Stand-in pair model used when a class is absent from the training
    split; always votes for the stored label."""

    label: int
    class_pair: tuple


@dataclass(frozen=True)
class MultiClassModel:
    """One-vs-one ensemble: one binary model per unordered label pair."""

    models: tuple
    labels: tuple
    n_train: int

    def __post_init__(self):
        expected = len(self.labels) * (len(self.labels) - 1) // 2
        if len(self.models) != expected:
            raise ValueError(f"need {expected} pair models, got {len(self.models)}")


def _check_gram(gram) -> np.ndarray:
    K = np.asarray(gram, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ShapeError(f"gram must be square, got shape {K.shape}")
    if not np.allclose(K, K.T, rtol=1e-10, atol=1e-12):
        raise ShapeError("gram must be symmetric")
    return K


def _smo_loop(K, y, C, tol, max_iter):
    """Core SMO iteration. Returns (alpha, bias, iterations, converged)."""
    N = K.shape[0]
    Q = K * np.outer(y, y)
    alpha = np.zeros(N)
    G = -np.ones(N)
    for it in range(max_iter):
        F = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        m = np.where(up, F, -np.inf).max()
        M = np.where(low, F, np.inf).min()
        if m - M <= tol:
            return alpha, _bias(F, y, alpha, C, m, M), it, True
        i = int(np.where(up, F, -np.inf).argmax())
        j = int(np.where(low, F, np.inf).argmin())

        quad = Q[i, i] + Q[j, j] - 2.0 * y[i] * y[j] * Q[i, j]
        if quad <= 0.0:
            quad = _TAU
        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = old_i - old_j
            ai, aj = old_i + delta, old_j + delta
            if diff > 0.0:
                if aj < 0.0:
                    aj, ai = 0.0, diff
            else:
                if ai < 0.0:
                    ai, aj = 0.0, -diff
            if diff > 0.0:
                if ai > C:
                    ai, aj = C, C - diff
            else:
                if aj > C:
                    aj, ai = C, C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = old_i + old_j
            ai, aj = old_i - delta, old_j + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
                if aj > C:
                    aj, ai = C, total - C
            else:
                if aj < 0.0:
                    aj, ai = 0.0, total
                if ai < 0.0:
                    ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        G += Q[:, i] * (ai - old_i) + Q[:, j] * (aj - old_j)
    return alpha, 0.0, max_iter, False


def _bias(F, y, alpha, C, m, M):
    free = (alpha > 0.0) & (alpha < C)
    if free.any():
        return float(F[free].mean())
    # both index sets are nonempty whenever both classes are present,
    # so m and M are finite here
    return float(0.5 * (m + M))


def _build_model(alpha, y, bias, C, class_pair) -> DualModel:
    support = np.flatnonzero(alpha > 0.0)
    return DualModel(support_indices=support, alphas=alpha[support] * y[support],
                     bias=bias, C=C, class_pair=class_pair)


def smo_train(gram, labels, C: float, tol: float = 1e-3,
              max_iter: int = 10_000_000, class_pair: tuple = (1, -1)) -> DualModel:
    """Train one binary C-SVM on a precomputed Gram matrix.

    labels must be the +/-1 encoding with both signs present. If the
    solver stalls and the Gram has an eigenvalue below the accepted
    roundoff band, it warns, adds |lambda_min| to the diagonal, and
    retries once before giving up.
    """
    K = _check_gram(gram)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (K.shape[0],):
        raise ShapeError("labels must be a vector matching the gram size")
    if not np.all(np.abs(y) == 1.0):
        raise ValueError("binary labels must be +1 or -1")
    if np.all(y > 0) or np.all(y < 0):
        raise DegenerateProblemError("training labels contain a single class")
    if not (C > 0):
        raise ValueError("C must be positive")

    alpha, bias, iters, converged = _smo_loop(K, y, C, tol, max_iter)
    if not converged:
        N = K.shape[0]
        lam_min = float(np.linalg.eigvalsh(K)[0])
        floor = -_PSD_FRACTION * max(np.trace(K), 0.0) / N
        if lam_min < floor:
            warnings.warn(
                f"gram is not PSD (min eigenvalue {lam_min:.3e}); retrying with "
                f"diagonal jitter {abs(lam_min):.3e}", RuntimeWarning)
            jittered = K + abs(lam_min) * np.eye(N)
            alpha, bias, iters, converged = _smo_loop(jittered, y, C, tol, max_iter)
        if not converged:
            raise ConvergenceError(
                f"SMO did not converge within {max_iter} iterations (tol {tol})")
    return _build_model(alpha, y, bias, C, class_pair)


def train_multiclass(gram, labels, C: float, tol: float = 1e-3,
                     max_iter: int = 10_000_000,
                     label_set=None) -> MultiClassModel:
    """Train one-vs-one binary models for every unordered label pair.

    label_set widens the pair list beyond the labels present in this
    training split; pairs involving an absent class fall back to a
    constant vote for the majority training class (and are logged). The
    smaller label of each pair is mapped to +1.
    """
    K = _check_gram(gram)
    lab = np.asarray(labels)
    if lab.shape != (K.shape[0],):
        raise ShapeError("labels must be a vector matching the gram size")
    present = np.unique(lab)
    full = present if label_set is None else np.unique(np.asarray(label_set))
    if full.size < 2:
        raise DegenerateProblemError("need at least two classes")

    counts = {int(c): int((lab == c).sum()) for c in present}
    majority = max(sorted(counts), key=lambda c: counts[c])
    models = []
    for a, b in combinations(full.tolist(), 2):
        idx = np.flatnonzero((lab == a) | (lab == b))
        have_a = bool((lab[idx] == a).any())
        have_b = bool((lab[idx] == b).any())
        if not (have_a and have_b):
            log.info("pair (%s, %s): class missing from training split, "
                     "voting constant %s", a, b, majority)
            models.append(ConstantVote(label=int(majority), class_pair=(a, b)))
            continue
        sub = K[np.ix_(idx, idx)]
        y = np.where(lab[idx] == a, 1.0, -1.0)
        pair_model = smo_train(sub, y, C, tol, max_iter, class_pair=(a, b))
        models.append(DualModel(
            support_indices=idx[pair_model.support_indices],
            alphas=pair_model.alphas, bias=pair_model.bias,
            C=pair_model.C, class_pair=(a, b)))
    return MultiClassModel(models=tuple(models),
                           labels=tuple(int(c) for c in full),
                           n_train=K.shape[0])


def decision_function(model: DualModel, cross) -> np.ndarray:
    """Decision values for test rows of a rectangular kernel block."""
    X = np.asarray(cross, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("cross kernel block must be 2-D (test x train)")
    return X[:, model.support_indices] @ model.alphas + model.bias


def predict(model: MultiClassModel, cross) -> np.ndarray:
    """Majority vote over pair models; ties go to the smallest label.

    cross holds kernel values between test rows and all training points,
    so pair decisions are sign(sum alphas_i K(test, i) + bias), with zero
    counted for the smaller label of the pair.
    """
    X = np.asarray(cross, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_train:
        raise ShapeError(
            f"cross block must have {model.n_train} columns, got shape {X.shape}")
    labels = model.labels
    col = {lab: k for k, lab in enumerate(labels)}
    votes = np.zeros((X.shape[0], len(labels)), dtype=np.int64)
    for pair_model in model.models:
        if isinstance(pair_model, ConstantVote):
            votes[:, col[pair_model.label]] += 1
            continue
        a, b = pair_model.class_pair
        dec = decision_function(pair_model, X)
        wins_a = dec >= 0.0
        votes[wins_a, col[a]] += 1
        votes[~wins_a, col[b]] += 1
    # labels are sorted ascending, so argmax resolves ties to the smallest
    winners = np.argmax(votes, axis=1)
    return np.asarray(labels, dtype=np.int64)[winners]


def dual_objective(gram, labels, alpha) -> float:
    """Value of the dual 1/2 a'Qa - sum(a) for unsigned alphas."""
    y = np.asarray(labels, dtype=np.float64)
    a = np.asarray(alpha, dtype=np.float64)
    Qa = (np.asarray(gram) * np.outer(y, y)) @ a
    return float(0.5 * a @ Qa - a.sum())


def _project_box_hyperplane(v, y, C):
    """Project v onto {0 <= a <= C, y'a = 0} by bisecting the multiplier."""

    def constraint(lam):
        return float(y @ np.clip(v - lam * y, 0.0, C))

    span = C + float(np.abs(v).max(initial=0.0)) + 1.0
    lo, hi = -span, span
    # h(lam) is continuous and nonincreasing; 200 halvings reach roundoff
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if constraint(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return np.clip(v - 0.5 * (lo + hi) * y, 0.0, C)


def projected_gradient_reference(gram, labels, C: float, tol: float = 1e-10,
                                 max_iter: int = 500_000):
    """Slow reference solver for the same dual, for cross-checking SMO.

    Accelerated projected gradient with restart on objective increase,
    cold-started at zero, run until the projected-gradient residual drops
    below tol. Returns (alpha, objective).
    """
    K = _check_gram(gram)
    y = np.asarray(labels, dtype=np.float64)
    Q = K * np.outer(y, y)
    lip = max(float(np.linalg.eigvalsh(Q)[-1]), _TAU)
    step = 1.0 / lip
    N = K.shape[0]
    alpha = np.zeros(N)
    look = alpha.copy()
    t_prev = 1.0
    obj_prev = 0.0
    for _ in range(max_iter):
        grad_look = Q @ look - 1.0
        nxt = _project_box_hyperplane(look - step * grad_look, y, C)
        obj = float(0.5 * nxt @ (Q @ nxt) - nxt.sum())
        if obj > obj_prev and t_prev > 1.0:
            # overshoot from momentum: restart from the last iterate, where
            # a plain projected step is guaranteed not to increase f
            look = alpha.copy()
            t_prev = 1.0
            continue
        # optimality is measured at the iterate itself, not the lookahead
        grad = Q @ nxt - 1.0
        residual = float(np.linalg.norm(
            nxt - _project_box_hyperplane(nxt - step * grad, y, C)))
        if residual <= tol * max(1.0, float(np.linalg.norm(nxt))):
            return nxt, obj
        t = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_prev * t_prev))
        look = nxt + ((t_prev - 1.0) / t) * (nxt - alpha)
        alpha, t_prev, obj_prev = nxt, t, obj
    raise ConvergenceError(
        f"projected gradient did not reach tol {tol} in {max_iter} iterations")
