"""Federated round engine: device sampling, local solvers, round updates.

Implements three update rules over a shared local-solver core:

* ``fedavg``: sampled devices run plain local SGD on their own loss.
* ``fedprox``: the local loss gains a proximal pull ``mu/2 ||w - w_prev||^2``.
* ``feddane``: a first sampled subset reports full-batch gradients whose
  mean ``g_t`` approximates the global gradient; a second subset then
  solves the gradient-corrected proximal subproblem
  ``F_k(w) + <g_t - grad F_k(w_prev), w - w_prev> + mu/2 ||w - w_prev||^2``
  (two communication rounds per update).

Every per-(round, device) solve owns an RNG stream derived from the
experiment seed, so within-round execution order and worker count do not
affect results.  Aggregation always sums in ascending device-id order.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from multiprocessing import get_context
from typing import NamedTuple, Optional

import numpy as np

from . import rng as rngmod
from .errors import ConfigurationError, DivergenceError
from .models import MULTINOMIAL_LOGISTIC, DeviceDataset, Objective, _arange
from .synthdata import FederatedDataset

try:
    from . import _speedups
except ImportError:  # pure-python install
    _speedups = None
if os.environ.get("FEDSIM_NO_SPEEDUPS"):
    _speedups = None

FEDAVG = "fedavg"
FEDPROX = "fedprox"
FEDDANE = "feddane"
ALGORITHMS = (FEDAVG, FEDPROX, FEDDANE)

WITH_REPLACEMENT = "with-replacement"
WITHOUT_REPLACEMENT = "without-replacement"
SAMPLING_MODES = (WITH_REPLACEMENT, WITHOUT_REPLACEMENT)


@dataclass(frozen=True)
class AlgorithmConfig:
    """One algorithm's knobs for a run."""

    algorithm: str
    devices_per_round: int
    epochs: int = 1
    eta: float = 0.01
    batch_size: int = 10
    mu: float = 0.0
    sampling: str = WITH_REPLACEMENT
    reuse_gradient_subset: bool = False
    zero_correction: bool = False
    exact_tol: Optional[float] = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.devices_per_round < 1:
            raise ConfigurationError("devices_per_round must be >= 1")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.eta < 0:
            raise ConfigurationError("eta must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.mu < 0:
            raise ConfigurationError("mu must be >= 0")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigurationError(f"unknown sampling mode {self.sampling!r}")


@dataclass(frozen=True)
class ServerState:
    """Global model and round counter entering the next update."""

    w: np.ndarray
    t: int
    seed: int
    algo: AlgorithmConfig


@dataclass
class RoundRecord:
    """What one update did: who was sampled, what it cost, how it went."""

    t: int
    sampled: tuple
    comm_rounds: int
    diverged: bool
    duration: float
    gradient_sampled: Optional[tuple] = None  # feddane's first subset
    loss: Optional[float] = None
    grad_sq_norm: Optional[float] = None


# ---------------------------------------------------------------------------
# device sampling
# ---------------------------------------------------------------------------


def sample_devices(fd: FederatedDataset, k: int, rng: np.random.Generator,
                   mode: str = WITH_REPLACEMENT) -> np.ndarray:
    """Draw k device indices by sampling weight, sorted ascending.

    With replacement the draws are independent Categorical(p); without
    replacement the k distinct indices come from sequential weighted
    draws with renormalization.
    """
    if k < 1:
        raise ConfigurationError("need k >= 1 sampled devices")
    if mode not in SAMPLING_MODES:
        raise ConfigurationError(f"unknown sampling mode {mode!r}")
    p = fd.p
    n = p.size
    if mode == WITH_REPLACEMENT:
        cum = np.cumsum(p)
        cum[-1] = 1.0
        idx = np.searchsorted(cum, rng.random(k), side="right")
        return np.sort(np.minimum(idx, n - 1))
    if k > n:
        raise ConfigurationError(f"cannot draw {k} distinct devices from {n} without replacement")
    remaining = p.copy()
    chosen = np.empty(k, dtype=np.intp)
    for i in range(k):
        cum = np.cumsum(remaining)
        u = rng.random() * cum[-1]
        j = int(np.searchsorted(cum, u, side="right"))
        j = min(j, n - 1)
        while remaining[j] == 0.0:  # guard against float ties
            j = (j + 1) % n
        chosen[i] = j
        remaining[j] = 0.0
    return np.sort(chosen)


# ---------------------------------------------------------------------------
# local solvers
# ---------------------------------------------------------------------------


def _sgd(obj: Objective, data: DeviceDataset, w0, epochs, eta, batch_size, rng,
         correction=None, mu: float = 0.0, anchor=None):
    """Epoch-permuted minibatch SGD on the (possibly surrogate) objective.

    Returns ``(w, diverged)``; iterates are checked for finiteness at
    epoch boundaries so NaNs surface without crashing the caller.

    The constant surrogate terms are folded into the step,
    ``w <- (1 - eta mu) w - eta g_batch - eta (c - mu anchor)``,
    which is algebraically the plain step on the surrogate gradient.
    With no correction and mu = 0 the loop degenerates bit-exactly to
    SGD on the device loss alone.
    """
    w = np.array(w0, dtype=np.float64)
    if mu and anchor is None:
        anchor = w0
    plain = correction is None and mu == 0.0
    if plain:
        decay, shift = 1.0, None
    else:
        decay = 1.0 - eta * mu
        base = correction if correction is not None else np.zeros_like(w)
        with np.errstate(over="ignore", invalid="ignore"):
            shift = eta * (base - mu * anchor) if mu else eta * base
    if obj.task == MULTINOMIAL_LOGISTIC:
        if _speedups is not None:
            _sgd_epochs_logistic_c(obj, data, w, epochs, eta, batch_size, rng, decay, shift)
        else:
            _sgd_epochs_logistic(obj, data, w, epochs, eta, batch_size, rng, decay, shift)
    else:
        _sgd_epochs_linear(obj, data, w, epochs, eta, batch_size, rng, decay, shift)
    return w, not bool(np.all(np.isfinite(w)))


def _augmented(data: DeviceDataset) -> np.ndarray:
    """Features with a trailing ones column, memoized on the dataset."""
    cached = getattr(data, "_augmented_features", None)
    if cached is not None:
        return cached
    Xa = np.ascontiguousarray(np.hstack([data.features, np.ones((data.num_samples, 1))]))
    object.__setattr__(data, "_augmented_features", Xa)
    return Xa


def _sgd_epochs_logistic_c(obj, data, w, epochs, eta, batch_size, rng, decay, shift):
    C, D = obj.num_classes, obj.input_dim
    Xa = _augmented(data)
    n = data.num_samples
    Wa = np.empty((C, D + 1))
    Wa[:, :D] = w[: C * D].reshape(C, D)
    Wa[:, D] = w[C * D :]
    shift_a = None
    if shift is not None:
        shift_a = np.empty((C, D + 1))
        shift_a[:, :D] = shift[: C * D].reshape(C, D)
        shift_a[:, D] = shift[C * D :]
    perms = np.empty((epochs, n), dtype=np.int64)
    for e in range(epochs):
        perms[e] = rng.permutation(n)
    _speedups.sgd_logistic(Wa, Xa, data.labels, perms, epochs, batch_size,
                           eta, obj.lambda_reg, decay, shift_a)
    w[: C * D] = Wa[:, :D].reshape(-1)
    w[C * D :] = Wa[:, D]


def _sgd_epochs_logistic(obj, data, w, epochs, eta, batch_size, rng, decay, shift):
    C, D = obj.num_classes, obj.input_dim
    X, y = data.features, data.labels
    n = X.shape[0]
    lam = obj.lambda_reg
    W = w[: C * D].reshape(C, D)
    b = w[C * D :]
    if shift is not None:
        sW = shift[: C * D].reshape(C, D)
        sb = shift[C * D :]
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for _ in range(epochs):
            perm = rng.permutation(n)
            Xs = X[perm]
            ys = y[perm]
            for s0 in range(0, n, batch_size):
                Xb = Xs[s0 : s0 + batch_size]
                yb = ys[s0 : s0 + batch_size]
                bs = yb.size
                Z = Xb @ W.T
                Z += b
                Z -= Z.max(axis=1, keepdims=True)
                np.exp(Z, out=Z)
                Z /= Z.sum(axis=1, keepdims=True)
                Z[_arange(bs), yb] -= 1.0
                Z *= 1.0 / bs
                gW = Z.T @ Xb
                gb = Z.sum(axis=0)
                if lam:
                    gW += lam * W
                    gb += lam * b
                gW *= eta
                gb *= eta
                if shift is not None:
                    if decay != 1.0:
                        W *= decay
                        b *= decay
                    W -= gW
                    b -= gb
                    W -= sW
                    b -= sb
                else:
                    W -= gW
                    b -= gb
            if not np.all(np.isfinite(w)):
                return


def _sgd_epochs_linear(obj, data, w, epochs, eta, batch_size, rng, decay, shift):
    X, y = data.features, data.labels
    n = X.shape[0]
    lam = obj.lambda_reg
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for _ in range(epochs):
            perm = rng.permutation(n)
            Xs = X[perm]
            ys = y[perm]
            for s0 in range(0, n, batch_size):
                Xb = Xs[s0 : s0 + batch_size]
                r = Xb @ w
                r -= ys[s0 : s0 + batch_size]
                g = Xb.T @ r
                g *= 1.0 / r.size
                if lam:
                    g += lam * w
                g *= eta
                if shift is not None:
                    if decay != 1.0:
                        w *= decay
                    w -= g
                    w -= shift
                else:
                    w -= g
            if not np.all(np.isfinite(w)):
                return


def local_sgd(obj: Objective, data: DeviceDataset, w_start, epochs: int, eta: float,
              batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """E epochs of minibatch SGD on the device loss, starting at ``w_start``."""
    if epochs < 1 or eta < 0 or batch_size < 1:
        raise ConfigurationError("need epochs >= 1, eta >= 0, batch_size >= 1")
    obj._check(np.asarray(w_start, dtype=np.float64), data)
    w, diverged = _sgd(obj, data, w_start, epochs, eta, batch_size, rng)
    if diverged:
        raise DivergenceError(f"local SGD diverged on device {data.device_id}",
                              device_id=data.device_id)
    return w


def surrogate_gradient(obj: Objective, data: DeviceDataset, w, w_prev,
                       g_t=None, grad_k_prev=None, mu: float = 0.0,
                       batch_indices=None) -> np.ndarray:
    """Gradient of the local subproblem at ``w``.

    This is the minibatch gradient of the device loss plus the constant
    gradient-correction ``g_t - grad_k_prev`` (both given or both absent)
    plus the proximal pull ``mu (w - w_prev)``.
    """
    if (g_t is None) != (grad_k_prev is None):
        raise ConfigurationError("g_t and grad_k_prev must be given together")
    w = np.asarray(w, dtype=np.float64)
    w_prev = np.asarray(w_prev, dtype=np.float64)
    if w.shape != w_prev.shape:
        raise ConfigurationError("w and w_prev must have equal length")
    if batch_indices is None:
        g = obj.gradient(w, data)
    else:
        g = obj.minibatch_gradient(w, data, batch_indices)
    if g_t is not None:
        g_t = np.asarray(g_t, dtype=np.float64)
        grad_k_prev = np.asarray(grad_k_prev, dtype=np.float64)
        if g_t.shape != w.shape or grad_k_prev.shape != w.shape:
            raise ConfigurationError("correction vectors must match the parameter length")
        g = g + (g_t - grad_k_prev)
    if mu:
        g = g + mu * (w - w_prev)
    return g


def solve_subproblem_inexact(obj: Objective, data: DeviceDataset, w_prev,
                             g_t=None, grad_k_prev=None, mu: float = 0.0,
                             epochs: int = 1, eta: float = 0.01, batch_size: int = 10,
                             rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """E epochs of SGD on the surrogate objective, initialized at ``w_prev``."""
    if (g_t is None) != (grad_k_prev is None):
        raise ConfigurationError("g_t and grad_k_prev must be given together")
    if epochs < 1 or eta < 0 or batch_size < 1:
        raise ConfigurationError("need epochs >= 1, eta >= 0, batch_size >= 1")
    w_prev = np.asarray(w_prev, dtype=np.float64)
    obj._check(w_prev, data)
    correction = None if g_t is None else np.asarray(g_t) - np.asarray(grad_k_prev)
    w, diverged = _sgd(obj, data, w_prev, epochs, eta, batch_size, rng,
                       correction=correction, mu=mu, anchor=w_prev)
    if diverged:
        raise DivergenceError(f"subproblem solve diverged on device {data.device_id}",
                              device_id=data.device_id)
    return w


@dataclass
class ExactSolveResult:
    params: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float


def solve_subproblem_exact(obj: Objective, data: DeviceDataset, w_prev,
                           g_t=None, grad_k_prev=None, mu: float = 0.0,
                           tol: float = 1e-10, max_iterations: int = 100_000) -> ExactSolveResult:
    """Near-exact minimizer of the surrogate by backtracking gradient descent.

    Descends until the surrogate gradient norm falls below ``tol`` times
    its value at ``w_prev``.  With ``mu > 0`` the surrogate is strongly
    convex, so this terminates quickly; hitting ``max_iterations`` returns
    the best iterate with ``converged=False``.
    """
    if (g_t is None) != (grad_k_prev is None):
        raise ConfigurationError("g_t and grad_k_prev must be given together")
    w_prev = np.asarray(w_prev, dtype=np.float64)
    obj._check(w_prev, data)
    correction = None if g_t is None else np.asarray(g_t) - np.asarray(grad_k_prev)
    return _descend_surrogate(obj, data, w_prev, correction, mu, tol, max_iterations)


def _descend_surrogate(obj, data, w_prev, correction, mu, tol, max_iterations):
    """Fixed-step gradient descent on the surrogate.

    The step 1/(L_k + mu) is stable for the (L_k + mu)-smooth surrogate,
    and with mu > 0 the iteration contracts linearly, so the relative
    gradient-norm target is reached without a line search's floating-point
    floor.  Stops early if an update no longer changes the iterate.
    """
    X, y = data.features, data.labels

    def sgrad(w):
        g = obj._grad_unchecked(w, X, y)
        if correction is not None:
            g += correction
        if mu:
            g += mu * (w - w_prev)
        return g

    step = 1.0 / (_lipschitz_cached(obj, data) + mu)
    w = w_prev.copy()
    g = sgrad(w)
    g0 = float(np.linalg.norm(g))
    threshold = tol * g0
    if g0 == 0.0:
        return ExactSolveResult(w, True, 0, 0.0)
    iterations = 0
    gnorm = g0
    while gnorm > threshold and iterations < max_iterations:
        w_new = w - step * g
        if np.array_equal(w_new, w):  # below float resolution
            break
        w = w_new
        g = sgrad(w)
        gnorm = float(np.linalg.norm(g))
        if not np.isfinite(gnorm):
            return ExactSolveResult(w, False, iterations, gnorm)
        iterations += 1
    return ExactSolveResult(w, gnorm <= threshold, iterations, gnorm)


def _lipschitz_cached(obj: Objective, data: DeviceDataset) -> float:
    """Per-(objective, device) memo of the smoothness bound."""
    key = (obj.task, obj.num_classes, obj.lambda_reg)
    cache = getattr(data, "_lipschitz_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(data, "_lipschitz_cache", cache)
    if key not in cache:
        cache[key] = obj.lipschitz_estimate(data)
    return cache[key]


# ---------------------------------------------------------------------------
# per-device work scheduling
# ---------------------------------------------------------------------------


class _SolveTask(NamedTuple):
    op: str  # "solve" | "grad"
    round_index: int
    device_id: int
    w_prev: np.ndarray
    g_t: Optional[np.ndarray]  # None: no gradient correction
    mu: float
    epochs: int
    eta: float
    batch_size: int
    exact_tol: Optional[float]
    seed: int


_WORKER_STATE: dict = {}


def _init_worker(fd, obj):
    _WORKER_STATE["fd"] = fd
    _WORKER_STATE["obj"] = obj


def _run_worker_task(task: _SolveTask):
    return _execute_task(_WORKER_STATE["fd"], _WORKER_STATE["obj"], task)


def _execute_task(fd: FederatedDataset, obj: Objective, task: _SolveTask):
    data = fd.devices[task.device_id]
    if task.op == "grad":
        with np.errstate(over="ignore", invalid="ignore"):
            g = obj._grad_unchecked(task.w_prev, data.features, data.labels)
        return g, not bool(np.all(np.isfinite(g)))
    correction = None
    if task.g_t is not None:
        with np.errstate(over="ignore", invalid="ignore"):
            grad_k = obj._grad_unchecked(task.w_prev, data.features, data.labels)
        correction = task.g_t - grad_k
    if task.exact_tol is not None:
        if not np.all(np.isfinite(task.w_prev)) or (
            correction is not None and not np.all(np.isfinite(correction))
        ):
            return np.full_like(task.w_prev, np.nan), True
        res = _descend_surrogate(obj, data, task.w_prev, correction, task.mu,
                                 task.exact_tol, 100_000)
        return res.params, False
    rng = rngmod.stream(task.seed, rngmod.SOLVER, task.round_index, task.device_id)
    return _sgd(obj, data, task.w_prev, task.epochs, task.eta, task.batch_size, rng,
                correction=correction, mu=task.mu, anchor=task.w_prev)


class DeviceExecutor:
    """Runs per-device solves, optionally across worker processes.

    Results are independent of the worker count because every task owns
    a stream derived from (seed, round, device).
    """

    def __init__(self, fd: FederatedDataset, obj: Objective, workers: int = 1):
        self.fd = fd
        self.obj = obj
        self.workers = max(1, int(workers))
        self._pool = None
        if self.workers > 1:
            self._pool = ProcessPoolExecutor(
                max_workers=self.workers,
                mp_context=get_context("fork"),
                initializer=_init_worker,
                initargs=(fd, obj),
            )

    def run(self, tasks):
        if self._pool is not None:
            return list(self._pool.map(_run_worker_task, tasks))
        return [_execute_task(self.fd, self.obj, task) for task in tasks]

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# rounds
# ---------------------------------------------------------------------------


def _lpt_order(fd, device_ids):
    """Largest devices first, so parallel workers balance well."""
    return sorted((int(k) for k in device_ids),
                  key=lambda k: fd.devices[k].num_samples, reverse=True)


def _solve_sampled(state, fd, obj, sampled, g_t, mu, executor):
    """Solve every distinct sampled device, aggregate the multiset mean."""
    cfg = state.algo
    t = state.t + 1
    order = _lpt_order(fd, np.unique(sampled))
    tasks = [
        _SolveTask("solve", t, k, state.w, g_t, mu, cfg.epochs, cfg.eta,
                   cfg.batch_size, cfg.exact_tol, state.seed)
        for k in order
    ]
    executor = executor or DeviceExecutor(fd, obj, workers=1)
    results = dict(zip(order, executor.run(tasks)))
    w_sum = np.zeros_like(state.w)
    diverged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for k in sampled:  # ascending, duplicates included
            w_k, div_k = results[int(k)]
            w_sum += w_k
            diverged = diverged or div_k
        w_new = w_sum / len(sampled)
    diverged = diverged or not bool(np.all(np.isfinite(w_new)))
    return w_new, diverged


def fedavg_round(state: ServerState, fd: FederatedDataset, obj: Objective,
                 executor: Optional[DeviceExecutor] = None):
    """One update: sampled devices run local SGD; uniform mean aggregate."""
    cfg = state.algo
    t = state.t + 1
    start = time.perf_counter()
    rng_s = rngmod.stream(state.seed, rngmod.SAMPLING, t)
    sampled = sample_devices(fd, cfg.devices_per_round, rng_s, cfg.sampling)
    w_new, diverged = _solve_sampled(state, fd, obj, sampled, None, 0.0, executor)
    rec = RoundRecord(t=t, sampled=tuple(int(k) for k in sampled), comm_rounds=1,
                      diverged=diverged, duration=time.perf_counter() - start)
    return replace(state, w=w_new, t=t), rec


def fedprox_round(state: ServerState, fd: FederatedDataset, obj: Objective,
                  executor: Optional[DeviceExecutor] = None):
    """One update with proximal local subproblems (no gradient correction)."""
    cfg = state.algo
    t = state.t + 1
    start = time.perf_counter()
    rng_s = rngmod.stream(state.seed, rngmod.SAMPLING, t)
    sampled = sample_devices(fd, cfg.devices_per_round, rng_s, cfg.sampling)
    w_new, diverged = _solve_sampled(state, fd, obj, sampled, None, cfg.mu, executor)
    rec = RoundRecord(t=t, sampled=tuple(int(k) for k in sampled), comm_rounds=1,
                      diverged=diverged, duration=time.perf_counter() - start)
    return replace(state, w=w_new, t=t), rec


def feddane_round(state: ServerState, fd: FederatedDataset, obj: Objective,
                  executor: Optional[DeviceExecutor] = None):
    """One gradient-corrected update; costs two communication rounds.

    Phase 1 collects full-batch local gradients from a sampled subset and
    averages them into ``g_t``; phase 2 samples another subset (or reuses
    the first) whose members solve the corrected proximal subproblem.
    """
    cfg = state.algo
    t = state.t + 1
    start = time.perf_counter()
    rng_s = rngmod.stream(state.seed, rngmod.SAMPLING, t)
    s_grad = sample_devices(fd, cfg.devices_per_round, rng_s, cfg.sampling)
    if cfg.reuse_gradient_subset:
        s_upd = s_grad
    else:
        s_upd = sample_devices(fd, cfg.devices_per_round, rng_s, cfg.sampling)

    executor = executor or DeviceExecutor(fd, obj, workers=1)
    order = _lpt_order(fd, np.unique(s_grad))
    grad_tasks = [
        _SolveTask("grad", t, k, state.w, None, 0.0, 1, 0.0, 1, None, state.seed)
        for k in order
    ]
    grads = dict(zip(order, (g for g, _ in executor.run(grad_tasks))))
    g_sum = np.zeros_like(state.w)
    for k in s_grad:
        g_sum += grads[int(k)]
    g_t = g_sum / len(s_grad)

    g_for_tasks = None if cfg.zero_correction else g_t
    w_new, diverged = _solve_sampled(state, fd, obj, s_upd, g_for_tasks, cfg.mu, executor)
    rec = RoundRecord(t=t, sampled=tuple(int(k) for k in s_upd), comm_rounds=2,
                      diverged=diverged, duration=time.perf_counter() - start,
                      gradient_sampled=tuple(int(k) for k in s_grad))
    return replace(state, w=w_new, t=t), rec


_ROUNDS = {FEDAVG: fedavg_round, FEDPROX: fedprox_round, FEDDANE: feddane_round}


def run_round(state: ServerState, fd: FederatedDataset, obj: Objective,
              executor: Optional[DeviceExecutor] = None):
    """Dispatch one update according to ``state.algo.algorithm``."""
    return _ROUNDS[state.algo.algorithm](state, fd, obj, executor)


def global_loss(fd: FederatedDataset, obj: Objective, w) -> float:
    """Size-weighted global training loss ``sum_k p_k F_k(w)``."""
    w = np.asarray(w, dtype=np.float64)
    total = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for p_k, dev in zip(fd.p, fd.devices):
            total += p_k * _loss_unchecked(obj, w, dev)
    return float(total)


def global_gradient(fd: FederatedDataset, obj: Objective, w) -> np.ndarray:
    """Size-weighted global gradient ``sum_k p_k grad F_k(w)``."""
    w = np.asarray(w, dtype=np.float64)
    g = np.zeros_like(w)
    with np.errstate(over="ignore", invalid="ignore"):
        for p_k, dev in zip(fd.p, fd.devices):
            g += p_k * obj._grad_unchecked(w, dev.features, dev.labels)
    return g


def _loss_unchecked(obj: Objective, w, data: DeviceDataset) -> float:
    """Loss without finiteness raising; NaN flows through for divergence."""
    X, y = data.features, data.labels
    if obj.task == MULTINOMIAL_LOGISTIC:
        W, b = obj.split(w)
        logits = X @ W.T + b
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        value = float(np.mean(lse - logits[np.arange(X.shape[0]), y]))
    else:
        r = X @ w - y
        value = float(r @ r) / (2.0 * X.shape[0])
    if obj.lambda_reg:
        value += 0.5 * obj.lambda_reg * float(w @ w)
    return value
