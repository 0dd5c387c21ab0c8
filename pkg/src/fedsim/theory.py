"""Heterogeneity and inexactness measurements plus sufficient-decrease checks.

Two measured quantities drive everything here:

* gradient dissimilarity ``B(w) = sqrt(E_k ||grad F_k(w)||^2 / ||grad f(w)||^2)``,
  which is 1 for homogeneous devices and grows with heterogeneity, and
* solver inexactness ``gamma = ||w_t - w_exact|| / ||w_exact - w_prev||``,
  the relative distance of an inexact subproblem solution from the true
  minimizer (0 means exact).

From bounds (L, mu, gamma, B) the ``rho_*`` calculators produce the
per-update decrease constant: when ``rho > 0`` the expected global loss
drops by at least ``rho ||grad f(w_prev)||^2`` per update.  The verifier
measures that claim empirically by replaying many independently sampled
updates from a fixed starting point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from .errors import (
    ConfigurationError,
    TheoremInapplicableError,
    UndefinedDissimilarityError,
    UndefinedInexactnessError,
)
from .fedcore import (
    AlgorithmConfig,
    DeviceExecutor,
    ServerState,
    feddane_round,
    global_gradient,
    global_loss,
)
from .models import Objective
from .synthdata import FederatedDataset


@dataclass(frozen=True)
class TheoryConstants:
    """The (L, mu, gamma, B, lambda) bundle the decrease bounds consume."""

    L: float
    mu: float
    gamma: float = 0.0
    B: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in [0, 1)")
        if self.mu <= 0:
            raise ConfigurationError("mu must be > 0")
        if self.L < 0 or self.B < 0 or self.lam < 0:
            raise ConfigurationError("L, B and lam must be >= 0")


@dataclass(frozen=True)
class ConvergenceBudget:
    """Initial suboptimality, stationarity target and decrease constant."""

    delta: float
    epsilon: float
    rho: float

    @property
    def t_bound(self) -> int:
        return iteration_bound(self)


def measure_dissimilarity(fd: FederatedDataset, obj: Objective, w,
                          threshold: float = 1e-12) -> float:
    """Gradient dissimilarity B(w) over all devices, weighted by p_k.

    Undefined (raises) where the global gradient norm is below
    ``threshold``; by Jensen the value is >= 1 wherever defined.
    """
    w = np.asarray(w, dtype=np.float64)
    num = 0.0
    g = np.zeros_like(w)
    for p_k, dev in zip(fd.p, fd.devices):
        g_k = obj.gradient(w, dev)
        num += p_k * float(g_k @ g_k)
        g += p_k * g_k
    den = float(g @ g)
    if math.sqrt(den) <= threshold:
        raise UndefinedDissimilarityError(
            f"global gradient norm {math.sqrt(den):.3e} below threshold {threshold:.3e}"
        )
    return math.sqrt(num / den)


def measure_inexactness(w_t, w_exact, w_prev, threshold: float = 1e-12) -> float:
    """Smallest valid inexactness ratio for one subproblem solution."""
    w_t = np.asarray(w_t, dtype=np.float64)
    w_exact = np.asarray(w_exact, dtype=np.float64)
    w_prev = np.asarray(w_prev, dtype=np.float64)
    den = float(np.linalg.norm(w_exact - w_prev))
    if den <= threshold:
        raise UndefinedInexactnessError(
            f"exact step length {den:.3e} below threshold {threshold:.3e}"
        )
    return float(np.linalg.norm(w_t - w_exact)) / den


# ---------------------------------------------------------------------------
# decrease constants
# ---------------------------------------------------------------------------


def rho_convex(c: TheoryConstants) -> float:
    """Per-update decrease constant for convex losses."""
    L, mu, g, B = c.L, c.mu, c.gamma, c.B
    return (
        (2.0 - 3.0 * g) / (2.0 * mu)
        - (2.0 * L * (1.0 + g) ** 2 + 3.0 * L) / (2.0 * mu**2)
        - (B**2 - 1.0) * ((L * (1.0 + g) ** 2 + L) / mu**2 + g / mu)
    )


def rho_nonconvex(c: TheoryConstants) -> float:
    """Per-update decrease constant when losses are only (-lam)-curvature-bounded."""
    L, mu, g, B, lam = c.L, c.mu, c.gamma, c.B, c.lam
    if mu - lam <= 0:
        raise ConfigurationError("need mu - lam > 0")
    m = mu - lam
    return (
        1.0 / mu
        - 3.0 * g / (2.0 * m)
        - L * (1.0 + g) ** 2 / m**2
        - 3.0 * L / (2.0 * mu * m)
        - (B**2 - 1.0) * (L * (1.0 + g) ** 2 / m**2 + L / (mu * m) + g / m)
    )


def rho_device_specific(per_device: Sequence[tuple], L: float, B: float,
                        network_l_in_cross_term: bool = True) -> float:
    """Decrease constant with per-device (L_k, mu_k, gamma_k) constants.

    ``network_l_in_cross_term`` keeps the network-wide L in the first
    dissimilarity cross term; pass False to use each device's L_k there
    instead.
    """
    if not per_device:
        raise ConfigurationError("per_device must be nonempty")
    own = 0.0
    cross = 0.0
    for L_k, mu_k, g_k in per_device:
        if mu_k <= 0:
            raise ConfigurationError("every mu_k must be > 0")
        own += (
            1.0 / mu_k
            - 3.0 * g_k / (2.0 * mu_k)
            - L_k * (1.0 + g_k) ** 2 / mu_k**2
            - 3.0 * L_k / (2.0 * mu_k**2)
        )
        L_cross = L if network_l_in_cross_term else L_k
        cross += L_cross * (1.0 + g_k) ** 2 / mu_k**2 + L_k / mu_k**2 + g_k / mu_k
    n = len(per_device)
    return own / n - (B**2 - 1.0) * cross / n


def iteration_bound(budget: ConvergenceBudget) -> int:
    """Updates needed to push the mean squared gradient below epsilon."""
    if budget.rho <= 0:
        raise TheoremInapplicableError("decrease constant rho must be > 0")
    if budget.epsilon <= 0:
        raise ConfigurationError("epsilon must be > 0")
    if budget.delta < 0:
        raise ConfigurationError("delta must be >= 0")
    return math.ceil(budget.delta / (budget.rho * budget.epsilon))


# ---------------------------------------------------------------------------
# empirical checks
# ---------------------------------------------------------------------------


def network_lipschitz(fd: FederatedDataset, obj: Objective) -> float:
    """Conservative network-wide gradient Lipschitz bound (max over devices)."""
    return max(obj.lipschitz_estimate(dev) for dev in fd.devices)


def estimate_fstar(fd: FederatedDataset, obj: Objective, tol: float = 1e-10,
                   max_iterations: int = 100_000):
    """Estimate the optimal global loss by centralized full-batch descent.

    Returns ``(fstar, converged)``; when the gradient-norm target is not
    reached within the iteration cap the best value found is returned
    with ``converged=False`` and callers should label it an estimate.
    """
    w = obj.init_params()
    fw = global_loss(fd, obj, w)
    g = global_gradient(fd, obj, w)
    gnorm = float(np.linalg.norm(g))
    step = 1.0
    iterations = 0
    while gnorm > tol and iterations < max_iterations:
        gsq = gnorm * gnorm
        step *= 2.0
        while True:
            w_new = w - step * g
            f_new = global_loss(fd, obj, w_new)
            if np.isfinite(f_new) and f_new <= fw - 1e-4 * step * gsq:
                break
            step *= 0.5
            if step < 1e-30:
                return fw, False
        w, fw = w_new, f_new
        g = global_gradient(fd, obj, w)
        gnorm = float(np.linalg.norm(g))
        iterations += 1
    return fw, gnorm <= tol


@dataclass
class DecreaseReport:
    """Outcome of the empirical expected-decrease check at one point."""

    rho: float
    grad_sq_norm: float
    loss_before: float
    mean_loss_after: float
    mean_decrease: float
    ci_half_width: float
    trials: int
    applicable: bool
    passed: Optional[bool]

    @property
    def bound(self) -> float:
        return self.loss_before - self.rho * self.grad_sq_norm


def verify_sufficient_decrease(fd: FederatedDataset, obj: Objective, w_prev,
                               config: AlgorithmConfig, constants: TheoryConstants,
                               trials: int = 200, seed: int = 0,
                               executor: Optional[DeviceExecutor] = None) -> DecreaseReport:
    """Replay many independently sampled updates from ``w_prev`` and test
    whether the mean loss drops by at least ``rho ||grad f(w_prev)||^2``.

    The pass criterion allows a 95% normal-approximation half-width on the
    trial mean.  With ``rho <= 0`` the report is marked inapplicable rather
    than failed.
    """
    w_prev = np.asarray(w_prev, dtype=np.float64)
    rho = rho_convex(constants) if constants.lam == 0.0 else rho_nonconvex(constants)
    g = global_gradient(fd, obj, w_prev)
    gsq = float(g @ g)
    f_prev = global_loss(fd, obj, w_prev)

    losses = np.empty(trials)
    for i in range(trials):
        trial_seed = rngmod.derive_seed(seed, rngmod.TRIAL, i)
        state = ServerState(w=w_prev, t=0, seed=trial_seed, algo=config)
        new_state, _ = feddane_round(state, fd, obj, executor)
        losses[i] = global_loss(fd, obj, new_state.w)

    mean_after = float(losses.mean())
    if trials > 1:
        half = 1.96 * float(losses.std(ddof=1)) / math.sqrt(trials)
    else:
        half = 0.0
    applicable = rho > 0
    passed = None
    if applicable:
        passed = bool(mean_after <= f_prev - rho * gsq + half)
    return DecreaseReport(
        rho=rho,
        grad_sq_norm=gsq,
        loss_before=f_prev,
        mean_loss_after=mean_after,
        mean_decrease=f_prev - mean_after,
        ci_half_width=half,
        trials=trials,
        applicable=applicable,
        passed=passed,
    )
