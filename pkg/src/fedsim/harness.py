"""Experiment orchestration: configuration, runs, sweeps and theory reports.

All compared algorithms of one experiment share the dataset, the zero
starting model and the device-sampling stream derivation, so their loss
curves are directly comparable.  A single experiment seed deterministically
derives the dataset seed, the per-round sampling streams and each
(round, device) solver stream.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng as rngmod
from .errors import (
    ConfigurationError,
    DivergenceError,
    UndefinedDissimilarityError,
    UndefinedInexactnessError,
)
from .fedcore import (
    ALGORITHMS,
    FEDDANE,
    FEDPROX,
    WITH_REPLACEMENT,
    WITHOUT_REPLACEMENT,
    AlgorithmConfig,
    DeviceExecutor,
    ServerState,
    _descend_surrogate,
    global_gradient,
    global_loss,
    run_round,
    solve_subproblem_exact,
    solve_subproblem_inexact,
)
from .metrics import MetricsLog, MetricsRow, comparable_loss
from .models import MULTINOMIAL_LOGISTIC, Objective
from .synthdata import (
    FederatedDataset,
    SynthConfig,
    dataset_stats,
    generate_synthetic,
    load_leaf,
)
from .theory import TheoryConstants, measure_dissimilarity, measure_inexactness, rho_convex

DEFAULT_MU_GRID = (0.0, 0.001, 0.01, 0.1, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs; exactly one dataset source is set."""

    synthetic: Optional[SynthConfig] = None
    leaf_path: Optional[str] = None
    eval_path: Optional[str] = None
    algorithms: tuple = ALGORITHMS
    rounds: int = 200
    devices_per_round: int = 10
    epochs: int = 20
    eta: float = 0.01
    batch_size: int = 10
    mu: float = 1.0
    mu_grid: tuple = DEFAULT_MU_GRID
    sampling: str = WITH_REPLACEMENT
    reuse_gradient_subset: bool = False
    exact_tol: Optional[float] = None
    seed: int = 0
    eval_every: int = 1
    grad_every: int = 5
    workers: int = 1

    def __post_init__(self):
        if (self.synthetic is None) == (self.leaf_path is None):
            raise ConfigurationError("set exactly one of synthetic / leaf_path")
        if self.rounds < 0:
            raise ConfigurationError("rounds must be >= 0")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be >= 1")
        if self.grad_every < 0:
            raise ConfigurationError("grad_every must be >= 0 (0 disables)")
        if not self.algorithms:
            raise ConfigurationError("algorithms must be nonempty")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ConfigurationError(f"unknown algorithms: {sorted(unknown)}")
        if any(a in (FEDPROX, FEDDANE) for a in self.algorithms) and not self.mu_grid:
            raise ConfigurationError("mu_grid must be nonempty for fedprox/feddane")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        object.__setattr__(self, "mu_grid", tuple(self.mu_grid))


def resolve_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill derived values: the dataset seed comes from the experiment seed."""
    if cfg.synthetic is not None and cfg.synthetic.seed is None:
        data_seed = rngmod.derive_seed(cfg.seed, rngmod.DATASET)
        cfg = replace(cfg, synthetic=replace(cfg.synthetic, seed=data_seed))
    return cfg


def build_dataset(cfg: ExperimentConfig) -> FederatedDataset:
    cfg = resolve_config(cfg)
    if cfg.synthetic is not None:
        return generate_synthetic(cfg.synthetic)
    return load_leaf(cfg.leaf_path)


def build_objective(fd: FederatedDataset) -> Objective:
    """The convex model used throughout: multinomial logistic regression."""
    return Objective(task=MULTINOMIAL_LOGISTIC, input_dim=fd.input_dim,
                     num_classes=fd.num_classes)


def algorithm_config(cfg: ExperimentConfig, algorithm: str) -> AlgorithmConfig:
    """Per-algorithm knobs; fedavg carries no proximal term."""
    return AlgorithmConfig(
        algorithm=algorithm,
        devices_per_round=cfg.devices_per_round,
        epochs=cfg.epochs,
        eta=cfg.eta,
        batch_size=cfg.batch_size,
        mu=cfg.mu if algorithm in (FEDPROX, FEDDANE) else 0.0,
        sampling=cfg.sampling,
        reuse_gradient_subset=cfg.reuse_gradient_subset,
        exact_tol=cfg.exact_tol,
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["algorithms"] = list(cfg.algorithms)
    d["mu_grid"] = list(cfg.mu_grid)
    return d


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    if d.get("synthetic") is not None:
        d["synthetic"] = SynthConfig(**d["synthetic"])
    d["algorithms"] = tuple(d.get("algorithms", ALGORITHMS))
    d["mu_grid"] = tuple(d.get("mu_grid", DEFAULT_MU_GRID))
    return ExperimentConfig(**d)


def _header(cfg: ExperimentConfig, fd: FederatedDataset) -> dict:
    return {
        "config": config_to_dict(cfg),
        "dataset": {
            "provenance": fd.provenance,
            "stats": asdict(dataset_stats(fd)),
            "num_classes": fd.num_classes,
            "input_dim": fd.input_dim,
        },
    }


def run_experiment(cfg: ExperimentConfig,
                   fd: Optional[FederatedDataset] = None) -> MetricsLog:
    """Run every configured algorithm for ``rounds`` updates from w0 = 0.

    Losses are logged at the eval cadence (update 0 always included);
    squared global gradient norms every ``grad_every`` evaluations.
    Device divergence marks the row but the run continues, letting NaN
    show up in the curve.
    """
    cfg = resolve_config(cfg)
    if fd is None:
        fd = build_dataset(cfg)
    obj = build_objective(fd)
    log = MetricsLog(header=_header(cfg, fd))
    with DeviceExecutor(fd, obj, cfg.workers) as executor:
        for algorithm in cfg.algorithms:
            _run_single(cfg, fd, obj, algorithm, executor, log.rows)
    return log


def _run_single(cfg, fd, obj, algorithm, executor, rows):
    state = ServerState(w=obj.init_params(), t=0, seed=cfg.seed,
                        algo=algorithm_config(cfg, algorithm))
    comm = 0
    diverged = False
    rows.append(_eval_row(cfg, fd, obj, algorithm, state.w, 0, comm, diverged))
    for t in range(1, cfg.rounds + 1):
        state, rec = run_round(state, fd, obj, executor)
        comm += rec.comm_rounds
        diverged = diverged or rec.diverged
        if t % cfg.eval_every == 0 or t == cfg.rounds:
            rows.append(_eval_row(cfg, fd, obj, algorithm, state.w, t, comm, diverged))
    return state


def _eval_row(cfg, fd, obj, algorithm, w, t, comm, diverged) -> MetricsRow:
    loss = global_loss(fd, obj, w)
    grad_sq = None
    if cfg.grad_every and (t % cfg.grad_every == 0 or t == cfg.rounds):
        g = global_gradient(fd, obj, w)
        grad_sq = float(g @ g)
    return MetricsRow(
        update=t,
        comm_rounds=comm,
        algorithm=algorithm,
        loss=loss,
        grad_sq_norm=grad_sq,
        diverged=bool(diverged or not math.isfinite(loss)),
        seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# proximal-coefficient selection
# ---------------------------------------------------------------------------


@dataclass
class MuSelection:
    best_mu: float
    final_losses: dict
    algorithm: str
    all_diverged: bool


def select_mu(cfg: ExperimentConfig, grid=None, algorithm: Optional[str] = None) -> MuSelection:
    """Pick the proximal coefficient with the lowest training loss.

    Each candidate runs a shortened budget (a quarter of the configured
    rounds); ties break toward the larger, more stable value.  If every
    candidate diverges the largest candidate is returned with a warning.
    """
    grid = tuple(grid) if grid is not None else cfg.mu_grid
    if not grid:
        raise ConfigurationError("mu grid must be nonempty")
    if algorithm is None:
        candidates = [a for a in cfg.algorithms if a in (FEDPROX, FEDDANE)]
        if not candidates:
            raise ConfigurationError("select_mu needs a fedprox or feddane algorithm")
        algorithm = candidates[0]
    cfg = resolve_config(cfg)
    fd = build_dataset(cfg)
    short = replace(cfg, rounds=max(1, cfg.rounds // 4), algorithms=(algorithm,))
    finals = {}
    for mu in grid:
        log = run_experiment(replace(short, mu=float(mu)), fd=fd)
        finals[float(mu)] = log.final_loss(algorithm)
    all_diverged = all(math.isnan(v) for v in finals.values())
    if all_diverged:
        warnings.warn("every mu candidate diverged; returning the largest", RuntimeWarning)
        best = max(grid)
    else:
        best = min(finals, key=lambda m: (comparable_loss(finals[m]), -m))
    return MuSelection(best_mu=float(best), final_losses=finals,
                       algorithm=algorithm, all_diverged=all_diverged)


# ---------------------------------------------------------------------------
# protocol sweeps
# ---------------------------------------------------------------------------


def participation_sweep(cfg: ExperimentConfig, k_list) -> dict:
    """One run per participation level K, sharing dataset and w0.

    Uses sampling without replacement so K = N means full participation.
    """
    cfg = resolve_config(cfg)
    fd = build_dataset(cfg)
    results = {}
    for k in k_list:
        if k > fd.num_devices:
            raise ConfigurationError(f"K={k} exceeds the {fd.num_devices} available devices")
        sub = replace(cfg, devices_per_round=int(k), sampling=WITHOUT_REPLACEMENT)
        results[int(k)] = run_experiment(sub, fd=fd)
    return results


def unrealistic_setting(cfg: ExperimentConfig) -> MetricsLog:
    """Single-epoch local work with (nearly) full participation.

    Synthetic data enrolls every device each round; file-based datasets
    enroll half, to mirror a large-subset gradient estimate.
    """
    cfg = resolve_config(cfg)
    fd = build_dataset(cfg)
    if cfg.synthetic is not None:
        k = fd.num_devices
    else:
        k = max(1, math.ceil(0.5 * fd.num_devices))
    sub = replace(cfg, epochs=1, devices_per_round=k, sampling=WITHOUT_REPLACEMENT)
    return run_experiment(sub, fd=fd)


# ---------------------------------------------------------------------------
# theory report
# ---------------------------------------------------------------------------


@dataclass
class TheoryRow:
    update: int
    dissimilarity: Optional[float]
    gamma: Optional[float]
    rho: Optional[float]
    loss_before: float
    loss_after: float
    grad_sq_norm: float
    decrease_held: Optional[bool]


@dataclass
class TheoryReport:
    header: dict
    lipschitz: float
    mu: float
    rows: list = field(default_factory=list)

    @property
    def summary(self) -> dict:
        defined = [r for r in self.rows if r.rho is not None]
        positive = [r for r in defined if r.rho > 0]
        held = [r for r in positive if r.decrease_held]
        return {
            "rounds": len(self.rows),
            "rounds_rho_defined": len(defined),
            "rounds_rho_positive": len(positive),
            "rounds_decrease_held": len(held),
            "fraction_rho_positive": len(positive) / len(self.rows) if self.rows else 0.0,
            "fraction_decrease_held": len(held) / len(positive) if positive else None,
        }


def theory_report(cfg: ExperimentConfig) -> TheoryReport:
    """Track dissimilarity, measured inexactness and the decrease bound
    along a gradient-corrected training trajectory.

    Rows where the dissimilarity is undefined (vanishing global gradient)
    or where the measured inexactness reaches 1 carry ``rho=None``; they
    count as undefined, not failed.
    """
    cfg = resolve_config(cfg)
    if cfg.mu <= 0:
        raise ConfigurationError("theory report needs mu > 0 (strongly convex subproblems)")
    fd = build_dataset(cfg)
    obj = build_objective(fd)
    L = max(obj.lipschitz_estimate(dev) for dev in fd.devices)
    report = TheoryReport(header=_header(cfg, fd), lipschitz=L, mu=cfg.mu)
    acfg = algorithm_config(cfg, FEDDANE)
    state = ServerState(w=obj.init_params(), t=0, seed=cfg.seed, algo=acfg)
    with DeviceExecutor(fd, obj, cfg.workers) as executor:
        for t in range(1, cfg.rounds + 1):
            w_prev = state.w
            state, rec = run_round(state, fd, obj, executor)
            if not (t % cfg.eval_every == 0 or t == cfg.rounds):
                continue
            if not np.all(np.isfinite(w_prev)):  # diverged earlier; keep logging
                report.rows.append(TheoryRow(
                    update=t, dissimilarity=None, gamma=None, rho=None,
                    loss_before=math.nan, loss_after=math.nan,
                    grad_sq_norm=math.nan, decrease_held=None,
                ))
                continue
            try:
                dissimilarity = measure_dissimilarity(fd, obj, w_prev)
            except UndefinedDissimilarityError:
                dissimilarity = None
            g = global_gradient(fd, obj, w_prev)
            gsq = float(g @ g)
            f_prev = global_loss(fd, obj, w_prev)
            f_new = global_loss(fd, obj, state.w)
            gamma = _measure_round_gamma(cfg, fd, obj, w_prev, rec, t)
            rho = None
            if dissimilarity is not None and gamma is not None and gamma < 1.0:
                rho = rho_convex(TheoryConstants(L=L, mu=cfg.mu, gamma=gamma, B=dissimilarity))
            held = None
            if rho is not None and rho > 0:
                held = bool(f_new <= f_prev - rho * gsq)
            report.rows.append(TheoryRow(
                update=t,
                dissimilarity=dissimilarity,
                gamma=gamma,
                rho=rho,
                loss_before=f_prev,
                loss_after=f_new,
                grad_sq_norm=gsq,
                decrease_held=held,
            ))
    return report


def _measure_round_gamma(cfg, fd, obj, w_prev, rec, t) -> Optional[float]:
    """Max inexactness over the round's devices, replaying their solves."""
    g_sum = np.zeros_like(w_prev)
    for k in rec.gradient_sampled:
        g_sum += obj.gradient(w_prev, fd.devices[k])
    g_t = g_sum / len(rec.gradient_sampled)
    gammas = []
    for k in sorted(set(rec.sampled)):
        dev = fd.devices[k]
        grad_k = obj.gradient(w_prev, dev)
        exact = solve_subproblem_exact(obj, dev, w_prev, g_t=g_t, grad_k_prev=grad_k,
                                       mu=cfg.mu, tol=1e-12)
        if cfg.exact_tol is not None:
            w_k = _descend_surrogate(obj, dev, w_prev, g_t - grad_k, cfg.mu,
                                     cfg.exact_tol, 100_000).params
        else:
            stream = rngmod.stream(cfg.seed, rngmod.SOLVER, t, k)
            try:
                w_k = solve_subproblem_inexact(obj, dev, w_prev, g_t=g_t,
                                               grad_k_prev=grad_k, mu=cfg.mu,
                                               epochs=cfg.epochs, eta=cfg.eta,
                                               batch_size=cfg.batch_size, rng=stream)
            except DivergenceError:
                continue  # inexactness undefined for a diverged solve
        try:
            gammas.append(measure_inexactness(w_k, exact.params, w_prev))
        except UndefinedInexactnessError:
            continue
    return max(gammas) if gammas else None
