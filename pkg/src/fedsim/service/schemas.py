"""Pydantic request/response models for the experiment service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, model_validator

Algorithm = Literal["fedavg", "fedprox", "feddane"]
SamplingMode = Literal["with-replacement", "without-replacement"]


class SyntheticSpec(BaseModel):
    alpha: float = 0.0
    beta: float = 0.0
    iid: bool = False
    num_devices: int = 30
    input_dim: int = 60
    num_classes: int = 10
    min_samples: int = 50
    lognormal_sigma: float = 2.0
    sample_scale: float = 40.0
    seed: Optional[int] = None  # None: derived from the experiment seed


class DatasetSpec(BaseModel):
    synthetic: Optional[SyntheticSpec] = None
    leaf_path: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.synthetic is None) == (self.leaf_path is None):
            raise ValueError("set exactly one of synthetic / leaf_path")
        return self


class RunRequest(BaseModel):
    dataset: DatasetSpec
    algorithms: list[Algorithm] = ["fedavg", "fedprox", "feddane"]
    rounds: int = 200
    devices_per_round: int = 10
    epochs: int = 20
    eta: float = 0.01
    batch_size: int = 10
    mu: float = 1.0
    sampling: SamplingMode = "with-replacement"
    reuse_gradient_subset: bool = False
    exact_tol: Optional[float] = None
    seed: int = 0
    eval_every: int = 1
    grad_every: int = 5
    workers: int = 1


class MetricsRowModel(BaseModel):
    update: int
    comm_rounds: int
    algorithm: str
    loss: float
    grad_sq_norm: Optional[float] = None
    diverged: bool
    seed: int


class DatasetStatsModel(BaseModel):
    num_devices: int
    total_samples: int
    mean_samples: float
    stdev_population: float
    stdev_sample: float


class RunResponse(BaseModel):
    config: dict
    dataset: dict
    rows: list[MetricsRowModel]


class SweepRequest(RunRequest):
    k_list: list[int]


class SweepResponse(BaseModel):
    runs: dict[str, RunResponse]  # key: participation level K


class MuSelectRequest(RunRequest):
    grid: Optional[list[float]] = None
    algorithm: Optional[Algorithm] = None


class MuSelectResponse(BaseModel):
    best_mu: float
    final_losses: dict[str, float]
    algorithm: str
    all_diverged: bool


class TheoryReportRequest(RunRequest):
    pass


class TheoryRowModel(BaseModel):
    update: int
    dissimilarity: Optional[float]
    gamma: Optional[float]
    rho: Optional[float]
    loss_before: float
    loss_after: float
    grad_sq_norm: float
    decrease_held: Optional[bool]


class TheoryReportResponse(BaseModel):
    config: dict
    dataset: dict
    lipschitz: float
    mu: float
    rows: list[TheoryRowModel]
    summary: dict


class StatsRequest(BaseModel):
    dataset: DatasetSpec
    seed: int = 0


class StatsResponse(BaseModel):
    provenance: str
    num_classes: int
    input_dim: int
    stats: DatasetStatsModel


class RhoRequest(BaseModel):
    variant: Literal["convex", "nonconvex", "device-specific"] = "convex"
    L: float = 1.0
    mu: float = 1.0
    gamma: float = 0.0
    B: float = 1.0
    lam: float = 0.0
    per_device: Optional[list[tuple[float, float, float]]] = None  # (L_k, mu_k, gamma_k)
    network_l_in_cross_term: bool = True


class RhoResponse(BaseModel):
    rho: float


class ErrorBody(BaseModel):
    kind: Literal["config", "data", "numerical"]
    detail: str
