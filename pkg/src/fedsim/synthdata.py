"""Federated datasets: heterogeneous synthetic generation and LEAF-style ingestion.

The synthetic family ``synthetic(alpha, beta)`` draws a separate true
logistic model per device (model heterogeneity, controlled by ``alpha``)
and a separate feature-mean per device (feature heterogeneity, controlled
by ``beta``); the IID variant shares one model and centers all features.
Labels are the argmax of the generating model, so every device's data is
learnable better than chance by a logistic model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DataError
from .models import DeviceDataset

SYNTHETIC = "synthetic"
SYNTHETIC_IID = "synthetic-iid"
LEAF_FILE = "leaf-file"


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic generator; a pure function of this config.

    ``seed=None`` leaves the seed unresolved so the experiment harness can
    derive it from the experiment seed.
    """

    alpha: float = 0.0
    beta: float = 0.0
    iid: bool = False
    num_devices: int = 30
    input_dim: int = 60
    num_classes: int = 10
    min_samples: int = 50
    lognormal_sigma: float = 2.0
    sample_scale: float = 40.0
    seed: int | None = 0

    def __post_init__(self):
        if self.num_devices < 1:
            raise ConfigurationError("num_devices must be >= 1")
        if self.input_dim < 1:
            raise ConfigurationError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("alpha and beta must be >= 0")
        if self.min_samples < 1:
            raise ConfigurationError("min_samples must be >= 1")

    @property
    def provenance(self) -> str:
        if self.iid:
            return SYNTHETIC_IID
        return f"{SYNTHETIC}({self.alpha},{self.beta})"


@dataclass(frozen=True)
class FederatedDataset:
    """All devices of one federated network plus their sampling weights."""

    devices: tuple[DeviceDataset, ...]
    num_classes: int
    provenance: str = "unknown"
    p: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.devices) < 1:
            raise ConfigurationError("a federated dataset needs at least one device")
        dims = {dev.input_dim for dev in self.devices}
        if len(dims) != 1:
            raise ConfigurationError(f"devices disagree on input_dim: {sorted(dims)}")
        counts = np.array([dev.num_samples for dev in self.devices], dtype=np.float64)
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "p", counts / counts.sum())

    @property
    def num_devices(self) -> int:
        return len(self.devices)

    @property
    def input_dim(self) -> int:
        return self.devices[0].input_dim

    @property
    def total_samples(self) -> int:
        return int(sum(dev.num_samples for dev in self.devices))


@dataclass(frozen=True)
class DatasetStats:
    num_devices: int
    total_samples: int
    mean_samples: float
    stdev_population: float
    stdev_sample: float


@dataclass(frozen=True)
class SyntheticLatents:
    """The generator's hidden draws, exposed for inspection and testing."""

    device_models: tuple  # (W_k, b_k) per device
    feature_means: tuple  # v_k per device
    model_centers: np.ndarray  # u_k
    feature_centers: np.ndarray  # B_k


def generate_synthetic(cfg: SynthConfig, return_latents: bool = False):
    """Build the synthetic federated dataset described by ``cfg``.

    Per device k: sample count ``min_samples + floor(|LogNormal(0, sigma)| *
    sample_scale)``; true model ``W_k, b_k`` with entries ``N(u_k, 1)`` where
    ``u_k ~ N(0, alpha)``; features ``x ~ N(v_k, diag(j^-1.2))`` where the
    entries of ``v_k`` are ``N(B_k, 1)`` with ``B_k ~ N(0, beta)``; labels are
    the generating model's argmax.  The IID variant shares one ``N(0,1)``
    model across devices and sets every ``v_k`` to zero.

    With ``return_latents`` the hidden per-device models come back too.
    """
    if cfg.seed is None:
        raise ConfigurationError("SynthConfig.seed is unresolved; set it or go through the harness")
    rng = np.random.default_rng(cfg.seed)
    N, D, C = cfg.num_devices, cfg.input_dim, cfg.num_classes

    counts = cfg.min_samples + np.floor(
        np.abs(rng.lognormal(0.0, cfg.lognormal_sigma, N)) * cfg.sample_scale
    ).astype(np.int64)
    cov_std = np.sqrt(np.power(np.arange(1, D + 1, dtype=np.float64), -1.2))

    if cfg.iid:
        W_shared = rng.normal(0.0, 1.0, (C, D))
        b_shared = rng.normal(0.0, 1.0, C)
        u = np.zeros(N)
        B = np.zeros(N)
    else:
        u = rng.normal(0.0, cfg.alpha, N)
        B = rng.normal(0.0, cfg.beta, N)

    devices = []
    models = []
    means = []
    for k in range(N):
        if cfg.iid:
            W, b = W_shared, b_shared
            v = np.zeros(D)
        else:
            W = rng.normal(u[k], 1.0, (C, D))
            b = rng.normal(u[k], 1.0, C)
            v = rng.normal(B[k], 1.0, D)
        X = rng.normal(0.0, 1.0, (int(counts[k]), D)) * cov_std + v
        y = np.argmax(X @ W.T + b, axis=1).astype(np.int64)
        devices.append(DeviceDataset(features=X, labels=y, device_id=k))
        models.append((W, b))
        means.append(v)
    fd = FederatedDataset(devices=tuple(devices), num_classes=C, provenance=cfg.provenance)
    if return_latents:
        return fd, SyntheticLatents(device_models=tuple(models), feature_means=tuple(means),
                                    model_centers=u, feature_centers=B)
    return fd


def make_identical_devices(base: DeviceDataset, num_devices: int, num_classes: int) -> FederatedDataset:
    """Replicate one dataset across devices: the exactly-homogeneous network."""
    devices = tuple(replace(base, device_id=k) for k in range(num_devices))
    return FederatedDataset(devices=devices, num_classes=num_classes, provenance="identical-devices")


def load_leaf(path: str) -> FederatedDataset:
    """Read a LEAF-style partitioned dataset file.

    The file holds one JSON object with ``users`` (ids), ``num_samples``
    (per-user counts) and ``user_data`` (id -> ``{"x": [[...]], "y": [...]}``),
    matching the LEAF benchmark layout so published splits load unmodified.
    Pixel-style features with values above 1 are rescaled to [0, 1].
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc

    for key in ("users", "num_samples", "user_data"):
        if key not in raw:
            raise DataError(f"{path}: missing top-level field {key!r}")
    users = raw["users"]
    num_samples = raw["num_samples"]
    if len(users) != len(num_samples):
        raise DataError(
            f"{path}: 'users' has {len(users)} entries but 'num_samples' has {len(num_samples)}"
        )
    if not users:
        raise DataError(f"{path}: no users")

    devices = []
    max_feature = 0.0
    max_label = 0
    for k, uid in enumerate(users):
        entry = raw["user_data"].get(uid)
        if entry is None:
            raise DataError(f"{path}: user {uid!r} missing from 'user_data'")
        x, y = entry.get("x"), entry.get("y")
        if x is None or y is None:
            raise DataError(f"{path}: user {uid!r} needs both 'x' and 'y'")
        if len(y) == 0 or len(x) == 0:
            raise DataError(f"{path}: user {uid!r} has no samples (each device needs >= 1)")
        if len(x) != len(y):
            raise DataError(f"{path}: user {uid!r} has {len(x)} feature rows but {len(y)} labels")
        widths = {len(row) for row in x}
        if len(widths) != 1:
            raise DataError(f"{path}: user {uid!r} has inconsistent feature lengths {sorted(widths)}")
        if num_samples[k] != len(y):
            raise DataError(
                f"{path}: user {uid!r} declares {num_samples[k]} samples but carries {len(y)}"
            )
        try:
            X = np.asarray(x, dtype=np.float64)
            labels = np.asarray(y, dtype=np.int64)
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: user {uid!r}: non-numeric data: {exc}") from exc
        max_feature = max(max_feature, float(np.abs(X).max()))
        max_label = max(max_label, int(labels.max()))
        devices.append((X, labels))

    scale = max_feature if max_feature > 1.0 else 1.0
    built = tuple(
        DeviceDataset(features=X / scale, labels=labels, device_id=k)
        for k, (X, labels) in enumerate(devices)
    )
    widths = {dev.input_dim for dev in built}
    if len(widths) != 1:
        raise DataError(f"{path}: users disagree on feature length: {sorted(widths)}")
    return FederatedDataset(devices=built, num_classes=max_label + 1, provenance=f"{LEAF_FILE}:{path}")


def dataset_stats(fd: FederatedDataset) -> DatasetStats:
    """Device-count and per-device sample statistics."""
    counts = np.array([dev.num_samples for dev in fd.devices], dtype=np.float64)
    mean = float(counts.mean())
    var_pop = float(np.mean((counts - mean) ** 2))
    var_sample = var_pop * len(counts) / (len(counts) - 1) if len(counts) > 1 else 0.0
    return DatasetStats(
        num_devices=len(counts),
        total_samples=int(counts.sum()),
        mean_samples=mean,
        stdev_population=math.sqrt(var_pop),
        stdev_sample=math.sqrt(var_sample),
    )
