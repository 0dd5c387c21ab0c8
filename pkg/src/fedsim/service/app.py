"""FastAPI service exposing the simulator to HTTP clients.

Endpoints run synchronously: experiments at desk scale take seconds to
minutes and callers (the bundled CLI in particular) wait for the result.
Losses can be NaN after divergence, so responses are rendered with a
JSON encoder that allows non-finite floats; Python parsers read them
back natively.
"""

from __future__ import annotations

import dataclasses
import json
import typing

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..errors import ConfigurationError, DataError, FedsimError, NumericalError
from ..harness import (
    ExperimentConfig,
    config_to_dict,
    build_dataset,
    participation_sweep,
    run_experiment,
    select_mu,
    theory_report,
    unrealistic_setting,
)
from ..synthdata import SynthConfig, dataset_stats
from ..theory import TheoryConstants, rho_convex, rho_device_specific, rho_nonconvex
from . import schemas


class LenientJSONResponse(JSONResponse):
    """JSON that permits NaN/Infinity (divergence is data, not an error)."""

    def render(self, content: typing.Any) -> bytes:
        return json.dumps(content, ensure_ascii=False, allow_nan=True,
                          separators=(",", ":")).encode("utf-8")


def _experiment_config(req: schemas.RunRequest) -> ExperimentConfig:
    synthetic = None
    if req.dataset.synthetic is not None:
        synthetic = SynthConfig(**req.dataset.synthetic.model_dump())
    return ExperimentConfig(
        synthetic=synthetic,
        leaf_path=req.dataset.leaf_path,
        algorithms=tuple(req.algorithms),
        rounds=req.rounds,
        devices_per_round=req.devices_per_round,
        epochs=req.epochs,
        eta=req.eta,
        batch_size=req.batch_size,
        mu=req.mu,
        sampling=req.sampling,
        reuse_gradient_subset=req.reuse_gradient_subset,
        exact_tol=req.exact_tol,
        seed=req.seed,
        eval_every=req.eval_every,
        grad_every=req.grad_every,
        workers=req.workers,
    )


def _run_response(log) -> dict:
    header = log.header
    return {
        "config": header["config"],
        "dataset": header["dataset"],
        "rows": [dataclasses.asdict(row) for row in log.rows],
    }


def create_app() -> FastAPI:
    app = FastAPI(title="fedsim", version="0.1.0",
                  default_response_class=LenientJSONResponse)

    @app.exception_handler(FedsimError)
    async def _fedsim_error(request: Request, exc: FedsimError):
        if isinstance(exc, ConfigurationError):
            kind, status = "config", 400
        elif isinstance(exc, DataError):
            kind, status = "data", 400
        elif isinstance(exc, NumericalError):
            kind, status = "numerical", 500
        else:
            kind, status = "config", 400
        return LenientJSONResponse({"kind": kind, "detail": str(exc)}, status_code=status)

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/experiments/run", response_model=schemas.RunResponse)
    def run(req: schemas.RunRequest):
        log = run_experiment(_experiment_config(req))
        return _run_response(log)

    @app.post("/experiments/participation-sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest):
        cfg = _experiment_config(req)
        logs = participation_sweep(cfg, req.k_list)
        return {"runs": {str(k): _run_response(log) for k, log in logs.items()}}

    @app.post("/experiments/unrealistic", response_model=schemas.RunResponse)
    def unrealistic(req: schemas.RunRequest):
        return _run_response(unrealistic_setting(_experiment_config(req)))

    @app.post("/experiments/select-mu", response_model=schemas.MuSelectResponse)
    def select(req: schemas.MuSelectRequest):
        selection = select_mu(_experiment_config(req), grid=req.grid, algorithm=req.algorithm)
        return {
            "best_mu": selection.best_mu,
            "final_losses": {repr(mu): loss for mu, loss in selection.final_losses.items()},
            "algorithm": selection.algorithm,
            "all_diverged": selection.all_diverged,
        }

    @app.post("/experiments/theory-report", response_model=schemas.TheoryReportResponse)
    def theory(req: schemas.TheoryReportRequest):
        report = theory_report(_experiment_config(req))
        return {
            "config": report.header["config"],
            "dataset": report.header["dataset"],
            "lipschitz": report.lipschitz,
            "mu": report.mu,
            "rows": [dataclasses.asdict(row) for row in report.rows],
            "summary": report.summary,
        }

    @app.post("/datasets/stats", response_model=schemas.StatsResponse)
    def stats(req: schemas.StatsRequest):
        synthetic = None
        if req.dataset.synthetic is not None:
            synthetic = SynthConfig(**req.dataset.synthetic.model_dump())
        cfg = ExperimentConfig(synthetic=synthetic, leaf_path=req.dataset.leaf_path,
                               seed=req.seed, rounds=1)
        fd = build_dataset(cfg)
        return {
            "provenance": fd.provenance,
            "num_classes": fd.num_classes,
            "input_dim": fd.input_dim,
            "stats": dataclasses.asdict(dataset_stats(fd)),
        }

    @app.post("/theory/rho", response_model=schemas.RhoResponse)
    def rho(req: schemas.RhoRequest):
        if req.variant == "device-specific":
            if not req.per_device:
                raise ConfigurationError("device-specific rho needs per_device constants")
            value = rho_device_specific(req.per_device, L=req.L, B=req.B,
                                        network_l_in_cross_term=req.network_l_in_cross_term)
        else:
            constants = TheoryConstants(L=req.L, mu=req.mu, gamma=req.gamma,
                                        B=req.B, lam=req.lam)
            value = rho_convex(constants) if req.variant == "convex" else rho_nonconvex(constants)
        return {"rho": value}

    return app


app = create_app()
