"""Command-line client for the experiment service.

Every subcommand builds a request, sends it to the service and writes
the returned metrics to disk.  By default the service runs in-process
(no network); ``--server URL`` targets a remote instance instead.  A
plain-text ``key = value`` configuration file can seed any option;
explicit flags win over file values.

Exit codes: 0 success, 1 configuration error, 2 data error,
3 internal numerical error.  Divergence inside an experiment is an
outcome, not an error exit.
"""

from __future__ import annotations

import json
import math
import os
import sys

import click
import httpx

from .metrics import MetricsLog, row_from_dict, write_experiment

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

_KIND_EXITS = {"config": EXIT_CONFIG, "data": EXIT_DATA, "numerical": EXIT_NUMERICAL}

DEFAULTS = {
    "alpha": 0.0,
    "beta": 0.0,
    "iid": False,
    "num_devices": 30,
    "input_dim": 60,
    "num_classes": 10,
    "data_seed": None,
    "leaf_path": None,
    "algorithms": "fedavg,fedprox,feddane",
    "rounds": 200,
    "devices_per_round": 10,
    "epochs": 20,
    "eta": 0.01,
    "batch_size": 10,
    "mu": 1.0,
    "sampling": "with-replacement",
    "reuse_gradient_subset": False,
    "exact_tol": None,
    "seed": 0,
    "eval_every": 1,
    "grad_every": 5,
    "workers": 1,
    "out": "results",
    "name": None,
    "k_list": "1,5,10,30",
    "grid": "0,0.001,0.01,0.1,1",
    "algorithm": None,
}

_BOOL_KEYS = {"iid", "reuse_gradient_subset"}
_INT_KEYS = {"num_devices", "input_dim", "num_classes", "data_seed", "rounds",
             "devices_per_round", "epochs", "batch_size", "seed", "eval_every",
             "grad_every", "workers"}
_FLOAT_KEYS = {"alpha", "beta", "eta", "mu", "exact_tol"}


def _coerce(key: str, raw: str):
    if raw.lower() in ("none", "null", ""):
        return None
    if key in _BOOL_KEYS:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise click.ClickException(f"config file: bad boolean for {key}: {raw!r}")
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    return raw


def load_config_file(path: str) -> dict:
    """Parse a ``key = value`` document; '#' starts a comment."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise click.ClickException(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise click.ClickException(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, raw)
    return values


class Settings:
    """Flags merged over config-file values merged over defaults."""

    def __init__(self, cli_values: dict, config_path: str | None):
        file_values = load_config_file(config_path) if config_path else {}
        self._values = dict(DEFAULTS)
        self._values.update(file_values)
        self._values.update({k: v for k, v in cli_values.items() if v is not None})

    def __getattr__(self, key):
        try:
            return self._values[key]
        except KeyError:
            raise AttributeError(key) from None

    def dataset_spec(self) -> dict:
        if self.leaf_path is not None:
            return {"leaf_path": self.leaf_path}
        return {
            "synthetic": {
                "alpha": self.alpha,
                "beta": self.beta,
                "iid": self.iid,
                "num_devices": self.num_devices,
                "input_dim": self.input_dim,
                "num_classes": self.num_classes,
                "seed": self.data_seed,
            }
        }

    def run_request(self) -> dict:
        return {
            "dataset": self.dataset_spec(),
            "algorithms": [a.strip() for a in self.algorithms.split(",") if a.strip()],
            "rounds": self.rounds,
            "devices_per_round": self.devices_per_round,
            "epochs": self.epochs,
            "eta": self.eta,
            "batch_size": self.batch_size,
            "mu": self.mu,
            "sampling": self.sampling,
            "reuse_gradient_subset": self.reuse_gradient_subset,
            "exact_tol": self.exact_tol,
            "seed": self.seed,
            "eval_every": self.eval_every,
            "grad_every": self.grad_every,
            "workers": self.workers,
        }

    def stem(self) -> str:
        if self.name:
            return self.name
        if self.leaf_path is not None:
            base = os.path.splitext(os.path.basename(self.leaf_path))[0]
            return f"{base}_seed{self.seed}"
        if self.iid:
            return f"synthetic_iid_seed{self.seed}"
        return f"synthetic_{self.alpha}_{self.beta}_seed{self.seed}"


def make_client(server: str | None) -> httpx.Client:
    """HTTP client for a remote service, or the app mounted in-process."""
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # starlette deprecates its httpx TestClient
        from starlette.testclient import TestClient

        from .service.app import create_app

        return TestClient(create_app())


def request(client: httpx.Client, path: str, payload: dict) -> dict:
    try:
        response = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        click.echo(f"error: cannot reach service: {exc}", err=True)
        sys.exit(EXIT_DATA)
    if response.status_code != 200:
        try:
            body = response.json()
        except ValueError:
            body = {}
        if response.status_code == 422:
            kind, detail = "config", body.get("detail", response.text)
        else:
            kind = body.get("kind", "numerical")
            detail = body.get("detail", response.text)
        click.echo(f"error ({kind}): {detail}", err=True)
        sys.exit(_KIND_EXITS.get(kind, EXIT_NUMERICAL))
    return response.json()


def write_run_response(body: dict, out: str, stem: str) -> list:
    log = MetricsLog(header={"config": body["config"], "dataset": body["dataset"]},
                     rows=[row_from_dict(d) for d in body["rows"]])
    return write_experiment(log, out, stem)


def _common_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                     help="Key=value configuration file; flags override it."),
        click.option("--server", default=None, help="Remote service URL (default: in-process)."),
        click.option("--alpha", type=float, default=None, help="Synthetic model heterogeneity."),
        click.option("--beta", type=float, default=None, help="Synthetic feature heterogeneity."),
        click.option("--iid/--no-iid", "iid", default=None, help="Homogeneous synthetic data."),
        click.option("--num-devices", type=int, default=None, help="Synthetic device count."),
        click.option("--input-dim", type=int, default=None),
        click.option("--num-classes", type=int, default=None),
        click.option("--data-seed", type=int, default=None,
                     help="Dataset seed (default: derived from --seed)."),
        click.option("--leaf", "leaf_path", type=str, default=None,
                     help="LEAF-style partitioned dataset file."),
        click.option("--rounds", "-T", type=int, default=None),
        click.option("--devices-per-round", "-K", type=int, default=None),
        click.option("--epochs", "-E", type=int, default=None),
        click.option("--eta", type=float, default=None, help="Local SGD step size."),
        click.option("--batch-size", type=int, default=None),
        click.option("--mu", type=float, default=None, help="Proximal coefficient."),
        click.option("--sampling", type=click.Choice(["with-replacement", "without-replacement"]),
                     default=None),
        click.option("--reuse-gradient-subset/--fresh-gradient-subset", "reuse_gradient_subset",
                     default=None, help="Reuse the gradient subset for the update phase."),
        click.option("--exact-tol", type=float, default=None,
                     help="Solve local subproblems exactly to this relative tolerance."),
        click.option("--seed", type=int, default=None),
        click.option("--eval-every", type=int, default=None),
        click.option("--grad-every", type=int, default=None),
        click.option("--workers", type=int, default=None, help="Within-round worker processes."),
        click.option("--out", type=str, default=None, help="Output directory."),
        click.option("--name", type=str, default=None, help="Output file stem."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.group()
def main():
    """Federated optimization experiments over convex models."""


@main.command()
@_common_options
@click.option("--algorithms", default=None, help="Comma list: fedavg,fedprox,feddane.")
def run(config_path, server, algorithms, **cli_values):
    """Run one experiment and write per-algorithm CSV curves."""
    cli_values["algorithms"] = algorithms
    settings = Settings(cli_values, config_path)
    with make_client(server) as client:
        body = request(client, "/experiments/run", settings.run_request())
    paths = write_run_response(body, settings.out, settings.stem())
    for path in paths:
        click.echo(path)


@main.command("sweep-participation")
@_common_options
@click.option("--algorithms", default=None, help="Comma list: fedavg,fedprox,feddane.")
@click.option("--k-list", default=None, help="Comma list of participation levels.")
def sweep_participation(config_path, server, algorithms, k_list, **cli_values):
    """Run the low-participation sweep (one run per K, shared dataset)."""
    cli_values["algorithms"] = algorithms
    cli_values["k_list"] = k_list
    settings = Settings(cli_values, config_path)
    payload = settings.run_request()
    payload["k_list"] = [int(k) for k in settings.k_list.split(",") if k.strip()]
    with make_client(server) as client:
        body = request(client, "/experiments/participation-sweep", payload)
    for k, run_body in sorted(body["runs"].items(), key=lambda kv: int(kv[0])):
        for path in write_run_response(run_body, settings.out, f"{settings.stem()}_K{k}"):
            click.echo(path)


@main.command()
@_common_options
@click.option("--algorithms", default=None, help="Comma list: fedavg,fedprox,feddane.")
def unrealistic(config_path, server, algorithms, **cli_values):
    """Single-epoch, (nearly) full-participation comparison run."""
    cli_values["algorithms"] = algorithms
    settings = Settings(cli_values, config_path)
    with make_client(server) as client:
        body = request(client, "/experiments/unrealistic", settings.run_request())
    for path in write_run_response(body, settings.out, f"{settings.stem()}_unrealistic"):
        click.echo(path)


@main.command("select-mu")
@_common_options
@click.option("--grid", default=None, help="Comma list of proximal coefficients to try.")
@click.option("--algorithm", default=None, type=click.Choice(["fedprox", "feddane"]),
              help="Algorithm whose mu is tuned (default: first configured).")
def select_mu_cmd(config_path, server, grid, algorithm, **cli_values):
    """Tune the proximal coefficient on a shortened budget."""
    cli_values["grid"] = grid
    cli_values["algorithm"] = algorithm
    settings = Settings(cli_values, config_path)
    payload = settings.run_request()
    payload["grid"] = [float(g) for g in settings.grid.split(",") if g.strip()]
    payload["algorithm"] = settings.algorithm
    with make_client(server) as client:
        body = request(client, "/experiments/select-mu", payload)
    os.makedirs(settings.out, exist_ok=True)
    path = os.path.join(settings.out, f"{settings.stem()}_mu.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for mu, loss in sorted(body["final_losses"].items(), key=lambda kv: float(kv[0])):
        marker = " *" if float(mu) == body["best_mu"] else ""
        click.echo(f"mu={mu}: final loss {loss}{marker}")
    click.echo(path)


@main.command("theory-report")
@_common_options
def theory_report_cmd(config_path, server, **cli_values):
    """Track dissimilarity, inexactness and the decrease bound along a run."""
    settings = Settings(cli_values, config_path)
    with make_client(server) as client:
        body = request(client, "/experiments/theory-report", settings.run_request())
    os.makedirs(settings.out, exist_ok=True)
    path = os.path.join(settings.out, f"{settings.stem()}_theory.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")
    summary = body["summary"]
    click.echo(
        f"rounds={summary['rounds']} rho_positive={summary['rounds_rho_positive']}"
        f" decrease_held={summary['rounds_decrease_held']}"
    )
    click.echo(path)


@main.command()
@_common_options
def stats(config_path, server, **cli_values):
    """Print device-count and sample statistics for a dataset."""
    settings = Settings(cli_values, config_path)
    payload = {"dataset": settings.dataset_spec(), "seed": settings.seed}
    with make_client(server) as client:
        body = request(client, "/datasets/stats", payload)
    s = body["stats"]
    click.echo(f"provenance: {body['provenance']}")
    click.echo(f"devices: {s['num_devices']}")
    click.echo(f"samples: {s['total_samples']}")
    click.echo(f"samples/device mean: {s['mean_samples']:.1f}")
    click.echo(f"samples/device stdev (population): {s['stdev_population']:.1f}")
    click.echo(f"samples/device stdev (sample): {s['stdev_sample']:.1f}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the experiment service."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
