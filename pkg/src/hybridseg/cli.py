"""Thin command-line client for the HTTP service.

Without ``--server`` the commands talk to an in-process instance of the
service; with ``--server URL`` they hit a running one (see ``serve``).
Every command exits nonzero on failure and prints a machine-parseable
``ERROR code=<status> detail=<message>`` line.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from starlette.testclient import TestClient

    from .service.app import create_app
    return TestClient(create_app(), raise_server_exceptions=False)


def _call(server: str | None, method: str, path: str, payload: dict | None = None) -> dict:
    with _client(server) as client:
        response = client.request(method, path, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        click.echo(f"ERROR code={response.status_code} detail={detail}", err=True)
        sys.exit(1)
    return response.json()


def _train_payload(config_file: str | None, overrides: tuple[str, ...]) -> dict:
    payload: dict = {"overrides": {}}
    if config_file:
        payload["config_text"] = Path(config_file).read_text()
    for item in overrides:
        if "=" not in item:
            click.echo(f"ERROR code=2 detail=expected key=value, got {item!r}", err=True)
            sys.exit(1)
        key, _, value = item.partition("=")
        payload["overrides"][key.strip()] = value.strip()
    return payload


server_option = click.option("--server", default=None, metavar="URL",
                             help="Base URL of a running service; default runs in-process.")


@click.group()
def main():
    """Hybrid 3D segmentation: data generation, training, evaluation, checks."""


@main.command()
@server_option
@click.option("--out-dir", required=True)
@click.option("--seed", default=0, type=int)
@click.option("--shape", default="32,32,32", help="D,H,W")
@click.option("--num-classes", default=2, type=int)
@click.option("--noise-sigma", default=0.05, type=float)
@click.option("--count", default=20, type=int)
def generate(server, out_dir, seed, shape, num_classes, noise_sigma, count):
    """Write a synthetic dataset directory with a manifest."""
    dims = tuple(int(x) for x in shape.split(","))
    result = _call(server, "POST", "/generate", {
        "out_dir": out_dir, "seed": seed, "shape": dims, "num_classes": num_classes,
        "noise_sigma": noise_sigma, "count": count,
    })
    click.echo(json.dumps(result, indent=2))


@main.command()
@server_option
@click.option("--config", "config_file", default=None, type=click.Path(exists=True),
              help="Flat key=value run config file.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override a single config key; repeatable.")
def train(server, config_file, overrides):
    """Train a model and write final/best checkpoints plus a run log."""
    result = _call(server, "POST", "/train", _train_payload(config_file, overrides))
    click.echo(json.dumps(result, indent=2))


@main.command("eval")
@server_option
@click.option("--checkpoint", required=True)
@click.option("--dataset-dir", required=True)
@click.option("--split", default="test")
def eval_cmd(server, checkpoint, dataset_dir, split):
    """Evaluate a checkpoint: Dice, ASD, HD95 as mean (std) per class."""
    result = _call(server, "POST", "/eval", {
        "checkpoint": checkpoint, "dataset_dir": dataset_dir,
        "split": split or None,
    })
    click.echo(result["rendered"])
    click.echo(json.dumps({k: result[k] for k in ("columns", "rows", "per_class",
                                                  "overall", "errors")}, indent=2))


@main.command()
@server_option
@click.option("--config", "config_file", default=None, type=click.Path(exists=True))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
def ablate(server, config_file, overrides):
    """Train hybrid, CNN-only, and transformer-only variants and compare."""
    result = _call(server, "POST", "/ablate", _train_payload(config_file, overrides))
    for mode, summary in result["summaries"].items():
        click.echo(f"== {mode} ==")
        click.echo(summary)
    for mode, delta in result["hybrid_minus"].items():
        click.echo(f"hybrid - {mode}: Dice {delta:+.3f}")


@main.command()
@server_option
@click.option("--checkpoint", required=True)
@click.option("--image", required=True)
@click.option("--output", required=True)
def predict(server, checkpoint, image, output):
    """Segment one image volume and write the label volume."""
    result = _call(server, "POST", "/predict", {
        "checkpoint": checkpoint, "image": image, "output": output,
    })
    click.echo(result["output"])


@main.command()
@server_option
@click.argument("suite")
@click.option("--seed", default=0, type=int)
def check(server, suite, seed):
    """Run an oracle suite: geometry, attention, gradients, metrics, or io."""
    result = _call(server, "POST", f"/check/{suite}?seed={seed}")
    for item in result["results"]:
        status = "PASS" if item["passed"] else "FAIL"
        detail = f"  ({item['detail']})" if item["detail"] else ""
        click.echo(f"[{status}] {item['name']}{detail}")
    if not result["passed"]:
        click.echo(f"ERROR code=1 detail=suite {suite} failed", err=True)
        sys.exit(1)
    click.echo(f"suite {suite}: all passed")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("hybridseg.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
