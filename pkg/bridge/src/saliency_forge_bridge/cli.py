"""Bridge command line: train the model, serve predictions, generate stacks."""
from __future__ import annotations

from pathlib import Path

import click

from .gen_stacks import generate_stacks
from .model import load_model, save_model, train_model
from .service import BridgeServer


@click.group()
def main() -> None:
    """Classifier service and explainer-stack generator."""


@main.command("train-model")
@click.option("--out", "out_path", required=True, help="Model weights file (.pt).")
@click.option("--epochs", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_train_model(out_path: str, epochs: int, seed: int) -> None:
    """Train the digit classifier and save its weights."""
    model, accuracy = train_model(epochs=epochs, seed=seed)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out_path)
    click.echo(f"test accuracy {accuracy:.3f} -> {out_path}")


@main.command("serve")
@click.option("--model", "model_path", required=True, help="Model weights file.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
def cmd_serve(model_path: str, host: str, port: int) -> None:
    """Serve /predict and /healthz for the trained model."""
    server = BridgeServer(load_model(model_path), host=host, port=port)
    click.echo(f"serving digit-cnn on {server.address}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


@main.command("gen-stacks")
@click.option("--model", "model_path", required=True)
@click.option("--out", "out_dir", required=True)
@click.option("--count", type=int, default=200, show_default=True)
@click.option("--explainers", default=None, help="Comma list (default: all five).")
@click.option(
    "--lime-granularities",
    default=None,
    help="Comma list of superpixel counts; emits lime-<k> maps instead.",
)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_gen_stacks(
    model_path: str,
    out_dir: str,
    count: int,
    explainers: str | None,
    lime_granularities: str | None,
    seed: int,
) -> None:
    """Generate attribution stacks for test images."""
    model = load_model(model_path)
    kwargs = {}
    if explainers:
        kwargs["explainers"] = [e.strip() for e in explainers.split(",") if e.strip()]
    granularities = None
    if lime_granularities:
        granularities = [int(v) for v in lime_granularities.split(",") if v.strip()]
    manifest = generate_stacks(
        model,
        out_dir,
        count=count,
        lime_granularities=granularities,
        seed=seed,
        **kwargs,
    )
    click.echo(f"wrote {count} stacks -> {manifest}")


if __name__ == "__main__":
    main()
