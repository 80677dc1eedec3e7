"""Command-line client for the service.

Every subcommand builds a request for the corresponding endpoint.  By
default the service app runs in-process (no network, single process);
pass --server to talk to a running instance instead.  Values resolve as
flags > config file > defaults, and each job echoes its effective config
into its output directory.

With the global --out-dir, relative output paths (and their defaults:
world/, train-<composer>/, eval/, index-<kind>.spi, matches.csv,
bench.csv, seqslam.csv) land under that directory, so a whole run stays
in one place.

Exit codes: 0 success, 2 invalid config, 3 unreadable input, 4 runtime
failure.
"""

from __future__ import annotations

import json
import os
import sys

import click
import httpx

EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_RUNTIME = 4

_CODE_BY_ERROR = {"config": EXIT_CONFIG, "input": EXIT_INPUT, "runtime": EXIT_RUNTIME}


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # starlette testclient deprecation chatter
        from fastapi.testclient import TestClient
    from .service.app import app  # deferred: keeps --help fast
    return TestClient(app, raise_server_exceptions=False)


def _fail(error: str, message: str, code: int) -> None:
    click.echo(json.dumps({"error": error, "message": message}), err=True)
    sys.exit(code)


def _call(ctx: click.Context, endpoint: str, payload: dict) -> dict:
    server = ctx.obj.get("server")
    try:
        with _client(server) as client:
            resp = client.post(endpoint, json=payload)
    except httpx.HTTPError as exc:
        _fail("runtime", f"cannot reach service: {exc}", EXIT_RUNTIME)
    if resp.status_code == 200:
        return resp.json()
    try:
        body = resp.json()
    except ValueError:
        body = {}
    if resp.status_code == 422 and "detail" in body:
        _fail("config", json.dumps(body["detail"]), EXIT_CONFIG)
    error = body.get("error", "runtime")
    _fail(error, body.get("message", resp.text), _CODE_BY_ERROR.get(error, EXIT_RUNTIME))
    raise AssertionError("unreachable")


def _payload(ctx: click.Context, command: str, **flags) -> dict:
    """flags > config-file section > endpoint defaults."""
    payload = dict(ctx.obj.get("config", {}).get(command, {}))
    for name, value in flags.items():
        source = ctx.get_parameter_source(name)
        explicit = source is not None and source.name != "DEFAULT"
        if value is not None and (explicit or name not in payload):
            payload[name] = value
    if "seed" in payload and payload["seed"] is None:
        payload.pop("seed")
    return payload


def _echo(doc: dict) -> None:
    click.echo(json.dumps(doc, indent=2, sort_keys=True))


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Service URL; default runs the service in-process.")
@click.option("--config", "config_path", default=None, type=click.Path(),
              help="JSON config file with one section per subcommand.")
@click.option("--seed", default=None, type=int, help="Seed forwarded to stochastic commands.")
@click.option("--out-dir", "base_out", default=None, type=click.Path(),
              help="Base directory for all outputs of this run.")
@click.pass_context
def main(ctx, server, config_path, seed, base_out):
    """Sequence-based place recognition toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server
    ctx.obj["seed"] = seed
    ctx.obj["base_out"] = base_out
    ctx.obj["config"] = {}
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                ctx.obj["config"] = json.load(fh)
        except FileNotFoundError:
            _fail("input", f"no such config file: {config_path}", EXIT_INPUT)
        except json.JSONDecodeError as exc:
            _fail("config", f"config file is not valid JSON: {exc}", EXIT_CONFIG)


def _seed_fallback(ctx, seed):
    return seed if seed is not None else ctx.obj.get("seed")


def _resolve_out(ctx, value, default_name, flag):
    """Resolve an output path against the global --out-dir."""
    base = ctx.obj.get("base_out")
    if value is None:
        if base is None:
            _fail("config", f"{flag} is required unless --out-dir is given", EXIT_CONFIG)
        return os.path.join(base, default_name)
    if base is not None and not os.path.isabs(value):
        return os.path.join(base, value)
    return value


def _resolve_manifest(ctx, value):
    """Default manifest location: <out-dir>/world/manifest.json."""
    if value is not None:
        return _resolve_input(ctx, value)
    base = ctx.obj.get("base_out")
    if base is None:
        _fail("config", "--manifest is required unless --out-dir is given", EXIT_CONFIG)
    return os.path.join(base, "world", "manifest.json")


def _resolve_input(ctx, value):
    """Relative input paths also live under --out-dir when it is set."""
    base = ctx.obj.get("base_out")
    if value is not None and base is not None and not os.path.isabs(value):
        return os.path.join(base, value)
    return value


@main.command()
@click.option("--out-dir", default=None, type=click.Path())
@click.option("--places", "num_places", default=None, type=int)
@click.option("--dim", default=None, type=int)
@click.option("--conditions", default=None, type=int)
@click.option("--transform-scale", default=None, type=float)
@click.option("--noise-scale", default=None, type=float)
@click.option("--tolerance", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.pass_context
def gen(ctx, out_dir, num_places, dim, conditions, transform_scale, noise_scale,
        tolerance, seed):
    """Generate a synthetic multi-condition feature store."""
    out_dir = _resolve_out(ctx, out_dir, "world", "--out-dir")
    payload = _payload(ctx, "gen", out_dir=out_dir, num_places=num_places, dim=dim,
                       conditions=conditions, transform_scale=transform_scale,
                       noise_scale=noise_scale, tolerance=tolerance,
                       seed=_seed_fallback(ctx, seed))
    _echo(_call(ctx, "/datasets/generate", payload))


@main.command()
@click.option("--manifest", "manifest_path", default=None, type=click.Path())
@click.option("--out-dir", default=None, type=click.Path())
@click.option("--composer", required=True,
              type=click.Choice(["grouping", "fusion", "recurrent"]))
@click.option("--margin", default=None, type=float)
@click.option("--learning-rate", default=None, type=float)
@click.option("--epochs", default=None, type=int)
@click.option("--triplets-per-epoch", default=None, type=int)
@click.option("--frame-substitution-prob", default=None, type=float)
@click.option("--dropout-rate", default=None, type=float)
@click.option("--n", default=None, type=int)
@click.option("--descriptor-size", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.pass_context
def train(ctx, manifest_path, out_dir, composer, margin, learning_rate, epochs,
          triplets_per_epoch, frame_substitution_prob, dropout_rate, n,
          descriptor_size, seed):
    """Train a learnable composer; writes checkpoint + loss CSV."""
    manifest_path = _resolve_manifest(ctx, manifest_path)
    out_dir = _resolve_out(ctx, out_dir, f"train-{composer}", "--out-dir")
    payload = _payload(ctx, "train", manifest_path=manifest_path, out_dir=out_dir,
                       composer=composer, margin=margin, learning_rate=learning_rate,
                       epochs=epochs, triplets_per_epoch=triplets_per_epoch,
                       frame_substitution_prob=frame_substitution_prob,
                       dropout_rate=dropout_rate, n=n, descriptor_size=descriptor_size,
                       seed=_seed_fallback(ctx, seed))
    _echo(_call(ctx, "/train", payload))


@main.command()
@click.option("--manifest", "manifest_path", default=None, type=click.Path())
@click.option("--out", "out_path", default=None, type=click.Path())
@click.option("--composer", default=None,
              type=click.Choice(["single", "grouping", "fusion", "recurrent"]))
@click.option("--checkpoint", "checkpoint_path", default=None, type=click.Path())
@click.option("--condition", default=None, type=int)
@click.option("--n", default=None, type=int)
@click.option("--stride", default=None, type=int)
@click.pass_context
def index(ctx, manifest_path, out_path, composer, checkpoint_path, condition, n, stride):
    """Build and persist a place index from a reference condition."""
    manifest_path = _resolve_manifest(ctx, manifest_path)
    out_path = _resolve_out(ctx, out_path, f"index-{composer or 'single'}.spi", "--out")
    checkpoint_path = _resolve_input(ctx, checkpoint_path)
    payload = _payload(ctx, "index", manifest_path=manifest_path, out_path=out_path,
                       composer=composer, checkpoint_path=checkpoint_path,
                       condition=condition, n=n, stride=stride)
    _echo(_call(ctx, "/indexes/build", payload))


@main.command()
@click.option("--manifest", "manifest_path", default=None, type=click.Path())
@click.option("--index", "index_path", default=None, type=click.Path())
@click.option("--out-csv", default=None, type=click.Path())
@click.option("--composer", default=None,
              type=click.Choice(["single", "grouping", "fusion", "recurrent"]))
@click.option("--checkpoint", "checkpoint_path", default=None, type=click.Path())
@click.option("--condition", default=None, type=int)
@click.option("--n", default=None, type=int)
@click.pass_context
def query(ctx, manifest_path, index_path, out_csv, composer, checkpoint_path,
          condition, n):
    """Query every window of a condition against a persisted index."""
    manifest_path = _resolve_manifest(ctx, manifest_path)
    index_path = _resolve_out(ctx, index_path, f"index-{composer or 'single'}.spi", "--index")
    out_csv = _resolve_out(ctx, out_csv, "matches.csv", "--out-csv")
    checkpoint_path = _resolve_input(ctx, checkpoint_path)
    payload = _payload(ctx, "query", manifest_path=manifest_path, index_path=index_path,
                       out_csv=out_csv, composer=composer,
                       checkpoint_path=checkpoint_path, condition=condition, n=n)
    _echo(_call(ctx, "/queries/run", payload))


@main.command(name="eval")
@click.option("--manifest", "manifest_path", default=None, type=click.Path())
@click.option("--out-dir", default=None, type=click.Path())
@click.option("--checkpoint", "checkpoints", multiple=True, metavar="KIND=PATH",
              help="Trained checkpoint per composer; repeatable.")
@click.option("--query-condition", default=None, type=int)
@click.option("--reference-condition", default=None, type=int)
@click.option("--n", default=None, type=int)
@click.option("--rs-seed", default=None, type=int)
@click.option("--rs-draws", default=None, type=int)
@click.option("--condition-matrix", "with_condition_matrix", is_flag=True, default=None)
@click.option("--matrix-composer", default=None,
              type=click.Choice(["single", "grouping", "fusion", "recurrent"]))
@click.pass_context
def eval_cmd(ctx, manifest_path, out_dir, checkpoints, query_condition,
             reference_condition, n, rs_seed, rs_draws, with_condition_matrix,
             matrix_composer):
    """Run the NT/RG/RS experiment suite; writes report JSON + CSV."""
    manifest_path = _resolve_manifest(ctx, manifest_path)
    out_dir = _resolve_out(ctx, out_dir, "eval", "--out-dir")
    chk = {}
    for item in checkpoints:
        if "=" not in item:
            _fail("config", f"--checkpoint wants KIND=PATH, got {item!r}", EXIT_CONFIG)
        kind, path = item.split("=", 1)
        chk[kind] = _resolve_input(ctx, path)
    payload = _payload(ctx, "eval", manifest_path=manifest_path, out_dir=out_dir,
                       query_condition=query_condition,
                       reference_condition=reference_condition, n=n,
                       rs_seed=rs_seed if rs_seed is not None else ctx.obj.get("seed"),
                       rs_draws=rs_draws, with_condition_matrix=with_condition_matrix,
                       matrix_composer=matrix_composer)
    if chk or "checkpoints" not in payload:
        payload["checkpoints"] = {**payload.get("checkpoints", {}), **chk}
    _echo(_call(ctx, "/evaluations/run", payload))


@main.command()
@click.option("--out-csv", default=None, type=click.Path())
@click.option("--k", "ks", multiple=True, type=int, help="Descriptor size; repeatable.")
@click.option("--n", "ns", multiple=True, type=int, help="Database size; repeatable.")
@click.option("--trials", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.pass_context
def bench(ctx, out_csv, ks, ns, trials, seed):
    """Time exhaustive search over a (k, N) grid; writes CSV."""
    out_csv = _resolve_out(ctx, out_csv, "bench.csv", "--out-csv")
    payload = _payload(ctx, "bench", out_csv=out_csv, trials=trials,
                       seed=_seed_fallback(ctx, seed))
    if ks:
        payload["ks"] = list(ks)
    if ns:
        payload["ns"] = list(ns)
    _echo(_call(ctx, "/benchmarks/search", payload))


@main.command()
@click.option("--manifest", "manifest_path", default=None, type=click.Path())
@click.option("--out-csv", default=None, type=click.Path())
@click.option("--query-condition", default=None, type=int)
@click.option("--reference-condition", default=None, type=int)
@click.option("--seq-len", default=None, type=int)
@click.option("--vmin", "v_min", default=None, type=float)
@click.option("--vmax", "v_max", default=None, type=float)
@click.option("--vsteps", "v_steps", default=None, type=int)
@click.option("--enhance-window", default=None, type=int)
@click.option("--reverse-query", is_flag=True, default=None)
@click.pass_context
def seqslam(ctx, manifest_path, out_csv, query_condition, reference_condition,
            seq_len, v_min, v_max, v_steps, enhance_window, reverse_query):
    """Sequence-matching baseline; writes match listing + prints precision."""
    manifest_path = _resolve_manifest(ctx, manifest_path)
    out_csv = _resolve_out(ctx, out_csv, "seqslam.csv", "--out-csv")
    payload = _payload(ctx, "seqslam", manifest_path=manifest_path, out_csv=out_csv,
                       query_condition=query_condition,
                       reference_condition=reference_condition, seq_len=seq_len,
                       v_min=v_min, v_max=v_max, v_steps=v_steps,
                       enhance_window=enhance_window, reverse_query=reverse_query)
    _echo(_call(ctx, "/seqslam/run", payload))


@main.command()
@click.argument("path", type=click.Path())
@click.pass_context
def inspect(ctx, path):
    """Validate a feature file or manifest; prints header info + warnings."""
    _echo(_call(ctx, "/stores/inspect", {"path": path}))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn
    uvicorn.run("seqplace.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
