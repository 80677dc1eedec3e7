"""HTTP service exposing the engine: dataset generation, training,
indexing, querying, evaluation, benchmarking and the sequence-matching
baseline.

Job endpoints write their artifacts server-side (atomically) and return
summaries; result files never embed absolute paths, so fixed-seed runs
are byte-reproducible wherever the output directory lives.
"""

from __future__ import annotations

import os

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..core import (
    StoreError,
    atomic_write_text,
    load_feature_store,
    validate_traversal,
    write_store,
)
from ..composers import FusionParams, LstmParams, load_params, make_pipeline, save_params
from ..evaluate import (
    condition_matrix,
    condition_matrix_csv,
    evaluate,
    query_csv,
    run_experiment_suite,
)
from ..retrieval import bench_csv, bench_grid, build_index, load_index, save_index
from ..seqslam import NoMatchError, run_seqslam
from ..synth import WorldConfig, generate_world, perturb_reverse
from ..train import SamplingExhaustedError, TrainConfig, TrainingDivergedError, \
    train_composer, write_loss_csv
from . import schemas as s

app = FastAPI(title="seqplace", version=__version__)


class InputError(Exception):
    """Unreadable or inconsistent input artifact."""


@app.exception_handler(InputError)
@app.exception_handler(StoreError)
@app.exception_handler(FileNotFoundError)
async def _input_error(request: Request, exc: Exception):
    return JSONResponse(status_code=404,
                        content={"error": "input", "message": str(exc)})


@app.exception_handler(ValueError)
@app.exception_handler(KeyError)
@app.exception_handler(SamplingExhaustedError)
async def _value_error(request: Request, exc: Exception):
    return JSONResponse(status_code=422,
                        content={"error": "config", "message": str(exc)})


@app.exception_handler(TrainingDivergedError)
@app.exception_handler(NoMatchError)
async def _runtime_error(request: Request, exc: Exception):
    return JSONResponse(status_code=409,
                        content={"error": "runtime", "message": str(exc)})


def _echo_config(out_dir: str, request: object) -> None:
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_text(os.path.join(out_dir, "effective_config.json"),
                      request.model_dump_json(indent=2) + "\n")  # type: ignore[attr-defined]


def _load_store(path: str):
    if not os.path.exists(path):
        raise InputError(f"no such input: {path}")
    return load_feature_store(path)


def _load_pipeline(kind: str, n: int, dim: int, checkpoint_path: str | None):
    params: FusionParams | LstmParams | None = None
    if checkpoint_path is not None:
        if not os.path.exists(checkpoint_path):
            raise InputError(f"no such checkpoint: {checkpoint_path}")
        saved_kind, params = load_params(checkpoint_path)
        if kind != saved_kind:
            raise InputError(
                f"checkpoint {checkpoint_path} holds {saved_kind!r} parameters, "
                f"request says {kind!r}"
            )
    return make_pipeline(kind, n, dim, params)


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/datasets/generate", response_model=s.GenResponse)
def gen(req: s.GenRequest) -> s.GenResponse:
    cfg = WorldConfig(
        num_places=req.num_places, dim=req.dim, conditions=req.conditions,
        transform_scale=req.transform_scale, noise_scale=req.noise_scale,
        rng_seed=req.seed, tolerance=req.tolerance,
    )
    store = generate_world(cfg)
    manifest_path = write_store(req.out_dir, store)
    _echo_config(req.out_dir, req)
    return s.GenResponse(
        manifest_path=manifest_path,
        ground_truth_path=os.path.join(req.out_dir, "ground_truth.json"),
        condition_files={c: f"{store.get(c).name}.spf" for c in store.condition_ids},
        num_places=req.num_places,
        dim=req.dim,
    )


@app.post("/train", response_model=s.TrainResponse)
def train(req: s.TrainRequest) -> s.TrainResponse:
    store = _load_store(req.manifest_path)
    cfg = TrainConfig(
        margin=req.margin, learning_rate=req.learning_rate, epochs=req.epochs,
        triplets_per_epoch=req.triplets_per_epoch, rng_seed=req.seed,
        frame_substitution_prob=req.frame_substitution_prob,
        dropout_rate=req.dropout_rate, n=req.n, descriptor_size=req.descriptor_size,
    )
    result = train_composer(req.composer, store, cfg)
    os.makedirs(req.out_dir, exist_ok=True)
    checkpoint = os.path.join(req.out_dir, f"{req.composer}.spw")
    loss_csv = os.path.join(req.out_dir, "loss.csv")
    save_params(checkpoint, req.composer, result.params)
    write_loss_csv(loss_csv, result.losses)
    _echo_config(req.out_dir, req)
    n_steps = len(result.losses)
    return s.TrainResponse(
        checkpoint_path=checkpoint,
        loss_csv_path=loss_csv,
        steps=n_steps,
        first_loss=float(result.losses[0]) if n_steps else None,
        final_loss=float(result.losses[-1]) if n_steps else None,
    )


@app.post("/indexes/build", response_model=s.IndexResponse)
def index(req: s.IndexRequest) -> s.IndexResponse:
    store = _load_store(req.manifest_path)
    pipeline = _load_pipeline(req.composer, req.n, store.dim, req.checkpoint_path)
    idx = build_index(store.get(req.condition), pipeline, stride=req.stride)
    save_index(req.out_path, idx)
    return s.IndexResponse(index_path=req.out_path, entries=len(idx),
                           descriptor_size=idx.dim)


@app.post("/queries/run", response_model=s.QueryResponse)
def query(req: s.QueryRequest) -> s.QueryResponse:
    store = _load_store(req.manifest_path)
    if not os.path.exists(req.index_path):
        raise InputError(f"no such index: {req.index_path}")
    idx = load_index(req.index_path)
    pipeline = _load_pipeline(req.composer, req.n, store.dim, req.checkpoint_path)
    result = evaluate(idx, store.get(req.condition), pipeline, store.convention)
    atomic_write_text(req.out_csv, query_csv(result))
    return s.QueryResponse(csv_path=req.out_csv, num_queries=len(result.outcomes),
                           precision=result.precision)


@app.post("/evaluations/run", response_model=s.EvalResponse)
def evaluation(req: s.EvalRequest) -> s.EvalResponse:
    store = _load_store(req.manifest_path)
    pipelines = {"single": make_pipeline("single", 1, store.dim)}
    for kind, path in req.checkpoints.items():
        pipelines[kind] = _load_pipeline(kind, req.n, store.dim, path)
    report = run_experiment_suite(
        store, pipelines, req.query_condition, req.reference_condition,
        rs_seed=req.rs_seed, rs_draws=req.rs_draws,
    )
    if req.with_condition_matrix:
        pipe = pipelines.get(req.matrix_composer) or make_pipeline(
            req.matrix_composer, req.n, store.dim)
        report.condition_matrix = condition_matrix(store, pipe)
        atomic_write_text(os.path.join(req.out_dir, "condition_matrix.csv"),
                          condition_matrix_csv(report.condition_matrix))
    os.makedirs(req.out_dir, exist_ok=True)
    report_path = os.path.join(req.out_dir, "eval_report.json")
    csv_path = os.path.join(req.out_dir, "eval_report.csv")
    atomic_write_text(report_path, report.to_json())
    atomic_write_text(csv_path, report.to_csv())
    _echo_config(req.out_dir, req)
    return s.EvalResponse(report_path=report_path, csv_path=csv_path,
                          report=report.to_dict())


@app.post("/benchmarks/search", response_model=s.BenchResponse)
def bench(req: s.BenchRequest) -> s.BenchResponse:
    results = bench_grid(req.ks, req.ns, trials=req.trials, seed=req.seed)
    atomic_write_text(req.out_csv, bench_csv(results))
    rows = [s.BenchRow(k=r.k, N=r.N, trials=r.trials, mean_ms=r.mean_ms,
                       stddev_ms=r.stddev_ms) for r in results]
    return s.BenchResponse(csv_path=req.out_csv, rows=rows)


@app.post("/seqslam/run", response_model=s.SeqslamResponse)
def seqslam(req: s.SeqslamRequest) -> s.SeqslamResponse:
    store = _load_store(req.manifest_path)
    if req.reverse_query:
        store = perturb_reverse(store, req.query_condition)
    report = run_seqslam(
        store.get(req.query_condition), store.get(req.reference_condition),
        store.convention, seq_len=req.seq_len, v_min=req.v_min, v_max=req.v_max,
        v_steps=req.v_steps, enhance_window=req.enhance_window,
    )
    lines = ["query_start,matched_start,score,velocity,correct"]
    for m in report.matches:
        lines.append(f"{m.query_start},{m.ref_start},{m.score!r},{m.velocity!r},{int(m.correct)}")
    atomic_write_text(req.out_csv, "\n".join(lines) + "\n")
    return s.SeqslamResponse(csv_path=req.out_csv, num_queries=len(report.matches),
                             precision=report.precision)


@app.post("/stores/inspect", response_model=s.InspectResponse)
def inspect(req: s.InspectRequest) -> s.InspectResponse:
    store = _load_store(req.path)
    warnings = []
    conditions = []
    for cond in store.condition_ids:
        trav = store.get(cond)
        warnings.extend(validate_traversal(trav))
        conditions.append(s.ConditionInfo(condition_id=cond, name=trav.name,
                                          frames=len(trav)))
    return s.InspectResponse(dim=store.dim, tolerance=store.convention.tolerance,
                             conditions=conditions, warnings=warnings)
