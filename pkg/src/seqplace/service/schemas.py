"""Request/response shapes for the HTTP service.

Paths are interpreted on the service side; relative paths resolve against
the service process working directory.  Every job endpoint echoes its
effective request into the output directory for provenance.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

ComposerKind = Literal["single", "grouping", "fusion", "recurrent"]


class GenRequest(BaseModel):
    out_dir: str
    num_places: int = 200
    dim: int = 64
    conditions: int = 2
    transform_scale: float = 0.5
    noise_scale: float = 0.1
    seed: int = 0
    tolerance: int = 0


class GenResponse(BaseModel):
    manifest_path: str
    ground_truth_path: str
    condition_files: dict[int, str]
    num_places: int
    dim: int


class TrainRequest(BaseModel):
    manifest_path: str
    out_dir: str
    composer: Literal["grouping", "fusion", "recurrent"]
    margin: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 5
    triplets_per_epoch: int = 2000
    seed: int = 0
    frame_substitution_prob: float = 0.5
    dropout_rate: float = 0.5
    n: int = 3
    descriptor_size: int = 128


class TrainResponse(BaseModel):
    checkpoint_path: str
    loss_csv_path: str
    steps: int
    first_loss: Optional[float]
    final_loss: Optional[float]


class IndexRequest(BaseModel):
    manifest_path: str
    out_path: str
    composer: ComposerKind = "single"
    checkpoint_path: Optional[str] = None
    condition: int = 0
    n: int = 3
    stride: int = 1


class IndexResponse(BaseModel):
    index_path: str
    entries: int
    descriptor_size: int


class QueryRequest(BaseModel):
    manifest_path: str
    index_path: str
    out_csv: str
    composer: ComposerKind = "single"
    checkpoint_path: Optional[str] = None
    condition: int = 1
    n: int = 3


class QueryResponse(BaseModel):
    csv_path: str
    num_queries: int
    precision: float


class EvalRequest(BaseModel):
    manifest_path: str
    out_dir: str
    checkpoints: dict[str, str] = Field(default_factory=dict)
    query_condition: int = 1
    reference_condition: int = 0
    n: int = 3
    rs_seed: int = 0
    rs_draws: int = 1
    with_condition_matrix: bool = False
    matrix_composer: ComposerKind = "single"


class EvalResponse(BaseModel):
    report_path: str
    csv_path: str
    report: dict


class BenchRequest(BaseModel):
    out_csv: str
    ks: list[int] = Field(default_factory=lambda: [128, 384])
    ns: list[int] = Field(default_factory=lambda: [10_000, 100_000])
    trials: int = 10
    seed: int = 0


class BenchRow(BaseModel):
    k: int
    N: int
    trials: int
    mean_ms: float
    stddev_ms: float


class BenchResponse(BaseModel):
    csv_path: str
    rows: list[BenchRow]


class SeqslamRequest(BaseModel):
    manifest_path: str
    out_csv: str
    query_condition: int = 1
    reference_condition: int = 0
    seq_len: int = 3
    v_min: float = 0.8
    v_max: float = 1.2
    v_steps: int = 5
    enhance_window: int = 10
    reverse_query: bool = False


class SeqslamResponse(BaseModel):
    csv_path: str
    num_queries: int
    precision: float


class InspectRequest(BaseModel):
    path: str


class ConditionInfo(BaseModel):
    condition_id: int
    name: str
    frames: int


class InspectResponse(BaseModel):
    dim: int
    tolerance: int
    conditions: list[ConditionInfo]
    warnings: list[str]


class ErrorBody(BaseModel):
    error: str
    message: str
