"""Evaluation protocol: precision at recall 1.

Every n-frame query window retrieves exactly one nearest neighbor from the
reference index; the retrieval is correct iff the query window and the
retrieved window contain frames of a common place (original place ids, so
the check survives reversal and speed perturbations).  The experiment
suite runs the unperturbed test (NT), the reversed-query test (RG) and the
independently speed-perturbed test (RS) and summarizes each composer by
mean and population stddev across the three.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import FeatureStore, PlaceConvention, Traversal, same_place_ids, windows
from .composers import Pipeline, make_pipeline
from .retrieval import PlaceIndex, build_index, query_nn
from .synth import WorldConfig, generate_world, perturb_reverse, perturb_speed
from .train import TrainConfig, train_composer

EXPERIMENTS = ("NT", "RG", "RS")


@dataclass(frozen=True)
class QueryOutcome:
    query_start: int
    matched_start: int
    d2: float
    correct: bool


@dataclass
class EvalResult:
    precision: float
    outcomes: list[QueryOutcome]


def evaluate(index: PlaceIndex, query_trav: Traversal, pipeline: Pipeline,
             convention: PlaceConvention) -> EvalResult:
    """Retrieve one entry per query window; fraction of correct matches."""
    n = pipeline.n
    starts = list(windows(len(query_trav), n))
    if not starts:
        raise ValueError(f"query traversal has {len(query_trav)} frames, needs >= {n}")
    wins = np.stack([query_trav.features[s:s + n] for s in starts]).astype(np.float64)
    descs = pipeline.describe_batch(wins)
    outcomes = []
    correct = 0
    for s, q in zip(starts, descs):
        entry, d2 = query_nn(index, q)
        ok = same_place_ids(query_trav.window_place_ids(s, n), entry.place_ids,
                            convention.tolerance)
        correct += ok
        outcomes.append(QueryOutcome(s, entry.start_frame_id, d2, ok))
    return EvalResult(correct / len(starts), outcomes)


@dataclass
class ComposerReport:
    kind: str
    descriptor_size: int
    precisions: dict[str, float] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.precisions.values())))

    @property
    def stddev(self) -> float:
        return float(np.std(list(self.precisions.values())))  # population


@dataclass
class EvalReport:
    n: int
    tolerance: int
    query_condition: int
    reference_condition: int
    composers: dict[str, ComposerReport]
    condition_matrix: dict[str, float] | None = None

    def to_dict(self) -> dict:
        doc = {
            "schema": "eval-report/1",
            "n": self.n,
            "tolerance": self.tolerance,
            "query_condition": self.query_condition,
            "reference_condition": self.reference_condition,
            "experiments": list(EXPERIMENTS),
            "composers": {
                kind: {
                    "descriptor_size": rep.descriptor_size,
                    "precisions": dict(sorted(rep.precisions.items())),
                    "mean": rep.mean,
                    "stddev": rep.stddev,
                }
                for kind, rep in sorted(self.composers.items())
            },
        }
        if self.condition_matrix is not None:
            doc["condition_matrix"] = dict(sorted(self.condition_matrix.items()))
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        lines = ["composer,experiment,query_condition,reference_condition,precision"]
        for kind in sorted(self.composers):
            rep = self.composers[kind]
            for exp in EXPERIMENTS:
                if exp in rep.precisions:
                    lines.append(
                        f"{kind},{exp},{self.query_condition},"
                        f"{self.reference_condition},{rep.precisions[exp]!r}"
                    )
        return "\n".join(lines) + "\n"


def run_experiment_suite(store: FeatureStore, pipelines: dict[str, Pipeline],
                         query_condition: int, reference_condition: int,
                         convention: PlaceConvention | None = None,
                         rs_seed: int = 0, rs_draws: int = 1) -> EvalReport:
    """NT, RG (query reversed) and RS (both sides independently
    speed-perturbed) for every pipeline.

    The RS precision is averaged over `rs_draws` independent perturbation
    draws; more than one draw tames the sampling variance of short
    traversals.
    """
    if query_condition == reference_condition:
        raise ValueError("query and reference conditions must differ")
    if rs_draws < 1:
        raise ValueError("rs_draws must be >= 1")
    convention = convention if convention is not None else store.convention

    rg_store = perturb_reverse(store, query_condition)
    seeds = np.random.SeedSequence(rs_seed).spawn(2 * rs_draws)
    rs_stores = []
    for d in range(rs_draws):
        st = perturb_speed(store, reference_condition,
                           rng=np.random.default_rng(seeds[2 * d]))
        st = perturb_speed(st, query_condition,
                           rng=np.random.default_rng(seeds[2 * d + 1]))
        rs_stores.append(st)

    setups = {"NT": [store], "RG": [rg_store], "RS": rs_stores}
    composers = {}
    for kind, pipeline in pipelines.items():
        rep = ComposerReport(kind, pipeline.output_dim)
        for exp, stores in setups.items():
            vals = []
            for st in stores:
                index = build_index(st.get(reference_condition), pipeline)
                result = evaluate(index, st.get(query_condition), pipeline, convention)
                vals.append(result.precision)
            rep.precisions[exp] = float(np.mean(vals))
        composers[kind] = rep
    return EvalReport(
        n=max(p.n for p in pipelines.values()),
        tolerance=convention.tolerance,
        query_condition=query_condition,
        reference_condition=reference_condition,
        composers=composers,
    )


def standard_benchmark(seed: int, rs_draws: int = 3) -> EvalReport:
    """Canonical desk-scale benchmark: 200 places, 64-d features, two
    conditions with moderate shift and noise; trains all three composers
    and runs the full suite against the untrained single-frame baseline.

    The RS precision averages `rs_draws` perturbation draws because a
    200-frame traversal is too short for one draw to be representative.
    """
    world = generate_world(WorldConfig(
        num_places=200, dim=64, conditions=2,
        transform_scale=0.5, noise_scale=0.1, rng_seed=seed, tolerance=0,
    ))
    recipes = {
        "grouping": TrainConfig(margin=0.1, learning_rate=0.05, epochs=8,
                                triplets_per_epoch=2000, rng_seed=seed, n=3,
                                descriptor_size=128),
        "fusion": TrainConfig(margin=0.1, learning_rate=0.05, epochs=8,
                              triplets_per_epoch=2000, rng_seed=seed, n=3,
                              descriptor_size=128),
        "recurrent": TrainConfig(margin=0.1, learning_rate=0.1, epochs=8,
                                 triplets_per_epoch=2000, rng_seed=seed, n=3,
                                 descriptor_size=128, dropout_rate=0.1,
                                 frame_substitution_prob=0.5),
    }
    pipelines = {"single": make_pipeline("single", 1, world.dim)}
    for kind, cfg in recipes.items():
        result = train_composer(kind, world, cfg)
        pipelines[kind] = make_pipeline(kind, 3, world.dim, result.params)
    return run_experiment_suite(world, pipelines, query_condition=1,
                                reference_condition=0, rs_seed=seed,
                                rs_draws=rs_draws)


def condition_matrix(store: FeatureStore, pipeline: Pipeline,
                     convention: PlaceConvention | None = None) -> dict[str, float]:
    """Precision for every ordered condition pair, diagonal excluded.

    Keys are "query,reference" strings so the table serializes directly.
    """
    convention = convention if convention is not None else store.convention
    conds = sorted(store.condition_ids)
    if len(conds) < 2:
        raise ValueError("need at least two conditions")
    table = {}
    for ref in conds:
        index = build_index(store.get(ref), pipeline)
        for query in conds:
            if query == ref:
                continue
            result = evaluate(index, store.get(query), pipeline, convention)
            table[f"{query},{ref}"] = result.precision
    return table


def condition_matrix_csv(table: dict[str, float]) -> str:
    lines = ["query_condition,reference_condition,precision"]
    for key in sorted(table):
        q, r = key.split(",")
        lines.append(f"{q},{r},{table[key]!r}")
    return "\n".join(lines) + "\n"


def query_csv(result: EvalResult) -> str:
    lines = ["query_start,matched_start,d2,correct"]
    for o in result.outcomes:
        lines.append(f"{o.query_start},{o.matched_start},{o.d2!r},{int(o.correct)}")
    return "\n".join(lines) + "\n"
