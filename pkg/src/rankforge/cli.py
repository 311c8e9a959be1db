"""Command line entry point for the pipeline.

Subcommands cover each stage (ingest, cluster, select, generate, mine,
build), a chained `run-all`, and `eval` for scoring retrieval runs. Stage
outputs land in a working directory under fixed names, so a pipeline can
be resumed from any stage by rerunning only the later commands.

Configuration resolves in three layers: built-in defaults, then a flat
``key=value`` config file (``--config``), then command line flags. The
effective configuration is echoed into the manifest at the build stage.

Exit codes: 0 success, 1 usage error, 2 data error, 3 endpoint error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cluster as clustering
from . import corpus, dataset, embeddings, evaluation, mine, querygen, selection
from .errors import (
    AlignmentError,
    DataError,
    EndpointError,
    FormatError,
    InvalidConfigError,
    RankforgeError,
    UsageError,
)

log = logging.getLogger(__name__)

COLLECTION_FILE = "collection.jsonl"
EMBEDDINGS_FILE = "embeddings.bin"
KMEANS_FILE = "kmeans.bin"
SELECTED_FILE = "selected.jsonl"
QUERIES_FILE = "queries.jsonl"
INDEX_FILE = "index.bin"
PAIRS_FILE = "pairs.jsonl"
ELBOW_FILE = "elbow.json"
TRIPLES_FILE = "triples.tsv"
POINTWISE_FILE = "pointwise.jsonl"
MANIFEST_FILE = "manifest.json"


@dataclasses.dataclass
class PipelineConfig:
    """Every tunable of the pipeline with its default."""

    min_chars: int = 300
    hash_embed_dim: int = 256
    clusters: int = 1000
    kmeans_restarts: int = 3
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-4
    sample_size: int = 1000
    softmax_temperature: float = 1.0
    mmr_lambda: float = 1.0
    sample_rounds: int = 5
    shots: int = 3
    decode_temperature: float = 0.0
    max_new_tokens: int = 64
    max_doc_chars: int = 2048
    first_stage_hits: int = 100
    num_negatives: int = 4
    bm25_k1: float = 0.9
    bm25_b: float = 0.4
    seed: int = 42
    threads: int = 4
    max_retries: int = 3
    request_timeout: float = 30.0
    endpoint: str = "mock:deterministic"
    model: str = querygen.DEFAULT_MODEL
    ndcg_k: int = 10
    recall_k: int = 100


def _parse_config_file(path: str | Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise FormatError("expected key=value", line_number)
            key, _, value = stripped.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def _apply_entries(cfg: PipelineConfig, entries: dict[str, str], source: str) -> None:
    for key, raw in entries.items():
        if not hasattr(cfg, key):
            raise InvalidConfigError(f"{source}: unknown config key {key!r}")
        current = getattr(cfg, key)
        try:
            if isinstance(current, bool):
                value: object = raw.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            else:
                value = raw
        except ValueError:
            raise InvalidConfigError(f"{source}: invalid value for {key}: {raw!r}") from None
        setattr(cfg, key, value)


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults, then config file entries, then explicit flags."""
    cfg = PipelineConfig()
    config_path = getattr(args, "config", None)
    if config_path:
        _apply_entries(cfg, _parse_config_file(config_path), str(config_path))
    for f in dataclasses.fields(PipelineConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map argparse failures onto exit code 1
        raise UsageError(message)


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise DataError(f"{path} not found; run `rankforge {producer}` first")
    return path


def _workdir(args: argparse.Namespace, create: bool = False) -> Path:
    workdir = Path(args.workdir)
    if create:
        workdir.mkdir(parents=True, exist_ok=True)
    elif not workdir.is_dir():
        raise DataError(f"working directory {workdir} does not exist; run `rankforge ingest` first")
    return workdir


def _load_ingested(workdir: Path) -> tuple[corpus.Collection, embeddings.EmbeddingMatrix]:
    coll = corpus.load_collection(_require(workdir / COLLECTION_FILE, "ingest"))
    matrix = embeddings.load_embeddings(_require(workdir / EMBEDDINGS_FILE, "ingest"))
    ids_path = workdir / (EMBEDDINGS_FILE + ".ids")
    ids = embeddings.load_ids(ids_path) if ids_path.exists() else None
    embeddings.check_alignment(coll, matrix, ids)
    return coll, matrix


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    workdir = _workdir(args, create=True)
    raw = corpus.load_collection(args.input)
    coll = corpus.filter_min_length(raw, cfg.min_chars)
    if len(coll) == 0:
        raise DataError(
            f"no documents of {len(raw)} pass the {cfg.min_chars}-character length filter"
        )
    corpus.save_collection(coll, workdir / COLLECTION_FILE)

    if getattr(args, "embeddings", None):
        matrix = _align_external_embeddings(args.embeddings, coll)
    else:
        matrix = embeddings.embed_collection(coll, cfg.hash_embed_dim, cfg.seed)
    embeddings.save_embeddings(matrix, workdir / EMBEDDINGS_FILE, ids=[d.id for d in coll])
    print(f"ingest: kept {len(coll)} of {len(raw)} documents, embedding dim {matrix.d}")
    return 0


def _align_external_embeddings(path: str, coll: corpus.Collection) -> embeddings.EmbeddingMatrix:
    """Load user-provided vectors and line them up with the filtered collection."""
    matrix = embeddings.load_embeddings(path)
    ids_path = Path(str(path) + ".ids")
    if not ids_path.exists():
        embeddings.check_alignment(coll, matrix)
        return matrix
    ids = embeddings.load_ids(ids_path)
    if len(ids) != matrix.n:
        raise AlignmentError(f"sidecar has {len(ids)} ids for {matrix.n} embedding rows")
    id_to_row: dict[str, int] = {}
    for i, row_id in enumerate(ids):
        if row_id in id_to_row:
            raise AlignmentError(f"duplicate id {row_id!r} in embedding sidecar")
        id_to_row[row_id] = i
    rows = np.zeros((len(coll), matrix.d), dtype=np.float32)
    for i, doc in enumerate(coll):
        if doc.id not in id_to_row:
            raise AlignmentError(f"no embedding row for document {doc.id!r}")
        rows[i] = matrix.data[id_to_row[doc.id]]
    return embeddings.EmbeddingMatrix(data=rows)


def cmd_cluster(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    workdir = _workdir(args)
    coll, matrix = _load_ingested(workdir)

    if getattr(args, "k_scan", None):
        k_values = _parse_k_scan(args.k_scan)
        base = clustering.ClusteringConfig(
            K=k_values[0], seed=cfg.seed, max_iters=cfg.kmeans_max_iters,
            tol=cfg.kmeans_tol, restarts=cfg.kmeans_restarts,
        )
        result = clustering.elbow_scan(matrix, k_values, base)
        with open(workdir / ELBOW_FILE, "w", encoding="utf-8") as fh:
            json.dump(
                {"points": [{"k": k, "sse": sse} for k, sse in result.points],
                 "knee": result.knee},
                fh, indent=2,
            )
            fh.write("\n")
        print(f"{'K':>6} {'cosine_sse':>14}")
        for k, sse in result.points:
            print(f"{k:>6} {sse:>14.4f}")
        if result.knee is not None:
            print(f"suggested K (elbow): {result.knee}")
        else:
            print("no elbow suggestion (need at least 3 scanned K values)")
        return 0

    ccfg = clustering.ClusteringConfig(
        K=cfg.clusters, seed=cfg.seed, max_iters=cfg.kmeans_max_iters,
        tol=cfg.kmeans_tol, restarts=cfg.kmeans_restarts,
    )
    model = clustering.kmeans_fit(matrix, ccfg)
    clustering.save_model(model, workdir / KMEANS_FILE)
    print(
        f"cluster: K={model.K} inertia={model.inertia:.6f} "
        f"iters={len(model.inertia_history)} converged={model.converged} "
        f"(docs={len(coll)})"
    )
    return 0


def _parse_k_scan(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"--k-scan expects comma-separated integers, got {text!r}") from None
    if not values:
        raise UsageError("--k-scan needs at least one K")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise UsageError("--k-scan values must be strictly increasing")
    return values


def cmd_select(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    workdir = _workdir(args)
    coll, matrix = _load_ingested(workdir)
    model = clustering.load_model(_require(workdir / KMEANS_FILE, "cluster"))
    if len(model.assignments) != len(coll):
        raise AlignmentError(
            f"model covers {len(model.assignments)} documents, collection has {len(coll)}"
        )
    scfg = selection.SamplingConfig(
        sample_size=cfg.sample_size, seed=cfg.seed, temperature=cfg.softmax_temperature,
        rounds=cfg.sample_rounds, mmr_lambda=cfg.mmr_lambda,
    )
    selected = selection.select_representatives(matrix, model, scfg)
    selection.save_selected(selected, coll, workdir / SELECTED_FILE)
    print(f"select: {len(selected)} documents across {model.K} clusters")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    workdir = _workdir(args)
    coll = corpus.load_collection(_require(workdir / COLLECTION_FILE, "ingest"))
    rows = selection.load_selected(_require(workdir / SELECTED_FILE, "select"))

    template_path = getattr(args, "template", None) or querygen.builtin_template_path()
    examples_path = getattr(args, "examples", None) or querygen.builtin_examples_path("wikipedia")
    template = querygen.load_template(template_path)
    examples = querygen.load_examples(examples_path)
    settings = querygen.GenerationSettings(
        temperature=cfg.decode_temperature, max_new_tokens=cfg.max_new_tokens,
        max_doc_chars=cfg.max_doc_chars, shots=cfg.shots, concurrency=cfg.threads,
        max_retries=cfg.max_retries, request_timeout=cfg.request_timeout,
    )
    settings.validate()
    if len(examples) < settings.shots:
        raise DataError(f"{examples_path} has {len(examples)} examples, need {settings.shots}")
    examples = examples[: settings.shots]

    prompts = []
    for row in rows:
        doc = coll.get(row["doc_id"])
        if doc is None:
            raise DataError(f"selected document {row['doc_id']!r} missing from collection")
        prompts.append(
            querygen.QueryPrompt(
                doc_id=doc.id,
                text=querygen.build_prompt(template, examples, corpus.render_document(doc), settings),
            )
        )
    client = querygen.make_client(cfg.endpoint, model=cfg.model)
    queries = querygen.generate_queries(client, prompts, settings)
    querygen.save_queries(queries, workdir / QUERIES_FILE)
    dropped = len(prompts) - len(queries)
    print(f"generate: {len(queries)} queries from {len(prompts)} prompts ({dropped} dropped)")
    return 0


def cmd_mine(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    workdir = _workdir(args)
    coll = corpus.load_collection(_require(workdir / COLLECTION_FILE, "ingest"))
    queries = querygen.load_queries(_require(workdir / QUERIES_FILE, "generate"))

    index = mine.build_index(coll, k1=cfg.bm25_k1, b=cfg.bm25_b)
    mine.save_index(index, workdir / INDEX_FILE)
    mcfg = mine.MiningConfig(first_stage_hits=cfg.first_stage_hits, num_negatives=cfg.num_negatives)
    pairs = mine.assemble_pairs(index, coll, queries, mcfg)
    mine.save_pairs(pairs, workdir / PAIRS_FILE)
    shortfalls = sum(1 for p in pairs if p.shortfall)
    negatives = sum(len(p.negative_doc_ids) for p in pairs)
    print(f"mine: {len(pairs)} pairs, {negatives} negatives, {shortfalls} under quota")
    return 0


def cmd_build(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    workdir = _workdir(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    coll = corpus.load_collection(_require(workdir / COLLECTION_FILE, "ingest"))
    matrix = embeddings.load_embeddings(_require(workdir / EMBEDDINGS_FILE, "ingest"))
    model = clustering.load_model(_require(workdir / KMEANS_FILE, "cluster"))
    rows = selection.load_selected(_require(workdir / SELECTED_FILE, "select"))
    queries = querygen.load_queries(_require(workdir / QUERIES_FILE, "generate"))
    pairs = mine.load_pairs(_require(workdir / PAIRS_FILE, "mine"))
    _require(workdir / INDEX_FILE, "mine")

    triples = dataset.write_triples(pairs, coll, outdir / TRIPLES_FILE)
    pointwise = dataset.write_pointwise(pairs, coll, outdir / POINTWISE_FILE)

    manifest = dataset.DatasetManifest(
        config=dataclasses.asdict(cfg),
        counts={
            "documents": len(coll),
            "embedding_dim": matrix.d,
            "clusters": model.K,
            "selected": len(rows),
            "queries": len(queries),
            "pairs": len(pairs),
            "negatives": sum(len(p.negative_doc_ids) for p in pairs),
            "shortfall_pairs": sum(1 for p in pairs if p.shortfall),
            "triples": triples,
            "pointwise_records": pointwise,
        },
    )
    workdir_as_given = Path(args.workdir)
    outdir_as_given = Path(args.out)
    manifest.add_artifact("collection", workdir_as_given / COLLECTION_FILE)
    manifest.add_artifact("embeddings", workdir_as_given / EMBEDDINGS_FILE)
    manifest.add_artifact("embedding_ids", workdir_as_given / (EMBEDDINGS_FILE + ".ids"))
    manifest.add_artifact("kmeans_model", workdir_as_given / KMEANS_FILE)
    manifest.add_artifact("selected", workdir_as_given / SELECTED_FILE)
    manifest.add_artifact("queries", workdir_as_given / QUERIES_FILE)
    manifest.add_artifact("bm25_index", workdir_as_given / INDEX_FILE)
    manifest.add_artifact("pairs", workdir_as_given / PAIRS_FILE)
    manifest.add_artifact("triples", outdir_as_given / TRIPLES_FILE)
    manifest.add_artifact("pointwise", outdir_as_given / POINTWISE_FILE)
    dataset.write_manifest(manifest, outdir / MANIFEST_FILE)
    print(f"build: {triples} triples, {pointwise} pointwise records -> {outdir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    run = evaluation.load_run(args.run)
    qrels = evaluation.load_qrels(args.qrels)
    report = evaluation.evaluate(run, qrels, ndcg_k=cfg.ndcg_k, recall_k=cfg.recall_k)
    sys.stdout.write(evaluation.format_report(report))
    if getattr(args, "report", None):
        evaluation.save_report(report, args.report)
    return 0


def cmd_run_all(args: argparse.Namespace) -> int:
    for step in (cmd_ingest, cmd_cluster, cmd_select, cmd_generate, cmd_mine, cmd_build):
        code = step(args)
        if code != 0:
            return code
    return 0


def _add_config_flags(parser: argparse.ArgumentParser, names: list[str]) -> None:
    """Expose selected PipelineConfig fields as flags (default None = not set)."""
    types = {f.name: type(getattr(PipelineConfig(), f.name)) for f in dataclasses.fields(PipelineConfig)}
    for name in names:
        flag = "--" + name.replace("_", "-")
        parser.add_argument(flag, dest=name, type=types[name], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rankforge", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def stage(name: str, help_text: str, needs_workdir: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="flat key=value config file")
        if needs_workdir:
            p.add_argument("--workdir", required=True, help="stage artifact directory")
        _add_config_flags(p, ["seed"])
        return p

    p = stage("ingest", "filter a JSONL corpus and embed it")
    p.add_argument("--input", required=True, help="corpus JSONL with _id/title/text")
    p.add_argument("--embeddings", default=None, help="precomputed embedding file (.ids sidecar honored)")
    _add_config_flags(p, ["min_chars", "hash_embed_dim"])
    p.set_defaults(func=cmd_ingest)

    p = stage("cluster", "fit spherical k-means on the ingested embeddings")
    p.add_argument("--k-scan", dest="k_scan", default=None,
                   help="comma-separated K values; prints SSE per K and the elbow")
    _add_config_flags(p, ["clusters", "kmeans_restarts", "kmeans_max_iters", "kmeans_tol"])
    p.set_defaults(func=cmd_cluster)

    p = stage("select", "sample and diversify representative documents")
    _add_config_flags(p, ["sample_size", "softmax_temperature", "mmr_lambda", "sample_rounds"])
    p.set_defaults(func=cmd_select)

    p = stage("generate", "create one synthetic query per selected document")
    p.add_argument("--template", default=None, help="prompt template JSON")
    p.add_argument("--examples", default=None, help="few-shot examples JSONL")
    _add_config_flags(p, ["endpoint", "model", "shots", "decode_temperature",
                          "max_new_tokens", "max_doc_chars", "threads",
                          "max_retries", "request_timeout"])
    p.set_defaults(func=cmd_generate)

    p = stage("mine", "index the collection and mine hard negatives")
    _add_config_flags(p, ["first_stage_hits", "num_negatives", "bm25_k1", "bm25_b"])
    p.set_defaults(func=cmd_mine)

    p = stage("build", "emit training files and the manifest")
    p.add_argument("--out", required=True, help="output directory for training files")
    p.set_defaults(func=cmd_build)

    p = stage("eval", "score a TREC run against qrels", needs_workdir=False)
    p.add_argument("--run", required=True, help="TREC 6-column run file")
    p.add_argument("--qrels", required=True, help="TREC 4-column qrels file")
    p.add_argument("--report", default=None, help="also write a JSON report here")
    _add_config_flags(p, ["ndcg_k", "recall_k"])
    p.set_defaults(func=cmd_eval)

    p = stage("run-all", "run ingest through build in one go")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--template", default=None)
    p.add_argument("--examples", default=None)
    _add_config_flags(p, [f.name for f in dataclasses.fields(PipelineConfig) if f.name != "seed"])
    p.set_defaults(func=cmd_run_all)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            print("error: a subcommand is required", file=sys.stderr)
            return 1
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except EndpointError as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return 3
    except RankforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
