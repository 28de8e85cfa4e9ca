"""Command-line workflows: load/inspect graphs, run seeks, evaluate
queries, train and evaluate models, and run the benchmark and
verification suites.

Exit codes: 0 success, 2 input errors, 3 scorer/training contract
violations, 4 property failures.  All randomness flows from --seed, which
is recorded in a leading "# seed=" line of every report file; report files
are comma-separated with a header row.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import epfo, verification
from .coalesce import EntitySet, path_count_csv_rows, path_count_stats
from .kg import TripleParseError, load_triples, save_triples
from .refiner import RefinerModel, load_refiner, save_refiner, train_refiner
from .scorer import (
    FeaturizedScorer,
    OracleScorer,
    QAExample,
    ScorerContractError,
    TrainingError,
    UniformScorer,
    load_qa_dataset,
    load_scorer,
    save_qa_dataset,
    save_scorer,
    train,
    weak_labels,
)
from .seeker import seek
from .synthbench import (
    SynthSpec,
    bench_preprocessing,
    bench_throughput,
    build_refine_episodes,
    expected_hits_at_1,
    gen_random_graph,
    gen_synthetic,
    precision_recall_at_k,
    refined_hits_at_1,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONTRACT = 3
EXIT_PROPERTY = 4

ENV_OUT_DIR = "RELSEEK_OUT_DIR"


class InputDataError(ValueError):
    """Bad user input: missing files, unknown names, empty datasets."""


# ----------------------------------------------------------------------
# shared helpers
# ----------------------------------------------------------------------


def _load_graph(args) -> "KnowledgeGraph":
    try:
        return load_triples(args.graph, add_inverses=args.add_inverses)
    except FileNotFoundError:
        raise InputDataError(f"graph file not found: {args.graph}") from None


def _entities(g, names: str) -> EntitySet:
    ids = []
    for name in names.split(","):
        name = name.strip()
        if not name:
            continue
        try:
            ids.append(g.entity_id(name))
        except KeyError:
            raise InputDataError(f"unknown entity {name!r}") from None
    if not ids:
        raise InputDataError("no entities given")
    return EntitySet(ids)


def _gold_sequences(g, text: str):
    seqs = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        rels = [0]
        for name in part.split():
            try:
                rels.append(g.relation_id(name))
            except KeyError:
                raise InputDataError(f"unknown relation {name!r}") from None
        seqs.append(tuple(rels))
    if not seqs:
        raise InputDataError("no gold sequences given")
    return seqs


def _oracle_from_examples(g, examples, max_len: int) -> OracleScorer:
    by_question = {}
    for ex in examples:
        golds = ex.gold_sequences or tuple(weak_labels(g, ex, max_len))
        by_question[tuple(ex.question)] = golds
    return OracleScorer(by_question=by_question)


def _make_scorer(args, g, examples=None):
    kind = args.scorer
    if kind == "uniform":
        return UniformScorer()
    if kind == "oracle":
        if getattr(args, "gold", None):
            return OracleScorer(_gold_sequences(g, args.gold))
        if examples is not None:
            return _oracle_from_examples(g, examples, getattr(args, "max_len", 3))
        raise InputDataError("oracle scorer needs --gold or a dataset")
    if kind == "featurized":
        if not getattr(args, "checkpoint", None):
            raise InputDataError("featurized scorer needs --checkpoint")
        try:
            return load_scorer(args.checkpoint)
        except FileNotFoundError:
            raise InputDataError(f"checkpoint not found: {args.checkpoint}") from None
    raise InputDataError(f"unknown scorer kind {kind!r}")


def _load_dataset(args, g):
    try:
        examples = load_qa_dataset(args.dataset, g)
    except FileNotFoundError:
        raise InputDataError(f"dataset not found: {args.dataset}") from None
    except KeyError as e:
        raise InputDataError(str(e)) from None
    if not examples:
        raise InputDataError("0 examples in dataset")
    return examples


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get(ENV_OUT_DIR) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_report(path: Path, seed: int, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# seed={seed}\n")
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")
    print(f"wrote {path}")


def _seq_names(g, seq) -> str:
    return " ".join(g.relation_name(r) for r in seq)


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def cmd_load(args) -> int:
    g = _load_graph(args)
    print(g.stats_line())
    return EXIT_OK


def cmd_seek(args) -> int:
    g = _load_graph(args)
    scorer = _make_scorer(args, g)
    anchors = _entities(g, args.anchors)
    question = tuple(args.question.split())
    res = seek(
        g,
        anchors,
        scorer,
        question=question,
        beam_width=args.beam_width,
        max_steps=args.max_steps,
        top_k=args.top_k,
    )
    print("rank,nll,sequence,candidate_count")
    for i, entry in enumerate(res.entries, 1):
        print(f"{i},{entry.nll:.6f},{_seq_names(g, entry.seq)},{len(entry.frontier)}")
    if len(res.entries) < args.top_k:
        print(
            f"warning: only {len(res.entries)} sequence(s) found (k={args.top_k})",
            file=sys.stderr,
        )
    print(f"scorer_calls={res.scorer_calls}")
    if args.dump_candidates:
        names = sorted(g.entity_name(v) for v in res.candidates)
        print("candidates: " + " ".join(names))
    return EXIT_OK


def cmd_query(args) -> int:
    g = _load_graph(args)
    try:
        queries = epfo.load_query_file(args.queries, g)
    except FileNotFoundError:
        raise InputDataError(f"query file not found: {args.queries}") from None
    for i, q in enumerate(queries):
        dnf = epfo.to_dnf(q)
        report = epfo.validate(dnf)
        if not report.ok:
            raise InputDataError(f"query {i} is invalid: {report.first_reason()}")
        answers = epfo.evaluate(g, dnf)
        names = sorted(g.entity_name(v) for v in answers)
        print(f"{i}\t{' '.join(names)}")
    return EXIT_OK


def cmd_cover(args) -> int:
    g = _load_graph(args)
    try:
        queries = epfo.load_query_file(args.queries, g)
    except FileNotFoundError:
        raise InputDataError(f"query file not found: {args.queries}") from None
    print("query_index,seq_index,sequence")
    for i, q in enumerate(queries):
        dnf = epfo.to_dnf(q)
        report = epfo.validate(dnf)
        if not report.ok:
            raise InputDataError(f"query {i} is invalid: {report.first_reason()}")
        for j, seq in enumerate(epfo.cover_sequences(dnf)):
            print(f"{i},{j},{_seq_names(g, seq)}")
    return EXIT_OK


def cmd_labels(args) -> int:
    g = _load_graph(args)
    examples = _load_dataset(args, g)
    print("example_index,sequence")
    empty = 0
    for i, ex in enumerate(examples):
        seqs = weak_labels(g, ex, args.max_len)
        if not seqs:
            empty += 1
            print(f"{i},")
            continue
        for seq in seqs:
            print(f"{i},{_seq_names(g, seq)}")
    if empty:
        print(f"{empty} example(s) unanswerable within {args.max_len} hops", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    g = _load_graph(args)
    examples = _load_dataset(args, g)
    model = FeaturizedScorer(g.relation_names(), dim=args.dim, seed=args.seed)
    result = train(
        model,
        g,
        examples,
        epochs=args.epochs,
        lr=args.lr,
        p_drop_init=args.p_drop,
        seed=args.seed,
        weak_label_max_len=args.max_len,
    )
    save_scorer(model, args.model_out)
    out = _out_dir(args)
    _write_report(
        out / "loss_curve.csv",
        args.seed,
        "epoch,loss",
        (f"{i},{loss:.6f}" for i, loss in enumerate(result.losses)),
    )
    print(
        f"trained {args.epochs} epochs, final loss {result.losses[-1]:.4f}, "
        f"skipped {result.skipped_examples} examples; checkpoint at {args.model_out}"
    )
    return EXIT_OK


def cmd_train_refiner(args) -> int:
    g = _load_graph(args)
    examples = _load_dataset(args, g)
    scorer = _make_scorer(args, g, examples)
    episodes = build_refine_episodes(
        g,
        examples,
        scorer,
        beam_width=args.beam_width,
        max_steps=args.max_steps,
        top_k=args.top_k,
    )
    if not episodes:
        raise InputDataError("no refinable episodes (all candidate sets empty)")
    model = RefinerModel(
        g.num_relations, dim=args.dim, rounds=args.rounds, seed=args.seed
    )
    result = train_refiner(model, episodes, epochs=args.epochs, lr=args.lr, seed=args.seed)
    save_refiner(model, args.refiner_out)
    final = result.losses[-1] if result.losses else float("nan")
    print(
        f"trained refiner on {len(episodes)} episodes "
        f"({result.skipped_episodes} skipped), final loss {final:.4f}; "
        f"checkpoint at {args.refiner_out}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    g = _load_graph(args)
    examples = _load_dataset(args, g)
    scorer = _make_scorer(args, g, examples)
    unrefined = expected_hits_at_1(
        g,
        examples,
        scorer,
        beam_width=args.beam_width,
        max_steps=args.max_steps,
        top_k=args.top_k,
    )
    print(f"hits@1_unrefined={unrefined:.4f}")
    if args.refiner_checkpoint:
        try:
            model = load_refiner(args.refiner_checkpoint)
        except FileNotFoundError:
            raise InputDataError(
                f"refiner checkpoint not found: {args.refiner_checkpoint}"
            ) from None
        refined = refined_hits_at_1(
            g,
            examples,
            scorer,
            model,
            beam_width=args.beam_width,
            max_steps=args.max_steps,
            top_k=args.top_k,
        )
        print(f"hits@1_refined={refined:.4f}")
    return EXIT_OK


def _synthetic_examples(n_entities, n_relations, seed, n_examples, hops=2):
    spec = SynthSpec(
        n_entities=n_entities,
        n_relations=n_relations,
        seed=seed,
        answer_hops=hops,
        n_examples=n_examples,
    )
    return gen_synthetic(spec)


def _throughput_rows(rows):
    return (
        f"{r.config},{r.queries_per_second:.2f},{r.scorer_calls_mean:.2f},{r.wall_time:.6f}"
        for r in rows
    )


def cmd_bench(args) -> int:
    out = _out_dir(args)
    seed = args.seed
    if args.emit_plots_data:
        _bench_entities_sweep(args, out)
        _bench_relations_sweep(args, out)
        _bench_edges_sweep(args, out)
        _bench_precision_recall(args, out)
        _bench_path_counts(args, out)
        return EXIT_OK

    # single throughput run on a provided or synthetic graph
    if args.graph:
        g = _load_graph(args)
        examples = _load_dataset(args, g)
        scorer = _make_scorer(args, g, examples)
    else:
        g, examples = _synthetic_examples(args.entities, args.relations, seed, 50)
        scorer = _oracle_from_examples(g, examples, args.max_steps)
    rows = bench_throughput(
        g,
        examples,
        scorer,
        beam_width=args.beam_width,
        max_steps=args.max_steps,
        top_k=args.top_k,
        warmup=args.warmup,
        iters=args.iters,
    )
    if args.workers > 1:
        rows = rows + _parallel_throughput(args, g, examples, scorer)
    _write_report(
        out / "throughput.csv",
        seed,
        "config,queries_per_second,scorer_calls_mean,wall_time",
        _throughput_rows(rows),
    )
    pre_rows = bench_preprocessing(g, examples[: min(len(examples), 10)])
    _write_report(
        out / "preprocessing.csv",
        seed,
        "method,example_index,wall_time,touched",
        (f"{r.method},{r.example_index},{r.wall_time:.6f},{r.touched}" for r in pre_rows),
    )
    return EXIT_OK


def _parallel_throughput(args, g, examples, scorer):
    """Optional worker-pool mode; reported separately from the sequential
    metric, never mixed with it."""
    from .synthbench import ThroughputRow

    def one(i: int) -> int:
        ex = examples[i % len(examples)]
        res = seek(
            g,
            ex.anchors,
            scorer,
            question=ex.question,
            beam_width=args.beam_width,
            max_steps=args.max_steps,
            top_k=args.top_k,
        )
        return res.scorer_calls

    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        calls = sum(pool.map(one, range(args.iters)))
    wall = max(time.perf_counter() - t0, 1e-9)
    config = (
        f"V={g.num_entities};R={g.num_relations - 1};beta={args.beam_width};"
        f"tau={args.max_steps};k={args.top_k};workers={args.workers}"
    )
    return [
        ThroughputRow(
            config=config,
            queries_per_second=args.iters / wall,
            scorer_calls_mean=calls / args.iters,
            wall_time=wall,
        )
    ]


def _bench_entities_sweep(args, out: Path) -> None:
    sizes = [100, 1000, 10000, 100000]
    sizes = [s for s in sizes if s <= args.max_entities]
    rows = []
    for n in sizes:
        g, examples = _synthetic_examples(n, 10, args.seed, 30)
        scorer = _oracle_from_examples(g, examples, args.max_steps)
        rows += bench_throughput(
            g, examples, scorer, args.beam_width, args.max_steps, args.top_k,
            warmup=args.warmup, iters=args.iters,
        )
    _write_report(
        out / "entities_sweep.csv",
        args.seed,
        "config,queries_per_second,scorer_calls_mean,wall_time",
        _throughput_rows(rows),
    )


def _bench_relations_sweep(args, out: Path) -> None:
    counts = [1, 10, 100]
    counts = [c for c in counts if c <= args.max_relations]
    rows = []
    for r in counts:
        g, examples = _synthetic_examples(5000, r, args.seed, 30)
        scorer = _oracle_from_examples(g, examples, args.max_steps)
        rows += bench_throughput(
            g, examples, scorer, args.beam_width, args.max_steps, args.top_k,
            warmup=args.warmup, iters=args.iters,
        )
    _write_report(
        out / "relations_sweep.csv",
        args.seed,
        "config,queries_per_second,scorer_calls_mean,wall_time",
        _throughput_rows(rows),
    )


def _bench_edges_sweep(args, out: Path) -> None:
    sizes = [100, 1000, 10000, 100000]
    sizes = [s for s in sizes if s <= args.max_entities]
    rows = []
    edges = []
    for n in sizes:
        g, examples = _synthetic_examples(n, 10, args.seed, 30)
        scorer = _oracle_from_examples(g, examples, args.max_steps)
        rows += bench_throughput(
            g, examples, scorer, args.beam_width, args.max_steps, args.top_k,
            warmup=args.warmup, iters=args.iters,
        )
        edges.append(g.num_edges)
    _write_report(
        out / "edges_sweep.csv",
        args.seed,
        "edges,config,queries_per_second,scorer_calls_mean,wall_time",
        (
            f"{e},{r.config},{r.queries_per_second:.2f},{r.scorer_calls_mean:.2f},{r.wall_time:.6f}"
            for e, r in zip(edges, rows)
        ),
    )


def _bench_precision_recall(args, out: Path) -> None:
    g, examples = _synthetic_examples(500, 10, args.seed, 100)
    scorer = _oracle_from_examples(g, examples, args.max_steps)
    rows = precision_recall_at_k(
        g, examples, scorer, beam_width=args.beam_width,
        max_steps=args.max_steps, k_max=min(5, args.beam_width),
    )
    _write_report(
        out / "precision_recall.csv",
        args.seed,
        "k,precision,recall",
        (f"{r.k},{r.precision:.6f},{r.recall:.6f}" for r in rows),
    )


def _bench_path_counts(args, out: Path) -> None:
    g = gen_random_graph(300, 3600, 3, args.seed)
    src = g.edge_arrays()[0]
    anchor = int(np.bincount(src, minlength=g.num_entities).argmax())
    stats = path_count_stats(g, EntitySet([anchor]), 3)
    _write_report(
        out / "path_counts.csv",
        args.seed,
        "length,original_paths,coalesced_paths",
        path_count_csv_rows(stats),
    )


def cmd_verify(args) -> int:
    if args.quick:
        counts = (30, 30, 100)
    else:
        counts = (args.reach_graphs, args.beam_cases, args.prop1_pairs)
    results = verification.run_all(
        *counts, seed=args.seed, inject_fault=args.inject_fault
    )
    ok = True
    for res in results:
        print(res.summary())
        for failure in res.failures[:10]:
            print(f"  {failure}")
        ok = ok and res.ok
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_synth(args) -> int:
    out = _out_dir(args)
    g, examples = _synthetic_examples(
        args.entities, args.relations, args.seed, args.examples, hops=args.hops
    )
    graph_path = out / "triples.tsv"
    qa_path = out / "qa.tsv"
    save_triples(g, graph_path)
    save_qa_dataset(examples, qa_path, g)
    print(g.stats_line())
    print(f"wrote {graph_path}")
    print(f"wrote {qa_path}")
    return EXIT_OK


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------


def _add_graph_args(p) -> None:
    p.add_argument("--graph", help="triple file (subject<TAB>relation<TAB>object)")
    p.add_argument("--add-inverses", action="store_true",
                   help="also store each edge through an <r>^-1 relation")


def _add_seek_args(p) -> None:
    p.add_argument("--beam-width", type=int, default=10)
    p.add_argument("--max-steps", type=int, default=2)
    p.add_argument("--top-k", type=int, default=1)


def _add_scorer_args(p) -> None:
    p.add_argument("--scorer", choices=["uniform", "oracle", "featurized"],
                   default="uniform")
    p.add_argument("--checkpoint", help="featurized scorer checkpoint (.npz)")
    p.add_argument("--gold", help="oracle gold sequences, e.g. 'directed starred;acted'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relseek",
        description="Multi-hop question answering over knowledge graphs",
    )
    parser.add_argument("--config", help="JSON file with default values for any flag")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("load", help="load a triple file and print its stats")
    _add_graph_args(p)
    p.set_defaults(func=cmd_load)

    p = sub.add_parser("seek", help="beam-search relation sequences for one question")
    _add_graph_args(p)
    _add_scorer_args(p)
    _add_seek_args(p)
    p.add_argument("--anchors", required=True, help="comma-separated anchor entity names")
    p.add_argument("--question", default="", help="question text (whitespace tokenized)")
    p.add_argument("--dump-candidates", action="store_true")
    p.set_defaults(func=cmd_seek)

    p = sub.add_parser("query", help="evaluate logical queries (brute force)")
    _add_graph_args(p)
    p.add_argument("--queries", required=True, help="file of 'sexpr<TAB>bindings-json' lines")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("cover", help="extract covering relation sequences from queries")
    _add_graph_args(p)
    p.add_argument("--queries", required=True)
    p.set_defaults(func=cmd_cover)

    p = sub.add_parser("labels", help="weak-supervision sequences for a QA dataset")
    _add_graph_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--max-len", type=int, default=3)
    p.set_defaults(func=cmd_labels)

    p = sub.add_parser("train", help="train the featurized scorer")
    _add_graph_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--p-drop", type=float, default=0.5)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--max-len", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-refiner", help="train the candidate refiner")
    _add_graph_args(p)
    _add_scorer_args(p)
    _add_seek_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--refiner-out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--max-len", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_refiner)

    p = sub.add_parser("eval", help="Hits@1 of the unrefined and refined pipelines")
    _add_graph_args(p)
    _add_scorer_args(p)
    _add_seek_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--refiner-checkpoint")
    p.add_argument("--max-len", type=int, default=3)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="throughput/preprocessing benchmarks and plot data")
    _add_graph_args(p)
    _add_scorer_args(p)
    _add_seek_args(p)
    p.add_argument("--dataset")
    p.add_argument("--entities", type=int, default=5000)
    p.add_argument("--relations", type=int, default=10)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--emit-plots-data", action="store_true",
                   help="write one CSV per figure analog")
    p.add_argument("--max-entities", type=int, default=100000)
    p.add_argument("--max-relations", type=int, default=100)
    p.add_argument("--workers", type=int, default=1,
                   help="extra parallel throughput row when > 1")
    p.add_argument("--max-len", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run the oracle-equivalence and containment suites")
    p.add_argument("--reach-graphs", type=int, default=200)
    p.add_argument("--beam-cases", type=int, default=200)
    p.add_argument("--prop1-pairs", type=int, default=1000)
    p.add_argument("--quick", action="store_true", help="reduced counts, all suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synth", help="generate a synthetic KB and QA dataset")
    p.add_argument("--entities", type=int, default=1000)
    p.add_argument("--relations", type=int, default=10)
    p.add_argument("--examples", type=int, default=200)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        try:
            with open(known.config, encoding="utf-8") as fh:
                config = json.load(fh)
        except FileNotFoundError:
            print(f"error: config file not found: {known.config}", file=sys.stderr)
            return EXIT_INPUT
        except json.JSONDecodeError as e:
            print(f"error: bad config JSON: {e}", file=sys.stderr)
            return EXIT_INPUT
        parser.set_defaults(**config)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputDataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (TripleParseError, epfo.QueryParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename}", file=sys.stderr)
        return EXIT_INPUT
    except ScorerContractError as e:
        print(f"scorer contract violation: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except TrainingError as e:
        print(f"training error: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except AssertionError as e:
        print(f"property violation: {e}", file=sys.stderr)
        return EXIT_PROPERTY


if __name__ == "__main__":
    sys.exit(main())
