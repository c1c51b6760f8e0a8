"""Command-line entry point: ingest, train, index, query, eval, sweep, bench.

Every command reads an optional JSON config file, applies flag overrides,
and writes a resolved-config snapshot next to its outputs so runs can be
reproduced.  Exit codes: 0 success, 2 bad input, 3 training failure,
4 indexing failure, 5 querying failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import synth
from .encoder import DeepLshFamily, EncoderConfig, LossConfig, load_model, save_model
from .errors import (
    FamilyMismatch,
    InsufficientCorpus,
    MalformedFrame,
    MalformedReport,
    ParamMismatch,
    StackLshError,
)
from .evaluation import bench, default_lk_grid, evaluate, sweep_lk
from .families import MinHashFamily, SimHashFamily
from .lsh import LshParams, build_index, load_index, query_ranked, save_index
from .measures import MeasureParams
from .traces import build_corpus, load_reports, load_stats, save_reports, save_stats
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_INPUT = 2
EXIT_TRAIN = 3
EXIT_INDEX = 4
EXIT_QUERY = 5


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _resolve(config: dict, args: argparse.Namespace) -> dict:
    """Merge the config file with CLI overrides (flags win)."""
    merged = dict(config)
    for key in ("measure", "seed", "out", "corpus", "stats", "model", "strict", "family"):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    lsh = dict(merged.get("lsh", {}))
    for flag, key in (("M", "m"), ("K", "k"), ("L", "l"), ("b", "b")):
        value = getattr(args, flag, None)
        if value is not None:
            lsh[key] = value
    merged["lsh"] = lsh
    merged.setdefault("seed", 0)
    merged.setdefault("measure", "EditSim")
    return merged


def _out_dir(merged: dict) -> Path:
    out = Path(merged.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(merged: dict, out: Path, command: str) -> None:
    with open(out / f"{command}-config.json", "w", encoding="utf-8") as fh:
        json.dump(merged, fh, sort_keys=True, indent=2)


def _lsh_params(merged: dict) -> LshParams:
    lsh = merged.get("lsh", {})
    return LshParams(
        m=int(lsh.get("m", 64)),
        k=int(lsh.get("k", 1)),
        l=int(lsh.get("l", 1)),
        b=int(lsh.get("b", 8)),
    )


def _measure_params(merged: dict) -> MeasureParams:
    return MeasureParams(**merged.get("measure_params", {}))


def _build_family(merged: dict, stats, kind: str | None = None):
    """Instantiate the configured hash family, fitted to the corpus stats."""
    kind = kind or merged.get("family", "minhash")
    params = _lsh_params(merged)
    seed = int(merged.get("seed", 0))
    if kind == "minhash":
        return MinHashFamily(m=params.m, b=params.b, seed=seed).fit(stats)
    if kind == "simhash":
        weighting = merged.get("weighting", "counts")
        return SimHashFamily(m=params.m, b=params.b, seed=seed, weighting=weighting).fit(stats)
    if kind == "deep":
        model_path = merged.get("model")
        if not model_path:
            raise ParamMismatch("family 'deep' needs a model file (--model)")
        enc_params, enc_config, meta = load_model(model_path)
        return DeepLshFamily(enc_params, enc_config, meta)
    raise ParamMismatch(f"unknown family {kind!r}")


def cmd_ingest(args: argparse.Namespace) -> int:
    merged = _resolve(_load_config(args.config), args)
    out = _out_dir(merged)
    strict = bool(merged.get("strict"))
    try:
        reports = load_reports(args.input, strict=strict)
        if not reports:
            print("error: no valid reports in input", file=sys.stderr)
            return EXIT_INPUT
        stats = build_corpus(reports, merged.get("granularity", "method"))
    except (MalformedReport, MalformedFrame, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    save_reports(reports, out / "corpus.jsonl")
    save_stats(stats, out / "stats.json")
    _snapshot(merged, out, "ingest")
    print(f"ingested {stats.n_traces} reports, vocabulary size {stats.vocab_size}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    merged = _resolve(_load_config(args.config), args)
    out = _out_dir(merged)
    try:
        reports = load_reports(merged["corpus"])
        stats = load_stats(merged["stats"]) if merged.get("stats") else build_corpus(reports)
    except (KeyError, OSError) as exc:
        print(f"error: missing corpus ({exc})", file=sys.stderr)
        return EXIT_TRAIN
    enc = merged.get("encoder", {})
    lsh = _lsh_params(merged)
    config = EncoderConfig.for_stats(
        stats,
        m=lsh.m,
        b=lsh.b,
        kernel_sizes=tuple(enc.get("kernel_sizes", (2, 3, 4))),
        filters_per_size=int(enc.get("filters_per_size", 256)),
        max_len=int(enc.get("max_len", 64)),
    )
    loss_cfg = LossConfig(**merged.get("loss", {}))
    train_cfg = TrainConfig(seed=int(merged["seed"]), **merged.get("train", {}))
    try:
        result = train(
            reports,
            merged["measure"],
            stats,
            config,
            loss_cfg,
            train_cfg,
            _measure_params(merged),
        )
    except InsufficientCorpus as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    meta = {"seed": int(merged["seed"]), "measure": str(merged["measure"])}
    digest = save_model(result.params, config, out / "model.bin", meta=meta)
    with open(out / "losses.jsonl", "w", encoding="utf-8") as fh:
        for record in result.history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    _snapshot(merged, out, "train")
    print(f"trained model {digest[:16]}... over {stats.n_traces} reports")
    return EXIT_OK


def cmd_index(args: argparse.Namespace) -> int:
    merged = _resolve(_load_config(args.config), args)
    out = _out_dir(merged)
    try:
        reports = load_reports(merged["corpus"])
        stats = load_stats(merged["stats"]) if merged.get("stats") else build_corpus(reports)
        family = _build_family(merged, stats)
        params = _lsh_params(merged)
        index = build_index(family, reports, params)
    except (ParamMismatch, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INDEX
    save_index(index, out / "index.bin")
    _snapshot(merged, out, "index")
    print(
        f"indexed {len(index)} traces into {params.l} tables "
        f"of {params.k} functions ({params.b} bits each)"
    )
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    merged = _resolve(_load_config(args.config), args)
    out = _out_dir(merged)
    try:
        index = load_index(args.index)
        reports = load_reports(merged["corpus"])
        stats = load_stats(merged["stats"]) if merged.get("stats") else build_corpus(reports)
        family = _build_family(merged, stats, kind=index.family_spec.get("type"))
        if family.fingerprint() != index.family_fingerprint:
            raise FamilyMismatch(
                "the reconstructed family does not match the index fingerprint"
            )
        queries = load_reports(args.input)
        by_id = {r.id: r for r in reports}
        results = []
        for q in queries:
            ranked = query_ranked(
                index, q, family, merged["measure"], stats, by_id, _measure_params(merged)
            )
            if args.top_k is not None:
                ranked = ranked[: args.top_k]
            results.append({"query": q.id, "candidates": [[cid, s] for cid, s in ranked]})
    except (FamilyMismatch, ParamMismatch, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_QUERY
    path = out / "candidates.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for record in results:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    _snapshot(merged, out, "query")
    print(f"wrote {len(results)} query results to {path}")
    return EXIT_OK


def _load_eval_inputs(merged: dict, args: argparse.Namespace):
    reports = load_reports(merged["corpus"])
    stats = load_stats(merged["stats"]) if merged.get("stats") else build_corpus(reports)
    if getattr(args, "queries", None):
        queries = load_reports(args.queries)
        corpus = reports
    else:
        # interleaved split keeps every cluster represented on both sides
        frac = float(merged.get("query_fraction", 0.2))
        step = max(2, int(round(1.0 / max(frac, 1e-9))))
        queries = reports[::step]
        corpus = [r for i, r in enumerate(reports) if i % step != 0]
    family = _build_family(merged, stats, kind=merged.get("family"))
    return queries, corpus, stats, family


def cmd_eval(args: argparse.Namespace) -> int:
    merged = _resolve(_load_config(args.config), args)
    out = _out_dir(merged)
    try:
        queries, corpus, stats, family = _load_eval_inputs(merged, args)
        report = evaluate(
            queries,
            corpus,
            family,
            merged["measure"],
            stats,
            _lsh_params(merged),
            _measure_params(merged),
        )
    except (StackLshError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    path = out / "eval.json"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    _snapshot(merged, out, "eval")
    print(report.to_json())
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    merged = _resolve(_load_config(args.config), args)
    out = _out_dir(merged)
    try:
        queries, corpus, stats, family = _load_eval_inputs(merged, args)
        if args.grid:
            grid = []
            for part in args.grid.split(";"):
                l_text, k_text = part.split(",")
                grid.append((int(l_text), int(k_text)))
        else:
            grid = default_lk_grid(family.m)
        result = sweep_lk(
            queries, corpus, family, merged["measure"], stats, grid, _measure_params(merged)
        )
    except (StackLshError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    with open(out / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write(result.to_csv())
    with open(out / "sweep-selected.json", "w", encoding="utf-8") as fh:
        json.dump({"l": result.selected_l, "k": result.selected_k}, fh)
    _snapshot(merged, out, "sweep")
    print(f"selected (L, K) = ({result.selected_l}, {result.selected_k})")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    merged = _resolve(_load_config(args.config), args)
    out = _out_dir(merged)
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else [1000]
    rows = []
    try:
        family_kind = merged.get("family", "minhash")
        if family_kind == "deep":
            raise ParamMismatch(
                "bench generates fresh synthetic corpora; use minhash or simhash"
            )
        for size in sizes:
            reports = synth.synthetic_reports(size, seed=int(merged["seed"]))
            queries = synth.synthetic_reports(
                10, seed=int(merged["seed"]) + 1, id_prefix="query-"
            )
            stats = build_corpus(reports)
            family = _build_family(merged, stats, kind=family_kind)
            params = _lsh_params(merged)
            index = build_index(family, reports, params)
            result = bench(
                queries,
                reports,
                index,
                family,
                merged["measure"],
                stats,
                _measure_params(merged),
            )
            rows.append(
                {
                    "size": size,
                    "lsh_mean_s": result.lsh_mean_s,
                    "scan_mean_s": result.scan_mean_s,
                }
            )
            print(
                f"size {size}: lsh {result.lsh_mean_s * 1e3:.3f} ms/query, "
                f"scan {result.scan_mean_s * 1e3:.3f} ms/query"
            )
    except (StackLshError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    with open(out / "bench.json", "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
    _snapshot(merged, out, "bench")
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--measure", help="similarity measure id")
    parser.add_argument("--corpus", help="corpus JSONL file")
    parser.add_argument("--stats", help="corpus statistics JSON file")
    parser.add_argument("--model", help="trained model file")
    parser.add_argument("--M", type=int, help="number of hash functions")
    parser.add_argument("--K", type=int, help="hash functions per table")
    parser.add_argument("--L", type=int, help="number of hash tables")
    parser.add_argument("--b", type=int, help="bits per hash function")
    parser.add_argument("--strict", action="store_const", const=True, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stacklsh",
        description="Near-duplicate stack-trace retrieval with (L, K)-parameterized LSH",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a raw report file into corpus + stats")
    p.add_argument("input", help="raw JSONL report file")
    p.add_argument("--granularity", default=None, help="method | class | package")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train the learned hash family")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("index", help="build an (L, K) index")
    p.add_argument("--family", choices=("deep", "minhash", "simhash"))
    _add_common(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="query an index for near-duplicates")
    p.add_argument("--index", required=True, help="index file")
    p.add_argument("--input", required=True, help="queries JSONL file")
    p.add_argument("--top-k", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="run the evaluation protocol")
    p.add_argument("--queries", help="held-out queries JSONL file")
    p.add_argument("--family", choices=("deep", "minhash", "simhash"))
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="(L, K) F-score sweep and selection")
    p.add_argument("--queries", help="held-out queries JSONL file")
    p.add_argument("--family", choices=("deep", "minhash", "simhash"))
    p.add_argument("--grid", help="semicolon-separated L,K pairs, e.g. '16,4;8,8'")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="latency comparison on synthetic corpora")
    p.add_argument("--sizes", help="comma-separated corpus sizes")
    p.add_argument("--family", choices=("minhash", "simhash"))
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StackLshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    except Exception as exc:  # pragma: no cover - defensive
        print(f"unexpected error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
