"""Command-line entry point: ``hyqe <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import commands
from .config import Settings, build_runtime
from .errors import HyQEError
from .formats import load_qrels

logger = logging.getLogger("hyqe")


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _overrides(args) -> dict:
    """Translate flags into a config overlay; unset flags are left out."""
    pipe, score, ds = {}, {}, {}
    for flag, key in (("k", "k"), ("depth", "retrieval_depth"), ("template", "template_id"),
                      ("hyde", "hyde"), ("hyde_n", "hyde_n_contexts")):
        v = getattr(args, flag, None)
        if v is not None:
            pipe[key] = v
    for flag in ("strict", "prerank"):
        if getattr(args, flag, False):
            pipe[flag] = True
    if getattr(args, "lam", None) is not None:
        score["lambda"] = args.lam
    for flag in ("aggregation", "qc_mode", "qh_mode"):
        v = getattr(args, flag, None)
        if v is not None:
            score[flag] = v
    if getattr(args, "downsample_ratio", None) is not None:
        ds["ratio"] = args.downsample_ratio
    if getattr(args, "downsample_seed", None) is not None:
        ds["seed"] = args.downsample_seed
    if ds:
        score["downsample"] = ds
    out = {}
    if pipe:
        out["pipeline"] = pipe
    if score:
        out["score"] = score
    if getattr(args, "embedding_model", None):
        out["embedding_model"] = args.embedding_model
    return out


def _add_ranking_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("ranking")
    g.add_argument("--lambda", dest="lam", type=float, help="weight of the hypothetical-query term")
    g.add_argument("--aggregation", choices=["max", "mean"])
    g.add_argument("--qc-mode", choices=["cosine", "inner_product"])
    g.add_argument("--qh-mode", choices=["cosine", "inner_product"])
    g.add_argument("--k", type=int, help="number of head candidates to re-rank (default 30)")
    g.add_argument("--depth", type=int, help="candidates read per query from the baseline run (default 100)")
    g.add_argument("--template", help="prompt template id (default, argument, or a file stem)")
    g.add_argument("--hyde", choices=["off", "plus", "times"])
    g.add_argument("--hyde-n", type=int, help="hypothetical passages per query in times mode")
    g.add_argument("--strict", action="store_true", help="abort on provider failure")
    g.add_argument("--prerank", action="store_true",
                   help="re-order candidates by query-context cosine before taking the head")
    g.add_argument("--downsample-ratio", type=float)
    g.add_argument("--downsample-seed", type=int)
    g.add_argument("--embedding-model", help="selects the default lambda")


def _add_rank_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", required=True, help="corpus JSONL")
    p.add_argument("--queries", required=True, help="queries JSONL")
    p.add_argument("--run", required=True, help="baseline TREC run")
    p.add_argument("--cache", required=True, help="hypothetical-query store directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyqe", description="Re-rank retrieved contexts with hypothetical queries.")
    parser.add_argument("--config", help="YAML or JSON settings file")
    parser.add_argument("--manifest", help="write the run manifest here (default: stderr)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pregen", help="generate and cache hypothetical queries for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--template")

    p = sub.add_parser("rank", help="re-rank a baseline run")
    _add_rank_inputs(p)
    p.add_argument("--out", required=True, help="output TREC run")
    _add_ranking_flags(p)

    p = sub.add_parser("eval", help="NDCG@k of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("sweep", help="mean NDCG@k over a list of lambda values")
    _add_rank_inputs(p)
    p.add_argument("--qrels", required=True)
    p.add_argument("--lambdas", type=_floats, required=True, help="comma-separated, e.g. 0,0.5,1")
    p.add_argument("--eval-k", type=int, default=10)
    _add_ranking_flags(p)

    p = sub.add_parser("downsample", help="NDCG@k after randomly dropping hypothetical queries")
    _add_rank_inputs(p)
    p.add_argument("--qrels", required=True)
    p.add_argument("--ratios", type=_floats, required=True)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-k", type=int, default=10)
    _add_ranking_flags(p)

    p = sub.add_parser("export-embeddings", help="dump query/context/hypothetical-query vectors (.npz)")
    _add_rank_inputs(p)
    p.add_argument("--out", required=True)
    _add_ranking_flags(p)

    p = sub.add_parser("serve", help="serve POST /rerank")
    p.add_argument("--cache", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    _add_ranking_flags(p)
    return parser


def _emit_manifest(args, manifest: commands.RunManifest) -> None:
    text = json.dumps(manifest.to_dict(), indent=1, sort_keys=True, default=str)
    if args.manifest:
        Path(args.manifest).write_text(text + "\n", encoding="utf-8")
    else:
        print(text, file=sys.stderr)


def _table(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    lines = ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join(f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    return "\n".join(lines)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (HyQEError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "eval":
        report = commands.cmd_eval(args.run, args.qrels, args.k)
        print(json.dumps(report.to_dict(), indent=1) if args.json else report.format())
        return 0

    overrides = _overrides(args)
    settings = Settings.load(args.config, overrides)
    rt = build_runtime(settings, args.cache)
    paths = {k: getattr(args, k) for k in ("corpus", "queries", "run", "cache", "qrels") if getattr(args, k, None)}

    if args.command == "pregen":
        m = commands.cmd_pregen(rt, args.corpus)
        _emit_manifest(args, m)
        return 1 if m.notes["failed"] else 0

    if args.command == "serve":
        from .service import make_server

        server = make_server(rt, args.host, args.port)
        logger.warning("serving POST /rerank on http://%s:%d", args.host, server.server_address[1])
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.server_close()
        return 0

    inputs = commands.RankInputs.load(args.corpus, args.queries, args.run)
    if args.command == "rank":
        m, _ = commands.cmd_rank(rt, inputs, args.out, input_paths=paths)
    elif args.command == "sweep":
        m, rows = commands.cmd_sweep(rt, inputs, load_qrels(args.qrels), args.lambdas,
                                     k_eval=args.eval_k, input_paths=paths)
        print(_table(rows))
    elif args.command == "downsample":
        m, rows = commands.cmd_downsample(rt, inputs, load_qrels(args.qrels), args.ratios,
                                          trials=args.trials, seed=args.seed, k_eval=args.eval_k,
                                          input_paths=paths)
        print(_table(rows))
    elif args.command == "export-embeddings":
        m = commands.cmd_export_embeddings(rt, inputs, args.out, input_paths=paths)
    else:  # pragma: no cover - argparse rejects unknown commands
        raise AssertionError(args.command)
    _emit_manifest(args, m)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
