"""Command-line entry points.

    duetgraph train-coarse --config c.json --out coarse.ckpt
    duetgraph train-fine   --config c.json --out fine.ckpt
    duetgraph eval         --config c.json --coarse coarse.ckpt --fine fine.ckpt --out m.json
    duetgraph predict      --config c.json --coarse coarse.ckpt --fine fine.ckpt --out p.jsonl
    duetgraph diagnose     --config c.json --fine fine.ckpt --out report.json
    duetgraph gap-hist     --config c.json --coarse coarse.ckpt --fine fine.ckpt --out hist.csv

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint as ckpt
from .coarse import StructuralCoarse, TripletCoarse, train_coarse
from .config import ConfigError, RunConfig, parse_config
from .evaluation import VARIANTS, EvalConfig, canonical_json, evaluate, known_triples
from .fusion import DuetModel, train
from .inference import predict
from .kg_data import DatasetSplit, add_inverse_relations, filtered_candidates, inverse_queries, load_split
from .pathways import MessageGraph

logger = logging.getLogger("duetgraph")


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_sidecar(out: Path, command: str, cfg: RunConfig, inputs: dict[str, str]) -> None:
    """``<out>.manifest.json``: config echo, seed, version and input digests."""
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "inputs": {k: {"file": Path(v).name, "sha256": _sha256(v)} for k, v in sorted(inputs.items())},
        "output": {"file": out.name, "sha256": _sha256(out)},
    }
    Path(str(out) + ".manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                                                 encoding="utf-8")


def _load_data(cfg: RunConfig) -> DatasetSplit:
    if cfg.dataset_dir is None:
        raise ConfigError("dataset_dir is required")
    return load_split(cfg.dataset_dir, cfg.mode)


def _dataset_inputs(cfg: RunConfig) -> dict[str, str]:
    d = Path(cfg.dataset_dir)
    names = ["train.txt", "valid.txt", "test.txt"] + (["facts.txt"] if cfg.mode == "inductive" else [])
    return {f"dataset/{n}": str(d / n) for n in names}


def _out_path(cfg: RunConfig, out: str) -> Path:
    p = Path(out)
    if not p.is_absolute() and cfg.output_dir is not None:
        p = Path(cfg.output_dir) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _make_coarse(cfg: RunConfig, split: DatasetSplit):
    if cfg.coarse_kind == "triplet":
        return TripletCoarse(split.fact_graph.num_entities, split.num_relations, cfg.coarse_dim, seed=cfg.seed + 1)
    return StructuralCoarse(split.num_relations, cfg.coarse_dim, seed=cfg.seed + 1)


def _open_log(path):
    return open(path, "w", encoding="utf-8") if path else nullcontext(None)


def cmd_train_coarse(args, cfg: RunConfig) -> int:
    split = _load_data(cfg)
    scorer = _make_coarse(cfg, split)
    with _open_log(args.log) as log:
        train_coarse(scorer, split, cfg.coarse_train_config(), log=log)
    out = _out_path(cfg, args.out)
    ckpt.save(out, scorer, {"seed": cfg.seed + 1})
    write_sidecar(out, "train-coarse", cfg, {"config": args.config, **_dataset_inputs(cfg)})
    return 0


def cmd_train_fine(args, cfg: RunConfig) -> int:
    split = _load_data(cfg)
    tc = cfg.fine_train_config()
    model = DuetModel(split.num_relations, tc.hidden_dim, tc.local_layers, tc.global_layers,
                      tc.encoder_layers, tc.attention, seed=cfg.seed)
    with _open_log(args.log) as log:
        train(model, split, tc, log=log)
    out = _out_path(cfg, args.out)
    ckpt.save(out, model, {"seed": cfg.seed})
    write_sidecar(out, "train-fine", cfg, {"config": args.config, **_dataset_inputs(cfg)})
    return 0


def _load_models(args, need_coarse: bool = True):
    fine, _ = ckpt.load(args.fine, ckpt.FINE_MAGIC)
    coarse = ckpt.load(args.coarse, ckpt.COARSE_MAGIC)[0] if need_coarse else None
    return fine, coarse


def _eval_config(cfg: RunConfig, variants=("full",), histogram=False) -> EvalConfig:
    return EvalConfig(k=cfg.k, delta=cfg.delta, protocol=cfg.protocol, variants=tuple(variants),
                      split=cfg.eval_split, max_queries=cfg.max_queries, histogram=histogram)


def _variants(text: str) -> tuple[str, ...]:
    vs = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [v for v in vs if v not in VARIANTS]
    if bad or not vs:
        raise UsageError(f"--variants must be a comma list drawn from {', '.join(VARIANTS)}")
    return vs


def cmd_eval(args, cfg: RunConfig) -> int:
    split = _load_data(cfg)
    fine, coarse = _load_models(args)
    variants = _variants(args.variants)
    reports, _ = evaluate(fine, coarse, split, _eval_config(cfg, variants))
    body = reports["full"].to_dict() if variants == ("full",) else {v: r.to_dict() for v, r in reports.items()}
    out = _out_path(cfg, args.out)
    out.write_text(canonical_json(body), encoding="utf-8")
    write_sidecar(out, "eval", cfg, {"config": args.config, "fine": args.fine, "coarse": args.coarse,
                                     **_dataset_inputs(cfg)})
    return 0


def cmd_predict(args, cfg: RunConfig) -> int:
    split = _load_data(cfg)
    fine, coarse = _load_models(args)
    kg = split.test_graph if cfg.eval_split == "test" else split.fact_graph
    graph = MessageGraph(add_inverse_relations(kg))
    queries = inverse_queries(split.test if cfg.eval_split == "test" else split.valid, split.num_relations)
    if cfg.max_queries is not None:
        queries = queries[: cfg.max_queries]
    known = known_triples(split) if cfg.protocol == "filtered" else None
    lines = []
    for h, r, t in queries.tolist():
        mask = filtered_candidates((h, r), t, known, graph.num_entities) if known is not None else None
        lines.append(predict(fine, coarse, graph, (h, r), cfg.k, cfg.delta, mask).to_json())
    out = _out_path(cfg, args.out)
    out.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    write_sidecar(out, "predict", cfg, {"config": args.config, "fine": args.fine, "coarse": args.coarse,
                                        **_dataset_inputs(cfg)})
    return 0


def cmd_diagnose(args, cfg: RunConfig) -> int:
    from .spectral import empirical_gap_vs_bound, pathway_matrices, singular_report

    split = _load_data(cfg)
    fine, _ = _load_models(args, need_coarse=False)
    kg = split.fact_graph
    rng = np.random.default_rng(cfg.seed)
    queries = inverse_queries(split.test, split.num_relations)[: args.queries]
    instances, failed, warnings = [], [], []
    curves_csv = None
    for h, r, _ in queries.tolist():
        mats, x0 = pathway_matrices(fine, kg, (h, r))
        gap = empirical_gap_vs_bound(fine, kg, (h, r), args.pairs, rng)
        report = singular_report(mats, gap.lipschitz, gap.x0_norm)
        curves_csv = curves_csv or report.curves_csv()
        failed += [f"query ({h},{r}): {name}" for name in report.failed_checks()]
        if gap.violations:
            failed.append(f"query ({h},{r}): {gap.violations} gap-bound violations")
        warnings += [f"query ({h},{r}): claim {c.name} ({c.inequality}) does not hold"
                     for c in report.claims if not c.passed]
        instances.append({"query": [h, r], "spectral": report.to_dict(), "gap_vs_bound": gap.to_dict()})
    out = _out_path(cfg, args.out)
    out.write_text(canonical_json({"instances": instances, "failed": failed, "passed": not failed}),
                   encoding="utf-8")
    write_sidecar(out, "diagnose", cfg, {"config": args.config, "fine": args.fine, **_dataset_inputs(cfg)})
    if args.curves and curves_csv is not None:
        curves = _out_path(cfg, args.curves)
        curves.write_text(curves_csv, encoding="utf-8")
        write_sidecar(curves, "diagnose", cfg, {"config": args.config, "fine": args.fine})
    for w in sorted(set(warnings)):
        logger.warning(w)
    for f in failed:
        logger.error("asserted check failed: %s", f)
    return 1 if failed else 0


def cmd_gap_hist(args, cfg: RunConfig) -> int:
    split = _load_data(cfg)
    fine, coarse = _load_models(args)
    variants = ("full",) if args.which == "fine" else ("coarse_only",)
    _, hists = evaluate(fine, coarse, split, _eval_config(cfg, variants, histogram=True))
    out = _out_path(cfg, args.out)
    out.write_text(hists[args.which].to_csv(), encoding="utf-8")
    write_sidecar(out, "gap-hist", cfg, {"config": args.config, "fine": args.fine, "coarse": args.coarse,
                                         **_dataset_inputs(cfg)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duetgraph", description="dual-pathway KG completion")
    parser.add_argument("--threads", type=int, default=None, help="BLAS worker threads")
    parser.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True,
                        help="pin BLAS to a fixed thread count (default 1) for reproducible output")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, fine=False, coarse=False):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        if fine:
            p.add_argument("--fine", required=True)
        if coarse:
            p.add_argument("--coarse", required=True)
        p.set_defaults(func=fn)
        return p

    for name, fn in (("train-coarse", cmd_train_coarse), ("train-fine", cmd_train_fine)):
        add(name, fn).add_argument("--log", help="line-JSON per-epoch log")
    add("eval", cmd_eval, fine=True, coarse=True).add_argument(
        "--variants", default="full", help=f"comma list of {', '.join(VARIANTS)}")
    add("predict", cmd_predict, fine=True, coarse=True)
    p = add("diagnose", cmd_diagnose, fine=True)
    p.add_argument("--curves", help="bound-curve CSV (ell,single_bound,dual_bound)")
    p.add_argument("--queries", type=int, default=5)
    p.add_argument("--pairs", type=int, default=100)
    add("gap-hist", cmd_gap_hist, fine=True, coarse=True).add_argument(
        "--which", choices=("fine", "coarse"), default="fine")
    return parser


def _thread_limits(args):
    from threadpoolctl import threadpool_limits

    if args.threads is not None:
        return threadpool_limits(args.threads)
    if args.deterministic:
        return threadpool_limits(1)
    return nullcontext()


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(args.config)
        with _thread_limits(args):
            return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"duetgraph: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report, do not trace
        logger.debug("failure", exc_info=True)
        print(f"duetgraph: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(run_command())


if __name__ == "__main__":
    main()
