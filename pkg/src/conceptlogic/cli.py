"""Command-line entry point.

Exit codes: 0 success, 1 validation error or bad usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path


from . import config as cfgmod
from .checkpoint import CheckpointError, atomic_write
from .clustering import ElbowKMeans
from .concept_bank import (
    SchemaError,
    check_signature_uniqueness,
    dumps,
    load_matrix,
    load_vocabulary,
)
from .dataset import sample_splits, world_from_config, write_dataset
from .fixtures import fixture_vocabulary, motion_patterns, ntu_matrix
from .gradcheck import COMPONENTS, TOLERANCE, run_gradcheck
from .pipeline import load_data, open_model, stamp, train_run
from .rules import explain_action
from .trainer import TrainingDivergedError, seed_streams
from .world import planted_matrix

log = logging.getLogger("conceptlogic")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
THREADS_ENV = "REASON_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="run configuration JSON")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output directory (default: current)")
    p.add_argument("--threads", type=int, help=f"worker threads (fallback: ${THREADS_ENV}, then 1)")
    p.add_argument("--fixture", choices=cfgmod.FIXTURES, help="bundled concept bank")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="conceptlogic", description="Concept-based logic reasoning over skeleton features.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    bank = sub.add_parser("bank", help="concept vocabulary and association matrix")
    bsub = bank.add_subparsers(dest="action", required=True, parser_class=_Parser)
    b = bsub.add_parser("build", parents=[common], help="write vocabulary.json, matrix.json, clusters.json")
    b.add_argument("--k-max", type=int, default=6, help="largest k tried by the elbow rule")
    c = bsub.add_parser("check", parents=[common], help="validate a bank and list duplicate signatures")
    c.add_argument("--vocabulary", type=Path)
    c.add_argument("--matrix", type=Path)

    data = sub.add_parser("data", help="synthetic datasets")
    dsub = data.add_subparsers(dest="action", required=True, parser_class=_Parser)
    dsub.add_parser("gen", parents=[common], help="generate a planted world and its splits")

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--data", type=Path, help="dataset directory from `data gen`")
    t.add_argument("--epochs", type=int, help="override model.epochs")

    def with_model(name, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--model", type=Path, required=True, help="training output or checkpoint directory")
        p.add_argument("--data", type=Path, help="dataset directory (default: regenerate from the model config)")
        p.add_argument("--split", choices=("train", "test"), default="test")
        return p

    with_model("eval", "accuracy and concept F1 on a split")
    rules = sub.add_parser("rules", help="rule extraction")
    rsub = rules.add_subparsers(dest="action", required=True, parser_class=_Parser)
    r = rsub.add_parser("extract", parents=[common], help="write rules.json")
    r.add_argument("--model", type=Path, required=True)
    e = with_model("explain", "per-sample and per-action explanations")
    e.add_argument("--index", type=int, default=0, help="sample index within the split")
    e.add_argument("--action", dest="explain_action", help="also explain this action's top rules")
    e.add_argument("--top-k", type=int, default=5)
    i = with_model("intervene", "accuracy under concept corrections")
    i.add_argument("--max-level", type=int, default=3)
    i.add_argument("--mode", choices=("all", "misclassified"), default="all")
    s = with_model("stats", "concept activation statistics")
    s.add_argument("--groups", type=Path, help="JSON object mapping group name to action names")
    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    which = g.add_mutually_exclusive_group()
    which.add_argument("--all", action="store_true", help="check every component (default)")
    which.add_argument("--component", action="append", choices=sorted(COMPONENTS))
    g.add_argument("--points", type=int, default=10)
    return parser


# ------------------------------------------------------------------ helpers

def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        n = flag
    else:
        env = os.environ.get(THREADS_ENV)
        if env is None or env == "":
            return 1
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if n < 1:
        raise ValueError("thread count must be >= 1")
    return n


def _config(args, **extra) -> dict:
    overrides = dict(seed=args.seed, fixture=args.fixture, **extra)
    if args.config is not None:
        return cfgmod.load(args.config, **overrides)
    return cfgmod.resolve(None, **overrides)


def _write(out: Path | None, name: str, payload: dict) -> Path:
    path = (Path(".") if out is None else out) / name
    atomic_write(path, dumps(payload))
    print(path)
    return path


def _model_and_split(args):
    model, cfg = open_model(args.model)
    _, splits = load_data(cfg, args.data)
    return model, cfg, splits[args.split]


# ---------------------------------------------------------------- commands

def cmd_bank_build(args) -> int:
    cfg = _config(args)
    fixture = cfg["fixture"] or "ntu74"
    vocab = fixture_vocabulary(fixture)
    if fixture == "ntu74":
        matrix = ntu_matrix()
    else:
        rngs = seed_streams(cfg["seed"])
        matrix = planted_matrix(vocab, cfg["world"]["num_actions"], rngs["world"].integers(2 ** 32),
                                cfg["world"]["density"])
    clusters = {}
    for part, emb in motion_patterns().items():
        k_max = min(args.k_max, len(emb))
        est = ElbowKMeans(k_max=k_max, random_state=cfg["seed"]).fit(emb.vectors, labels=emb.labels)
        clusters[part] = {"k": int(est.n_clusters_), "representatives": list(est.representatives_),
                          "assignments": est.labels_.tolist(), "sse": float(est.inertia_)}
    st = {**stamp(cfg), "fixture": fixture}
    _write(args.out, "vocabulary.json", vocab.to_dict())
    _write(args.out, "matrix.json", matrix.to_dict())
    _write(args.out, "clusters.json", {**st, "parts": clusters})
    dups = check_signature_uniqueness(matrix)
    if dups:
        for a, b in dups:
            print(f"duplicate signature: {a} == {b}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def cmd_bank_check(args) -> int:
    if args.vocabulary is None and args.matrix is None:
        fixture = args.fixture or "ntu74"
        vocab = fixture_vocabulary(fixture)
        matrix = ntu_matrix() if fixture == "ntu74" else None
    else:
        vocab = load_vocabulary(args.vocabulary) if args.vocabulary else None
        matrix = load_matrix(args.matrix, vocab) if args.matrix else None
    report = {"schema_version": 1}
    if vocab is not None:
        report["concepts"] = vocab.counts
    if matrix is not None:
        dups = check_signature_uniqueness(matrix)
        report["actions"] = matrix.shape[0]
        report["duplicates"] = [list(p) for p in dups]
    print(json.dumps(report, indent=2))
    if matrix is not None and report["duplicates"]:
        for a, b in report["duplicates"]:
            print(f"duplicate signature: {a} == {b}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def cmd_data_gen(args) -> int:
    cfg = _config(args)
    rngs = seed_streams(cfg["seed"])
    world = world_from_config(cfg, rngs)
    splits = sample_splits(world, cfg, rngs)
    out = Path(".") if args.out is None else args.out
    write_dataset(out, world, splits, cfg)
    print(out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args, **{"model.epochs": args.epochs})
    if args.data is not None:
        # the dataset's own config decides the world; the run config decides the model
        from .dataset import read_world
        _, data_cfg = read_world(args.data)
        cfg = cfgmod.resolve({**cfg, "world": data_cfg["world"], "data": data_cfg["data"],
                              "fixture": data_cfg["fixture"]})
    model = train_run(cfg, Path(".") if args.out is None else args.out, args.data)
    final = model.state_.history[-1]
    print(f"epoch {final['epoch']} acc {final['acc']:.4f} concept_f1 {final['concept_f1']:.4f} "
          f"active {final['active_weights']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, cfg, batch = _model_and_split(args)
    metrics = model.evaluate(batch.features, batch.labels)
    _write(args.out, "eval.json", {**stamp(cfg), "split": args.split, **metrics})
    return EXIT_OK


def cmd_rules_extract(args) -> int:
    model, cfg = open_model(args.model)
    rs = model.extract_rules()
    _write(args.out, "rules.json", {**stamp(cfg), **rs.to_dict()})
    return EXIT_OK


def cmd_explain(args) -> int:
    model, cfg, batch = _model_and_split(args)
    report = model.explain(batch.features, args.index, batch.labels)
    payload = {**stamp(cfg), "split": args.split, "index": args.index, **report}
    if args.explain_action is not None:
        text = explain_action(model.extract_rules(), args.explain_action, args.top_k)
        payload["action"] = {"name": text.action, "text": text.render(),
                             "terms": [{"rule_id": j, "weight": w, "expr": e} for e, w, j in text.terms]}
        print(text.render())
    _write(args.out, "explain.json", payload)
    return EXIT_OK


def cmd_intervene(args) -> int:
    model, cfg, batch = _model_and_split(args)
    res = model.intervention_curve(batch.features, batch.labels, args.max_level, args.mode)
    for m, a in zip(res.levels, res.accuracy):
        print(f"m={m} acc={a:.4f}")
    _write(args.out, "intervention.json", {**stamp(cfg), "split": args.split, **res.to_dict()})
    return EXIT_OK


def cmd_stats(args) -> int:
    model, cfg, batch = _model_and_split(args)
    groups = None
    if args.groups is not None:
        groups = json.loads(args.groups.read_text(encoding="utf-8"))
        if not isinstance(groups, dict):
            raise ValueError("groups file must map group names to action lists")
    st = model.concept_stats(batch.features, batch.labels, groups)
    _write(args.out, "stats.json", {**stamp(cfg), "split": args.split, **st.to_dict()})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    reports = run_gradcheck(args.component, args.points, cfg["seed"])
    ok = True
    for r in reports:
        passed = r.passed()
        ok &= passed
        print(f"{r.component:12s} max_rel_err={r.max_error:.3e} {'PASS' if passed else 'FAIL'}")
    if args.out is not None:
        _write(args.out, "gradcheck.json", {
            **stamp(cfg), "tolerance": TOLERANCE,
            "components": [{"name": r.component, "max_rel_error": r.max_error,
                            "errors": [p.rel_error for p in r.points]} for r in reports]})
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {
    ("bank", "build"): cmd_bank_build,
    ("bank", "check"): cmd_bank_check,
    ("data", "gen"): cmd_data_gen,
    ("train", None): cmd_train,
    ("eval", None): cmd_eval,
    ("rules", "extract"): cmd_rules_extract,
    ("explain", None): cmd_explain,
    ("intervene", None): cmd_intervene,
    ("stats", None): cmd_stats,
    ("gradcheck", None): cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[(args.command, getattr(args, "action", None))]
    try:
        threads = resolve_threads(args.threads)
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=threads):
            return handler(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}; last good parameters checkpointed", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, KeyError, SchemaError, CheckpointError, FileNotFoundError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - top-level guard maps to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
