"""Command-line entry point: ``tkgreason <command> [flags]``.

Exit codes: 0 success, 1 usage or data error, 2 partial success.
Data goes to stdout (or --out files); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dsl
from .dsl import Sort
from .model import FeatureLogicModel
from .oracle import execute
from .sampler import (
    DatasetError,
    copy_dictionaries,
    dataset_stats,
    read_dataset,
    read_plan,
    read_split,
    sample_dataset,
    stats_table,
    write_dataset,
)
from .store import DICT_FILES, SPLITS, DictionaryError, TkgStore, Vocab, load_graph_dir
from .training import (
    PRESETS,
    TrainConfig,
    evaluate,
    metrics_csv,
    metrics_table,
    preset,
    summarize,
    train,
)

log = logging.getLogger("tkgreason")
ENV_DATA = "TKGREASON_DATA"


class UsageError(Exception):
    pass


def _graph(args) -> TkgStore:
    if not args.graph:
        raise UsageError(f"--graph is required (or set {ENV_DATA})")
    return load_graph_dir(args.graph)


def bind_surface_query(text: str, store: TkgStore):
    """Parse a query with ``e:/r:/t:`` surface anchors; return (expr, id binding)."""
    expr, literals = dsl.parse_with_literals(text)
    binding = {}
    for slot, (kind, surface) in literals.items():
        if kind == "e":
            idx = store.entities.get(surface)
        elif kind == "t":
            idx = store.timestamps.get(surface)
        else:
            try:
                idx = store.relation_id(surface)
            except KeyError:
                idx = None
        if idx is None:
            name = {"e": "entity", "r": "relation", "t": "timestamp"}[kind]
            raise DictionaryError(f"unknown {name} {surface!r}")
        binding[slot] = idx
    return expr, binding


def _surface(store: TkgStore, sort: Sort, idx: int) -> str:
    return store.entities.surface(idx) if sort is Sort.ENTITY else store.timestamps.surface(idx)


def _check_model(model: FeatureLogicModel, store: TkgStore) -> None:
    got = (model.n_entities, model.n_relations, model.n_timestamps)
    want = (store.n_entities, store.n_relations, store.n_timestamps)
    if got != want:
        raise UsageError(f"checkpoint sizes {got} do not match graph sizes {want}")


def _check_records(records, n_entities, n_relations, n_timestamps) -> None:
    limits = {"e": n_entities, "r": n_relations, "t": n_timestamps}
    for i, rec in enumerate(records):
        sdef = dsl.structure(rec.structure)
        for slot in sdef.slots:
            if slot not in rec.binding or not 0 <= rec.binding[slot] < limits[slot[0]]:
                raise UsageError(f"record {i} ({rec.structure}): slot {slot} missing or out of range")
        universe = n_entities if sdef.answer_sort is Sort.ENTITY else n_timestamps
        if any(not 0 <= a < universe for a in rec.answers):
            raise UsageError(f"record {i} ({rec.structure}): answer id out of range")


def _check_dictionaries(data_dir: Path, store: TkgStore) -> None:
    for kind, fname in DICT_FILES.items():
        path = data_dir / fname
        if not path.exists():
            continue
        vocab = Vocab.read(path)
        ours = {"entity": store.entities, "relation": store.relations, "timestamp": store.timestamps}[kind]
        if list(vocab) != list(ours):
            raise UsageError(f"{path} does not match the graph's {kind} dictionary")


# -- commands --------------------------------------------------------------

def cmd_stats_graph(args) -> int:
    store = _graph(args)
    print(json.dumps(store.stats, indent=2, sort_keys=True))
    return 0


def cmd_registry(args) -> int:
    print(dsl.registry_document())
    return 0


def cmd_sample(args) -> int:
    store = _graph(args)
    plan = read_plan(args.plan)
    unknown = [n for n in plan if n not in {s.name for s in dsl.registry()}]
    if unknown:
        raise UsageError(f"plan names unknown structures: {unknown}")
    records, manifest = sample_dataset(store, plan, args.seed, args.max_answers, args.max_attempts,
                                       workers=args.threads)
    out = write_dataset(args.out, records, manifest)
    copy_dictionaries(args.graph, out) if _has_dicts(args.graph) else store.save_dictionaries(out)
    for f in manifest["failures"]:
        print(f"exhausted: {f['structure']} {f['split']}: {f['sampled']}/{f['requested']} sampled",
              file=sys.stderr)
    return 2 if manifest["failures"] else 0


def _has_dicts(directory) -> bool:
    return all((Path(directory) / f).exists() for f in DICT_FILES.values())


def cmd_stats_data(args) -> int:
    records = read_dataset(args.data)
    stats = dataset_stats(records)
    if args.json:
        print(json.dumps(stats, indent=2, sort_keys=True))
    elif stats:
        print(stats_table(stats))
    return 0


def cmd_train(args) -> int:
    store = _graph(args)
    data_dir = Path(args.data)
    _check_dictionaries(data_dir, store)
    records = read_split(data_dir, "train")
    _check_records(records, store.n_entities, store.n_relations, store.n_timestamps)
    overrides = dict(dim=args.dim, gamma=args.gamma, negatives=args.neg, batch_size=args.batch,
                     steps=args.steps, lr=args.lr, seed=args.seed, lambda_logic=args.lambda_logic,
                     log_every=args.log_every, checkpoint_every=args.checkpoint_every)
    if args.mix:
        with open(args.mix, encoding="utf-8") as fh:
            overrides["mix"] = json.load(fh)
    if args.preset:
        config = preset(args.preset, **overrides)
    else:
        config = TrainConfig(**{k: v for k, v in overrides.items() if v is not None})
    ckpt = Path(args.ckpt_out)
    log_path = Path(args.log) if args.log else ckpt.with_name(ckpt.name + ".log.jsonl")
    extra = {"config": json.loads(json.dumps(config.__dict__)), "graph_fingerprint": store.stats.get("fingerprint")}
    with open(log_path, "w", encoding="utf-8") as logfh:
        def on_log(entry):
            logfh.write(json.dumps(entry) + "\n")
            logfh.flush()
            print(f"step {entry['step']:>7}  loss {entry['loss']:.5f}  {entry['wall_time']:.1f}s", file=sys.stderr)

        def on_ckpt(model, step):
            model.save(ckpt.with_name(f"{ckpt.name}.step{step}"), extra)

        result = train(config, records, store, on_log=on_log, on_checkpoint=on_ckpt)
    result.model.save(ckpt, extra)
    return 0


def cmd_eval(args) -> int:
    data_dir = Path(args.data)
    model = FeatureLogicModel.load(args.ckpt)
    try:
        records = read_split(data_dir, args.split)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    _check_records(records, model.n_entities, model.n_relations, model.n_timestamps)
    if args.graph:
        store = load_graph_dir(args.graph)
        _check_model(model, store)
        _check_dictionaries(data_dir, store)
    results = evaluate(model, records)
    text = metrics_csv(results)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if results:
        print(metrics_table(results), file=sys.stderr if not args.out else sys.stdout)
    if args.summary:
        Path(args.summary).write_text(json.dumps(summarize(results), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_oracle(args) -> int:
    store = _graph(args)
    expr, binding = bind_surface_query(args.query, store)
    answers = execute(expr, binding, store.layer(args.layer))
    for s in sorted(_surface(store, expr.sort, i) for i in answers.ids):
        print(s)
    return 0


def cmd_answer(args) -> int:
    store = _graph(args)
    model = FeatureLogicModel.load(args.ckpt)
    _check_model(model, store)
    expr, binding = bind_surface_query(args.query, store)
    q = model.encode(expr, binding)
    scores = model.score_all(q, expr.sort)[0]
    order = np.argsort(scores, kind="stable")[: args.topk]
    for i in order:
        print(f"{_surface(store, expr.sort, int(i))}\t{scores[i]:.6f}")
    return 0


def cmd_probe_time(args) -> int:
    store = _graph(args)
    model = FeatureLogicModel.load(args.ckpt)
    _check_model(model, store)
    expr, binding = bind_surface_query(args.pt_query, store)
    if expr.sort is not Sort.TIME:
        raise UsageError("probe-time needs a query answering timestamps")
    columns = probe_time(model, expr, binding)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp_id", "timestamp", "pt", "after", "before"])
        for t in range(store.n_timestamps):
            w.writerow([t, store.timestamps.surface(t)] + [repr(float(columns[c][t])) for c in ("pt", "after", "before")])
    return 0


def probe_time(model: FeatureLogicModel, expr, binding) -> dict[str, np.ndarray]:
    """Distance of every timestamp to the query, to after(query) and to before(query)."""
    q = model.encode(expr, binding)
    return {
        "pt": model.score_all(q, Sort.TIME)[0],
        "after": model.score_all(model.A_t(q), Sort.TIME)[0],
        "before": model.score_all(model.B_t(q), Sort.TIME)[0],
    }


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    default_data = os.environ.get(ENV_DATA)
    p = argparse.ArgumentParser(prog="tkgreason", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file supplying flag values; command-line flags win")
    p.add_argument("--threads", type=int, default=1, help="cap on worker processes")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def graph_flag(sp):
        sp.add_argument("--graph", default=default_data,
                        help=f"directory with train/valid/test.txt (default: ${ENV_DATA})")

    sp = sub.add_parser("stats-graph", help="entity/relation/timestamp/fact counts")
    graph_flag(sp)
    sp.set_defaults(func=cmd_stats_graph)

    sp = sub.add_parser("registry", help="print the query structure registry as JSON")
    sp.set_defaults(func=cmd_registry)

    sp = sub.add_parser("sample", help="sample a grounded query dataset")
    graph_flag(sp)
    sp.add_argument("--plan", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-answers", type=int, default=None)
    sp.add_argument("--max-attempts", type=int, default=128)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("stats-data", help="record counts and average answer counts")
    sp.add_argument("--data", required=True)
    sp.add_argument("--json", action="store_true", help="full-precision JSON instead of a table")
    sp.set_defaults(func=cmd_stats_data)

    sp = sub.add_parser("train", help="train a model on the training split")
    graph_flag(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--preset", choices=sorted(PRESETS))
    sp.add_argument("--dim", type=int)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--neg", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--lambda-logic", type=float)
    sp.add_argument("--mix", help="JSON file: structure -> sampling weight")
    sp.add_argument("--log-every", type=int)
    sp.add_argument("--checkpoint-every", type=int)
    sp.add_argument("--log", help="training log path (default: <ckpt-out>.log.jsonl)")
    sp.add_argument("--ckpt-out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="filtered MRR / Hits@K per structure")
    sp.add_argument("--data", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--split", choices=("train", "valid", "test"), default="test")
    sp.add_argument("--graph", default=None, help="optional graph for consistency checks")
    sp.add_argument("--out", help="CSV path (default: stdout)")
    sp.add_argument("--summary", help="write macro/micro averages as JSON")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("oracle", help="exact answers of a query with surface anchors")
    graph_flag(sp)
    sp.add_argument("--layer", choices=SPLITS, default="test")
    sp.add_argument("--query", required=True)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("answer", help="top-k answers predicted by a checkpoint")
    graph_flag(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--query", required=True)
    sp.add_argument("--topk", type=int, default=10)
    sp.set_defaults(func=cmd_answer)

    sp = sub.add_parser("probe-time", help="per-timestamp distances under Pt, after(Pt), before(Pt)")
    graph_flag(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--pt-query", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_probe_time)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    with open(args.config, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    # Flat keys apply everywhere; a nested object keyed by command name applies to that command.
    values = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    values.update(cfg.get(args.command, {}))
    for key, value in values.items():
        key = key.replace("-", "_")
        if key in ("command", "func", "config"):
            continue
        if not _given_on_command_line(key, argv):
            setattr(args, key, value)
    return args


def _given_on_command_line(key: str, argv) -> bool:
    flag = "--" + key.replace("_", "-")
    return any(a == flag or a.startswith(flag + "=") for a in argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    except (UsageError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, DictionaryError, DatasetError, dsl.QuerySyntaxError, dsl.QuerySortError,
            FileNotFoundError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
