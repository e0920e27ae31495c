"""``tablelink`` command line: ingest, build-kb, candidates, train, link, eval, bench, synth."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import candidate_gen as cg
from . import corpus_ingest as ci
from . import disambiguator as dis
from . import eval_bench as eb
from . import kb_store as kbs
from .encoders import Variant
from .nn_core import load_checkpoint, save_checkpoint
from .table_model import TableError, read_tables, write_tables

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("tablelink")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _require(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise DataError(f"input not found: {p}")


def _load_index(args) -> tuple[kbs.KbStore, kbs.Gazetteer, kbs.Bm25Index]:
    kb = kbs.load_kb(args.kb)
    if getattr(args, "index", None):
        _require(args.index)
        gaz, index = kbs.load_snapshot(args.index)
    else:
        gaz, index = kbs.build_gazetteer(kb), kbs.build_bm25_index(kb)
    return kb, gaz, index


def cmd_synth(args) -> None:
    spec = eb.SyntheticSpec(n_tables=args.n_tables, n_rows=args.rows, n_cols=args.cols,
                            ambiguity=args.ambiguity, misspell=args.misspell, nil=args.nil)
    tables, kb = eb.make_synthetic_corpus(spec, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_train = args.n_train if args.n_train is not None else len(tables)
    train, test = eb.split_corpus(tables, n_train)
    kbs.write_kb(out / "kb.jsonl", kb)
    write_tables(out / "tables.jsonl", tables)
    write_tables(out / "train.jsonl", train)
    write_tables(out / "test.jsonl", test)
    stats = ci.split_stats(tables)
    print(json.dumps({"tables": stats.tables, "mentions": stats.total_mentions, "nil": stats.nil_mentions,
                      "entities": len(kb)}, sort_keys=True))


def cmd_ingest(args) -> None:
    _require(args.raw, args.kb, args.id_map)
    kb, gaz, index = _load_index(args)
    id_map = ci.read_id_map(args.id_map) if args.id_map else None
    tables, report = ci.ingest(ci.read_raw(args.raw), kb, gaz, index, args.k, id_map)
    write_tables(args.out, tables)
    summary = {**report.to_json(), "split": vars(ci.split_stats(tables))}
    if args.report:
        eb.write_json(args.report, summary)
    print(json.dumps(summary, sort_keys=True))


def cmd_build_kb(args) -> None:
    _require(args.kb)
    kb = kbs.load_kb(args.kb)
    gaz, index = kbs.build_gazetteer(kb), kbs.build_bm25_index(kb, args.k1, args.b)
    kbs.save_snapshot(args.out, gaz, index)
    print(json.dumps({"entities": len(kb), "surface_forms": len(gaz), "terms": len(index.postings)}, sort_keys=True))


def cmd_candidates(args) -> None:
    _require(args.tables, args.kb)
    kb, gaz, index = _load_index(args)
    tables = read_tables(args.tables)
    sets = cg.candidates_for_tables(tables, gaz, None if args.no_bm25 else index, args.k)
    cg.write_candidates(args.out, sets)
    gold = cg.gold_map(tables)
    summary: dict = {"mentions": len(sets)}
    if any(g is not None for g in gold.values()):
        summary.update(cg.recall_at(sets, gold).to_json())
        ks = sorted({k for k in (1, 5, 10, 20, args.k) if k <= args.k})
        summary["p_e_at_k"] = {str(k): v for k, v in cg.recall_curve(sets, gold, ks).items()}
    if args.report:
        eb.write_json(args.report, summary)
    print(json.dumps(summary, sort_keys=True))


_TRAIN_FIELDS = ("variant", "lr", "epochs", "batch_size", "seed", "k", "max_seq_len", "max_table_tokens",
                 "d", "layers", "heads", "dtype", "all_headers")


def cmd_train(args) -> None:
    _require(args.tables, args.kb, args.candidates)
    try:
        config = dis.TrainConfig(**{f: getattr(args, f) for f in _TRAIN_FIELDS})
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    config.variant = Variant.parse(config.variant).name
    kb = kbs.load_kb(args.kb)
    tables = read_tables(args.tables)
    sets = cg.read_candidates(args.candidates)
    model, curve = dis.train(tables, kb, sets, config)
    save_checkpoint(args.out, model, {"train_config": dis.config_dict(config), "curve": curve})
    curve_path = args.curve or str(args.out) + ".curve.json"
    eb.write_json(curve_path, curve)
    print(json.dumps({"epochs": config.epochs, "final": curve[-1] if curve else None}, sort_keys=True))


def cmd_link(args) -> None:
    _require(args.tables, args.kb, args.candidates, args.model)
    model, extra = load_checkpoint(args.model)
    tc = extra.get("train_config", {})
    kb = kbs.load_kb(args.kb)
    tables = read_tables(args.tables)
    sets = cg.read_candidates(args.candidates)
    stats = dis.PredictStats()
    preds = dis.predict(tables, model, kb, sets, tc.get("variant", Variant.TELL.name), k=tc.get("k"),
                        nil_mode=args.nil_mode, nil_threshold=args.nil_threshold,
                        all_headers=tc.get("all_headers", False), stats=stats)
    dis.write_predictions(args.out, preds)
    print(json.dumps({"predictions": len(preds), "linked": sum(p.chosen is not None for p in preds),
                      "entity_encodings": stats.entity_encodings, "cache_hits": stats.cache_hits}, sort_keys=True))


def cmd_eval(args) -> None:
    _require(args.tables, args.predictions, args.candidates)
    gold = cg.gold_map(read_tables(args.tables))
    pred = dis.read_predictions(args.predictions)
    for key in gold:
        pred.setdefault(key, None)
    pred = {k: pred[k] for k in gold}
    sets = cg.read_candidates(args.candidates) if args.candidates else None
    report = eb.evaluate(pred, gold, sets)
    if args.out:
        eb.write_json(args.out, report.to_json())
    print(json.dumps(report.to_json(), sort_keys=True))


def cmd_bench(args) -> None:
    sizes = [int(s) for s in args.sizes.split(",")]
    variants = [Variant.parse(v) for v in args.variants.split(",")]
    reports = [eb.complexity_probe(v, sizes, n_cols=args.n_cols, cell_tokens=args.cell_tokens, seed=args.seed)
               for v in variants]
    payload = [r.to_json() for r in reports]
    if args.out:
        eb.write_json(args.out, payload)
    if args.svg:
        eb.plot_scaling(reports, args.svg)
    for r in reports:
        print(f"{r.variant:14s} slope={r.slope:.3f} peak_slope={r.peak_slope:.3f}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tablelink", description="Entity linking for tables.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        sp.add_argument("--config", help="key = value or JSON file; flags override it")
        sp.add_argument("--seed", type=int, default=0)
        return sp

    sp = command("synth", cmd_synth, "generate a synthetic KB and tables")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--n-tables", type=int, default=50)
    sp.add_argument("--n-train", type=int)
    sp.add_argument("--rows", type=int, default=4)
    sp.add_argument("--cols", type=int, default=3)
    sp.add_argument("--ambiguity", type=float, default=0.0)
    sp.add_argument("--misspell", type=float, default=0.0)
    sp.add_argument("--nil", type=float, default=0.0)

    sp = command("ingest", cmd_ingest, "clean, denoise and filter raw tables")
    sp.add_argument("--raw", required=True)
    sp.add_argument("--kb", required=True)
    sp.add_argument("--index")
    sp.add_argument("--id-map")
    sp.add_argument("--out", required=True)
    sp.add_argument("--report")
    sp.add_argument("--k", type=int, default=cg.DEFAULT_K)

    sp = command("build-kb", cmd_build_kb, "build the gazetteer and BM25 snapshot")
    sp.add_argument("--kb", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--k1", type=float, default=1.2)
    sp.add_argument("--b", type=float, default=0.75)

    sp = command("candidates", cmd_candidates, "generate candidate sets and report P_E")
    sp.add_argument("--tables", required=True)
    sp.add_argument("--kb", required=True)
    sp.add_argument("--index")
    sp.add_argument("--out", required=True)
    sp.add_argument("--report")
    sp.add_argument("--k", type=int, default=cg.DEFAULT_K)
    sp.add_argument("--no-bm25", action="store_true")

    sp = command("train", cmd_train, "train an encoder variant")
    defaults = dis.TrainConfig()
    sp.add_argument("--tables", required=True)
    sp.add_argument("--kb", required=True)
    sp.add_argument("--candidates", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--curve")
    sp.add_argument("--variant", default=defaults.variant)
    sp.add_argument("--lr", type=float, default=defaults.lr)
    sp.add_argument("--epochs", type=int, default=defaults.epochs)
    sp.add_argument("--batch-size", type=int, default=defaults.batch_size)
    sp.add_argument("--k", type=int, default=defaults.k)
    sp.add_argument("--max-seq-len", type=int, default=defaults.max_seq_len)
    sp.add_argument("--max-table-tokens", type=int, default=defaults.max_table_tokens)
    sp.add_argument("--d", type=int, default=defaults.d)
    sp.add_argument("--layers", type=int, default=defaults.layers)
    sp.add_argument("--heads", type=int, default=defaults.heads)
    sp.add_argument("--dtype", choices=("float32", "float64"), default=defaults.dtype)
    sp.add_argument("--all-headers", action="store_true")

    sp = command("link", cmd_link, "predict an entity or NIL for every mention")
    sp.add_argument("--tables", required=True)
    sp.add_argument("--kb", required=True)
    sp.add_argument("--candidates", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--nil-mode", choices=(dis.LEARNED, dis.THRESHOLD), default=dis.LEARNED)
    sp.add_argument("--nil-threshold", type=float, default=0.5)

    sp = command("eval", cmd_eval, "accuracy, F1 and P_E against gold links")
    sp.add_argument("--tables", required=True)
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--candidates")
    sp.add_argument("--out")

    sp = command("bench", cmd_bench, "attention scaling probe")
    sp.add_argument("--variants", default=",".join(v.name for v in Variant))
    sp.add_argument("--sizes", default=",".join(map(str, eb.PROBE_SIZES)))
    sp.add_argument("--n-cols", type=int, default=2)
    sp.add_argument("--cell-tokens", type=int, default=4)
    sp.add_argument("--out")
    sp.add_argument("--svg")
    return p


def read_config(path) -> dict[str, str]:
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        return {k: v for k, v in json.loads(text).items()}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _config_argv(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Splice config-file entries in front of the flags so flags win."""
    argv = list(argv)
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise UsageError("--config needs a path")
    path = argv[i + 1]
    _require(path)
    cmd_pos = next((j for j, a in enumerate(argv) if not a.startswith("-")), None)
    if cmd_pos is None:
        return argv
    sub = parser._subparsers._group_actions[0].choices.get(argv[cmd_pos])
    if sub is None:
        return argv
    known = {opt: act for act in sub._actions for opt in act.option_strings}
    spliced = []
    for key, value in read_config(path).items():
        opt = "--" + key.replace("_", "-")
        act = known.get(opt)
        if act is None or opt == "--config":
            continue
        if act.nargs == 0:
            if str(value).lower() in ("1", "true", "yes", "on"):
                spliced.append(opt)
        else:
            spliced += [opt, str(value)]
    return argv[: cmd_pos + 1] + spliced + argv[cmd_pos + 1:]


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = parser.parse_args(_config_argv(parser, argv))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.fn(args)
        return EXIT_OK
    except UsageError as exc:
        print(f"tablelink: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, TableError, kbs.KbError, KeyError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"tablelink: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"tablelink: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
