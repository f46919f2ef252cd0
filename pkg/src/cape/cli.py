"""Command-line interface: ``cape {synth,train,eval,routes,ablate}``.

Exit codes: 0 success, 2 configuration error, 3 data or I/O error,
4 numeric failure. Settings resolve as defaults < ``--config`` JSON <
explicit flags, and the effective settings are written next to the outputs.
``CAPE_THREADS`` caps BLAS threads.
"""
import argparse
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .errors import CapeError, ConfigError, DataError, NumericError
from .evaluator import accuracy_at, evaluate, format_summary, write_curve_csv
from .io import dump_json, load_dataset, write_dataset
from .routes import MAX_OVER_HEADS, all_head_reports, extract_routes, format_report, write_routes_csv
from .scoring import read_score_csv, write_score_csv
from .synthetic import SyntheticSpec, generate_synthetic
from .tensor import no_grad
from .trainer import TrainConfig, evaluate_model, load_model, train

log = logging.getLogger("cape")

# flag dest -> TrainConfig field
TRAIN_FLAGS = {
    "variant": "variant", "heads": "n_heads", "lr": "lr", "batch": "batch_size",
    "epochs": "epochs", "seed": "seed", "scale_attention": "scale_attention",
    "logit_scale": "logit_scale", "hidden_dim": "hidden_dim", "dropout": "dropout_p",
    "eval_every": "eval_every", "output_projection": "use_output_projection",
    "n_bias": "n_bias",
}
SYNTH_FLAGS = {
    "n_states": "n_states", "n_objects": "n_objects", "n_seen": "n_seen",
    "n_unseen": "n_unseen", "n_unseen_val": "n_unseen_val",
    "samples_per_pair": "samples_per_pair", "eval_samples_per_pair": "eval_samples_per_pair",
    "noise": "noise_sigma", "embed_noise": "embed_noise", "feature_dim": "feature_dim",
    "embedding_dim": "embedding_dim", "seed": "seed",
}


def _bool(text):
    low = str(text).lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _load_config_file(path):
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return cfg


def _resolve(cls, args, mapping):
    """defaults < config file < flags, as an instance of dataclass ``cls``."""
    known = {f.name for f in fields(cls)}
    values = {}
    for k, v in _load_config_file(getattr(args, "config", None)).items():
        if k not in known:
            raise ConfigError(f"unknown setting {k!r} in config file")
        values[k] = v
    for dest, name in mapping.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[name] = v
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _write_sidecar(out_dir, command, extra=None):
    meta = {"command": command, "version": __version__, "kernel_backend": kernels.BACKEND,
            "started_unix": time.time(), "argv": sys.argv[1:]}
    meta.update(extra or {})
    dump_json(Path(out_dir) / "run_meta.json", meta)


def _dataset_from_args(args):
    if args.data:
        d = Path(args.data)
        pairs = args.pairs or d / "pairs.tsv"
        features = args.features or d / "features.bin"
        embeddings = [args.embeddings or d / "embeddings.txt"]
        vocab = args.vocab or (d / "vocab.tsv" if (d / "vocab.tsv").exists() else None)
    else:
        missing = [f for f in ("pairs", "features", "embeddings") if getattr(args, f) is None]
        if missing:
            raise ConfigError("missing --" + ", --".join(missing) + " (or pass --data DIR)")
        pairs, features, embeddings, vocab = args.pairs, args.features, [args.embeddings], args.vocab
    if args.embeddings2:
        embeddings.append(args.embeddings2)
    for p in [pairs, features, *embeddings] + ([vocab] if vocab else []):
        if not Path(p).exists():
            raise DataError(f"no such file: {p}")
    return load_dataset(pairs, embeddings, features, vocab=vocab, joiner=args.joiner,
                        aliases=args.aliases)


# -- commands -----------------------------------------------------------------------------

def cmd_synth(args):
    spec = _resolve(SyntheticSpec, args, SYNTH_FLAGS)
    spec.validate()
    ds = generate_synthetic(spec)
    paths = write_dataset(args.out, ds)
    dump_json(Path(args.out) / "effective_config.json", spec.to_dict())
    _write_sidecar(args.out, "synth")
    print(f"wrote {len(ds.table)} compositions ({ds.table.seen_count} seen) and "
          f"{len(ds.features)} feature records to {args.out}")
    for name, p in paths.items():
        print(f"  {name}: {p}")
    return 0


def cmd_train(args):
    config = _resolve(TrainConfig, args, TRAIN_FLAGS)
    ds = _dataset_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(out / "effective_config.json", config.to_dict())
    _write_sidecar(out, "train")
    res = train(ds, config, out_dir=out, resume=args.resume)
    last = res.log[-1] if res.log else {}
    print(f"trained {config.variant} ({res.model.n_params} parameters) for {len(res.log)} epochs")
    if last:
        print(f"final train loss {last['train_loss']:.6f}")
    if res.best_auc is not None:
        print(f"best val AUC {res.best_auc:.6f} at epoch {res.best_epoch}")
    print(f"checkpoints: {out / 'best.ckpt'}, {out / 'last.ckpt'}")
    return 0


def _print_biases(sm, biases):
    for b in biases:
        s, u, h = accuracy_at(sm.scores, sm.labels, sm.unseen, b)
        print(f"bias={b!r} S={s!r} U={u!r} HM={h!r}")


def cmd_eval(args):
    if args.scores:
        table = None
        if args.pairs:
            from .data import read_pairs
            _, table = read_pairs(args.pairs)
        sm = read_score_csv(args.scores, table)
        if sm.labels is None:
            raise DataError(f"{args.scores}: score file has no label column")
    else:
        if not args.checkpoint:
            raise ConfigError("cmd eval needs --checkpoint (with dataset files) or --scores")
        ds = _dataset_from_args(args)
        model, _, _ = load_model(args.checkpoint, ds)
        _, sm = evaluate_model(model, ds, args.split)
    curve = evaluate(sm.scores, sm.labels, sm.unseen, n_bias=args.n_bias)
    print(format_summary(curve))
    if args.bias:
        _print_biases(sm, args.bias)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_curve_csv(out / "curve.csv", curve)
        dump_json(out / "summary.json", curve.summary() | {"n_points": len(curve.biases)})
        if not args.scores:
            write_score_csv(out / "scores.csv", sm)
        dump_json(out / "effective_config.json", {
            "split": args.split, "n_bias": args.n_bias, "checkpoint": str(args.checkpoint),
            "scores": str(args.scores) if args.scores else None})
        _write_sidecar(out, "eval")
    return 0


def cmd_routes(args):
    ds = _dataset_from_args(args)
    model, _, _ = load_model(args.checkpoint, ds)
    if model.config.variant == "mlp":
        raise ConfigError("the mlp variant has no attention routes")
    ids = np.arange(len(ds.table))
    with no_grad():
        output = model.forward(ids)
    names = [ds.table.name(i) for i in ids]
    query = ds.table.find(args.query)
    if args.head is None or args.head == "all":
        reports = all_head_reports(output, names, query, args.k, not args.include_self)
    else:
        head = MAX_OVER_HEADS if args.head == MAX_OVER_HEADS else int(args.head)
        reports = [extract_routes(output, names, query, args.k, head, not args.include_self)]
    text = format_report(reports)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "routes.txt").write_text(text, encoding="utf-8")
        write_routes_csv(out / "routes.csv", reports)
        dump_json(out / "effective_config.json", {
            "query": args.query, "k": args.k, "head": args.head or "all",
            "exclude_self": not args.include_self, "checkpoint": str(args.checkpoint)})
        _write_sidecar(out, "routes")
    return 0


def cmd_ablate(args):
    base = _resolve(TrainConfig, args, TRAIN_FLAGS)
    ds = _dataset_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(out / "effective_config.json", base.to_dict() | {"variants": args.variants})
    _write_sidecar(out, "ablate")
    rows = []
    for variant in args.variants:
        cfg = TrainConfig.from_dict(base.to_dict() | {"variant": variant})
        res = train(ds, cfg, out_dir=out / variant)
        best = next((r for r in res.log if r["epoch"] == res.best_epoch), None)
        rows.append({"variant": variant, "params": res.model.n_params,
                     "val_auc": res.best_auc, "val_hm": best["val_hm"] if best else None})
    fmt = lambda v: "nan" if v is None else f"{100 * v:.2f}"
    md = ["| Variant | Params | Val AUC (%) | Val HM (%) |", "|---|---:|---:|---:|"]
    md += [f"| {r['variant']} | {r['params']} | {fmt(r['val_auc'])} | {fmt(r['val_hm'])} |"
           for r in rows]
    (out / "ablation.md").write_text("\n".join(md) + "\n", encoding="utf-8")
    with open(out / "ablation.csv", "w", encoding="utf-8") as fh:
        fh.write("variant,params,val_auc,val_hm\n")
        for r in rows:
            fh.write(f"{r['variant']},{r['params']},{r['val_auc']!r},{r['val_hm']!r}\n")
    print("\n".join(md))
    return 0


# -- parser -----------------------------------------------------------------------------------

def _add_data_args(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--data", help="directory written by `cape synth`")
    g.add_argument("--features", help="feature store (.bin)")
    g.add_argument("--embeddings", help="word-vector text file")
    g.add_argument("--embeddings2", help="second word-vector file, concatenated after the first")
    g.add_argument("--pairs", help="composition table (state<TAB>object<TAB>split)")
    g.add_argument("--vocab", help="vocabulary file (kind<TAB>name)")
    g.add_argument("--aliases", help="name<TAB>token overrides for embedding lookup")
    g.add_argument("--joiner", default="_", help="replaces spaces in multi-word names")


def _add_train_args(p):
    g = p.add_argument_group("training")
    g.add_argument("--config", help="JSON file of training settings")
    g.add_argument("--variant", choices=("cape", "cape_self", "cape_dual", "mlp"))
    g.add_argument("--heads", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--batch", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--scale-attention", type=_bool, metavar="{true,false}")
    g.add_argument("--output-projection", type=_bool, metavar="{true,false}")
    g.add_argument("--logit-scale", type=float)
    g.add_argument("--hidden-dim", type=int)
    g.add_argument("--dropout", type=float)
    g.add_argument("--eval-every", type=int)
    g.add_argument("--n-bias", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="cape", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--config", help="JSON file of generator settings")
    p.add_argument("--out", required=True)
    for flag, typ in (("n-states", int), ("n-objects", int), ("n-seen", int),
                      ("n-unseen", int), ("n-unseen-val", int), ("samples-per-pair", int),
                      ("eval-samples-per-pair", int), ("noise", float), ("embed-noise", float),
                      ("feature-dim", int), ("embedding-dim", int), ("seed", int)):
        p.add_argument(f"--{flag}", type=typ)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="continue from a last.ckpt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or an external score CSV")
    _add_data_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--scores", help="score CSV (label column, state+object@seen|unseen headers)")
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--n-bias", type=int)
    p.add_argument("--bias", type=float, action="append", help="also report S/U/HM at this bias")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("routes", help="ranked attention routes for one composition")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query", required=True, help='"state object"')
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--head", help="head index, 'max', or 'all' (default)")
    p.add_argument("--include-self", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_routes)

    p = sub.add_parser("ablate", help="train every variant with the same settings")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--variants", nargs="+", default=["cape", "cape_self", "cape_dual", "mlp"],
                   choices=("cape", "cape_self", "cape_dual", "mlp"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def _thread_limit():
    raw = os.environ.get("CAPE_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CAPE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("CAPE_THREADS must be at least 1")
    return n


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limit = _thread_limit()
        if limit is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=limit):
                return args.func(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except CapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
