"""Command-line pipeline: synth, ingest, train, generate, stats, render.

Every command writes ``<command>_manifest.json`` into ``--out-dir`` with
the resolved configuration; passing that manifest back through
``--config`` repeats the run. Option precedence is flags, then config
file, then defaults.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    Corpus, CorpusError, SynthConfig, build_windows, fit_scaler, split_contiguous, synth_corpus,
)
from .events import DEFAULT_AUGMENT_OFFSETS, EventError, group_notes_to_events, transpose_augment
from .generate import GenConfig, GenerationError, convergence_probe, generate
from .midi import MidiParseError, read_smf, write_smf
from .model import ARCHITECTURES, ModelBundle, TrainConfig, TrainingError, evaluate, evaluate_naive, train
from .neuralnet import NonFiniteGradientError
from .stats import (
    ad_ksample, ar_lag_analysis, cramer_test, density_export, descriptive, distinctiveness_grid,
    event_matrix, note_streams, pca_variance,
)
from .stats.descriptive import DEFAULT_VERSIONS, FEATURES

logger = logging.getLogger("improvnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DENSITY_TRUNCATION = {"pitch": None, "velocity": None, "duration": 200.0, "ioi": 100.0}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--config", default=None, help="JSON config or a previous run manifest")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="improvnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic serial-style corpus")
    _common(p)
    p.add_argument("--pieces", type=int)
    p.add_argument("--events-per-piece", type=int)
    p.add_argument("--chord-prob", type=float)
    p.add_argument("--name")
    p.add_argument("--out", help="output CSV name (default <name>.csv)")

    p = sub.add_parser("ingest", help="group MIDI files into an event corpus CSV")
    _common(p)
    p.add_argument("midi", nargs="+")
    p.add_argument("--threshold", type=float)
    p.add_argument("--name")
    p.add_argument("--out")

    p = sub.add_parser("train", help="train a model on a corpus CSV")
    _common(p)
    p.add_argument("--corpus")
    p.add_argument("--arch", choices=sorted(ARCHITECTURES))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float, nargs="+")
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--cross-pieces", action="store_true", default=None)
    p.add_argument("--augment", type=int, nargs="*", default=None,
                   help="transposition offsets added to the training part")
    p.add_argument("--out")

    p = sub.add_parser("generate", help="generate events from a model and a seed piece")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--seed-piece", help="seed piece as corpus CSV or MIDI file")
    p.add_argument("--total", type=int)
    p.add_argument("--interval", type=int)
    p.add_argument("--probe-steps", type=int)
    p.add_argument("--probe-eps", type=float)
    p.add_argument("--name")

    p = sub.add_parser("stats", help="statistics and comparison reports")
    _common(p)
    p.add_argument("which", choices=["ad", "cramer", "pca", "describe", "density", "arlags"])
    p.add_argument("--corpus")
    p.add_argument("--seed-piece")
    p.add_argument("--generated")
    p.add_argument("--method", choices=["asymptotic", "permutation"])
    p.add_argument("--resamples", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--subset-size", type=int)
    p.add_argument("--feature", choices=list(FEATURES))
    p.add_argument("--truncate", type=float)
    p.add_argument("--bins", type=int)
    p.add_argument("--max-lag", type=int)

    p = sub.add_parser("render", help="render an event CSV as a MIDI file")
    _common(p)
    p.add_argument("--events")
    p.add_argument("--out")
    return parser


DEFAULTS = {
    "synth": {"seed": 0, "out_dir": ".", "pieces": 8, "events_per_piece": 500, "chord_prob": 0.65,
              "name": "synthetic", "out": None},
    "ingest": {"seed": 0, "out_dir": ".", "threshold": 35.0, "name": "ingested", "out": None},
    "train": {"seed": 0, "out_dir": ".", "corpus": None, "arch": "cnn", "epochs": 200,
              "batch_size": 32, "patience": 20, "lr": [1e-3, 1e-4], "val_fraction": 0.1,
              "cross_pieces": False, "augment": None, "out": None},
    "generate": {"seed": 0, "out_dir": ".", "model": None, "seed_piece": None, "total": 1000,
                 "interval": 10, "probe_steps": 100, "probe_eps": 1e-3, "name": "generated"},
    "stats": {"seed": 0, "out_dir": ".", "corpus": None, "seed_piece": None, "generated": None,
              "method": "asymptotic", "resamples": 10000, "replicates": 999, "subset_size": 3000,
              "feature": None, "truncate": None, "bins": 50, "max_lag": 15},
    "render": {"seed": 0, "out_dir": ".", "events": None, "out": None},
}


def resolve(args) -> dict:
    """Merge flags over config file over defaults."""
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        data = data.get("config", data)
        unknown = set(data) - set(cfg) - {"midi", "which", "verbose", "config"}
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update({k: v for k, v in data.items() if k in cfg or k in ("midi", "which")})
    for k, v in vars(args).items():
        if k in ("command", "config", "verbose"):
            continue
        if v is not None:
            cfg[k] = v
    return cfg


def _read_events(path) -> Corpus:
    path = Path(path)
    if path.suffix.lower() in (".mid", ".midi"):
        res = read_smf(path.read_bytes())
        return Corpus(group_notes_to_events(res.notes).events, name=path.stem)
    return Corpus.from_csv(path)


def _print_stats(name, c: Corpus):
    d = descriptive(c)
    pca = pca_variance(c.matrix())
    print(f"{name}: events {d.n_events}  notes {d.n_notes}  mean notes/event "
          f"{d.mean_notes_per_event:.2f}  chord ratio {d.chord_ratio:.2f}  "
          f"PCA1/2 {pca.pct_variance[0]:.1f}/{pca.pct_variance[1]:.1f}")
    return d, pca


def cmd_synth(cfg, out: Path) -> dict:
    scfg = SynthConfig(n_pieces=cfg["pieces"], events_per_piece=cfg["events_per_piece"],
                       chord_prob=cfg["chord_prob"])
    c = synth_corpus(scfg, cfg["seed"], cfg["name"])
    path = out / (cfg["out"] or f"{cfg['name']}.csv")
    c.to_csv(path)
    _print_stats(cfg["name"], c)
    return {"corpus": str(path)}


def cmd_ingest(cfg, out: Path) -> dict:
    corpora, failures, warnings = [], [], {}
    for f in cfg["midi"]:
        try:
            res = read_smf(Path(f).read_bytes())
            g = group_notes_to_events(res.notes, cfg["threshold"])
            if not g.events:
                raise EventError("no notes")
            corpora.append(Corpus(g.events, name=Path(f).stem))
            warnings[f] = res.warnings + ([f"{g.discarded} chord notes above 10 discarded"]
                                          if g.discarded else [])
        except (OSError, MidiParseError, EventError) as exc:
            failures.append(f"{f}: {exc}")
    if failures:
        raise CorpusError("ingest failed, no output written:\n  " + "\n  ".join(failures))
    c = Corpus.concat(corpora, cfg["name"])
    path = out / (cfg["out"] or f"{cfg['name']}.csv")
    c.to_csv(path)
    _print_stats(cfg["name"], c)
    return {"corpus": str(path), "warnings": warnings}


def cmd_train(cfg, out: Path) -> dict:
    if not cfg["corpus"]:
        raise UsageError("--corpus is required")
    corpus = Corpus.from_csv(cfg["corpus"])
    spec = ARCHITECTURES[cfg["arch"]]()
    lags = spec.input_shape[0]
    tr, va = split_contiguous(corpus, cfg["val_fraction"], lags=lags)
    if cfg["augment"] is not None:
        offsets = cfg["augment"] or list(DEFAULT_AUGMENT_OFFSETS)
        tr = Corpus.concat([tr, transpose_augment(tr, offsets)], tr.name)
    scaler = fit_scaler(tr)
    dtr = build_windows(tr, lags, cfg["cross_pieces"]).scale(scaler)
    dva = build_windows(va, lags, cfg["cross_pieces"]).scale(scaler)
    tcfg = TrainConfig(cfg["epochs"], cfg["batch_size"], tuple(cfg["lr"]), cfg["patience"], cfg["seed"])
    bundle = train(spec, dtr, dva, tcfg, scaler,
                   {"corpus": corpus.name, "arch": cfg["arch"], "val_fraction": cfg["val_fraction"]})
    path = out / (cfg["out"] or f"model_{cfg['arch']}.json")
    bundle.save(path)
    rep = evaluate(bundle, dva)
    naive = evaluate_naive(dva, scaler)
    header = ["model", "rmse overall", "rmse ioi", "rmse p1", "val loss", "params"]
    rows = [["naive"] + naive.row(), [cfg["arch"]] + rep.row()]
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    for r in [header] + rows:
        print("  ".join(str(v).rjust(w) for v, w in zip(r, widths)))
    report = {"model": vars(rep), "naive": vars(naive), "epochs_run": len(bundle.log),
              "best_val_loss": bundle.best_val_loss}
    (out / f"eval_{cfg['arch']}.json").write_text(json.dumps(report, indent=1), encoding="utf-8")
    return {"model": str(path), "eval": report}


def cmd_generate(cfg, out: Path) -> dict:
    if not cfg["model"] or not cfg["seed_piece"]:
        raise UsageError("--model and --seed-piece are required")
    bundle = ModelBundle.load(cfg["model"])
    seed_piece = _read_events(cfg["seed_piece"])
    gcfg = GenConfig(total_events=cfg["total"], reseed_interval=cfg["interval"], seed=cfg["seed"])
    rep = generate(bundle, seed_piece, gcfg)
    name = cfg["name"]
    Corpus(rep.events, name=name).to_csv(out / f"{name}.csv")
    (out / f"{name}.mid").write_bytes(write_smf(rep.events))
    lags = bundle.spec.input_shape[0]
    start = rep.seed_starts[0]
    window = bundle.scaler.apply(seed_piece.matrix()[start:start + lags])
    k = convergence_probe(bundle, window, cfg["probe_steps"], cfg["probe_eps"])
    summary = rep.summary()
    summary["convergence_step"] = k
    log = {"summary": summary, "rejections": rep.rejection_log()}
    (out / f"{name}_report.json").write_text(json.dumps(log, indent=1), encoding="utf-8")
    print(f"predictions {summary['predictions']}  accepted {summary['accepted']}  "
          f"rejected {summary['rejected']}  seedings {summary['seedings']}  "
          f"fixpoint step {k if k is not None else 'none'}")
    return {"events": str(out / f"{name}.csv"), "midi": str(out / f"{name}.mid"), "summary": summary}


def _datasets(cfg) -> dict[str, Corpus]:
    named = {k: cfg[k] for k in ("corpus", "seed_piece", "generated") if cfg.get(k)}
    if not named:
        raise UsageError("give at least one of --corpus, --seed-piece, --generated")
    return {k: _read_events(v) for k, v in named.items()}


def cmd_stats(cfg, out: Path) -> dict:
    data = _datasets(cfg)
    which = cfg["which"]
    result: dict = {}
    if which == "describe":
        for name, c in data.items():
            d, pca = _print_stats(name, c)
            result[name] = {**vars(d), "pca_pct": pca.pct_variance.tolist()}
    elif which == "pca":
        for name, c in data.items():
            pca = pca_variance(c.matrix())
            result[name] = {"eigenvalues": pca.eigenvalues.tolist(), "pct_variance": pca.pct_variance.tolist()}
            print(f"{name}: " + " ".join(f"{v:.1f}" for v in pca.pct_variance))
    elif which == "ad":
        kw = {"n_resamples": cfg["resamples"], "seed": cfg["seed"]} if cfg["method"] == "permutation" else {}
        if "generated" in data and len(data) > 1:
            refs = {k: v for k, v in data.items() if k != "generated"}
            cells = distinctiveness_grid(refs, data["generated"], method=cfg["method"], **kw)
        else:
            names = list(data)
            if len(names) < 2:
                raise UsageError("AD needs two datasets")
            a, b = note_streams(data[names[0]]), note_streams(data[names[1]])
            cells = [{"comparison": f"{names[0]} vs {names[1]}", "feature": f,
                      "result": ad_ksample([a[f], b[f]], DEFAULT_VERSIONS[f], cfg["method"], **kw)}
                     for f in FEATURES]
        result["cells"] = [{"comparison": c["comparison"], "feature": c["feature"], **vars(c["result"])}
                           for c in cells]
        print("comparison".ljust(12) + "".join(f.rjust(18) for f in FEATURES))
        for i in range(0, len(cells), len(FEATURES)):
            row = cells[i:i + len(FEATURES)]
            print(row[0]["comparison"].ljust(12) + "".join(c["result"].describe().rjust(18) for c in row))
    elif which == "cramer":
        names = list(data)
        first = "generated" if "generated" in data else names[0]
        others = [n for n in names if n != first] or [first]
        for other in others:
            r = cramer_test(event_matrix(data[first]), event_matrix(data[other]), cfg["replicates"],
                            cfg["seed"], cfg["subset_size"])
            result[f"{first}_vs_{other}"] = {"statistic": r.statistic, "p_value": r.p_value,
                                             "replicates": r.replicates, "subset_size": r.subset_size,
                                             "blocks": [vars(b) for b in r.blocks]}
            print(f"{first} vs {other}: T = {r.statistic:.6g}  p = {r.p_value:.4g}  "
                  f"({len(r.blocks)} block(s))")
    elif which == "density":
        feats = [cfg["feature"]] if cfg["feature"] else ["duration", "ioi"]
        for name, c in data.items():
            streams = note_streams(c)
            for f in feats:
                trunc = cfg["truncate"] if cfg["truncate"] is not None else DENSITY_TRUNCATION[f]
                if trunc is None:
                    trunc = float(streams[f].max())
                table = density_export(streams[f], trunc, cfg["bins"])
                path = out / f"density_{name}_{f}.csv"
                path.write_text(table.to_csv(), encoding="utf-8")
                result[f"{name}_{f}"] = {"path": str(path), "truncate_at": trunc,
                                         "overflow": table.overflow, "total": table.total}
                print(f"{name} {f}: truncated at {trunc:g}, overflow {table.overflow}/{table.total}")
    elif which == "arlags":
        feats = [cfg["feature"]] if cfg["feature"] else list(FEATURES)
        for name, c in data.items():
            m = c.matrix()
            series = {"pitch": m[:, 0], "velocity": m[:, 10], "duration": m[:, 11], "ioi": m[:, 12]}
            for f in feats:
                r = ar_lag_analysis(series[f], cfg["max_lag"])
                result[f"{name}_{f}"] = {"suggested_order": r.suggested_order, "lags": r.table()}
                print(f"{name} {f}: suggested order {r.suggested_order}")
    path = out / f"stats_{which}.json"
    path.write_text(json.dumps(result, indent=1, default=_json_default), encoding="utf-8")
    return {"report": str(path)}


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def cmd_render(cfg, out: Path) -> dict:
    if not cfg["events"]:
        raise UsageError("--events is required")
    c = Corpus.from_csv(cfg["events"])
    path = out / (cfg["out"] or f"{Path(cfg['events']).stem}.mid")
    path.write_bytes(write_smf(c.events))
    return {"midi": str(path)}


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "train": cmd_train,
            "generate": cmd_generate, "stats": cmd_stats, "render": cmd_render}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.time()
    try:
        cfg = resolve(args)
        out = Path(cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](cfg, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, NonFiniteGradientError, TrainingError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, CorpusError, EventError, MidiParseError, GenerationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    manifest = {"command": args.command, "config": cfg, "outputs": outputs,
                "tool_version": __version__, "wall_time_s": round(time.time() - t0, 3),
                "argv": list(sys.argv[1:] if argv is None else argv)}
    (out / f"{args.command}_manifest.json").write_text(
        json.dumps(manifest, indent=1, default=_json_default), encoding="utf-8")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
