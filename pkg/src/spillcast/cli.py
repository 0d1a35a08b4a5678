"""``spillcast`` command line entry point.

Every subcommand accepts ``--config PATH`` (YAML mapping), ``--seed N`` and
``--out DIR``.  Configuration values may also come from environment
variables ``SPILLCAST_<KEY>`` (for example ``SPILLCAST_LR=0.05``), and the
flags themselves from ``SPILLCAST_CONFIG``, ``SPILLCAST_SEED`` and
``SPILLCAST_OUT``.  Precedence: flag, environment, config file, default.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import __version__, experiment, synth
from .autodiff import load_checkpoint, save_checkpoint
from .embeddings import HashingProvider, deepwalk_embed, message_embeddings, write_vectors
from .experiment import ConfigError, DataConfig, resolve_config
from .graph import (
    IngestionError,
    build_cascades,
    largest_wcc,
    load_events,
    load_graph,
    prune_inactive,
    write_cascades,
    write_events,
    write_graph,
)
from .models import KINDS, model_from_config
from .pipeline import SUBSETS, build_dataset
from .spillover import (
    SPILLOVER_TOPICS,
    TopicLexicon,
    format_composition_table,
    format_single_topic_table,
    reports_to_json,
    spillover_analysis,
)
from .training import TrainingDiverged, format_metrics_table

log = logging.getLogger("spillcast")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
ENV_PREFIX = "SPILLCAST_"


class DataError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    keys = set(experiment.TRAIN_KEYS) | set(experiment.DATA_KEYS)
    out = {}
    for name, raw in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower()
            if key in keys and key != "seed":
                out[key] = yaml.safe_load(raw)
    return out


def load_config_file(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError([f"config file not found: {p}"])
    data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise ConfigError([f"{p}: config must be a mapping"])
    return data


class Run:
    """Resolved flags and the manifest of one invocation."""

    def __init__(self, args: argparse.Namespace, environ=None):
        environ = os.environ if environ is None else environ
        self.args = args
        self.started = time.perf_counter()
        config_path = args.config or environ.get(ENV_PREFIX + "CONFIG")
        self.file_config = load_config_file(config_path)
        self.config_path = config_path
        seed = args.seed
        self.seed_explicit = seed is not None or ENV_PREFIX + "SEED" in environ
        if seed is None and ENV_PREFIX + "SEED" in environ:
            try:
                seed = int(environ[ENV_PREFIX + "SEED"])
            except ValueError:
                raise ConfigError([f"{ENV_PREFIX}SEED must be an integer"]) from None
        if seed is None:
            seed = self.file_config.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError([f"seed must be a non-negative integer, got {seed!r}"])
        self.seed = seed
        self.out = Path(args.out or environ.get(ENV_PREFIX + "OUT") or "spillcast-out")
        self.env = env_overrides(environ)
        self.inputs: dict[str, dict] = {}
        self.outputs: list[str] = []
        self.resolved: dict = {}

    def values(self, exclude: Sequence[str] = ()) -> dict:
        merged = {k: v for k, v in self.file_config.items() if k not in exclude}
        merged.update(self.env)
        merged["seed"] = self.seed
        return merged

    def input(self, name: str, path) -> Path:
        if path is None:
            raise DataError(f"missing required input --{name}")
        p = Path(path)
        if not p.is_file():
            raise DataError(f"input file not found: {p}")
        self.inputs[name] = {"path": str(p), "sha256": sha256_file(p)}
        return p

    def output(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.outputs.append(str(p))
        return p

    def write_manifest(self, status: str = "ok") -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "subcommand": self.args.command,
            "version": __version__,
            "config": self.resolved,
            "config_file": self.config_path,
            "inputs": self.inputs,
            "seed": self.seed,
            "outputs": self.outputs,
            "status": status,
            "wall_clock_seconds": round(time.perf_counter() - self.started, 3),
        }
        dump_json(manifest, self.out / "manifest.json")


def _load_graph_events(run: Run):
    g = load_graph(run.input("edges", run.args.edges))
    events = load_events(run.input("events", run.args.events))
    return g, events


def _lexicon(run: Run) -> TopicLexicon:
    path = getattr(run.args, "lexicon", None)
    return TopicLexicon.load(run.input("lexicon", path)) if path else TopicLexicon.default()


def _dataset(run: Run, g, events, dc: DataConfig, seed: int):
    ds = build_dataset(g, events, _lexicon(run), window=dc.window, node_dim=dc.node_dim,
                       walks_per_node=dc.walks_per_node, walk_length=dc.walk_length,
                       min_size=dc.min_size, seed=seed)
    if len(ds.samples) < 3:
        raise DataError(f"only {len(ds.samples)} cascade(s) after filtering; need at least 3")
    return ds


def _write_report(run: Run, stem: str, text: str, record) -> None:
    run.output(stem + ".txt").write_text(text + "\n", encoding="utf-8")
    dump_json(record, run.output(stem + ".json"))
    print(text)


def _metrics_record(rows) -> dict:
    return {m: {s: r.to_record() for s, r in per.items()} for m, per in rows.items()}


# ------------------------------------------------------------------ subcommands


def cmd_synth(run: Run) -> None:
    values = dict(run.file_config)
    if run.args.scenario:
        values.update(synth.load_scenario(run.input("scenario", run.args.scenario)))
    count = values.pop("count", 200)
    if run.args.count is not None:
        count = run.args.count
    values["seed"] = run.seed if run.seed_explicit else values.get("seed", run.seed)
    cls = synth.BenchmarkScenario if run.args.kind == "benchmark" else synth.SpilloverScenario
    try:
        scenario = cls.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError([str(exc)]) from None
    if run.args.kind == "benchmark":
        corpus = synth.simulate_benchmark(scenario)
    else:
        if not isinstance(count, int) or count < 1:
            raise ConfigError(["count must be a positive integer"])
        corpus = synth.simulate_cascades(scenario, count)
    run.resolved = {"kind": run.args.kind, "count": count, **scenario.to_dict()}
    for p in corpus.write(run.out).values():
        run.outputs.append(str(p))
    synth.dump_scenario(scenario, run.output("scenario.yaml"))
    summary = {
        "users": len(corpus.graph),
        "edges": corpus.graph.num_edges,
        "events": len(corpus.events),
        "originals": sum(1 for e in corpus.events if e.is_original),
    }
    text = "\n".join(f"{k:<10}{v:>10}" for k, v in summary.items())
    _write_report(run, "synth", text, summary)


def cmd_ingest(run: Run) -> None:
    g, events = _load_graph_events(run)
    dc = resolve_config(run.values(), False)[1]
    run.resolved = {"min_size": dc.min_size, "prune": not run.args.no_prune, "min_posts": run.args.min_posts}
    core = largest_wcc(g)
    if not run.args.no_prune:
        core = prune_inactive(core, events, run.args.min_posts)
    kept = [e for e in events if e.user_id in core]
    cascades, summary = build_cascades(kept, core, dc.min_size)
    write_graph(core, run.output("graph.tsv"))
    write_events(kept, run.output("events.jsonl"))
    write_cascades(cascades, run.output("cascades.jsonl"))
    record = {"users_in": len(g), "users_kept": len(core), "edges_kept": core.num_edges,
              "events_kept": len(kept), **summary.to_record()}
    text = "\n".join(f"{k:<16}{v:>12}" for k, v in record.items())
    _write_report(run, "ingest", text, record)


def cmd_spillover(run: Run) -> None:
    g, events = _load_graph_events(run)
    run.resolved = {"topics": list(SPILLOVER_TOPICS)}
    reports = spillover_analysis(g, events, _lexicon(run))
    text = format_single_topic_table(reports, SPILLOVER_TOPICS) + "\n\n" + format_composition_table(reports["composition"])
    run.output("spillover.txt").write_text(text + "\n", encoding="utf-8")
    run.output("spillover.json").write_text(reports_to_json(reports) + "\n", encoding="utf-8")
    print(text)


def cmd_embed(run: Run) -> None:
    g = load_graph(run.input("edges", run.args.edges))
    dc = resolve_config(run.values(), False)[1]
    run.resolved = {"node_dim": dc.node_dim, "walks_per_node": dc.walks_per_node, "walk_length": dc.walk_length}
    emb = deepwalk_embed(g, walks_per_node=dc.walks_per_node, walk_length=dc.walk_length, dim=dc.node_dim, seed=run.seed)
    write_vectors(emb, run.output("node_embeddings.txt"))
    if run.args.events:
        events = load_events(run.input("events", run.args.events))
        write_vectors(message_embeddings(events, HashingProvider(seed=run.seed)), run.output("message_embeddings.txt"))
    print(f"embedded {len(g)} nodes into {dc.node_dim} dimensions")


def _kind(name: str) -> str:
    if name not in KINDS:
        raise ConfigError([f"unknown model kind {name!r}; choose from {', '.join(KINDS)}"])
    return name


def cmd_train(run: Run) -> None:
    kind = _kind(run.args.model)
    tc, dc, _ = resolve_config(run.values(), False)
    run.resolved = {"model": kind, **experiment.config_record(tc, dc)}
    g, events = _load_graph_events(run)
    ds = _dataset(run, g, events, dc, tc.seed)
    model, history, rows = experiment.train_one(kind, ds, tc)
    meta = {"model": model.config(), "train": tc.to_dict(), "data": experiment.config_record(tc, dc)}
    save_checkpoint(run.output("model.ckpt"), model.params, meta)
    dump_json(history.to_record(), run.output("history.json"))
    _write_report(run, "report", format_metrics_table({kind: rows}, SUBSETS), _metrics_record({kind: rows}))


def _restore(run: Run):
    values, meta = load_checkpoint(run.input("checkpoint", run.args.checkpoint))
    model = model_from_config(meta["model"])
    missing = set(model.params) ^ set(values)
    if missing:
        raise DataError(f"checkpoint parameters do not match model: {sorted(missing)}")
    model.params.load(values)
    return model, meta


def cmd_evaluate(run: Run) -> None:
    if bool(run.args.checkpoint) == bool(run.args.baseline):
        raise ConfigError(["give exactly one of --checkpoint or --baseline"])
    g, events = _load_graph_events(run)
    if run.args.checkpoint:
        model, meta = _restore(run)
        tc, dc, _ = resolve_config(meta["data"], False)
        name = model.kind
    else:
        if run.args.baseline not in experiment.BASELINES:
            raise ConfigError([f"unknown baseline {run.args.baseline!r}; choose from {', '.join(experiment.BASELINES)}"])
        tc, dc, _ = resolve_config(run.values(), False)
        name = run.args.baseline
    run.resolved = {"evaluated": name, "split": run.args.split, **experiment.config_record(tc, dc)}
    ds = _dataset(run, g, events, dc, tc.seed)
    train_set, _, test_set = experiment.split_dataset(ds, tc.seed)
    target = ds.samples if run.args.split == "all" else test_set
    if run.args.checkpoint:
        preds = experiment.model_predictions(model, target)
    else:
        preds = experiment.baseline_predictions(name, ds, train_set, target, dc)
    rows = {name: experiment.subset_metrics(preds, target)}
    _write_report(run, "evaluate", format_metrics_table(rows, SUBSETS), _metrics_record(rows))


def cmd_predict(run: Run) -> None:
    g, events = _load_graph_events(run)
    model, meta = _restore(run)
    tc, dc, _ = resolve_config(meta["data"], False)
    run.resolved = {"message": run.args.message, **experiment.config_record(tc, dc)}
    ds = _dataset(run, g, events, dc, tc.seed)
    chosen = ds.samples.where(lambda s: s.message_id == run.args.message)
    if len(chosen) == 0:
        raise DataError(f"no cascade for message {run.args.message!r}")
    pred = float(experiment.model_predictions(model, chosen)[0])
    sample = chosen.samples[0]
    record = {"message_id": sample.message_id, "model": model.kind, "observed": sample.n_observed, "predicted": pred}
    text = f"{sample.message_id}\tobserved={sample.n_observed}\tpredicted={pred:.4f}"
    _write_report(run, "predict", text, record)


def cmd_sweep(run: Run) -> None:
    kinds = [_kind(k) for k in run.args.models.split(",") if k]
    names = [b for b in (run.args.baselines or "").split(",") if b]
    bad = [b for b in names if b not in experiment.BASELINES]
    if bad:
        raise ConfigError([f"unknown baseline(s) {bad}"])
    values = run.values()
    tc, dc, space = resolve_config(values, True)
    if run.args.full_grid:
        space = {**experiment.FULL_GRID, **space}
    run.resolved = {"models": kinds, "baselines": names, "grid": space, **experiment.config_record(tc, dc)}
    g, events = _load_graph_events(run)
    ds = _dataset(run, g, events, dc, tc.seed)
    result = experiment.compare(ds, kinds, space, tc, dc, names)
    lines = [format_metrics_table(result.rows, SUBSETS), ""]
    for kind, results in result.sweeps.items():
        lines.append(f"{kind}: grid results (validation MRSE)")
        for r in results:
            point = ", ".join(f"{k}={getattr(r.config, k)}" for k in sorted(space))
            lines.append(f"  {r.val_mrse:>10.4f}  {point}")
    _write_report(run, "sweep", "\n".join(lines), result.to_record())


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "spillover": cmd_spillover,
    "embed": cmd_embed,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of configuration values")
    common.add_argument("--seed", type=int, help="global random seed")
    common.add_argument("--out", help="output directory (default: spillcast-out)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="spillcast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_parser(name, help_text, events_required=True):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--edges", required=True, help="follower edge list (follower<TAB>followee)")
        p.add_argument("--events", required=events_required, help="event log (JSON lines)")
        p.add_argument("--lexicon", help="topic lexicon (topic<TAB>keywords)")
        return p

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--scenario", help="YAML scenario file")
    p.add_argument("--kind", choices=("spillover", "benchmark"), default="spillover")
    p.add_argument("--count", type=int, help="preventive-measure seed messages (spillover kind, default 200)")

    p = data_parser("ingest", "filter the graph and build cascades")
    p.add_argument("--no-prune", action="store_true", help="skip inactive-user pruning")
    p.add_argument("--min-posts", type=int, default=2)

    data_parser("spillover", "measure spillover elasticities")
    data_parser("embed", "node and message embeddings", events_required=False)

    p = data_parser("train", "train one model")
    p.add_argument("--model", required=True, choices=KINDS)

    p = data_parser("evaluate", "evaluate a checkpoint or a baseline")
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", help=f"one of {', '.join(experiment.BASELINES)}")
    p.add_argument("--split", choices=("test", "all"), default="test")

    p = data_parser("predict", "predict the final size of one cascade")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--message", required=True, help="root message id")

    p = data_parser("sweep", "grid search and comparison table")
    p.add_argument("--models", default=",".join(KINDS))
    p.add_argument("--baselines", default="")
    p.add_argument("--full-grid", action="store_true", help="search the full hyperparameter grids")
    return parser


def main(argv: Sequence[str] | None = None, environ=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        run = Run(args, environ)
        COMMANDS[args.command](run)
        run.write_manifest()
        return EXIT_OK
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        code, status = EXIT_CONFIG, "config-error"
    except (DataError, IngestionError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        code, status = EXIT_DATA, "data-error"
    except (TrainingDiverged, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        code, status = EXIT_DIVERGED, "diverged"
    if run is not None:
        run.write_manifest(status)
    return code


if __name__ == "__main__":
    sys.exit(main())
