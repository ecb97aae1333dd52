"""Command-line surface and run artifact layout.

Subcommands: synth, train, embed, eval, audit, theory, compare. Every run
resolves its configuration as defaults <- config file <- CLI flags, echoes
the result to ``config.resolved`` in its output directory, and writes a
``manifest.json`` recording the resolved config, input digests, and output
file names. Exit codes: 0 success, 1 user-fixable (bad usage/config/data),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .augment import AugmentConfig
from .errors import ConfigError, GradeError, ParseError, UsageError, ValidationError
from .evaluation import fairness_report, make_split, train_probe
from .graph import Graph, load_graph, save_graph
from .model import load_checkpoint, save_checkpoint
from .objective import ContrastiveConfig
from .sbm import SbmConfig, generate_sbm
from .theory import TheoryConfig, run_theory_probe
from .trainer import TrainConfig, embed, train

_EMB_MAGIC = b"GEMB"
_EMB_VERSION = 1

SYNTH_KEYS = {
    "num_nodes": int, "num_communities": int, "p_in": float, "p_out": float,
    "feature_noise": float, "num_features": int, "seed": int,
}
AUG_KEYS = {"zeta": int, "p_edr": float, "p_fdr": float, "min_phi": float, "aug_mode": str}
TRAIN_KEYS = {
    **AUG_KEYS,
    "tau": float,
    "warmup_epochs": int, "total_epochs": int, "learning_rate": float,
    "adam_beta1": float, "adam_beta2": float, "adam_eps": float,
    "seed": int, "sim_refresh_interval": int, "early_stop_patience": int,
    "layers": int, "hidden_dim": int, "embed_dim": int, "proj_dim": int,
}
EVAL_KEYS = {"scheme": str, "seed": int, "test_size": int}
THEORY_KEYS = {"epsilon": float, "m": int, "pairs_per_node": int, "gamma_grid": str, "seed": int}
AUDIT_KEYS = {**TRAIN_KEYS, **{"scheme": str, "test_size": int, "num_seeds": int}}

TRAIN_DEFAULTS = {
    "zeta": 5, "p_edr": 0.2, "p_fdr": 0.2, "min_phi": 0.5, "aug_mode": "grade",
    "tau": 0.5,
    "warmup_epochs": 200, "total_epochs": 400, "learning_rate": 1e-3,
    "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_eps": 1e-8,
    "seed": 0, "sim_refresh_interval": 1, "early_stop_patience": 20,
    "layers": 2, "hidden_dim": 128, "embed_dim": 128, "proj_dim": 128,
}
EVAL_DEFAULTS = {"scheme": "supervised", "seed": 0, "test_size": 1000}
THEORY_DEFAULTS = {"epsilon": 0.5, "m": 1, "pairs_per_node": 200,
                   "gamma_grid": "0.25,0.5,0.75,1.0", "seed": 0}
SYNTH_DEFAULTS = {"num_nodes": 300, "num_communities": 2, "p_in": 0.1, "p_out": 0.01,
                  "feature_noise": 0.3, "num_features": 16, "seed": 0}
AUDIT_DEFAULTS = {**TRAIN_DEFAULTS, "scheme": "supervised", "test_size": 1000, "num_seeds": 5}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def parse_config_file(path, keys) -> dict:
    """`key = value` lines; `#` comments; values typed per the key table."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(path, line_no, f"expected 'key = value', got {line!r}")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in keys:
                raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
            values[key] = _coerce(key, raw, keys[key], f"{path}:{line_no}")
    return values


def _coerce(key, raw, typ, where):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {key}={raw!r} as {typ.__name__}") from None


def resolve_config(defaults: dict, keys: dict, config_path, cli_values: dict) -> dict:
    resolved = dict(defaults)
    if config_path:
        resolved.update(parse_config_file(config_path, keys))
    for key, value in cli_values.items():
        if value is not None:
            resolved[key] = _coerce(key, str(value), keys[key], "flag")
    return resolved


def _thread_count() -> int:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        value = os.environ.get(var)
        if value:
            try:
                return int(value)
            except ValueError:
                pass
    return os.cpu_count() or 1


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_artifacts(out_dir, command, config, inputs, outputs):
    """config.resolved + manifest.json; returns nothing."""
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"{k} = {config[k]}" for k in sorted(config)]
    with open(os.path.join(out_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    manifest = {
        "command": command,
        "config": {k: config[k] for k in sorted(config)},
        "seed": config.get("seed"),
        "code_version": __version__,
        "thread_count": _thread_count(),
        "inputs": {str(p): f"sha256:{_sha256(p)}" for p in sorted(str(x) for x in inputs)},
        "outputs": sorted(outputs) + ["config.resolved", "manifest.json"],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def write_embeddings(path, matrix):
    """Versioned binary: magic, version, N, d, then row-major little-endian f64."""
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_EMB_MAGIC)
        fh.write(np.asarray([_EMB_VERSION], dtype="<u4").tobytes())
        fh.write(np.asarray(matrix.shape, dtype="<u8").tobytes())
        fh.write(matrix.tobytes())


def read_embeddings(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _EMB_MAGIC:
        raise ValidationError(f"{path}: not an embedding file")
    version = int(np.frombuffer(blob[4:8], dtype="<u4")[0])
    if version != _EMB_VERSION:
        raise ValidationError(f"{path}: unsupported embedding version {version}")
    n, d = np.frombuffer(blob[8:24], dtype="<u8")
    expected = 24 + int(n) * int(d) * 8
    if len(blob) != expected:
        raise ValidationError(f"{path}: size mismatch")
    return np.frombuffer(blob[24:], dtype="<f8").reshape(int(n), int(d)).copy()


def _load_run_graph(args, need_labels) -> Graph:
    label_path = getattr(args, "labels", None)
    if need_labels and label_path is None:
        raise UsageError("this command requires --labels")
    graph, dropped = load_graph(args.edges, args.features, label_path)
    if dropped:
        print(f"warning: dropped {dropped} self-loop(s) from {args.edges}", file=sys.stderr)
    return graph


def _configs_from_resolved(cfg: dict):
    aug = AugmentConfig(
        zeta=cfg["zeta"], p_edr=cfg["p_edr"], p_fdr=cfg["p_fdr"],
        min_phi=cfg["min_phi"], aug_mode=cfg["aug_mode"],
    )
    con = ContrastiveConfig(tau=cfg["tau"])
    tr = TrainConfig(
        total_epochs=cfg["total_epochs"], warmup_epochs=cfg["warmup_epochs"],
        learning_rate=cfg["learning_rate"], adam_beta1=cfg["adam_beta1"],
        adam_beta2=cfg["adam_beta2"], adam_eps=cfg["adam_eps"], seed=cfg["seed"],
        sim_refresh_interval=cfg["sim_refresh_interval"],
        early_stop_patience=cfg["early_stop_patience"], layers=cfg["layers"],
        hidden_dim=cfg["hidden_dim"], embed_dim=cfg["embed_dim"], proj_dim=cfg["proj_dim"],
    )
    return aug, con, tr


def cmd_synth(args) -> int:
    cfg = resolve_config(SYNTH_DEFAULTS, SYNTH_KEYS, args.config,
                         {k: getattr(args, k) for k in SYNTH_KEYS})
    graph = generate_sbm(SbmConfig(
        num_nodes=cfg["num_nodes"], num_communities=cfg["num_communities"],
        p_in=cfg["p_in"], p_out=cfg["p_out"], feature_noise=cfg["feature_noise"],
        num_features=cfg["num_features"], seed=cfg["seed"],
    ))
    os.makedirs(args.out, exist_ok=True)
    paths = {name: os.path.join(args.out, name)
             for name in ("edges.tsv", "features.csv", "labels.txt")}
    save_graph(graph, paths["edges.tsv"], paths["features.csv"], paths["labels.txt"])
    write_run_artifacts(args.out, "synth", cfg, [], list(paths))
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(TRAIN_DEFAULTS, TRAIN_KEYS, args.config,
                         {k: getattr(args, k) for k in TRAIN_KEYS})
    graph = _load_run_graph(args, need_labels=False)
    aug, con, tr = _configs_from_resolved(cfg)
    params, log = train(graph, aug, con, tr)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(params, os.path.join(args.out, "checkpoint.bin"))
    with open(os.path.join(args.out, "train_log.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(log.to_jsonl())
    inputs = [args.edges, args.features] + ([args.labels] if args.labels else [])
    write_run_artifacts(args.out, "train", cfg, inputs, ["checkpoint.bin", "train_log.jsonl"])
    return 0


def cmd_embed(args) -> int:
    graph = _load_run_graph(args, need_labels=False)
    params = load_checkpoint(args.checkpoint)
    matrix = embed(graph, params)
    os.makedirs(args.out, exist_ok=True)
    write_embeddings(os.path.join(args.out, "embeddings.bin"), matrix)
    write_run_artifacts(args.out, "embed", {"checkpoint": args.checkpoint},
                        [args.edges, args.features, args.checkpoint], ["embeddings.bin"])
    return 0


def _evaluate(graph, embeddings, scheme, seed, test_size):
    split = make_split(graph, scheme, seed, test_size)
    probe = train_probe(embeddings, graph.labels, split, num_classes=graph.num_classes)
    return fairness_report(probe, embeddings, graph.labels, split, graph)


def cmd_eval(args) -> int:
    cfg = resolve_config(EVAL_DEFAULTS, EVAL_KEYS, args.config,
                         {k: getattr(args, k) for k in EVAL_KEYS})
    graph = _load_run_graph(args, need_labels=True)
    embeddings = read_embeddings(args.embeddings)
    if embeddings.shape[0] != graph.num_nodes:
        raise ValidationError("embedding rows != node count")
    report = _evaluate(graph, embeddings, cfg["scheme"], cfg["seed"], cfg["test_size"])
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "fairness_report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(os.path.join(args.out, "plot_data.tsv"), "w", encoding="utf-8") as fh:
        fh.write(report.plot_data())
    write_run_artifacts(args.out, "eval", cfg,
                        [args.edges, args.features, args.labels, args.embeddings],
                        ["fairness_report.json", "plot_data.tsv"])
    return 0


def tail_accuracy(report_dict: dict, zeta: int):
    """(weighted tail accuracy or None, tail node count) from a report dict."""
    correct = 0.0
    count = 0
    for row in report_dict["per_degree"]:
        if row["degree"] <= zeta:
            correct += row["avg_acc"] * row["count"]
            count += row["count"]
    return (correct / count if count else None), count


def run_audit(graph, cfg, out_dir, inputs):
    """Train + embed + eval across num_seeds consecutive seeds; aggregate JSON."""
    aug, con, _ = _configs_from_resolved(cfg)
    per_seed = []
    for offset in range(cfg["num_seeds"]):
        run_seed = cfg["seed"] + offset
        _, _, tr = _configs_from_resolved(dict(cfg, seed=run_seed))
        seed_dir = os.path.join(out_dir, f"seed_{run_seed}")
        os.makedirs(seed_dir, exist_ok=True)
        params, log = train(graph, aug, con, tr)
        save_checkpoint(params, os.path.join(seed_dir, "checkpoint.bin"))
        with open(os.path.join(seed_dir, "train_log.jsonl"), "w", encoding="utf-8") as fh:
            fh.write(log.to_jsonl())
        matrix = embed(graph, params)
        write_embeddings(os.path.join(seed_dir, "embeddings.bin"), matrix)
        report = _evaluate(graph, matrix, cfg["scheme"], run_seed, cfg["test_size"])
        with open(os.path.join(seed_dir, "fairness_report.json"), "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
        rd = report.to_dict()
        tail_acc, tail_count = tail_accuracy(rd, cfg["zeta"])
        per_seed.append({
            "seed": run_seed,
            "g_mean": rd["g_mean"], "bias": rd["bias"],
            "micro_f1": rd["micro_f1"], "macro_f1": rd["macro_f1"],
            "slope": rd["slope"],
            "tail_acc": tail_acc, "tail_count": tail_count,
            "tail_correct_weight": (tail_acc or 0.0) * tail_count,
        })

    metrics = ("g_mean", "bias", "micro_f1", "macro_f1", "slope")
    mean = {m: float(np.mean([r[m] for r in per_seed])) for m in metrics}
    std = {m: float(np.std([r[m] for r in per_seed])) for m in metrics}
    pooled_count = sum(r["tail_count"] for r in per_seed)
    pooled_acc = (
        sum(r["tail_correct_weight"] for r in per_seed) / pooled_count if pooled_count else None
    )
    aggregate = {
        "arm": cfg["aug_mode"],
        "num_seeds": cfg["num_seeds"],
        "seeds": [r["seed"] for r in per_seed],
        "per_seed": per_seed,
        "mean": mean,
        "std": std,
        "tail_pooled": {"count": pooled_count, "accuracy": pooled_acc},
    }
    with open(os.path.join(out_dir, "aggregate.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(aggregate, sort_keys=True, indent=2) + "\n")
    outputs = ["aggregate.json"] + [f"seed_{r['seed']}" for r in per_seed]
    write_run_artifacts(out_dir, "audit", cfg, inputs, outputs)
    return aggregate


def cmd_audit(args) -> int:
    cfg = resolve_config(AUDIT_DEFAULTS, AUDIT_KEYS, args.config,
                         {k: getattr(args, k) for k in AUDIT_KEYS})
    graph = _load_run_graph(args, need_labels=True)
    run_audit(graph, cfg, args.out, [args.edges, args.features, args.labels])
    return 0


def cmd_compare(args) -> int:
    cfg = resolve_config(AUDIT_DEFAULTS, AUDIT_KEYS, args.config,
                         {k: getattr(args, k) for k in AUDIT_KEYS})
    graph = _load_run_graph(args, need_labels=True)
    inputs = [args.edges, args.features, args.labels]
    arms = {}
    for mode in ("grade", "random_drop"):
        arm_cfg = dict(cfg, aug_mode=mode)
        arms[mode] = run_audit(graph, arm_cfg, os.path.join(args.out, mode), inputs)
    summary = {
        "grade": arms["grade"],
        "random_drop": arms["random_drop"],
        "bias_improved": arms["grade"]["mean"]["bias"] <= arms["random_drop"]["mean"]["bias"],
        "g_mean_improved": arms["grade"]["mean"]["g_mean"] >= arms["random_drop"]["mean"]["g_mean"],
    }
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "compare.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    write_run_artifacts(args.out, "compare", cfg, inputs,
                        ["compare.json", "grade", "random_drop"])
    return 0


def cmd_theory(args) -> int:
    cfg = resolve_config(THEORY_DEFAULTS, THEORY_KEYS, args.config,
                         {k: getattr(args, k) for k in THEORY_KEYS})
    graph = _load_run_graph(args, need_labels=True)
    params = load_checkpoint(args.checkpoint)
    try:
        gamma_grid = tuple(float(tok) for tok in str(cfg["gamma_grid"]).split(",") if tok.strip())
    except ValueError:
        raise ConfigError(f"cannot parse gamma_grid {cfg['gamma_grid']!r}") from None
    theory_cfg = TheoryConfig(
        epsilon=cfg["epsilon"], m=cfg["m"],
        pairs_per_node=cfg["pairs_per_node"], gamma_grid=gamma_grid,
    )
    report = run_theory_probe(graph, params, theory_cfg, cfg["seed"])
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "theory_report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    write_run_artifacts(args.out, "theory", cfg,
                        [args.edges, args.features, args.labels, args.checkpoint],
                        ["theory_report.json"])
    return 0


def _add_key_flags(parser, keys):
    for key, typ in keys.items():
        parser.add_argument(f"--{key}", type=str, default=None, metavar=typ.__name__.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gradegcl", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def common_io(p, *, edges=True, labels=False, checkpoint=False, embeddings=False):
        if edges:
            p.add_argument("--edges", required=True)
            p.add_argument("--features", required=True)
        p.add_argument("--labels", required=labels, default=None)
        if checkpoint:
            p.add_argument("--checkpoint", required=True)
        if embeddings:
            p.add_argument("--embeddings", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--config", default=None)

    p = sub.add_parser("synth", help="generate a synthetic block-model dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    _add_key_flags(p, SYNTH_KEYS)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="contrastive training -> checkpoint")
    common_io(p)
    _add_key_flags(p, TRAIN_KEYS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="checkpoint -> embedding file")
    common_io(p, checkpoint=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval", help="embeddings -> fairness report")
    common_io(p, labels=True, embeddings=True)
    _add_key_flags(p, EVAL_KEYS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("audit", help="train+embed+eval over several seeds")
    common_io(p, labels=True)
    _add_key_flags(p, AUDIT_KEYS)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("theory", help="checkpoint -> concentration/scatter report")
    common_io(p, labels=True, checkpoint=True)
    _add_key_flags(p, THEORY_KEYS)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("compare", help="audit twice: similarity-guided vs uniform drop")
    common_io(p, labels=True)
    _add_key_flags(p, AUDIT_KEYS)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(parser.format_usage())
        return args.func(args)
    except (UsageError, ValidationError, ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except GradeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
