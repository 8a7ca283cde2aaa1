"""Command-line surface: train, eval, transfer, synth, dump-activations.

Configuration comes from four layers, later ones winning: built-in
defaults, a flat ``key = value`` config file, ``ADVMTL_<KEY>`` environment
variables, command-line flags. Every command writes a ``manifest.json``
recording the resolved configuration, input content hashes, and output
paths, plus a ``config.resolved.cfg`` that reproduces the run when passed
back through ``--config``.

Exit codes: 0 ok, 2 missing/unreadable input, 3 config validation,
4 checkpoint/data incompatibility, 5 numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import data as D
from . import models as M
from . import nn
from . import train as T
from .errors import (AdvMtlError, ConfigError, DataFormatError, InputError,
                     NumericError)

ENV_PREFIX = "ADVMTL_"

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_COMPAT = 4
EXIT_NUMERIC = 5


class CompatibilityError(AdvMtlError):
    """Checkpoint and data disagree (tasks, classes, vocabulary)."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: '{text}'")


# key -> (type caster, default, validation scope)
CONFIG_KEYS: dict[str, tuple] = {
    "scheme": (str, None),
    "seed": (int, 0),
    "hidden_size": (int, 16),
    "embed_size": (int, 16),
    "learning_rate": (float, 0.01),
    "lambda": (float, None),      # adversarial weight; asp only, default 0.05
    "gamma": (float, None),       # diff weight; asp only, default 0.01
    "batch_size": (int, 16),
    "max_epochs": (int, 50),
    "patience": (int, 5),
    "clip_norm": (float, 5.0),
    "alpha": (str, None),         # comma-separated per-task weights
    "unlabeled": (_bool, False),
    "unlabeled_ratio": (float, 1.0),
    "diff_mode": (str, "sentence"),
    "alternating": (_bool, False),
    "embeddings": (str, None),
    "freeze_embeddings": (_bool, False),
    "swap_dev_test": (_bool, False),
    "max_len": (int, D.DEFAULT_MAX_LEN),
    "grid": (str, None),          # e.g. "learning_rate=0.1,0.01;lambda=0.01,0.1"
    "jobs": (int, 1),
}


def parse_flat_config(path) -> dict[str, str]:
    """Read ``key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{ln}: expected 'key = value'")
            key, value = stripped.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def resolve_config(file_values: dict[str, str], flag_values: dict[str, object],
                   environ=None) -> dict[str, object]:
    """Merge defaults < file < environment < flags; track which keys were set."""
    environ = os.environ if environ is None else environ
    resolved = {}
    explicit = set()
    for key, (cast, default) in CONFIG_KEYS.items():
        value = default
        if key in file_values:
            try:
                value = cast(file_values[key])
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"config key '{key}': {exc}") from None
            explicit.add(key)
        env_name = ENV_PREFIX + key.upper()
        if env_name in environ:
            try:
                value = cast(environ[env_name])
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"environment {env_name}: {exc}") from None
            explicit.add(key)
        if flag_values.get(key) is not None:
            value = flag_values[key]
            explicit.add(key)
        resolved[key] = value
    unknown = set(file_values) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key '{sorted(unknown)[0]}'")
    resolved["_explicit"] = explicit
    return resolved


def validate_train_config(cfg: dict) -> None:
    scheme = cfg.get("scheme")
    if scheme not in M.SCHEMES:
        raise ConfigError(f"scheme: must be one of {M.SCHEMES}, got {scheme!r}")
    explicit = cfg["_explicit"]
    if scheme != "asp":
        for key in ("lambda", "gamma"):
            if key in explicit and cfg[key] not in (None, 0.0):
                raise ConfigError(
                    f"{key}: only meaningful for the adversarial scheme, not '{scheme}'")
        if cfg["unlabeled"]:
            raise ConfigError(
                f"unlabeled: only meaningful for the adversarial scheme, not '{scheme}'")
    if cfg["lambda"] is None:
        cfg["lambda"] = 0.05 if scheme == "asp" else 0.0
    if cfg["gamma"] is None:
        cfg["gamma"] = 0.01 if scheme == "asp" else 0.0


def _train_config(cfg: dict, alpha=None) -> T.TrainConfig:
    return T.TrainConfig(
        learning_rate=cfg["learning_rate"], adv_weight=cfg["lambda"],
        diff_weight=cfg["gamma"], batch_size=cfg["batch_size"],
        max_epochs=cfg["max_epochs"], patience=cfg["patience"],
        clip_norm=cfg["clip_norm"], seed=cfg["seed"], alpha=alpha,
        use_unlabeled=cfg["unlabeled"], unlabeled_ratio=cfg["unlabeled_ratio"],
        diff_mode=cfg["diff_mode"], alternating=cfg["alternating"])


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_tree(root) -> str:
    """Content hash of a directory: sorted relative paths plus file bytes."""
    h = hashlib.sha256()
    if os.path.isfile(root):
        return sha256_file(root)
    for dirpath, dirnames, filenames in sorted(os.walk(root)):
        dirnames.sort()
        for fname in sorted(filenames):
            full = os.path.join(dirpath, fname)
            h.update(os.path.relpath(full, root).encode("utf-8"))
            h.update(bytes.fromhex(sha256_file(full)))
    return h.hexdigest()


def write_manifest(out_dir, command: str, cfg: dict, inputs: dict[str, str],
                   outputs: list[str], started: float) -> str:
    manifest = {
        "command": command,
        "config": {k: v for k, v in cfg.items() if not k.startswith("_")},
        "seed": cfg.get("seed"),
        "input_hashes": {path: sha256_tree(path) for path in inputs.values()
                         if path and os.path.exists(path)},
        "outputs": sorted(outputs),
        "duration_sec": round(time.time() - started, 3),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_resolved_config(out_dir, cfg: dict) -> str:
    path = os.path.join(out_dir, "config.resolved.cfg")
    with open(path, "w", encoding="utf-8") as fh:
        for key in CONFIG_KEYS:
            value = cfg.get(key)
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            fh.write(f"{key} = {value}\n")
    return path


# ---------------------------------------------------------------------------
# shared command plumbing
# ---------------------------------------------------------------------------

def _require_file(path, what: str) -> None:
    if path is None:
        raise ConfigError(f"{what}: required")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what}: '{path}' does not exist")


def _load_datasets(cfg: dict, data_root):
    _require_file(data_root, "--data")
    datasets, vocab = D.load_corpus(data_root, seed=cfg["seed"],
                                    swap_dev_test=cfg["swap_dev_test"],
                                    max_len=cfg["max_len"])
    return datasets, vocab


def _model_config(cfg: dict, datasets, vocab) -> M.ModelConfig:
    names = tuple(sorted(datasets))
    return M.ModelConfig(scheme=cfg["scheme"], task_names=names,
                         classes=tuple(datasets[n].n_classes for n in names),
                         hidden_size=cfg["hidden_size"],
                         embed_size=cfg["embed_size"], vocab_size=len(vocab))


def _parse_alpha(cfg: dict, n_tasks: int):
    if cfg["alpha"] is None:
        return None
    parts = [p for p in cfg["alpha"].split(",") if p.strip()]
    if len(parts) != n_tasks:
        raise ConfigError(f"alpha: expected {n_tasks} weights, got {len(parts)}")
    return {k: float(p) for k, p in enumerate(parts)}


def _parse_grid(text: str) -> dict[str, list[float]]:
    grid = {}
    for clause in text.split(";"):
        if not clause.strip():
            continue
        if "=" not in clause:
            raise ConfigError(f"grid: expected 'key=v1,v2', got '{clause}'")
        key, values = clause.split("=", 1)
        key = key.strip()
        if key not in ("learning_rate", "lambda", "gamma"):
            raise ConfigError(f"grid: unsupported key '{key}'")
        grid[key] = [float(v) for v in values.split(",") if v.strip()]
    if not grid:
        raise ConfigError("grid: empty specification")
    return grid


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

class ModelFactory:
    """Picklable fresh-model builder for (possibly parallel) grid cells."""

    def __init__(self, config: M.ModelConfig, seed: int, embedding_matrix,
                 freeze_embeddings: bool):
        self.config = config
        self.seed = seed
        self.embedding_matrix = embedding_matrix
        self.freeze_embeddings = freeze_embeddings

    def __call__(self):
        params = M.init_model(self.config, seed=self.seed,
                              embedding_matrix=self.embedding_matrix,
                              freeze_embeddings=self.freeze_embeddings)
        return params, self.config


def cmd_train(args) -> int:
    started = time.time()
    file_cfg = parse_flat_config(args.config) if args.config else {}
    if args.config:
        _require_file(args.config, "--config")
    cfg = resolve_config(file_cfg, vars(args))
    validate_train_config(cfg)
    datasets, vocab = _load_datasets(cfg, args.data)
    for name, ds in datasets.items():
        c = ds.counts()
        print(f"task {name}: train={c['train']} dev={c['dev']} "
              f"test={c['test']} unlabeled={c['unlabeled']}")
    config = _model_config(cfg, datasets, vocab)
    alpha = _parse_alpha(cfg, config.n_tasks)
    params = M.init_model(config, seed=cfg["seed"],
                          freeze_embeddings=cfg["freeze_embeddings"])
    if cfg["embeddings"]:
        _require_file(cfg["embeddings"], "embeddings")
        loaded = nn.load_embeddings_text(cfg["embeddings"], vocab.token_to_id,
                                         params.embeddings.matrix)
        print(f"embeddings: loaded {loaded} of {len(vocab)} rows")
    train_cfg = _train_config(cfg, alpha)
    os.makedirs(args.out, exist_ok=True)

    if cfg["grid"]:
        grid = {{"lambda": "adv_weight", "gamma": "diff_weight"}.get(k, k): v
                for k, v in _parse_grid(cfg["grid"]).items()}
        factory = ModelFactory(config, cfg["seed"], params.embeddings.matrix.copy(),
                               cfg["freeze_embeddings"])
        result = T.grid_search(factory, datasets, grid, train_cfg, jobs=cfg["jobs"])
        best, history = result.best_params, result.best_history
        grid_rows = ["cell,mean_dev_error," + ",".join(result.cells[0][0])]
        for i, (cell, err) in enumerate(result.cells):
            grid_rows.append(f"{i},{err!r}," + ",".join(repr(v) for v in cell.values()))
        with open(os.path.join(args.out, "grid.csv"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(grid_rows) + "\n")
        print(f"grid: best cell {result.best_index} -> "
              f"{result.cells[result.best_index][0]}")
    else:
        best, history = T.train_multitask(params, config, datasets, train_cfg)

    ckpt = os.path.join(args.out, "checkpoint.bin")
    hist_path = os.path.join(args.out, "history.csv")
    M.save_checkpoint(ckpt, best, config,
                      extra={"vocab_sha256": vocab.sha256(),
                             "seed": cfg["seed"],
                             "swap_dev_test": cfg["swap_dev_test"],
                             "max_len": cfg["max_len"]})
    history.to_csv(hist_path)
    resolved = write_resolved_config(args.out, cfg)
    outputs = [ckpt, hist_path, resolved]
    write_manifest(args.out, "train", cfg,
                   {"data": args.data, "config": args.config or "",
                    "embeddings": cfg["embeddings"] or ""},
                   outputs, started)
    if history.best_epoch >= 0:
        print(f"best epoch {history.best_epoch}: "
              f"mean dev error {history.mean_dev_error(history.best_epoch):.4f}")
    if history.diverged:
        print("training diverged; best checkpoint before divergence retained",
              file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _check_compat(config: M.ModelConfig, datasets, vocab, extra: dict) -> None:
    for k, name in enumerate(config.task_names):
        if name not in datasets:
            raise CompatibilityError(f"checkpoint task '{name}' missing from data")
        if datasets[name].n_classes != config.classes[k]:
            raise CompatibilityError(
                f"task '{name}': checkpoint expects {config.classes[k]} classes, "
                f"data has {datasets[name].n_classes}")
    want = extra.get("vocab_sha256")
    if want and want != vocab.sha256():
        raise CompatibilityError(
            "vocabulary mismatch: data root does not reproduce the checkpoint's "
            "training vocabulary")


def cmd_eval(args) -> int:
    started = time.time()
    _require_file(args.checkpoint, "--checkpoint")
    params, config, extra = M.load_checkpoint(args.checkpoint)
    cfg = resolve_config({}, vars(args))
    cfg["seed"] = extra.get("seed", cfg["seed"])
    cfg["swap_dev_test"] = extra.get("swap_dev_test", cfg["swap_dev_test"])
    cfg["max_len"] = extra.get("max_len", cfg["max_len"])
    datasets, vocab = _load_datasets(cfg, args.data)
    _check_compat(config, datasets, vocab, extra)
    rows = []
    for k, name in enumerate(config.task_names):
        err = T.evaluate(params, config, datasets[name].split(args.split), k)
        rows.append((name, err))
    avg = float(np.mean([e for _, e in rows]))
    rows.append(("AVG", avg))
    lines = ["task,error"] + [f"{n},{e!r}" for n, e in rows]
    table = "\n".join(lines) + "\n"
    print(table, end="")
    outputs = []
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        table_path = os.path.join(args.out, f"eval_{args.split}.csv")
        with open(table_path, "w", encoding="utf-8") as fh:
            fh.write(table)
        if args.format == "json":
            jpath = os.path.join(args.out, f"eval_{args.split}.json")
            with open(jpath, "w", encoding="utf-8") as fh:
                json.dump({n: e for n, e in rows}, fh, indent=2, sort_keys=True)
                fh.write("\n")
            outputs.append(jpath)
        outputs.append(table_path)
        write_manifest(args.out, "eval", cfg,
                       {"data": args.data, "checkpoint": args.checkpoint},
                       outputs, started)
    return EXIT_OK


def cmd_transfer(args) -> int:
    started = time.time()
    _require_file(args.checkpoint, "--checkpoint")
    source_params, source_config, extra = M.load_checkpoint(args.checkpoint)
    cfg = resolve_config(parse_flat_config(args.config) if args.config else {},
                         vars(args))
    if cfg["lambda"] is None:
        cfg["lambda"] = 0.0
    if cfg["gamma"] is None:
        cfg["gamma"] = 0.0
    datasets, vocab = _load_datasets(cfg, args.data)
    if args.mode not in ("sc", "bc"):
        raise ConfigError(f"--mode: must be 'sc' or 'bc', got '{args.mode}'")
    if args.target:
        if args.target not in datasets:
            raise CompatibilityError(f"target task '{args.target}' not in data")
        targets = [args.target]
    elif args.all_targets:
        targets = sorted(datasets)
    else:
        raise ConfigError("--target or --all-targets: required")
    frozen_before = hashlib.sha256(
        source_params.shared.W.tobytes() + source_params.shared.b.tobytes()).hexdigest()
    train_cfg = _train_config(cfg)
    rows = []
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for target in targets:
        trained, tconfig, history, err = T.train_transfer(
            source_params.shared, datasets[target], args.mode, train_cfg,
            vocab_size=len(vocab), model_seed=cfg["seed"])
        rows.append((target, err))
        frozen_after = hashlib.sha256(
            trained.shared.W.tobytes() + trained.shared.b.tobytes()).hexdigest()
        if frozen_after != frozen_before:
            raise AdvMtlError("frozen shared layer changed during transfer")
        ckpt = os.path.join(args.out, f"transfer_{args.mode}_{target}.bin")
        M.save_checkpoint(ckpt, trained, tconfig,
                          extra={"vocab_sha256": vocab.sha256(),
                                 "transfer_mode": args.mode,
                                 "source_scheme": source_config.scheme,
                                 "frozen_sha256": frozen_before,
                                 "head_input_size": tconfig.head_input_size,
                                 "seed": cfg["seed"]})
        outputs.append(ckpt)
    avg = float(np.mean([e for _, e in rows]))
    rows.append(("AVG", avg))
    lines = ["task,error"] + [f"{n},{e!r}" for n, e in rows]
    table = "\n".join(lines) + "\n"
    print(table, end="")
    table_path = os.path.join(args.out, f"transfer_{args.mode}.csv")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(table)
    outputs.append(table_path)
    write_manifest(args.out, "transfer", cfg,
                   {"data": args.data, "checkpoint": args.checkpoint},
                   outputs, started)
    return EXIT_OK


SYNTH_KEYS = {
    "tasks": int, "shared_tokens": int, "private_tokens": int,
    "conflict_fraction": float, "filler_tokens": int,
    "sentences_per_task": int, "unlabeled_per_task": int,
    "min_len": int, "max_len": int, "min_margin": int,
    "noise_rate": float, "shared_rate": float, "own_rate": float,
    "contaminant_rate": float, "seed": int,
    "embedding_dim": int, "embedding_scale": float,
}


def cmd_synth(args) -> int:
    started = time.time()
    _require_file(args.spec, "--spec")
    raw_kv = parse_flat_config(args.spec)
    unknown = set(raw_kv) - set(SYNTH_KEYS)
    if unknown:
        raise ConfigError(f"synth spec: unknown key '{sorted(unknown)[0]}'")
    kv = {}
    for key, text in raw_kv.items():
        try:
            kv[key] = SYNTH_KEYS[key](text)
        except ValueError as exc:
            raise ConfigError(f"synth spec key '{key}': {exc}") from None
    emb_dim = kv.pop("embedding_dim", 0)
    emb_scale = kv.pop("embedding_scale", 1.0)
    spec = D.SynthSpec(**kv)
    raw, provenance = D.generate_synthetic(spec)
    os.makedirs(args.out, exist_ok=True)
    D.write_corpus(args.out, raw, provenance)
    outputs = [os.path.join(args.out, D.PROVENANCE_FILE)]
    for name in sorted(raw):
        outputs.extend(os.path.join(args.out, name, f)
                       for f in sorted(D.SPLIT_FILES.values()))
    if emb_dim > 0:
        tokens = sorted({tok for _, task in raw.items() for split in task.splits.values()
                         for toks, _ in split for tok in toks})
        vectors = D.synth_embedding_vectors(tokens, emb_dim, seed=spec.seed,
                                            scale=emb_scale)
        vec_path = os.path.join(args.out, "vectors.txt")
        D.write_embeddings_text(vec_path, vectors)
        outputs.append(vec_path)
    cfg = {"spec": args.spec, "seed": spec.seed, "_explicit": set()}
    write_manifest(args.out, "synth", cfg, {"spec": args.spec}, outputs, started)
    for name in sorted(raw):
        c = {s: len(v) for s, v in raw[name].splits.items()}
        print(f"task {name}: train={c['train']} dev={c['dev']} test={c['test']} "
              f"unlabeled={len(raw[name].unlabeled)}")
    return EXIT_OK


def cmd_dump_activations(args) -> int:
    started = time.time()
    _require_file(args.checkpoint, "--checkpoint")
    _require_file(args.sentences, "--sentences")
    params, config, extra = M.load_checkpoint(args.checkpoint)
    cfg = resolve_config({}, vars(args))
    cfg["seed"] = extra.get("seed", cfg["seed"])
    cfg["swap_dev_test"] = extra.get("swap_dev_test", cfg["swap_dev_test"])
    datasets, vocab = _load_datasets(cfg, args.data)
    _check_compat(config, datasets, vocab, extra)
    if args.task not in config.task_names:
        raise CompatibilityError(f"task '{args.task}' not in checkpoint tasks")
    task = config.task_names.index(args.task)
    d = config.hidden_size
    n_classes = config.classes[task]
    header = (["sentence", "t", "token"]
              + [f"shared_{j}" for j in range(d)]
              + [f"private_{j}" for j in range(d)]
              + [f"prob_{c}" for c in range(n_classes)])
    lines = [",".join(header)]
    with open(args.sentences, "r", encoding="utf-8") as fh:
        sentences = [line.split() for line in fh if line.split()]
    if not sentences:
        raise InputError(f"{args.sentences}: no sentences")
    for si, tokens in enumerate(sentences):
        ids = vocab.encode(tokens)
        for rec in M.dump_activations(params, config, ids, task):
            private = (rec["private"] if rec["private"] is not None
                       else np.zeros(d))
            row = ([str(si), str(rec["t"]), tokens[rec["t"] - 1]]
                   + [repr(float(v)) for v in rec["shared"]]
                   + [repr(float(v)) for v in private]
                   + [repr(float(v)) for v in rec["class_probs"]])
            lines.append(",".join(row))
    table = "\n".join(lines) + "\n"
    outputs = []
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "activations.csv")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(table)
    outputs.append(out_path)
    write_manifest(args.out, "dump-activations", cfg,
                   {"checkpoint": args.checkpoint, "sentences": args.sentences,
                    "data": args.data},
                   outputs, started)
    print(f"wrote {out_path} ({len(lines) - 1} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advmtl",
        description="Adversarial shared-private multi-task LSTM classification")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data", required=True, help="corpus root directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scheme", choices=M.SCHEMES, default=None)
    p.add_argument("--hidden-size", dest="hidden_size", type=int, default=None)
    p.add_argument("--embed-size", dest="embed_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--lambda", dest="lambda", type=float, default=None,
                   help="adversarial weight (asp only)")
    p.add_argument("--gamma", dest="gamma", type=float, default=None,
                   help="orthogonality weight (asp only)")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--clip-norm", dest="clip_norm", type=float, default=None)
    p.add_argument("--alpha", default=None, help="comma-separated task weights")
    p.add_argument("--unlabeled", dest="unlabeled", action="store_const",
                   const=True, default=None, help="interleave unlabeled batches")
    p.add_argument("--unlabeled-ratio", dest="unlabeled_ratio", type=float, default=None)
    p.add_argument("--diff-mode", dest="diff_mode", choices=("sentence", "batch"),
                   default=None)
    p.add_argument("--alternating", action="store_const", const=True, default=None)
    p.add_argument("--embeddings", default=None, help="pretrained vectors file")
    p.add_argument("--freeze-embeddings", dest="freeze_embeddings",
                   action="store_const", const=True, default=None)
    p.add_argument("--swap-dev-test", dest="swap_dev_test",
                   action="store_const", const=True, default=None)
    p.add_argument("--max-len", dest="max_len", type=int, default=None)
    p.add_argument("--grid", default=None,
                   help="grid spec 'learning_rate=0.1,0.01;lambda=0.01,0.1'")
    p.add_argument("--jobs", type=int, default=None, help="parallel grid cells")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="transfer a frozen shared layer")
    common(p)
    p.add_argument("--checkpoint", required=True, help="source model")
    p.add_argument("--data", required=True)
    p.add_argument("--target", default=None, help="target task name")
    p.add_argument("--all-targets", action="store_true",
                   help="one transfer per task in the data root")
    p.add_argument("--mode", choices=("sc", "bc"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--hidden-size", dest="hidden_size", type=int, default=None)
    p.add_argument("--embed-size", dest="embed_size", type=int, default=None)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("synth", help="generate a synthetic benchmark corpus")
    p.add_argument("--spec", required=True, help="flat key=value synthetic spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("dump-activations", help="per-timestep encoder states")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True,
                   help="corpus root (rebuilds the training vocabulary)")
    p.add_argument("--sentences", required=True,
                   help="file with one pre-tokenized sentence per line")
    p.add_argument("--task", required=True, help="task name for the head")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_activations)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, OSError, DataFormatError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
