"""Training loop and evaluation.

One optimization step draws one task's batch (strict round-robin),
assembles the combined objective on a fresh tape, backpropagates once,
and updates every trainable tensor jointly; the gradient-reversal node
inside the adversarial term is what sends the shared encoder and the
discriminator in opposing directions. Unlabeled batches (when enabled)
contribute the adversarial term only.

An epoch is one pass over the largest task's training split; smaller
tasks cycle. Early stopping watches mean dev error across tasks and
returns the best-dev checkpoint.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import models as M
from .autodiff import GradReversalSpec, Tape, Tensor
from .data import Batch, TaskBatcher, TaskDataset, Example
from .errors import ConfigError, ContractError, InputError, NumericError


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    adv_weight: float = 0.05
    diff_weight: float = 0.01
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 5
    clip_norm: float = 5.0
    seed: int = 0
    alpha: Mapping[int, float] | None = None
    use_unlabeled: bool = False
    unlabeled_ratio: float = 1.0
    diff_mode: str = "sentence"
    alternating: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.adv_weight < 0 or self.diff_weight < 0:
            raise ConfigError("adversarial and diff weights must be >= 0")
        if self.diff_mode not in ("sentence", "batch"):
            raise ConfigError(f"diff_mode must be 'sentence' or 'batch', got {self.diff_mode}")
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be > 0, got {self.clip_norm}")


@dataclass
class EpochTaskRecord:
    epoch: int
    task: str
    train_loss: float
    dev_error: float
    disc_acc: float | None
    l_adv: float | None
    l_diff: float | None


@dataclass
class TrainHistory:
    records: list[EpochTaskRecord] = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False

    def epochs(self) -> list[int]:
        return sorted({r.epoch for r in self.records})

    def mean_dev_error(self, epoch: int) -> float:
        errs = [r.dev_error for r in self.records if r.epoch == epoch]
        if not errs:
            raise InputError(f"no records for epoch {epoch}")
        return float(np.mean(errs))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,task,train_loss,dev_error,disc_acc,l_adv,l_diff\n")
            for r in self.records:
                opt = lambda v: "" if v is None else repr(float(v))
                fh.write(f"{r.epoch},{r.task},{repr(float(r.train_loss))},"
                         f"{repr(float(r.dev_error))},{opt(r.disc_acc)},"
                         f"{opt(r.l_adv)},{opt(r.l_diff)}\n")


def sgd_step(params: M.ModelParams, grads: Mapping[str, Tensor],
             lr: float, clip_norm: float = float("inf")) -> None:
    """Global-norm clipping then an in-place descent step.

    ``grads`` must be keyed to trainable tensors only; frozen names are a
    contract violation. NaN/Inf gradients abort naming the tensor.
    """
    tensors = params.named_tensors()
    frozen = params.frozen_names()
    sq = 0.0
    for name, g in grads.items():
        if name in frozen:
            raise ContractError(f"gradient supplied for frozen parameter '{name}'")
        if name not in tensors:
            raise ContractError(f"gradient for unknown parameter '{name}'")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        sq += float((g * g).sum())
    if lr == 0.0:
        return
    gnorm = float(np.sqrt(sq))
    factor = clip_norm / gnorm if gnorm > clip_norm else 1.0
    step = lr * factor
    for name, g in grads.items():
        tensors[name] -= step * g


def _leaf_grads(tape: Tape, bound: Mapping[str, ad.Node], loss: ad.Node) -> dict[str, Tensor]:
    by_id = ad.backward(tape, loss)
    return {name: by_id[node.idx] for name, node in bound.items() if node.is_leaf}


def _batch_terms(tape: Tape, bound, config: M.ModelConfig, batch: Batch,
                 cfg: TrainConfig):
    """Per-batch loss nodes: (task CE, adversarial CE, diff) — None where n/a."""
    adversarial = config.has_discriminator
    rev = GradReversalSpec(cfg.adv_weight) if adversarial else None
    n_classes = config.classes[batch.task]
    ce_nodes, adv_nodes, diff_nodes = [], [], []
    finals = []
    if batch.is_unlabeled:
        if not adversarial:
            raise ContractError("unlabeled batches require the adversarial scheme")
        for seq in batch.sequences:
            s_T, _ = M.forward_shared(tape, bound, config, seq)
            adv_nodes.append(L.adversarial_loss(
                s_T, batch.task, config.n_tasks, bound["disc.W"], bound["disc.b"], rev))
        return None, ad.mean_of(adv_nodes), None
    for seq, label in zip(batch.sequences, batch.labels):
        res = M.forward(tape, bound, config, seq, batch.task,
                        rev_spec=rev, want_disc=adversarial)
        ce_nodes.append(L.cross_entropy(res.class_probs, L.onehot(label, n_classes)))
        if adversarial:
            adv_nodes.append(L.cross_entropy(
                res.disc_probs, L.onehot(batch.task, config.n_tasks)))
            if cfg.diff_mode == "sentence":
                diff_nodes.append(L.diff_loss(res.S, res.H))
            else:
                finals.append((res.s_T, res.h_T))
    l_ce = ad.mean_of(ce_nodes)
    l_adv = ad.mean_of(adv_nodes) if adv_nodes else None
    if diff_nodes:
        l_diff = ad.mean_of(diff_nodes)
    elif finals:
        S = ad.stack_rows([s for s, _ in finals])
        H = ad.stack_rows([h for _, h in finals])
        l_diff = ad.scale(L.diff_loss(S, H), 1.0 / len(finals))
    else:
        l_diff = None
    return l_ce, l_adv, l_diff


def _combine(tape: Tape, l_ce, l_adv, l_diff, task: int, cfg: TrainConfig) -> ad.Node:
    """Total objective for one step.

    The adversarial weight acts through the reversal node (the
    discriminator itself trains at full rate), so the adversarial term
    enters the sum unscaled; the diff term is scaled by its weight.
    """
    zero = lambda: tape.constant(0.0)
    weights = L.LossWeights(adv=1.0, diff=cfg.diff_weight, alpha=None)
    if l_ce is None:
        return L.total_loss(zero(), l_adv, zero(), weights)
    l_task = L.task_loss({task: l_ce}, L.LossWeights(adv=0, diff=0, alpha=cfg.alpha))
    return L.total_loss(l_task, l_adv if l_adv is not None else zero(),
                        l_diff if l_diff is not None else zero(), weights)


def _apply_step(params: M.ModelParams, tape: Tape, bound, total: ad.Node,
                cfg: TrainConfig, subset: str | None = None) -> None:
    grads = _leaf_grads(tape, bound, total)
    if subset == "disc":
        grads = {n: g for n, g in grads.items() if n.startswith("disc.")}
    elif subset == "nondisc":
        grads = {n: g for n, g in grads.items() if not n.startswith("disc.")}
    sgd_step(params, grads, cfg.learning_rate, cfg.clip_norm)


def _train_one_batch(params: M.ModelParams, config: M.ModelConfig, batch: Batch,
                     cfg: TrainConfig):
    """One optimization step; returns the term values for bookkeeping."""
    def build():
        tape = Tape()
        bound = params.bind(tape)
        l_ce, l_adv, l_diff = _batch_terms(tape, bound, config, batch, cfg)
        total = _combine(tape, l_ce, l_adv, l_diff, batch.task, cfg)
        return tape, bound, (l_ce, l_adv, l_diff), total

    tape, bound, parts, total = build()
    if not np.isfinite(total.value):
        raise NumericError("training loss is not finite")
    if cfg.alternating and config.has_discriminator:
        _apply_step(params, tape, bound, total, cfg, subset="disc")
        tape, bound, parts, total = build()
        _apply_step(params, tape, bound, total, cfg, subset="nondisc")
    else:
        _apply_step(params, tape, bound, total, cfg)
    vals = tuple(None if p is None else float(p.value) for p in parts)
    return vals


def evaluate(params: M.ModelParams, config: M.ModelConfig,
             examples: Sequence[Example], task: int) -> float:
    """Error rate of argmax predictions (argmax breaks ties toward class 0)."""
    if not examples:
        raise InputError("evaluate: empty split")
    wrong = 0
    for ex in examples:
        tape = Tape()
        bound = params.bind(tape)
        res = M.forward(tape, bound, config, ex.tokens, task, want_disc=False)
        if int(np.argmax(res.class_probs.value)) != ex.label:
            wrong += 1
    return wrong / len(examples)


def _dev_stats(params: M.ModelParams, config: M.ModelConfig,
               tasks: Sequence[TaskDataset]):
    """Per-task dev error and (for adversarial models) dev discriminator accuracy."""
    errors, disc_accs = [], []
    for k, ds in enumerate(tasks):
        wrong = 0
        disc_right = 0
        for ex in ds.dev:
            tape = Tape()
            bound = params.bind(tape)
            res = M.forward(tape, bound, config, ex.tokens, k,
                            want_disc=config.has_discriminator)
            if int(np.argmax(res.class_probs.value)) != ex.label:
                wrong += 1
            if res.disc_probs is not None and int(np.argmax(res.disc_probs.value)) == k:
                disc_right += 1
        errors.append(wrong / len(ds.dev) if ds.dev else 0.0)
        disc_accs.append(disc_right / len(ds.dev) if ds.dev else 0.0)
    return errors, (disc_accs if config.has_discriminator else None)


def train_multitask(params: M.ModelParams, config: M.ModelConfig,
                    datasets: Mapping[str, TaskDataset],
                    cfg: TrainConfig) -> tuple[M.ModelParams, TrainHistory]:
    """Joint min-max training; returns the best-dev checkpoint and history.

    On divergence (non-finite loss or gradient) training stops and the
    best checkpoint so far is returned with ``history.diverged`` set.
    """
    tasks = []
    for k, name in enumerate(config.task_names):
        if name not in datasets:
            raise ConfigError(f"dataset for task '{name}' missing")
        ds = datasets[name]
        if ds.n_classes != config.classes[k]:
            raise ConfigError(
                f"task '{name}': dataset has {ds.n_classes} classes, "
                f"model expects {config.classes[k]}")
        tasks.append(ds)
    use_unlabeled = (cfg.use_unlabeled and config.has_discriminator)
    batcher = TaskBatcher(tasks, cfg.batch_size, cfg.seed, cfg.unlabeled_ratio)
    history = TrainHistory()
    best_err = float("inf")
    best_params = params.copy()
    best_epoch = -1
    since_best = 0
    K = config.n_tasks
    for epoch in range(cfg.max_epochs):
        sums = {k: [0.0, 0.0, 0.0, 0] for k in range(K)}  # ce, adv, diff, batches
        diverged = False
        for _ in range(batcher.steps_per_epoch()):
            for k in range(K):
                work = [batcher.next_labeled(k)]
                if use_unlabeled:
                    work.extend(batcher.next_unlabeled(k))
                for batch in work:
                    try:
                        ce, adv, diff = _train_one_batch(params, config, batch, cfg)
                    except NumericError:
                        diverged = True
                        break
                    if not batch.is_unlabeled:
                        s = sums[k]
                        s[0] += ce
                        s[1] += adv if adv is not None else 0.0
                        s[2] += diff if diff is not None else 0.0
                        s[3] += 1
                if diverged:
                    break
            if diverged:
                break
        if diverged:
            history.diverged = True
            break
        errors, disc_accs = _dev_stats(params, config, tasks)
        for k, name in enumerate(config.task_names):
            ce_sum, adv_sum, diff_sum, n = sums[k]
            n = max(n, 1)
            history.records.append(EpochTaskRecord(
                epoch=epoch, task=name,
                train_loss=ce_sum / n, dev_error=errors[k],
                disc_acc=None if disc_accs is None else disc_accs[k],
                l_adv=adv_sum / n if config.has_discriminator else None,
                l_diff=diff_sum / n if config.has_discriminator else None))
        mean_err = float(np.mean(errors))
        if mean_err < best_err:
            best_err = mean_err
            best_params = params.copy()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    history.best_epoch = best_epoch
    return best_params, history


def shared_features(params: M.ModelParams, config: M.ModelConfig,
                    sentences: Sequence[Sequence[int]]) -> Tensor:
    """Final shared-encoder states, one row per sentence."""
    out = np.empty((len(sentences), config.hidden_size))
    for i, seq in enumerate(sentences):
        tape = Tape()
        bound = params.bind(tape)
        s_T, _ = M.forward_shared(tape, bound, config, seq)
        out[i] = s_T.value
    return out


def fit_probe(features: Tensor, labels: Sequence[int], n_classes: int,
              iters: int = 300, lr: float = 1.0) -> tuple[Tensor, Tensor]:
    """Multinomial logistic regression by full-batch gradient descent.

    The measurement instrument for shared-space purity: train it on
    frozen features, then read its accuracy on held-out features. The
    in-loop adversarial discriminator is not a valid purity measure
    because it is being actively fooled.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    n, d = X.shape
    Y = np.zeros((n, n_classes))
    Y[np.arange(n), y] = 1.0
    W = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    for _ in range(iters):
        logits = X @ W.T + b
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        P = e / e.sum(axis=1, keepdims=True)
        G = (P - Y) / n
        W -= lr * (G.T @ X)
        b -= lr * G.sum(axis=0)
    return W, b


def probe_accuracy(W: Tensor, b: Tensor, features: Tensor,
                   labels: Sequence[int]) -> float:
    pred = np.argmax(features @ W.T + b, axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def probe_shared_purity(params: M.ModelParams, config: M.ModelConfig,
                        datasets: Mapping[str, TaskDataset],
                        iters: int = 300, lr: float = 1.0) -> float:
    """Accuracy of a fresh probe discriminator on frozen shared features.

    Fits on training-split features, reports accuracy on dev-split
    features; chance level is 1/K.
    """
    train_X, train_y, dev_X, dev_y = [], [], [], []
    for k, name in enumerate(config.task_names):
        ds = datasets[name]
        train_X.append(shared_features(params, config, [e.tokens for e in ds.train]))
        train_y.extend([k] * len(ds.train))
        dev_X.append(shared_features(params, config, [e.tokens for e in ds.dev]))
        dev_y.extend([k] * len(ds.dev))
    W, b = fit_probe(np.vstack(train_X), train_y, config.n_tasks, iters, lr)
    return probe_accuracy(W, b, np.vstack(dev_X), dev_y)


def shared_private_cosine(params: M.ModelParams, config: M.ModelConfig,
                          datasets: Mapping[str, TaskDataset],
                          split: str = "dev") -> float:
    """Mean |cosine| between final shared and private states over a split."""
    if not config.has_private:
        raise ConfigError("cosine diagnostic needs a scheme with private encoders")
    vals = []
    for k, name in enumerate(config.task_names):
        for ex in datasets[name].split(split):
            tape = Tape()
            bound = params.bind(tape)
            res = M.forward(tape, bound, config, ex.tokens, k, want_disc=False)
            s, h = res.s_T.value, res.h_T.value
            denom = np.linalg.norm(s) * np.linalg.norm(h)
            if denom > 0:
                vals.append(abs(float(s @ h)) / denom)
    return float(np.mean(vals)) if vals else 0.0


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

@dataclass
class GridResult:
    best_config: TrainConfig
    best_index: int
    best_params: M.ModelParams
    best_history: TrainHistory
    cells: list[tuple[dict, float]]


def _grid_cell(factory, datasets, cfg: TrainConfig):
    params, config = factory()
    trained, history = train_multitask(params, config, datasets, cfg)
    if history.best_epoch < 0:
        return trained, history, float("inf")
    return trained, history, history.mean_dev_error(history.best_epoch)


def grid_search(factory: Callable[[], tuple[M.ModelParams, M.ModelConfig]],
                datasets: Mapping[str, TaskDataset], grid: Mapping[str, Sequence],
                base_cfg: TrainConfig, jobs: int = 1) -> GridResult:
    """Train one model per grid cell; pick the lowest mean dev error.

    Cells are enumerated in deterministic key/value order; ties resolve
    to the earliest cell. Divergent cells score inf and lose.
    """
    keys = list(grid.keys())
    combos = list(itertools.product(*(grid[k] for k in keys)))
    if not combos:
        raise ConfigError("empty grid")
    cfgs = [replace(base_cfg, **dict(zip(keys, combo))) for combo in combos]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outs = list(ex.map(_grid_cell, [factory] * len(cfgs),
                               [datasets] * len(cfgs), cfgs))
    else:
        outs = [_grid_cell(factory, datasets, cfg) for cfg in cfgs]
    errs = [o[2] for o in outs]
    best_index = int(np.argmin(errs))
    cells = [(dict(zip(keys, combo)), err) for combo, err in zip(combos, errs)]
    return GridResult(best_config=cfgs[best_index], best_index=best_index,
                      best_params=outs[best_index][0],
                      best_history=outs[best_index][1], cells=cells)


# ---------------------------------------------------------------------------
# transfer
# ---------------------------------------------------------------------------

def train_transfer(source_shared, target: TaskDataset, mode: str,
                   cfg: TrainConfig, vocab_size: int, model_seed: int,
                   ) -> tuple[M.ModelParams, M.ModelConfig, TrainHistory, float]:
    """Train an SC/BC model on the target task around a frozen shared layer."""
    params, config = M.build_transfer(source_shared, mode, target.name,
                                      target.n_classes, vocab_size, model_seed)
    trained, history = train_multitask(params, config, {target.name: target}, cfg)
    err = evaluate(trained, config, target.test, 0)
    return trained, config, history, err
