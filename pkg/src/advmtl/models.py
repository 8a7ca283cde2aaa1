"""Model assembly for the three sharing schemes.

``fs``  one shared LSTM, per-task heads over its final state.
``sp``  shared plus one private LSTM per task; heads read the
        concatenation (private, shared) of the two final states.
``asp`` ``sp`` plus a task discriminator fed the gradient-reversed final
        shared state, trained jointly through the reversal node.

Transfer models reuse a frozen shared layer: single-channel (head over
the frozen encoder alone) or bi-channel (frozen encoder next to a fresh
trainable one).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import GradReversalSpec, Node, Tape, Tensor
from .errors import ConfigError, ContractError, DataFormatError, InputError, ShapeError

SCHEMES = ("fs", "sp", "asp")
CONCAT_ORDER = "private,shared"
CHECKPOINT_MAGIC = b"ADVMTL01"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    scheme: str
    task_names: tuple[str, ...]
    classes: tuple[int, ...]
    hidden_size: int
    embed_size: int
    vocab_size: int

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme '{self.scheme}', want one of {SCHEMES}")
        if len(self.task_names) != len(self.classes):
            raise ConfigError("task_names and classes must have equal length")
        if len(self.task_names) < 1:
            raise ConfigError("at least one task required")
        if self.scheme == "asp" and len(self.task_names) < 2:
            raise ConfigError("adversarial scheme needs at least 2 tasks")
        if any(c < 2 for c in self.classes):
            raise ConfigError("each task needs at least 2 classes")
        if min(self.hidden_size, self.embed_size) < 1 or self.vocab_size < 2:
            raise ConfigError("hidden/embed sizes must be >= 1, vocab >= 2")

    @property
    def n_tasks(self) -> int:
        return len(self.task_names)

    @property
    def has_private(self) -> bool:
        return self.scheme != "fs"

    @property
    def has_discriminator(self) -> bool:
        return self.scheme == "asp"

    @property
    def head_input_size(self) -> int:
        return 2 * self.hidden_size if self.has_private else self.hidden_size


@dataclass
class ModelParams:
    """All learnable tensors of one model, plus the set of frozen names."""

    embeddings: nn.EmbeddingTable
    shared: nn.LstmParams
    private: list[nn.LstmParams] | None
    heads: list[nn.SoftmaxHead]
    disc: nn.SoftmaxHead | None
    frozen: frozenset[str] = frozenset()

    def named_tensors(self) -> dict[str, Tensor]:
        """Stable name -> array view of every parameter (checkpoint order)."""
        out: dict[str, Tensor] = {"embeddings": self.embeddings.matrix,
                                  "shared.W": self.shared.W,
                                  "shared.b": self.shared.b}
        if self.private is not None:
            for k, p in enumerate(self.private):
                out[f"private.{k}.W"] = p.W
                out[f"private.{k}.b"] = p.b
        for k, h in enumerate(self.heads):
            out[f"head.{k}.W"] = h.W
            out[f"head.{k}.b"] = h.b
        if self.disc is not None:
            out["disc.W"] = self.disc.W
            out["disc.b"] = self.disc.b
        return out

    def frozen_names(self) -> frozenset[str]:
        names = set(self.frozen)
        if not self.embeddings.trainable:
            names.add("embeddings")
        return frozenset(names)

    def trainable_names(self) -> list[str]:
        frozen = self.frozen_names()
        return [n for n in self.named_tensors() if n not in frozen]

    def bind(self, tape: Tape) -> dict[str, Node]:
        """Register all tensors on a tape; frozen ones as constants."""
        frozen = self.frozen_names()
        return {name: (tape.constant(arr, validate=False) if name in frozen
                       else tape.leaf(arr, validate=False))
                for name, arr in self.named_tensors().items()}

    def copy(self) -> "ModelParams":
        return ModelParams(
            embeddings=nn.EmbeddingTable(self.embeddings.matrix.copy(),
                                         self.embeddings.trainable),
            shared=nn.LstmParams(self.shared.W.copy(), self.shared.b.copy()),
            private=None if self.private is None else
            [nn.LstmParams(p.W.copy(), p.b.copy()) for p in self.private],
            heads=[nn.SoftmaxHead(h.W.copy(), h.b.copy()) for h in self.heads],
            disc=None if self.disc is None else
            nn.SoftmaxHead(self.disc.W.copy(), self.disc.b.copy()),
            frozen=self.frozen)


def init_model(config: ModelConfig, seed: int,
               embedding_matrix: Tensor | None = None,
               freeze_embeddings: bool = False) -> ModelParams:
    """Fresh parameters, drawn uniform on [-0.1, 0.1] from ``seed``.

    ``embedding_matrix`` (e.g. pretrained vectors) overrides the random
    embedding init; the rng draw order is fixed so identical seeds give
    identical models.
    """
    rng = np.random.default_rng(seed)
    d, e = config.hidden_size, config.embed_size
    emb = nn.init_embeddings(rng, config.vocab_size, e)
    if embedding_matrix is not None:
        if embedding_matrix.shape != emb.matrix.shape:
            raise ShapeError(
                f"embedding matrix {embedding_matrix.shape} does not match "
                f"(vocab, embed) = {emb.matrix.shape}")
        emb.matrix = np.array(embedding_matrix, dtype=np.float64)
    emb.trainable = not freeze_embeddings
    shared = nn.init_lstm(rng, d, e)
    private = ([nn.init_lstm(rng, d, e) for _ in range(config.n_tasks)]
               if config.has_private else None)
    heads = [nn.init_head(rng, c, config.head_input_size) for c in config.classes]
    disc = nn.init_head(rng, config.n_tasks, d) if config.has_discriminator else None
    return ModelParams(embeddings=emb, shared=shared, private=private,
                       heads=heads, disc=disc)


@dataclass
class ForwardResult:
    class_probs: Node
    s_T: Node
    S: Node
    h_T: Node | None = None
    H: Node | None = None
    disc_probs: Node | None = None


def _check_task(config: ModelConfig, task: int) -> None:
    if not 0 <= task < config.n_tasks:
        raise InputError(f"unknown task index {task} for {config.n_tasks} tasks")


def forward(tape: Tape, bound: Mapping[str, Node], config: ModelConfig,
            token_ids: Sequence[int], task: int,
            rev_spec: GradReversalSpec | None = None,
            want_disc: bool = True) -> ForwardResult:
    """Run one sentence through the scheme's encoders and its task head."""
    _check_task(config, task)
    xs = nn.embed_sequence(bound["embeddings"], token_ids)
    s_T, S = nn.lstm_encode(xs, bound["shared.W"], bound["shared.b"])
    h_T = H = None
    if config.has_private:
        h_T, H = nn.lstm_encode(xs, bound[f"private.{task}.W"],
                                bound[f"private.{task}.b"])
        feature = ad.concat([h_T, s_T])
    else:
        feature = s_T
    probs = nn.softmax_classify(feature, bound[f"head.{task}.W"],
                                bound[f"head.{task}.b"])
    disc_probs = None
    if config.has_discriminator and want_disc:
        spec = rev_spec if rev_spec is not None else GradReversalSpec(1.0)
        rev = ad.gradient_reversal(s_T, spec)
        disc_probs = discriminate(rev, bound["disc.W"], bound["disc.b"])
    return ForwardResult(class_probs=probs, s_T=s_T, S=S, h_T=h_T, H=H,
                         disc_probs=disc_probs)


def forward_shared(tape: Tape, bound: Mapping[str, Node], config: ModelConfig,
                   token_ids: Sequence[int]) -> tuple[Node, Node]:
    """Shared encoder only (the unlabeled-data path); returns (s_T, S)."""
    xs = nn.embed_sequence(bound["embeddings"], token_ids)
    return nn.lstm_encode(xs, bound["shared.W"], bound["shared.b"])


def discriminate(s: Node, W: Node, b: Node) -> Node:
    """Task probabilities softmax(W s + b) from a shared representation."""
    if s.value.shape != (W.value.shape[1],):
        raise ShapeError(
            f"discriminate: feature shape {s.value.shape} does not match "
            f"discriminator input width {W.value.shape[1]}")
    return ad.softmax(ad.add(ad.matmul(W, s), b))


def build_transfer(shared: nn.LstmParams, mode: str, task_name: str,
                   n_classes: int, vocab_size: int, seed: int,
                   embed_size: int | None = None) -> tuple[ModelParams, ModelConfig]:
    """Target-task model around a frozen copy of a trained shared layer.

    ``sc`` classifies on the frozen encoder's final state alone; ``bc``
    adds a fresh trainable LSTM and classifies on the concatenated pair.
    Only the shared tensors are frozen; everything else is freshly
    initialized.
    """
    if mode not in ("sc", "bc"):
        raise ConfigError(f"transfer mode must be 'sc' or 'bc', got '{mode}'")
    d = shared.hidden_size
    e = shared.input_size if embed_size is None else embed_size
    if e != shared.input_size:
        raise ConfigError(
            f"embed size {e} does not match transferred layer input {shared.input_size}")
    config = ModelConfig(scheme="fs" if mode == "sc" else "sp",
                         task_names=(task_name,), classes=(n_classes,),
                         hidden_size=d, embed_size=e, vocab_size=vocab_size)
    params = init_model(config, seed)
    params.shared = nn.LstmParams(shared.W.copy(), shared.b.copy())
    params.frozen = frozenset({"shared.W", "shared.b"})
    return params, config


def dump_activations(params: ModelParams, config: ModelConfig,
                     token_ids: Sequence[int], task: int) -> list[dict]:
    """Per-timestep encoder states plus the head's running prediction.

    Record ``t`` (1-based) holds the shared and private hidden vectors at
    that step and the class distribution the task head assigns to the
    prefix ending there; the last record matches ``forward``.
    """
    _check_task(config, task)
    tape = Tape()
    bound = params.bind(tape)
    xs = nn.embed_sequence(bound["embeddings"], token_ids)
    _, S = nn.lstm_encode(xs, bound["shared.W"], bound["shared.b"])
    H = None
    if config.has_private:
        _, H = nn.lstm_encode(xs, bound[f"private.{task}.W"],
                              bound[f"private.{task}.b"])
    head_W, head_b = bound[f"head.{task}.W"], bound[f"head.{task}.b"]
    records = []
    for t in range(len(token_ids)):
        s_t = ad.row(S, t)
        if H is not None:
            feat = ad.concat([ad.row(H, t), s_t])
        else:
            feat = s_t
        probs = nn.softmax_classify(feat, head_W, head_b)
        records.append({
            "t": t + 1,
            "token_id": int(token_ids[t]),
            "shared": S.value[t].copy(),
            "private": H.value[t].copy() if H is not None else None,
            "class_probs": probs.value.copy(),
        })
    return records


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def _manifest(params: ModelParams, config: ModelConfig, extra: dict | None) -> dict:
    tensors = [{"name": n, "shape": list(a.shape)}
               for n, a in params.named_tensors().items()]
    return {
        "format_version": CHECKPOINT_VERSION,
        "scheme": config.scheme,
        "task_names": list(config.task_names),
        "classes": list(config.classes),
        "hidden_size": config.hidden_size,
        "embed_size": config.embed_size,
        "vocab_size": config.vocab_size,
        "gate_block_order": nn.GATE_BLOCK_ORDER,
        "input_order": nn.INPUT_ORDER,
        "concat_order": CONCAT_ORDER,
        "frozen": sorted(params.frozen_names()),
        "embeddings_trainable": params.embeddings.trainable,
        "tensors": tensors,
        "extra": extra or {},
    }


def save_checkpoint(path, params: ModelParams, config: ModelConfig,
                    extra: dict | None = None) -> None:
    """Write a byte-stable container: magic, JSON header, raw f64 blobs."""
    header = json.dumps(_manifest(params, config, extra),
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for arr in params.named_tensors().values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig, dict]:
    """Read a container written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DataFormatError(f"{path}: not a checkpoint file")
        header_len = int.from_bytes(fh.read(8), "little")
        manifest = json.loads(fh.read(header_len).decode("utf-8"))
        if manifest.get("format_version") != CHECKPOINT_VERSION:
            raise DataFormatError(
                f"{path}: unsupported checkpoint version {manifest.get('format_version')}")
        arrays = {}
        for spec in manifest["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise DataFormatError(f"{path}: truncated tensor '{spec['name']}'")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    config = ModelConfig(scheme=manifest["scheme"],
                         task_names=tuple(manifest["task_names"]),
                         classes=tuple(manifest["classes"]),
                         hidden_size=manifest["hidden_size"],
                         embed_size=manifest["embed_size"],
                         vocab_size=manifest["vocab_size"])
    emb = nn.EmbeddingTable(arrays["embeddings"],
                            trainable=manifest["embeddings_trainable"])
    shared = nn.LstmParams(arrays["shared.W"], arrays["shared.b"])
    private = None
    if config.has_private:
        private = [nn.LstmParams(arrays[f"private.{k}.W"], arrays[f"private.{k}.b"])
                   for k in range(config.n_tasks)]
    heads = [nn.SoftmaxHead(arrays[f"head.{k}.W"], arrays[f"head.{k}.b"])
             for k in range(config.n_tasks)]
    disc = None
    if config.has_discriminator:
        disc = nn.SoftmaxHead(arrays["disc.W"], arrays["disc.b"])
    frozen = frozenset(manifest["frozen"]) - {"embeddings"}
    params = ModelParams(embeddings=emb, shared=shared, private=private,
                         heads=heads, disc=disc, frozen=frozen)
    return params, config, manifest.get("extra", {})
