"""Joint training of the five subtasks, checkpoints, and per-case prediction.

The train loop accumulates gradients document-by-document within a batch
(sequences have variable length), steps Adam on the batch mean, and applies
dropout to the three representation vectors only.  Prediction follows the
fine-tune-then-predict procedure: clone the parameters, take the configured
number of optimization steps on the lower-court losses with the case's own
lower-court record as targets, then predict the appeal outcome with the
fine-tuned clone.  The stored checkpoint is never mutated.
"""

from __future__ import annotations

import copy
import hashlib
import json
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from . import appellate as ap
from . import numerics as nm
from .corpus import (AppealDocument, CorpusSplits, DataError, LabelSpaces,
                     Vocabulary)
from .encoders import (AttentionParams, BiLstmEncoder, EmbeddingTable,
                       appellate_fact_repr, bilstm_encode, embed_sequence, last_hidden,
                       grounds_attention)
from .lower_court import (LowerCourtParams, TaskGraph, lower_subtask_loss,
                          run_lower_court)
from .numerics import AdamState, RngStream, Tensor, adam_step

TASK_NAMES = ("law_article", "charge", "penalty", "ruling", "appeal_article")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


class CheckpointError(DataError):
    """Corrupt, truncated, or inconsistent checkpoint file."""


@dataclass(frozen=True)
class TrainConfig:
    embedding_dim: int = 200
    hidden_size: int = 256
    batch_size: int = 50
    learning_rate: float = 0.003
    dropout: float = 0.5
    loss_weights: tuple[float, float, float, float, float] = (1.0, 1.0, 1.0, 1.0, 1.0)
    epochs: int = 10
    seed: int = 0
    max_seq_len: int = 512
    fine_tune_steps: int = 1
    positive_class_weight: float = 1.0
    early_stop_patience: int | None = None
    grad_clip_norm: float | None = None
    attention_dim: int | None = None

    def __post_init__(self):
        if min(self.embedding_dim, self.hidden_size, self.batch_size, self.max_seq_len) <= 0:
            raise DataError("dimensions and batch size must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise DataError("dropout must lie in [0, 1)")
        if len(self.loss_weights) != 5 or any(w < 0 for w in self.loss_weights):
            raise DataError("five non-negative loss weights required")
        if self.epochs < 0 or self.fine_tune_steps < 0:
            raise DataError("epochs and fine-tune steps must be non-negative")

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        if "loss_weights" in kwargs:
            kwargs["loss_weights"] = tuple(kwargs["loss_weights"])
        return cls(**kwargs)

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


class SmaJudgeParams:
    """All trainable parameters plus the task graph; the unit of cloning."""

    def __init__(self, config: TrainConfig, vocab_size: int, spaces: LabelSpaces,
                 graph: TaskGraph | None = None, use_attention: bool = True):
        self.config = config
        self.vocab_size = vocab_size
        self.spaces = spaces
        self.graph = graph if graph is not None else TaskGraph()
        self.use_attention = use_attention
        H = config.hidden_size
        rng = RngStream(config.seed)
        self.embedding = EmbeddingTable(vocab_size, config.embedding_dim, rng.spawn(0))
        self.enc_lower = BiLstmEncoder(config.embedding_dim, H, rng.spawn(1), "lower_facts")
        self.enc_appellate = BiLstmEncoder(config.embedding_dim, H, rng.spawn(2), "appellate_facts")
        self.enc_grounds = BiLstmEncoder(config.embedding_dim, H, rng.spawn(3), "grounds")
        self.attention = (AttentionParams(H, rng.spawn(4), config.attention_dim)
                          if use_attention else None)
        label_sizes = (len(spaces.law_articles), len(spaces.charges),
                       len(spaces.penalty_intervals))
        self.lower = LowerCourtParams(self.graph, 2 * H, 2 * H, label_sizes, rng.spawn(5))
        self.appeal_repr_dim = 4 * H if use_attention else 2 * H
        combined = 2 * H + self.appeal_repr_dim
        self.ruling_head = ap.RulingHead(combined, rng.spawn(6))
        self.article_head = ap.ArticleHead(combined, len(spaces.appeal_articles), rng.spawn(7))

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        params.update(self.embedding.named_parameters("embedding"))
        params.update(self.enc_lower.named_parameters("enc_lower"))
        params.update(self.enc_appellate.named_parameters("enc_appellate"))
        params.update(self.enc_grounds.named_parameters("enc_grounds"))
        if self.attention is not None:
            params.update(self.attention.named_parameters("attention"))
        params.update(self.lower.named_parameters("lower"))
        params.update(self.ruling_head.named_parameters("ruling_head"))
        params.update(self.article_head.named_parameters("article_head"))
        return params

    def lower_stage_parameters(self) -> dict[str, Tensor]:
        """Groups reachable from the lower-court losses; the fine-tune set."""
        named = self.named_parameters()
        return {n: t for n, t in named.items()
                if n.startswith(("embedding", "enc_lower", "lower"))}

    def clone(self) -> "SmaJudgeParams":
        other = copy.deepcopy(self)
        for t in other.named_parameters().values():
            t.zero_grad()
        return other

    def zero_grads(self) -> None:
        for t in self.named_parameters().values():
            t.zero_grad()


@dataclass(frozen=True)
class EncodedDoc:
    """Token ids and label indices of one document, ready for the model."""

    case_id: str
    lower_ids: tuple[int, ...]
    appeal_ids: tuple[int, ...]
    ground_ids: tuple[int, ...]
    fact_tokens: tuple[str, ...]
    law_idx: int | None
    charge_idx: int | None
    penalty_idx: int | None
    ruling: int | None
    appeal_article_idx: int | None


def encode_document(doc: AppealDocument, vocab: Vocabulary, spaces: LabelSpaces,
                    max_seq_len: int, require_labels: bool = True) -> EncodedDoc:
    lf = doc.lower_facts[:max_seq_len]
    nf = doc.new_facts[:max_seq_len]
    g = doc.grounds[:max_seq_len]
    fact_tokens = (*lf, *nf)

    law_idx = charge_idx = penalty_idx = None
    if doc.lower_judgment is not None:
        law_idx = spaces.law_index(doc.lower_judgment.law_article)
        charge_idx = spaces.charge_index(doc.lower_judgment.charge)
        penalty_idx = doc.lower_judgment.penalty_interval - 1
    elif require_labels:
        raise DataError(f"{doc.case_id}: lower-court judgment required for training")

    ruling = appeal_idx = None
    if doc.appeal_judgment is not None:
        ruling = doc.appeal_judgment.ruling
        appeal_idx = spaces.appeal_article_index(doc.appeal_judgment.law_article)
    elif require_labels:
        raise DataError(f"{doc.case_id}: appeal judgment required for training")

    return EncodedDoc(
        case_id=doc.case_id,
        lower_ids=tuple(vocab.encode(lf)),
        appeal_ids=tuple(vocab.encode(fact_tokens)),
        ground_ids=tuple(vocab.encode(g)),
        fact_tokens=fact_tokens,
        law_idx=law_idx, charge_idx=charge_idx, penalty_idx=penalty_idx,
        ruling=ruling, appeal_article_idx=appeal_idx,
    )


def encode_split(docs, vocab, spaces, max_seq_len, require_labels=True) -> list[EncodedDoc]:
    return [encode_document(d, vocab, spaces, max_seq_len, require_labels) for d in docs]


@dataclass
class DocForward:
    """Forward-pass outputs of one document."""

    lower_distributions: list[Tensor]
    ruling_probability: Tensor
    article_distribution: Tensor
    attention: np.ndarray | None
    losses: list[Tensor] | None
    joint: Tensor | None


def joint_loss(losses, weights) -> Tensor:
    """Weighted sum of the five subtask losses."""
    if len(losses) != len(weights):
        raise ValueError("one weight per loss required")
    if any(w < 0 for w in weights):
        raise ValueError("loss weights must be non-negative")
    for l in losses:
        if not np.all(np.isfinite(l.data)):
            raise nm.NonFiniteError("non-finite loss in joint objective")
    return nm.add_n([nm.scale(l, w) for l, w in zip(losses, weights)])


def forward_document(params: SmaJudgeParams, ex: EncodedDoc, mode: str = "eval",
                     rng: RngStream | None = None, with_losses: bool = True) -> DocForward:
    cfg = params.config
    rate = cfg.dropout if mode == "train" else 0.0
    rng = rng if rng is not None else RngStream(0)

    x_lf = embed_sequence(ex.lower_ids, params.embedding)
    h_l = last_hidden(bilstm_encode(x_lf, params.enc_lower))
    h_l = nm.dropout(h_l, rate, mode, rng)

    lower_out = run_lower_court(h_l, params.lower)

    x_af = embed_sequence(ex.appeal_ids, params.embedding)
    h_af_seq = bilstm_encode(x_af, params.enc_appellate)
    alpha_data = None
    if params.use_attention:
        x_g = embed_sequence(ex.ground_ids, params.embedding)
        h_g_last = last_hidden(bilstm_encode(x_g, params.enc_grounds))
        alpha, u = grounds_attention(h_af_seq, h_g_last, params.attention)
        h_a = appellate_fact_repr(h_af_seq, u)
        alpha_data = alpha.data.copy()
    else:
        h_a = last_hidden(h_af_seq)
    h_a = nm.dropout(h_a, rate, mode, rng)

    h = ap.combine(h_l, h_a)
    h = nm.dropout(h, rate, mode, rng)
    p_ruling = ap.predict_ruling(h, params.ruling_head)
    article_dist = ap.predict_article(h, params.article_head)

    losses = joint = None
    if with_losses:
        if None in (ex.law_idx, ex.charge_idx, ex.penalty_idx, ex.ruling,
                    ex.appeal_article_idx):
            raise DataError(f"{ex.case_id}: labels required to compute losses")
        losses = [
            lower_subtask_loss(lower_out.distributions[0], ex.law_idx),
            lower_subtask_loss(lower_out.distributions[1], ex.charge_idx),
            lower_subtask_loss(lower_out.distributions[2], ex.penalty_idx),
            ap.ruling_loss(p_ruling, ex.ruling, cfg.positive_class_weight),
            ap.article_loss(article_dist, ex.appeal_article_idx),
        ]
        joint = joint_loss(losses, cfg.loss_weights)

    return DocForward(
        lower_distributions=lower_out.distributions,
        ruling_probability=p_ruling,
        article_distribution=article_dist,
        attention=alpha_data,
        losses=losses,
        joint=joint,
    )


@dataclass
class TrainHistory:
    joint_losses: list[float] = field(default_factory=list)
    subtask_losses: list[tuple[float, float, float, float, float]] = field(default_factory=list)
    validation: list[dict | None] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"joint_losses": self.joint_losses,
                "subtask_losses": [list(t) for t in self.subtask_losses],
                "validation": self.validation}


@dataclass
class Checkpoint:
    params: SmaJudgeParams
    config: TrainConfig
    vocabulary: Vocabulary
    label_spaces: LabelSpaces
    optimizer: AdamState
    seed: int


def _clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor


def train(splits: CorpusSplits, vocab: Vocabulary, spaces: LabelSpaces,
          config: TrainConfig, graph: TaskGraph | None = None,
          use_attention: bool = True, stop_condition=None) -> tuple[Checkpoint, TrainHistory]:
    """Mini-batch Adam over the mean joint loss per batch.

    ``stop_condition(epoch, params, history) -> bool`` ends training early
    when it returns True; validation metrics are recorded each epoch when a
    validation split is present.
    """
    if not splits.train:
        raise DataError("training split is empty")
    from .evaluation import evaluate_split  # deferred: evaluation imports training

    train_docs = encode_split(splits.train, vocab, spaces, config.max_seq_len)
    val_docs = encode_split(splits.validation, vocab, spaces, config.max_seq_len)

    params = SmaJudgeParams(config, len(vocab), spaces, graph, use_attention)
    named = params.named_parameters()
    optimizer = AdamState.for_params(named, lr=config.learning_rate)
    shuffle_rng = RngStream(config.seed).spawn(1001)
    dropout_rng = RngStream(config.seed).spawn(1002)

    history = TrainHistory()
    best_f1 = -1.0
    stale_epochs = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_docs))
        epoch_joint: list[float] = []
        epoch_sub = np.zeros(5)
        for batch_start in range(0, len(order), config.batch_size):
            batch = [train_docs[i] for i in order[batch_start:batch_start + config.batch_size]]
            batch_id = batch_start // config.batch_size
            try:
                for ex in batch:
                    with nm.Tape() as tape:
                        out = forward_document(params, ex, mode="train", rng=dropout_rng)
                        scaled = nm.scale(out.joint, 1.0 / len(batch))
                    nm.backward(scaled, tape)
                    epoch_joint.append(out.joint.item())
                    epoch_sub += [l.item() for l in out.losses]
                grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.data))
                         for n, t in named.items()}
                if config.grad_clip_norm is not None:
                    _clip_gradients(grads, config.grad_clip_norm)
                adam_step(named, grads, optimizer)
            except nm.NonFiniteError as exc:
                raise DivergenceError(
                    f"non-finite value in epoch {epoch}, batch {batch_id}: {exc}") from exc
            params.zero_grads()

        history.joint_losses.append(float(np.mean(epoch_joint)))
        history.subtask_losses.append(tuple(epoch_sub / len(train_docs)))

        val_metrics = None
        if val_docs:
            val_metrics = {task: report.to_dict()
                           for task, report in evaluate_split(params, val_docs).items()}
        history.validation.append(val_metrics)

        if stop_condition is not None and stop_condition(epoch, params, history):
            break
        if config.early_stop_patience is not None and val_metrics is not None:
            f1 = val_metrics["ruling"]["f1"]
            if f1 > best_f1:
                best_f1 = f1
                stale_epochs = 0
            else:
                stale_epochs += 1
                if stale_epochs >= config.early_stop_patience:
                    break

    checkpoint = Checkpoint(params=params, config=config, vocabulary=vocab,
                            label_spaces=spaces, optimizer=optimizer, seed=config.seed)
    return checkpoint, history


def predict_appeal(checkpoint: Checkpoint, doc: AppealDocument) -> ap.AppealPrediction:
    """Fine-tune a private clone on the case's lower-court record, then predict.

    The checkpoint itself is never mutated; calls are independent of each
    other.  A document whose lower-court record is missing or not covered by
    the label spaces is predicted without fine-tuning and flagged.
    """
    cfg = checkpoint.config
    warnings: list[str] = []
    try:
        ex = encode_document(doc, checkpoint.vocabulary, checkpoint.label_spaces,
                             cfg.max_seq_len, require_labels=False)
    except DataError as exc:
        raise DataError(f"{doc.case_id}: {exc}") from exc

    params = checkpoint.params.clone()
    can_fine_tune = None not in (ex.law_idx, ex.charge_idx, ex.penalty_idx)
    if not can_fine_tune:
        warnings.append("lower-court record missing; prediction without fine-tuning")

    if can_fine_tune and cfg.fine_tune_steps > 0:
        subset = params.lower_stage_parameters()
        optimizer = AdamState.for_params(subset, lr=cfg.learning_rate)
        for _ in range(cfg.fine_tune_steps):
            with nm.Tape() as tape:
                x_lf = embed_sequence(ex.lower_ids, params.embedding)
                h_l = last_hidden(bilstm_encode(x_lf, params.enc_lower))
                lower_out = run_lower_court(h_l, params.lower)
                loss = nm.add_n([
                    lower_subtask_loss(lower_out.distributions[0], ex.law_idx),
                    lower_subtask_loss(lower_out.distributions[1], ex.charge_idx),
                    lower_subtask_loss(lower_out.distributions[2], ex.penalty_idx),
                ])
            nm.backward(loss, tape)
            grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.data))
                     for n, t in subset.items()}
            adam_step(subset, grads, optimizer)
            for t in subset.values():
                t.zero_grad()

    out = forward_document(params, ex, mode="eval", with_losses=False)
    prob = out.ruling_probability.item()
    article = out.article_distribution.data
    return ap.AppealPrediction(
        ruling_probability=prob,
        ruling_class=int(prob >= ap.RULING_THRESHOLD),
        article_distribution=article.copy(),
        article_index=int(np.argmax(article)),
        attention=out.attention,
        fact_tokens=ex.fact_tokens,
        fine_tuned=can_fine_tune and cfg.fine_tune_steps > 0,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# checkpoint serialization

_MAGIC = b"SMAJCKP1"
_VERSION = 1


def _array_manifest(checkpoint: Checkpoint) -> list[tuple[str, np.ndarray]]:
    entries = []
    for name, t in checkpoint.params.named_parameters().items():
        entries.append((f"param.{name}", t.data))
    for name in checkpoint.params.named_parameters():
        entries.append((f"adam.m.{name}", checkpoint.optimizer.m[name]))
        entries.append((f"adam.v.{name}", checkpoint.optimizer.v[name]))
    return entries


def serialize_checkpoint(checkpoint: Checkpoint) -> bytes:
    arrays = _array_manifest(checkpoint)
    header = {
        "config": checkpoint.config.to_dict(),
        "config_digest": checkpoint.config.digest(),
        "vocabulary": checkpoint.vocabulary.to_dict(),
        "label_spaces": checkpoint.label_spaces.to_dict(),
        "task_graph": checkpoint.params.graph.to_dict(),
        "use_attention": checkpoint.params.use_attention,
        "seed": checkpoint.seed,
        "optimizer": {"t": checkpoint.optimizer.t, "lr": checkpoint.optimizer.lr,
                      "beta1": checkpoint.optimizer.beta1, "beta2": checkpoint.optimizer.beta2,
                      "eps": checkpoint.optimizer.eps},
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<I", _VERSION)
    blob += struct.pack("<Q", len(header_bytes))
    blob += header_bytes
    for _, arr in arrays:
        blob += np.ascontiguousarray(arr, dtype=np.float64).tobytes()
    blob += hashlib.sha256(bytes(blob)).digest()
    return bytes(blob)


def checkpoint_digest(checkpoint: Checkpoint) -> str:
    return hashlib.sha256(serialize_checkpoint(checkpoint)).hexdigest()


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_checkpoint(checkpoint))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    return deserialize_checkpoint(blob)


def deserialize_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < len(_MAGIC) + 4 + 8 + 32:
        raise CheckpointError("truncated checkpoint file")
    if blob[:len(_MAGIC)] != _MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
        raise CheckpointError("checksum mismatch: corrupt or truncated checkpoint")
    offset = len(_MAGIC)
    (version,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    offset += header_len

    config = TrainConfig.from_dict(header["config"])
    if config.digest() != header["config_digest"]:
        raise CheckpointError("config digest mismatch")
    vocab = Vocabulary.from_dict(header["vocabulary"])
    spaces = LabelSpaces.from_dict(header["label_spaces"])
    graph = TaskGraph.from_dict(header["task_graph"])
    params = SmaJudgeParams(config, len(vocab), spaces, graph, header["use_attention"])
    named = params.named_parameters()

    opt = header["optimizer"]
    optimizer = AdamState({n: t.shape for n, t in named.items()}, lr=opt["lr"],
                          beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"])
    optimizer.t = opt["t"]

    targets: dict[str, np.ndarray] = {}
    for name, t in named.items():
        targets[f"param.{name}"] = t.data
    for name in named:
        targets[f"adam.m.{name}"] = optimizer.m[name]
        targets[f"adam.v.{name}"] = optimizer.v[name]

    manifest = header["arrays"]
    if set(e["name"] for e in manifest) != set(targets):
        raise CheckpointError("parameter manifest does not match the configuration")
    for entry in manifest:
        target = targets[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != target.shape:
            raise CheckpointError(
                f"shape mismatch for {entry['name']}: file {shape}, config {target.shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        chunk = blob[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError("truncated parameter block")
        target[...] = np.frombuffer(chunk, dtype=np.float64).reshape(shape)
        offset += nbytes
    if offset != len(blob) - 32:
        raise CheckpointError("trailing bytes after parameter blocks")

    return Checkpoint(params=params, config=config, vocabulary=vocab,
                      label_spaces=spaces, optimizer=optimizer, seed=header["seed"])
