"""Metrics, ablation variants, training-size sensitivity runs, heatmap export.

The four headline metrics use pooled one-vs-rest sums over classes exactly
as the reference formulas print them; conventional per-class macro averages
are emitted under separate ``macro_*`` keys for diagnostics.
"""

from __future__ import annotations

import csv
import html
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import numerics as nm
from .appellate import (AppealPrediction, ArticleHead, RulingHead,
                        article_loss, predict_article, predict_ruling,
                        ruling_loss)
from .corpus import AppealDocument, CorpusSplits, DataError, LabelSpaces, Vocabulary
from .encoders import (AttentionParams, BiLstmEncoder, EmbeddingTable,
                       appellate_fact_repr, bilstm_encode, embed_sequence, last_hidden,
                       grounds_attention)
from .lower_court import LowerCourtParams, TaskGraph, lower_subtask_loss, run_lower_court
from .numerics import AdamState, RngStream, Tensor, adam_step
from .training import (Checkpoint, DivergenceError, EncodedDoc, SmaJudgeParams,
                       TASK_NAMES, TrainConfig, TrainHistory, encode_split,
                       forward_document, train)


@dataclass(frozen=True)
class ConfusionCounts:
    """One-vs-rest counts per class for single-label predictions."""

    tp: tuple[int, ...]
    fp: tuple[int, ...]
    tn: tuple[int, ...]
    fn: tuple[int, ...]

    @property
    def num_classes(self) -> int:
        return len(self.tp)

    @property
    def num_samples(self) -> int:
        return self.tp[0] + self.fp[0] + self.tn[0] + self.fn[0]


def confusion_counts(predictions, truths, num_classes: int) -> ConfusionCounts:
    preds = np.asarray(predictions, dtype=np.int64)
    golds = np.asarray(truths, dtype=np.int64)
    if preds.shape != golds.shape or preds.ndim != 1:
        raise ValueError("predictions and truths must be equal-length vectors")
    if preds.size == 0:
        raise ValueError("empty input")
    for arr, what in ((preds, "prediction"), (golds, "truth")):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"{what} label out of range [0, {num_classes})")
    tp, fp, tn, fn = [], [], [], []
    for k in range(num_classes):
        p = preds == k
        g = golds == k
        tp.append(int(np.sum(p & g)))
        fp.append(int(np.sum(p & ~g)))
        fn.append(int(np.sum(~p & g)))
        tn.append(int(np.sum(~p & ~g)))
    return ConfusionCounts(tp=tuple(tp), fp=tuple(fp), tn=tuple(tn), fn=tuple(fn))


@dataclass(frozen=True)
class MetricsReport:
    """Pooled accuracy/precision/recall/F1 plus per-class macro diagnostics."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    degenerate: bool
    counts: ConfusionCounts

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1,
                "macro_precision": self.macro_precision,
                "macro_recall": self.macro_recall, "macro_f1": self.macro_f1,
                "degenerate": self.degenerate,
                "counts": {"tp": list(self.counts.tp), "fp": list(self.counts.fp),
                           "tn": list(self.counts.tn), "fn": list(self.counts.fn)}}


def _ratio(num: float, den: float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def compute_metrics(counts: ConfusionCounts) -> MetricsReport:
    tp = sum(counts.tp)
    fp = sum(counts.fp)
    tn = sum(counts.tn)
    fn = sum(counts.fn)
    degenerate = False

    accuracy, d = _ratio(tp + tn, tp + tn + fp + fn)
    degenerate |= d
    precision, d = _ratio(tp, tp + fp)
    degenerate |= d
    recall, d = _ratio(tp, tp + fn)
    degenerate |= d
    f1, d = _ratio(2.0 * precision * recall, precision + recall)
    degenerate |= d

    per_p, per_r, per_f = [], [], []
    for k in range(counts.num_classes):
        p, _ = _ratio(counts.tp[k], counts.tp[k] + counts.fp[k])
        r, _ = _ratio(counts.tp[k], counts.tp[k] + counts.fn[k])
        f, _ = _ratio(2.0 * p * r, p + r)
        per_p.append(p)
        per_r.append(r)
        per_f.append(f)

    return MetricsReport(
        accuracy=accuracy, precision=precision, recall=recall, f1=f1,
        macro_precision=float(np.mean(per_p)), macro_recall=float(np.mean(per_r)),
        macro_f1=float(np.mean(per_f)), degenerate=degenerate, counts=counts)


def evaluate_split(params: SmaJudgeParams, docs: list[EncodedDoc]) -> dict[str, MetricsReport]:
    """Forward every document once and score all five subtasks."""
    if not docs:
        raise ValueError("empty evaluation split")
    preds: dict[str, list[int]] = {t: [] for t in TASK_NAMES}
    golds: dict[str, list[int]] = {t: [] for t in TASK_NAMES}
    for ex in docs:
        out = forward_document(params, ex, mode="eval", with_losses=False)
        preds["law_article"].append(int(np.argmax(out.lower_distributions[0].data)))
        preds["charge"].append(int(np.argmax(out.lower_distributions[1].data)))
        preds["penalty"].append(int(np.argmax(out.lower_distributions[2].data)))
        preds["ruling"].append(int(out.ruling_probability.item() >= 0.5))
        preds["appeal_article"].append(int(np.argmax(out.article_distribution.data)))
        golds["law_article"].append(ex.law_idx)
        golds["charge"].append(ex.charge_idx)
        golds["penalty"].append(ex.penalty_idx)
        golds["ruling"].append(ex.ruling)
        golds["appeal_article"].append(ex.appeal_article_idx)
    spaces = params.spaces
    sizes = {"law_article": len(spaces.law_articles), "charge": len(spaces.charges),
             "penalty": len(spaces.penalty_intervals), "ruling": 2,
             "appeal_article": len(spaces.appeal_articles)}
    return {task: compute_metrics(confusion_counts(preds[task], golds[task], sizes[task]))
            for task in TASK_NAMES}


# ---------------------------------------------------------------------------
# ablation variants


class AblationVariant(str, Enum):
    FULL = "full"
    NO_ATTENTION = "no_attention"
    NO_DEPENDENCY = "no_dependency"
    SEPARATE_COMPONENTS = "separate_components"


class MlmaModel:
    """Two independently trained components joined only by cosine similarity.

    The lower component projects its fact encoding to the shared space before
    the dependency cells, so the projection trains on the lower-court losses;
    the appellate component projects its fact representation before its own
    two heads.  The ruling prediction compares the two projected vectors.
    """

    def __init__(self, config: TrainConfig, vocab_size: int, spaces: LabelSpaces,
                 graph: TaskGraph | None = None):
        self.config = config
        self.spaces = spaces
        self.graph = graph if graph is not None else TaskGraph()
        H = config.hidden_size
        rng = RngStream(config.seed)
        self.embedding_l = EmbeddingTable(vocab_size, config.embedding_dim, rng.spawn(20))
        self.enc_lower = BiLstmEncoder(config.embedding_dim, H, rng.spawn(21), "lower_facts")
        self.proj_l = Tensor(nm.glorot_uniform((2 * H, 2 * H), rng.spawn(22)), requires_grad=True)
        label_sizes = (len(spaces.law_articles), len(spaces.charges),
                       len(spaces.penalty_intervals))
        self.lower = LowerCourtParams(self.graph, 2 * H, 2 * H, label_sizes, rng.spawn(23))
        self.embedding_a = EmbeddingTable(vocab_size, config.embedding_dim, rng.spawn(24))
        self.enc_appellate = BiLstmEncoder(config.embedding_dim, H, rng.spawn(25), "appellate_facts")
        self.enc_grounds = BiLstmEncoder(config.embedding_dim, H, rng.spawn(26), "grounds")
        self.attention = AttentionParams(H, rng.spawn(27), config.attention_dim)
        self.proj_a = Tensor(nm.glorot_uniform((2 * H, 4 * H), rng.spawn(28)), requires_grad=True)
        self.ruling_head = RulingHead(2 * H, rng.spawn(29))
        self.article_head = ArticleHead(2 * H, len(spaces.appeal_articles), rng.spawn(30))

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        params.update(self.embedding_l.named_parameters("ml.embedding"))
        params.update(self.enc_lower.named_parameters("ml.enc_lower"))
        params["ml.proj"] = self.proj_l
        params.update(self.lower.named_parameters("ml.lower"))
        params.update(self.embedding_a.named_parameters("ma.embedding"))
        params.update(self.enc_appellate.named_parameters("ma.enc_appellate"))
        params.update(self.enc_grounds.named_parameters("ma.enc_grounds"))
        params.update(self.attention.named_parameters("ma.attention"))
        params["ma.proj"] = self.proj_a
        params.update(self.ruling_head.named_parameters("ma.ruling_head"))
        params.update(self.article_head.named_parameters("ma.article_head"))
        return params

    def projected_vectors(self, ex: EncodedDoc) -> tuple[Tensor, Tensor]:
        h_l = last_hidden(bilstm_encode(embed_sequence(ex.lower_ids, self.embedding_l), self.enc_lower))
        p_l = nm.matvec(self.proj_l, h_l)
        h_af_seq = bilstm_encode(embed_sequence(ex.appeal_ids, self.embedding_a),
                                 self.enc_appellate)
        h_g_last = last_hidden(bilstm_encode(
            embed_sequence(ex.ground_ids, self.embedding_a), self.enc_grounds))
        _, u = grounds_attention(h_af_seq, h_g_last, self.attention)
        h_a = appellate_fact_repr(h_af_seq, u)
        p_a = nm.matvec(self.proj_a, h_a)
        return p_l, p_a

    def losses(self, ex: EncodedDoc) -> Tensor:
        p_l, p_a = self.projected_vectors(ex)
        lower_out = run_lower_court(p_l, self.lower)
        terms = [
            lower_subtask_loss(lower_out.distributions[0], ex.law_idx),
            lower_subtask_loss(lower_out.distributions[1], ex.charge_idx),
            lower_subtask_loss(lower_out.distributions[2], ex.penalty_idx),
            ruling_loss(predict_ruling(p_a, self.ruling_head), ex.ruling,
                        self.config.positive_class_weight),
            article_loss(predict_article(p_a, self.article_head), ex.appeal_article_idx),
        ]
        return nm.add_n(terms)

    def predict_ruling_class(self, ex: EncodedDoc) -> tuple[int, bool]:
        p_l, p_a = self.projected_vectors(ex)
        return mlma_similarity_predict(p_l.data, p_a.data)


def mlma_similarity_predict(p_l: np.ndarray, p_a: np.ndarray) -> tuple[int, bool]:
    """Affirm (class 0) when cosine similarity exceeds 0.5; flag zero vectors."""
    norm_l = float(np.linalg.norm(p_l))
    norm_a = float(np.linalg.norm(p_a))
    if norm_l == 0.0 or norm_a == 0.0:
        return 1, True
    similarity = float(p_l @ p_a) / (norm_l * norm_a)
    return (0 if similarity > 0.5 else 1), False


def train_mlma(splits: CorpusSplits, vocab: Vocabulary, spaces: LabelSpaces,
               config: TrainConfig, graph: TaskGraph | None = None) -> tuple[MlmaModel, TrainHistory]:
    """Train both components; their parameter sets are disjoint, so one
    optimizer over the summed losses updates them independently."""
    if not splits.train:
        raise DataError("training split is empty")
    train_docs = encode_split(splits.train, vocab, spaces, config.max_seq_len)
    model = MlmaModel(config, len(vocab), spaces, graph)
    named = model.named_parameters()
    optimizer = AdamState.for_params(named, lr=config.learning_rate)
    shuffle_rng = RngStream(config.seed).spawn(1001)
    history = TrainHistory()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_docs))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_docs[i] for i in order[start:start + config.batch_size]]
            try:
                for ex in batch:
                    with nm.Tape() as tape:
                        loss = model.losses(ex)
                        scaled = nm.scale(loss, 1.0 / len(batch))
                    nm.backward(scaled, tape)
                    epoch_losses.append(loss.item())
                grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.data))
                         for n, t in named.items()}
                adam_step(named, grads, optimizer)
            except nm.NonFiniteError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}") from exc
            for t in named.values():
                t.zero_grad()
        history.joint_losses.append(float(np.mean(epoch_losses)))
        history.subtask_losses.append((float("nan"),) * 5)
        history.validation.append(None)
    return model, history


def evaluate_mlma_ruling(model: MlmaModel, docs: list[EncodedDoc]) -> MetricsReport:
    preds = []
    golds = []
    for ex in docs:
        cls, _ = model.predict_ruling_class(ex)
        preds.append(cls)
        golds.append(ex.ruling)
    return compute_metrics(confusion_counts(preds, golds, 2))


def build_variant(source: TrainConfig | Checkpoint, vocab_size: int | None,
                  spaces: LabelSpaces | None, variant: AblationVariant | str,
                  graph: TaskGraph | None = None):
    """Construct the model for one ablation variant from a config or checkpoint."""
    variant = AblationVariant(variant)
    if isinstance(source, Checkpoint):
        config = source.config
        vocab_size = len(source.vocabulary)
        spaces = source.label_spaces
        graph = graph if graph is not None else source.params.graph
    else:
        config = source
        if vocab_size is None or spaces is None:
            raise ValueError("vocab_size and spaces required with a config source")
    graph = graph if graph is not None else TaskGraph()
    if variant is AblationVariant.FULL:
        return SmaJudgeParams(config, vocab_size, spaces, graph, use_attention=True)
    if variant is AblationVariant.NO_ATTENTION:
        return SmaJudgeParams(config, vocab_size, spaces, graph, use_attention=False)
    if variant is AblationVariant.NO_DEPENDENCY:
        return SmaJudgeParams(config, vocab_size, spaces,
                              TaskGraph.parallel(graph.names), use_attention=True)
    if variant is AblationVariant.SEPARATE_COMPONENTS:
        return MlmaModel(config, vocab_size, spaces, graph)
    raise ValueError(f"unknown variant {variant}")


def train_variant(splits: CorpusSplits, vocab: Vocabulary, spaces: LabelSpaces,
                  config: TrainConfig, variant: AblationVariant | str,
                  graph: TaskGraph | None = None, stop_condition=None):
    """Train one ablation variant and return (model, history)."""
    variant = AblationVariant(variant)
    if variant is AblationVariant.SEPARATE_COMPONENTS:
        return train_mlma(splits, vocab, spaces, config, graph)
    if variant is AblationVariant.NO_DEPENDENCY:
        names = (graph or TaskGraph()).names
        ckpt, hist = train(splits, vocab, spaces, config,
                           graph=TaskGraph.parallel(names), use_attention=True,
                           stop_condition=stop_condition)
    elif variant is AblationVariant.NO_ATTENTION:
        ckpt, hist = train(splits, vocab, spaces, config, graph=graph,
                           use_attention=False, stop_condition=stop_condition)
    else:
        ckpt, hist = train(splits, vocab, spaces, config, graph=graph,
                           use_attention=True, stop_condition=stop_condition)
    return ckpt, hist


def run_ablation(splits: CorpusSplits, vocab: Vocabulary, spaces: LabelSpaces,
                 config: TrainConfig, seeds: list[int],
                 variants=tuple(v for v in AblationVariant)) -> dict:
    """Train every variant across seeds; report per-seed and mean ruling metrics."""
    from dataclasses import replace

    test_docs = encode_split(splits.test, vocab, spaces, config.max_seq_len)
    report: dict = {}
    for variant in variants:
        variant = AblationVariant(variant)
        per_seed = []
        for seed in seeds:
            cfg = replace(config, seed=seed)
            model, _ = train_variant(splits, vocab, spaces, cfg, variant)
            if variant is AblationVariant.SEPARATE_COMPONENTS:
                ruling = evaluate_mlma_ruling(model, test_docs)
            else:
                ruling = evaluate_split(model.params, test_docs)["ruling"]
            per_seed.append(ruling.to_dict())
        report[variant.value] = {
            "per_seed": per_seed,
            "mean_f1": float(np.mean([m["f1"] for m in per_seed])),
            "mean_accuracy": float(np.mean([m["accuracy"] for m in per_seed])),
        }
    return report


# ---------------------------------------------------------------------------
# training-size sensitivity


@dataclass
class SensitivityReport:
    records: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.records, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fraction", "train_size", "accuracy", "precision",
                             "recall", "f1"])
            for rec in self.records:
                ruling = rec["metrics"]["ruling"]
                writer.writerow([rec["fraction"], rec["train_size"],
                                 ruling["accuracy"], ruling["precision"],
                                 ruling["recall"], ruling["f1"]])


def run_sensitivity(splits: CorpusSplits, vocab: Vocabulary, spaces: LabelSpaces,
                    fractions: list[float], config: TrainConfig,
                    stop_condition=None) -> SensitivityReport:
    """Train on deterministic nested prefixes of the shuffled train split.

    The shuffle is seeded by the config, so the 40% subset is a prefix of the
    60% subset under one seed.
    """
    for f in fractions:
        if not (0.0 < f <= 1.0):
            raise DataError(f"fraction {f} outside (0, 1]")
    order = RngStream(config.seed).spawn(2001).permutation(len(splits.train))
    shuffled = [splits.train[i] for i in order]
    test_docs = encode_split(splits.test, vocab, spaces, config.max_seq_len)
    report = SensitivityReport()
    for fraction in fractions:
        n = int(round(fraction * len(shuffled)))
        if n == 0:
            raise DataError(f"fraction {fraction} yields an empty train set")
        sub = CorpusSplits(train=tuple(shuffled[:n]), validation=splits.validation,
                           test=splits.test)
        ckpt, _ = train(sub, vocab, spaces, config, stop_condition=stop_condition)
        metrics = evaluate_split(ckpt.params, test_docs)
        report.records.append({
            "fraction": fraction,
            "train_size": n,
            "metrics": {task: m.to_dict() for task, m in metrics.items()},
        })
    return report


# ---------------------------------------------------------------------------
# attention heatmaps


@dataclass(frozen=True)
class AttentionHeatmap:
    """Per-token display weights (alpha max-normalized) plus case context."""

    case_id: str
    tokens: tuple[str, ...]
    intensities: tuple[float, ...]
    grounds_text: str
    predicted_ruling: int
    true_ruling: int | None


def build_heatmap(prediction: AppealPrediction, doc: AppealDocument) -> AttentionHeatmap:
    if prediction.attention is None:
        raise ValueError("prediction carries no attention weights")
    alpha = np.asarray(prediction.attention, dtype=float)
    tokens = prediction.fact_tokens
    if len(alpha) != len(tokens):
        raise ValueError(
            f"attention length {len(alpha)} differs from token count {len(tokens)}")
    peak = float(alpha.max())
    intensities = tuple(float(a) / peak if peak > 0 else 0.0 for a in alpha)
    true_ruling = doc.appeal_judgment.ruling if doc.appeal_judgment else None
    return AttentionHeatmap(
        case_id=doc.case_id, tokens=tuple(tokens), intensities=intensities,
        grounds_text=" ".join(doc.grounds),
        predicted_ruling=prediction.ruling_class, true_ruling=true_ruling)


_HTML_TEMPLATE = """<!DOCTYPE html>
<html><head><meta charset="utf-8"><title>{case_id}</title>
<style>
body {{ font-family: sans-serif; max-width: 60em; margin: 2em auto; }}
.tok {{ padding: 0.1em 0.15em; border-radius: 3px; }}
dt {{ font-weight: bold; margin-top: 0.8em; }}
</style></head><body>
<h2>Case {case_id}</h2>
<dl>
<dt>Predicted ruling</dt><dd>{predicted}</dd>
<dt>True ruling</dt><dd>{truth}</dd>
<dt>Grounds of appeal</dt><dd>{grounds}</dd>
<dt>Facts (shaded by attention weight)</dt><dd>{tokens}</dd>
</dl>
</body></html>
"""


def _ruling_text(value: int | None) -> str:
    if value is None:
        return "unknown"
    return "affirmed" if value == 0 else "not affirmed"


def render_heatmap_html(heatmap: AttentionHeatmap) -> str:
    spans = []
    for tok, w in zip(heatmap.tokens, heatmap.intensities):
        spans.append(
            f'<span class="tok" style="background: rgba(214, 39, 40, {w:.3f})" '
            f'title="{w:.3f}">{html.escape(tok)}</span>')
    return _HTML_TEMPLATE.format(
        case_id=html.escape(heatmap.case_id),
        predicted=_ruling_text(heatmap.predicted_ruling),
        truth=_ruling_text(heatmap.true_ruling),
        grounds=html.escape(heatmap.grounds_text),
        tokens=" ".join(spans))


def render_heatmap_text(heatmap: AttentionHeatmap) -> str:
    lines = [f"case: {heatmap.case_id}",
             f"predicted ruling: {_ruling_text(heatmap.predicted_ruling)}",
             f"true ruling: {_ruling_text(heatmap.true_ruling)}",
             f"grounds: {heatmap.grounds_text}",
             "facts (token<TAB>intensity):"]
    for tok, w in zip(heatmap.tokens, heatmap.intensities):
        lines.append(f"{tok}\t{w:.4f}")
    return "\n".join(lines) + "\n"


def export_attention(prediction: AppealPrediction, doc: AppealDocument,
                     out_dir) -> tuple[Path, Path]:
    """Write the HTML and plain-text heatmaps; files are named by case id."""
    heatmap = build_heatmap(prediction, doc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    html_path = out / f"{heatmap.case_id}.html"
    txt_path = out / f"{heatmap.case_id}.txt"
    html_path.write_text(render_heatmap_html(heatmap), encoding="utf-8")
    txt_path.write_text(render_heatmap_text(heatmap), encoding="utf-8")
    return html_path, txt_path
