"""Document schema, corpus I/O, label spaces, splits, and the synthetic generator.

Corpus files are JSON Lines: one object per line with keys ``case_id``,
``lower_facts``, ``lower_law_article``, ``lower_charge``, ``lower_penalty``
(months or ``"none"``/``"death_or_life"``), ``grounds``, ``new_facts``,
``appeal_ruling`` (0/1), ``appeal_law_article``.  Text fields are
whitespace-tokenizable strings; documents arrive pre-segmented.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from .numerics import RngStream

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

NUM_PENALTY_INTERVALS = 11

SPECIAL_NONE = "none"
SPECIAL_DEATH_OR_LIFE = "death_or_life"


class DataError(ValueError):
    """Schema violation, bad label, or malformed corpus input."""


@dataclass(frozen=True)
class LowerJudgment:
    """First-instance outcome: article and charge labels plus penalty term.

    ``penalty_term`` keeps the raw value (months or a special string) so
    serialization round-trips exactly; the classification target is the
    derived ``penalty_interval``.
    """

    law_article: str
    charge: str
    penalty_term: int | str

    def __post_init__(self):
        penalty_to_interval(self.penalty_term)  # validates

    @property
    def penalty_interval(self) -> int:
        return penalty_to_interval(self.penalty_term)


@dataclass(frozen=True)
class AppealJudgment:
    """Appellate outcome: ruling (0 = affirm all, 1 = otherwise) and article."""

    ruling: int
    law_article: str

    def __post_init__(self):
        if self.ruling not in (0, 1):
            raise DataError(f"appeal ruling must be 0 or 1, got {self.ruling}")


@dataclass(frozen=True)
class AppealDocument:
    """One case record: lower facts/judgment, grounds, new facts, appeal outcome."""

    case_id: str
    lower_facts: tuple[str, ...]
    lower_judgment: LowerJudgment
    grounds: tuple[str, ...]
    new_facts: tuple[str, ...] = ()
    appeal_judgment: AppealJudgment | None = None

    def __post_init__(self):
        if not self.lower_facts:
            raise DataError("lower_facts must be non-empty")
        if not self.grounds:
            raise DataError("grounds must be non-empty")


def penalty_to_interval(term: int | str) -> int:
    """Map a penalty term to its interval index in [1, 11].

    Month boundaries are half-open so the map is total and non-decreasing:
    1: no penalty, 2: 0-6, 3: 7-9, 4: 10-12, 5: 13-35, 6: 36-59, 7: 60-83,
    8: 84-107, 9: 108-120, 10: >120 months, 11: death or life imprisonment.
    """
    if isinstance(term, str):
        if term == SPECIAL_NONE:
            return 1
        if term == SPECIAL_DEATH_OR_LIFE:
            return 11
        raise DataError(f"unknown special penalty {term!r}")
    months = int(term)
    if months < 0:
        raise DataError(f"negative penalty months: {months}")
    if months <= 6:
        return 2
    if months <= 9:
        return 3
    if months <= 12:
        return 4
    if months <= 35:
        return 5
    if months <= 59:
        return 6
    if months <= 83:
        return 7
    if months <= 107:
        return 8
    if months <= 120:
        return 9
    return 10


def interval_to_representative_term(interval: int) -> int | str:
    """A canonical term inside each interval; used by the serializer."""
    reps = {1: SPECIAL_NONE, 2: 3, 3: 8, 4: 11, 5: 24, 6: 48, 7: 72,
            8: 96, 9: 114, 10: 150, 11: SPECIAL_DEATH_OR_LIFE}
    try:
        return reps[interval]
    except KeyError:
        raise DataError(f"penalty interval {interval} outside [1, 11]") from None


_REQUIRED_KEYS = frozenset({
    "case_id", "lower_facts", "lower_law_article", "lower_charge",
    "lower_penalty", "grounds", "new_facts", "appeal_ruling",
    "appeal_law_article",
})


def parse_document(line: str) -> AppealDocument:
    """Parse one JSON-Lines record into a schema-validated document."""
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise DataError("record must be a JSON object")
    missing = _REQUIRED_KEYS - raw.keys()
    if missing:
        raise DataError(f"missing field(s): {', '.join(sorted(missing))}")

    def toks(key):
        value = raw[key]
        if not isinstance(value, str):
            raise DataError(f"field {key} must be a string")
        return tuple(value.split())

    penalty = raw["lower_penalty"]
    if isinstance(penalty, str) and penalty not in (SPECIAL_NONE, SPECIAL_DEATH_OR_LIFE):
        raise DataError(f"invalid lower_penalty {penalty!r}")
    lower = LowerJudgment(
        law_article=str(raw["lower_law_article"]),
        charge=str(raw["lower_charge"]),
        penalty_term=penalty if isinstance(penalty, str) else int(penalty),
    )
    appeal = None
    if raw["appeal_ruling"] is not None:
        appeal = AppealJudgment(ruling=int(raw["appeal_ruling"]),
                                law_article=str(raw["appeal_law_article"]))
    return AppealDocument(
        case_id=str(raw["case_id"]),
        lower_facts=toks("lower_facts"),
        lower_judgment=lower,
        grounds=toks("grounds"),
        new_facts=toks("new_facts"),
        appeal_judgment=appeal,
    )


def serialize_document(doc: AppealDocument) -> str:
    """Inverse writer for :func:`parse_document`; same JSON-Lines schema."""
    appeal = doc.appeal_judgment
    record = {
        "case_id": doc.case_id,
        "lower_facts": " ".join(doc.lower_facts),
        "lower_law_article": doc.lower_judgment.law_article,
        "lower_charge": doc.lower_judgment.charge,
        "lower_penalty": doc.lower_judgment.penalty_term,
        "grounds": " ".join(doc.grounds),
        "new_facts": " ".join(doc.new_facts),
        "appeal_ruling": None if appeal is None else appeal.ruling,
        "appeal_law_article": None if appeal is None else appeal.law_article,
    }
    return json.dumps(record, ensure_ascii=False, sort_keys=True)


def read_corpus(path) -> list[AppealDocument]:
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                docs.append(parse_document(line))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return docs


def write_corpus(docs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(serialize_document(doc) + "\n")


@dataclass(frozen=True)
class Vocabulary:
    """Token ids with reserved PAD=0 / UNK=1 and a frequency threshold."""

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]
    min_count: int

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def to_dict(self) -> dict:
        return {"tokens": list(self.id_to_token[2:]), "min_count": self.min_count}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        return _vocab_from_tokens(data["tokens"], data["min_count"])


def _vocab_from_tokens(kept: list[str], min_count: int) -> Vocabulary:
    id_to_token = (PAD_TOKEN, UNK_TOKEN, *kept)
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    return Vocabulary(token_to_id=token_to_id, id_to_token=id_to_token, min_count=min_count)


def build_vocabulary(docs, min_count: int = 1) -> Vocabulary:
    """Index every token of f^l, g, f^a whose corpus frequency reaches min_count.

    Kept tokens are sorted lexicographically, so document order never changes
    the result; everything below the threshold maps to UNK.
    """
    if not docs:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts: dict[str, int] = {}
    for doc in docs:
        for tok in (*doc.lower_facts, *doc.grounds, *doc.new_facts):
            counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(t for t, c in counts.items() if c >= min_count)
    return _vocab_from_tokens(kept, min_count)


@dataclass(frozen=True)
class LabelSpaces:
    """Label universes for the three lower subtasks and the appellate article."""

    law_articles: tuple[str, ...]
    charges: tuple[str, ...]
    appeal_articles: tuple[str, ...]
    penalty_intervals: tuple[int, ...] = tuple(range(1, NUM_PENALTY_INTERVALS + 1))

    def __post_init__(self):
        if len(self.penalty_intervals) != NUM_PENALTY_INTERVALS:
            raise DataError("penalty space must hold exactly 11 intervals")

    def law_index(self, label: str) -> int:
        return _index_of(self.law_articles, label, "law article")

    def charge_index(self, label: str) -> int:
        return _index_of(self.charges, label, "charge")

    def appeal_article_index(self, label: str) -> int:
        return _index_of(self.appeal_articles, label, "appellate law article")

    def to_dict(self) -> dict:
        return {"law_articles": list(self.law_articles),
                "charges": list(self.charges),
                "appeal_articles": list(self.appeal_articles)}

    @classmethod
    def from_dict(cls, data: dict) -> "LabelSpaces":
        return cls(law_articles=tuple(data["law_articles"]),
                   charges=tuple(data["charges"]),
                   appeal_articles=tuple(data["appeal_articles"]))

    @classmethod
    def from_documents(cls, docs) -> "LabelSpaces":
        law = sorted({d.lower_judgment.law_article for d in docs})
        charges = sorted({d.lower_judgment.charge for d in docs})
        appeal = sorted({d.appeal_judgment.law_article for d in docs
                         if d.appeal_judgment is not None})
        return cls(law_articles=tuple(law), charges=tuple(charges),
                   appeal_articles=tuple(appeal))


def _index_of(space: tuple[str, ...], label: str, kind: str) -> int:
    try:
        return space.index(label)
    except ValueError:
        raise DataError(f"{kind} {label!r} not in label space") from None


def filter_labels(docs, min_label_count: int = 1) -> tuple[list[AppealDocument], LabelSpaces]:
    """Drop documents carrying any label seen fewer than min_label_count times.

    Counting is one pass over the input corpus; label spaces are rebuilt from
    the survivors.
    """
    law_counts: dict[str, int] = {}
    charge_counts: dict[str, int] = {}
    appeal_counts: dict[str, int] = {}
    for d in docs:
        law_counts[d.lower_judgment.law_article] = law_counts.get(d.lower_judgment.law_article, 0) + 1
        charge_counts[d.lower_judgment.charge] = charge_counts.get(d.lower_judgment.charge, 0) + 1
        if d.appeal_judgment is not None:
            a = d.appeal_judgment.law_article
            appeal_counts[a] = appeal_counts.get(a, 0) + 1

    def keeps(d: AppealDocument) -> bool:
        if law_counts[d.lower_judgment.law_article] < min_label_count:
            return False
        if charge_counts[d.lower_judgment.charge] < min_label_count:
            return False
        if d.appeal_judgment is not None:
            if appeal_counts[d.appeal_judgment.law_article] < min_label_count:
                return False
        return True

    kept = [d for d in docs if keeps(d)]
    if not kept:
        raise DataError("label filtering dropped every document")
    if len(kept) < len(docs):
        log.info("label filter dropped %d of %d documents", len(docs) - len(kept), len(docs))
    return kept, LabelSpaces.from_documents(kept)


@dataclass(frozen=True)
class CorpusSplits:
    train: tuple[AppealDocument, ...]
    validation: tuple[AppealDocument, ...]
    test: tuple[AppealDocument, ...]
    discarded: tuple[AppealDocument, ...] = ()


def split_corpus(docs, ratios: tuple[float, float, float], seed: int) -> CorpusSplits:
    """Deterministic shuffled partition; any remainder is discarded and logged."""
    if any(r < 0 for r in ratios):
        raise DataError("split ratios must be non-negative")
    if sum(ratios) > 1.0 + 1e-9:
        raise DataError(f"split ratios sum to {sum(ratios)} > 1")
    order = RngStream(seed).permutation(len(docs))
    shuffled = [docs[i] for i in order]
    n = len(docs)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_test = int(round(ratios[2] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    n_test = min(n_test, n - n_train - n_val)
    train = shuffled[:n_train]
    val = shuffled[n_train:n_train + n_val]
    test = shuffled[n_train + n_val:n_train + n_val + n_test]
    rest = shuffled[n_train + n_val + n_test:]
    if rest:
        log.info("split discarded %d of %d documents (ratios %s)", len(rest), n, ratios)
    return CorpusSplits(train=tuple(train), validation=tuple(val),
                        test=tuple(test), discarded=tuple(rest))


# ---------------------------------------------------------------------------
# synthetic corpus with planted signal

CHARGE_KEYWORDS = ("theft", "assault", "fraud", "smuggling", "arson", "bribery")
CHARGE_LABELS = tuple(f"charge_{k}" for k in CHARGE_KEYWORDS)
ARTICLE_LABELS = tuple(f"article_{200 + 7 * i}" for i in range(len(CHARGE_KEYWORDS)))
SEVERITY_TOKENS = tuple(f"severity_{i}" for i in range(1, NUM_PENALTY_INTERVALS + 1))

# appeal-ground keyword paired with the fact token that corroborates it
GROUND_PAIRS = (
    ("remorse", "confessed"),
    ("compensation", "paid_damages"),
    ("surrender", "turned_self_in"),
    ("new_evidence", "alibi_witness"),
)
GROUND_FILLER = ("claims", "sentence", "too", "harsh", "requests", "leniency")
AFFIRM_ARTICLE = "appeal_article_upheld"
REVERSE_ARTICLE = "appeal_article_revised"

_PLANTED = (set(CHARGE_KEYWORDS) | set(SEVERITY_TOKENS)
            | {g for g, _ in GROUND_PAIRS} | {e for _, e in GROUND_PAIRS}
            | set(GROUND_FILLER))


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs of the planted-signal generator.

    ``signal_strength`` is the probability that a document's labels follow the
    planted tokens exactly; below 1.0 labels are re-drawn at random with the
    complementary probability.
    """

    num_documents: int = 1000
    vocab_size: int = 200
    affirm_rate: float = 27584 / 33238
    lower_facts_len: tuple[int, int] = (8, 16)
    grounds_len: tuple[int, int] = (4, 9)
    new_facts_len: tuple[int, int] = (3, 7)
    seed: int = 0
    signal_strength: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.affirm_rate < 1.0):
            raise DataError("affirm rate must lie in (0, 1)")
        if not (0.0 <= self.signal_strength <= 1.0):
            raise DataError("signal strength must lie in [0, 1]")
        if self.num_documents <= 0:
            raise DataError("document count must be positive")
        if self.vocab_size <= len(_PLANTED) + 2:
            raise DataError(
                f"vocabulary size {self.vocab_size} too small to host the "
                f"{len(_PLANTED)} planted keywords")

    def to_dict(self) -> dict:
        return {
            "num_documents": self.num_documents,
            "vocab_size": self.vocab_size,
            "affirm_rate": self.affirm_rate,
            "lower_facts_len": list(self.lower_facts_len),
            "grounds_len": list(self.grounds_len),
            "new_facts_len": list(self.new_facts_len),
            "seed": self.seed,
            "signal_strength": self.signal_strength,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown synthetic-spec key(s): {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        for key in ("lower_facts_len", "grounds_len", "new_facts_len"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def _filler_tokens(spec: SyntheticSpec) -> tuple[str, ...]:
    n = spec.vocab_size - len(_PLANTED) - 2
    return tuple(f"w{i:03d}" for i in range(n))


def generate_synthetic_corpus(spec: SyntheticSpec) -> list[AppealDocument]:
    """Documents whose labels are functions of planted keyword tokens.

    The charge keyword in the lower facts fixes the charge; the charge fixes
    the law article; a severity token fixes the penalty interval.  The appeal
    is reversed exactly when a grounds keyword co-occurs with its matching
    evidence token in the new facts, so classifiers that cannot read the
    grounds are capped near the affirm base rate.  The appellate article is a
    function of the ruling.
    """
    rng = RngStream(spec.seed)
    filler = _filler_tokens(spec)
    docs = []
    for i in range(spec.num_documents):
        docs.append(_generate_one(spec, rng, filler, i))
    return docs


def _pad_with_filler(core: list[str], length: int, filler, rng: RngStream) -> tuple[str, ...]:
    words = list(core)
    while len(words) < length:
        words.append(rng.choice(filler))
    order = rng.permutation(len(words))
    return tuple(words[j] for j in order)


def _generate_one(spec: SyntheticSpec, rng: RngStream, filler, i: int) -> AppealDocument:
    charge_idx = int(rng.integers(0, len(CHARGE_KEYWORDS)))
    severity = int(rng.integers(1, NUM_PENALTY_INTERVALS + 1))
    lf_len = int(rng.integers(spec.lower_facts_len[0], spec.lower_facts_len[1] + 1))
    g_len = int(rng.integers(spec.grounds_len[0], spec.grounds_len[1] + 1))
    nf_len = int(rng.integers(spec.new_facts_len[0], spec.new_facts_len[1] + 1))

    lower_facts = _pad_with_filler(
        [CHARGE_KEYWORDS[charge_idx], SEVERITY_TOKENS[severity - 1]], lf_len, filler, rng)

    reversed_case = rng.random() >= spec.affirm_rate
    pair_idx = int(rng.integers(0, len(GROUND_PAIRS)))
    ground_kw, evidence = GROUND_PAIRS[pair_idx]

    grounds_core: list[str] = [rng.choice(GROUND_FILLER)]
    facts_core: list[str] = []
    if reversed_case:
        # co-occurrence: keyword in the grounds AND its evidence in the facts
        grounds_core.append(ground_kw)
        facts_core.append(evidence)
    else:
        style = rng.random()
        if style < 0.40:
            # keyword without corroborating evidence (mismatched half the time)
            grounds_core.append(ground_kw)
            if rng.random() < 0.5:
                other = (pair_idx + 1 + int(rng.integers(0, len(GROUND_PAIRS) - 1))) % len(GROUND_PAIRS)
                facts_core.append(GROUND_PAIRS[other][1])
        elif style < 0.70:
            # distractor evidence without any appeal keyword
            facts_core.append(GROUND_PAIRS[pair_idx][1])
        # else: neither keyword nor evidence

    grounds = _pad_with_filler(grounds_core, g_len, filler, rng)
    new_facts = _pad_with_filler(facts_core, nf_len, filler, rng) if (facts_core or rng.random() < 0.8) else ()

    if rng.random() < spec.signal_strength:
        charge_label = CHARGE_LABELS[charge_idx]
        article_label = ARTICLE_LABELS[charge_idx]
        interval = severity
        ruling = 1 if reversed_case else 0
    else:
        charge_label = CHARGE_LABELS[int(rng.integers(0, len(CHARGE_LABELS)))]
        article_label = ARTICLE_LABELS[int(rng.integers(0, len(ARTICLE_LABELS)))]
        interval = int(rng.integers(1, NUM_PENALTY_INTERVALS + 1))
        ruling = int(rng.integers(0, 2))
    appeal_article = REVERSE_ARTICLE if ruling == 1 else AFFIRM_ARTICLE

    return AppealDocument(
        case_id=f"case-{i:06d}",
        lower_facts=lower_facts,
        lower_judgment=LowerJudgment(law_article=article_label, charge=charge_label,
                                     penalty_term=interval_to_representative_term(interval)),
        grounds=grounds,
        new_facts=new_facts,
        appeal_judgment=AppealJudgment(ruling=ruling, law_article=appeal_article),
    )


def planted_rule_oracle(doc: AppealDocument) -> dict:
    """Recover all five labels from the planted tokens alone.

    Exact on corpora generated at signal strength 1.0; used as the
    recoverability check for generated data.
    """
    charge_idx = next((k for k, kw in enumerate(CHARGE_KEYWORDS) if kw in doc.lower_facts), None)
    severity = next((s + 1 for s in range(NUM_PENALTY_INTERVALS)
                     if SEVERITY_TOKENS[s] in doc.lower_facts), None)
    if charge_idx is None or severity is None:
        raise DataError(f"{doc.case_id}: planted tokens missing")
    grounds = set(doc.grounds)
    facts = set(doc.lower_facts) | set(doc.new_facts)
    ruling = int(any(g in grounds and e in facts for g, e in GROUND_PAIRS))
    return {
        "charge": CHARGE_LABELS[charge_idx],
        "law_article": ARTICLE_LABELS[charge_idx],
        "penalty_interval": severity,
        "ruling": ruling,
        "appeal_article": REVERSE_ARTICLE if ruling else AFFIRM_ARTICLE,
    }
