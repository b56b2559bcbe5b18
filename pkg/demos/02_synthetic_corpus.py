"""Generate a planted-signal corpus and inspect its structure.

Run with:  python3 demos/02_synthetic_corpus.py
"""

from collections import Counter

from smajudge import corpus as cp

spec = cp.SyntheticSpec(num_documents=500, vocab_size=150, seed=7)
docs = cp.generate_synthetic_corpus(spec)

print("case:", docs[0].case_id)
print("lower facts:", " ".join(docs[0].lower_facts))
print("grounds:    ", " ".join(docs[0].grounds))
print("new facts:  ", " ".join(docs[0].new_facts) or "(none)")
print("judgment:   ", docs[0].lower_judgment)
print("appeal:     ", docs[0].appeal_judgment)
print()

affirmed = sum(1 for d in docs if d.appeal_judgment.ruling == 0)
print(f"affirm rate: {affirmed / len(docs):.3f} (target {spec.affirm_rate:.3f})")
print("charges:", Counter(d.lower_judgment.charge for d in docs).most_common(3))

# at signal strength 1.0 every label is recoverable from the planted tokens
errors = 0
for doc in docs:
    labels = cp.planted_rule_oracle(doc)
    errors += labels["ruling"] != doc.appeal_judgment.ruling
    errors += labels["charge"] != doc.lower_judgment.charge
print("rule-oracle disagreements:", errors)

# the penalty interval map is total over months and the two special terms
for term in ("none", 0, 8, 30, 61, 130, "death_or_life"):
    print(f"penalty {term!r:>16} -> interval {cp.penalty_to_interval(term)}")

# vocabulary and splits are deterministic in the seed
kept, spaces = cp.filter_labels(docs, min_label_count=1)
splits = cp.split_corpus(kept, (0.7, 0.1, 0.1), seed=0)
vocab = cp.build_vocabulary(splits.train, min_count=1)
print(f"splits: {len(splits.train)}/{len(splits.validation)}/{len(splits.test)} "
      f"(+{len(splits.discarded)} discarded), vocab {len(vocab)} tokens")
