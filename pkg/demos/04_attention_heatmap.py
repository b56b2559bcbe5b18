"""Train briefly, then export attention heatmaps for reversed cases.

The planted corpus reverses a judgment exactly when an appeal-ground keyword
co-occurs with its corroborating fact token, so a trained model's attention
should concentrate on those fact tokens.

Run with:  python3 demos/04_attention_heatmap.py
"""

from pathlib import Path

import numpy as np

from smajudge import corpus as cp
from smajudge import evaluation as ev
from smajudge import training as tr

spec = cp.SyntheticSpec(num_documents=600, vocab_size=60, seed=5, affirm_rate=0.7,
                        lower_facts_len=(5, 8), grounds_len=(3, 5), new_facts_len=(2, 4))
docs = cp.generate_synthetic_corpus(spec)
kept, spaces = cp.filter_labels(docs, min_label_count=1)
splits = cp.split_corpus(kept, (0.8, 0.0, 0.2), seed=0)
vocab = cp.build_vocabulary(splits.train, min_count=1)

config = tr.TrainConfig(embedding_dim=16, hidden_size=16, batch_size=25,
                        learning_rate=0.02, dropout=0.0, epochs=15, seed=0,
                        max_seq_len=64)
checkpoint, _ = tr.train(splits, vocab, spaces, config)

out_dir = Path("demo_output/heatmaps")
evidence_tokens = {e for _, e in cp.GROUND_PAIRS}
exported = 0
for doc in splits.test:
    if doc.appeal_judgment.ruling != 1 or exported >= 3:
        continue
    prediction = tr.predict_appeal(checkpoint, doc)
    html_path, txt_path = ev.export_attention(prediction, doc, out_dir)
    alpha = prediction.attention
    evident = [i for i, t in enumerate(prediction.fact_tokens) if t in evidence_tokens]
    if evident:
        print(f"{doc.case_id}: attention on evidence tokens "
              f"{np.sum(alpha[evident]):.2f} vs uniform share "
              f"{len(evident) / len(alpha):.2f} -> {html_path}")
    exported += 1
print("open the HTML files to see the shaded tokens")
