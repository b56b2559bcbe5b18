"""Compare the full model with its ablations and run the data-size harness.

Variants: full, no_attention (appellate stage ignores the grounds),
no_dependency (parallel subtasks), separate_components (two independently
trained components joined by cosine similarity).

Run with:  python3 demos/05_ablations_and_sensitivity.py   (several minutes)
"""

import json

from smajudge import corpus as cp
from smajudge import evaluation as ev
from smajudge import training as tr

spec = cp.SyntheticSpec(num_documents=700, vocab_size=60, seed=13, affirm_rate=0.7,
                        lower_facts_len=(5, 8), grounds_len=(3, 5), new_facts_len=(2, 4))
docs = cp.generate_synthetic_corpus(spec)
kept, spaces = cp.filter_labels(docs, min_label_count=1)
splits = cp.split_corpus(kept, (0.7, 0.1, 0.2), seed=0)
vocab = cp.build_vocabulary(splits.train, min_count=1)

config = tr.TrainConfig(embedding_dim=16, hidden_size=16, batch_size=25,
                        learning_rate=0.02, dropout=0.0, epochs=12, seed=0,
                        max_seq_len=64)

report = ev.run_ablation(splits, vocab, spaces, config, seeds=[0])
print("ruling-task F1 by variant (one seed):")
for variant, stats in report.items():
    print(f"  {variant:<22} {stats['mean_f1']:.3f}")

sens = ev.run_sensitivity(splits, vocab, spaces, [1.0, 0.6], config)
print("\ntraining-size sensitivity (ruling F1):")
for record in sens.records:
    print(f"  {record['fraction']:.0%} of train ({record['train_size']} docs): "
          f"{record['metrics']['ruling']['f1']:.3f}")

print("\nfull JSON of the ablation table:")
print(json.dumps({k: round(v["mean_f1"], 3) for k, v in report.items()}, indent=2))
