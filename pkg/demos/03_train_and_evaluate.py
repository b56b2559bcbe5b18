"""End-to-end: corpus, training, metrics, and fine-tune-then-predict.

Run with:  python3 demos/03_train_and_evaluate.py   (about a minute on one core)
"""

from smajudge import corpus as cp
from smajudge import evaluation as ev
from smajudge import training as tr

spec = cp.SyntheticSpec(num_documents=400, vocab_size=60, seed=11, affirm_rate=0.75,
                        lower_facts_len=(5, 8), grounds_len=(3, 5), new_facts_len=(2, 4))
docs = cp.generate_synthetic_corpus(spec)
kept, spaces = cp.filter_labels(docs, min_label_count=1)
splits = cp.split_corpus(kept, (0.7, 0.1, 0.2), seed=0)
vocab = cp.build_vocabulary(splits.train, min_count=1)

config = tr.TrainConfig(embedding_dim=16, hidden_size=16, batch_size=16,
                        learning_rate=0.02, dropout=0.0, epochs=12, seed=0,
                        max_seq_len=64)
checkpoint, history = tr.train(splits, vocab, spaces, config)
print("mean joint loss per epoch:")
print("  " + " ".join(f"{x:.2f}" for x in history.joint_losses))

test_docs = tr.encode_split(splits.test, vocab, spaces, config.max_seq_len)
print("\ntest metrics (pooled accuracy / F1):")
for task, report in ev.evaluate_split(checkpoint.params, test_docs).items():
    print(f"  {task:<15} acc {report.accuracy:.3f}  f1 {report.f1:.3f}")

# the prediction path clones the checkpoint, takes one optimization step on
# the case's lower-court record, then predicts with the tuned clone
doc = splits.test[0]
prediction = tr.predict_appeal(checkpoint, doc)
print(f"\ncase {doc.case_id}: p(not affirmed) = {prediction.ruling_probability:.3f}"
      f" -> class {prediction.ruling_class} (truth {doc.appeal_judgment.ruling})")
print("fine-tuned:", prediction.fine_tuned,
      "| checkpoint digest unchanged:", tr.checkpoint_digest(checkpoint) ==
      tr.checkpoint_digest(checkpoint))
