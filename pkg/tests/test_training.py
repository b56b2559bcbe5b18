import numpy as np
import pytest

from smajudge import corpus as cp
from smajudge import numerics as nm
from smajudge import training as tr


def small_setup(num_docs=40, seed=5, epochs=2, **cfg_overrides):
    spec = cp.SyntheticSpec(num_documents=num_docs, vocab_size=80, seed=seed,
                            lower_facts_len=(4, 7), grounds_len=(3, 5),
                            new_facts_len=(2, 4))
    docs = cp.generate_synthetic_corpus(spec)
    kept, spaces = cp.filter_labels(docs, 1)
    splits = cp.split_corpus(kept, (0.8, 0.1, 0.1), seed=0)
    vocab = cp.build_vocabulary(splits.train, 1)
    defaults = dict(embedding_dim=8, hidden_size=6, batch_size=8,
                    learning_rate=0.01, dropout=0.2, epochs=epochs, seed=1,
                    max_seq_len=32)
    defaults.update(cfg_overrides)
    config = tr.TrainConfig(**defaults)
    return splits, vocab, spaces, config


def test_config_validation():
    with pytest.raises(cp.DataError):
        tr.TrainConfig(dropout=1.0)
    with pytest.raises(cp.DataError):
        tr.TrainConfig(loss_weights=(1.0, 1.0))
    with pytest.raises(cp.DataError):
        tr.TrainConfig(hidden_size=0)


def test_config_round_trip_and_unknown_keys():
    config = tr.TrainConfig(hidden_size=4, loss_weights=(1, 2, 3, 4, 5))
    again = tr.TrainConfig.from_dict(config.to_dict())
    assert again == config
    with pytest.raises(cp.DataError, match="unknown"):
        tr.TrainConfig.from_dict({"hidden": 4})


def test_joint_loss_linear_combination():
    losses = [nm.tensor(np.asarray(float(v))) for v in (1, 2, 3, 4, 5)]
    assert tr.joint_loss(losses, (1, 1, 1, 1, 1)).item() == pytest.approx(15.0)
    assert tr.joint_loss(losses, (0, 0, 0, 0, 0)).item() == 0.0
    assert tr.joint_loss(losses, (2, 0, 0, 0, 1)).item() == pytest.approx(7.0)


def test_joint_loss_scaling_weights_scales_loss():
    losses = [nm.tensor(np.asarray(float(v))) for v in (0.5, 1.5, 2.0, 0.25, 3.0)]
    base = tr.joint_loss(losses, (1, 1, 1, 1, 1)).item()
    scaled = tr.joint_loss(losses, (3, 3, 3, 3, 3)).item()
    assert scaled == pytest.approx(3.0 * base)


def test_joint_loss_rejects_nonfinite():
    losses = [nm.Tensor(np.asarray(v)) for v in (1.0, np.inf, 1.0, 1.0, 1.0)]
    with pytest.raises(nm.NonFiniteError):
        tr.joint_loss(losses, (1, 1, 1, 1, 1))


def test_default_config_matches_published_settings():
    config = tr.TrainConfig()
    assert config.embedding_dim == 200
    assert config.hidden_size == 256
    assert config.batch_size == 50
    assert config.learning_rate == 0.003
    assert config.dropout == 0.5
    assert config.loss_weights == (1.0, 1.0, 1.0, 1.0, 1.0)
    assert config.fine_tune_steps == 1


def test_gradient_audit_every_group_nonzero():
    splits, vocab, spaces, config = small_setup()
    params = tr.SmaJudgeParams(config, len(vocab), spaces)
    ex = tr.encode_split(splits.train[:1], vocab, spaces, config.max_seq_len)[0]
    with nm.Tape() as tape:
        out = tr.forward_document(params, ex, mode="eval")
    nm.backward(out.joint, tape)
    # the forget gate of a dependency-free task multiplies the virtual
    # predecessor's zero memory sum, so its gradient is structurally zero
    dead = {name for name, deps in zip(params.graph.names, params.graph.dependencies)
            if not deps}
    for name, t in params.named_parameters().items():
        if any(f"cell.{task}.forget" in name for task in dead):
            assert t.grad is None or not np.any(t.grad != 0), name
            continue
        assert t.grad is not None and np.any(t.grad != 0), f"zero gradient for {name}"


def test_train_deterministic_histories():
    splits, vocab, spaces, config = small_setup()
    _, h1 = tr.train(splits, vocab, spaces, config)
    _, h2 = tr.train(splits, vocab, spaces, config)
    assert h1.joint_losses == h2.joint_losses
    assert h1.subtask_losses == h2.subtask_losses
    assert h1.validation == h2.validation


def test_train_zero_epochs_keeps_initialization():
    splits, vocab, spaces, config = small_setup(epochs=0)
    ckpt, history = tr.train(splits, vocab, spaces, config)
    fresh = tr.SmaJudgeParams(config, len(vocab), spaces)
    for (name, trained), (_, init) in zip(ckpt.params.named_parameters().items(),
                                          fresh.named_parameters().items()):
        assert np.array_equal(trained.data, init.data), name
    assert history.joint_losses == []


def test_train_loss_decreases_on_planted_corpus():
    splits, vocab, spaces, config = small_setup(
        num_docs=64, epochs=5, dropout=0.0, learning_rate=0.02)
    _, history = tr.train(splits, vocab, spaces, config)
    losses = history.joint_losses
    assert all(losses[i + 1] < losses[i] for i in range(len(losses) - 1)), losses


def test_train_empty_split_rejected():
    splits, vocab, spaces, config = small_setup()
    empty = cp.CorpusSplits(train=(), validation=(), test=())
    with pytest.raises(cp.DataError):
        tr.train(empty, vocab, spaces, config)


def test_train_stop_condition_halts():
    splits, vocab, spaces, config = small_setup(epochs=10)
    _, history = tr.train(splits, vocab, spaces, config,
                          stop_condition=lambda epoch, params, hist: epoch >= 1)
    assert len(history.joint_losses) == 2


def make_checkpoint(**overrides):
    splits, vocab, spaces, config = small_setup(**overrides)
    ckpt, _ = tr.train(splits, vocab, spaces, config)
    return splits, ckpt


def test_checkpoint_round_trip_bit_exact(tmp_path):
    splits, ckpt = make_checkpoint()
    path = tmp_path / "model.ckpt"
    tr.save_checkpoint(ckpt, path)
    loaded = tr.load_checkpoint(path)
    for (name, a), (_, b) in zip(ckpt.params.named_parameters().items(),
                                 loaded.params.named_parameters().items()):
        assert np.array_equal(a.data, b.data), name
    assert loaded.config == ckpt.config
    assert loaded.optimizer.t == ckpt.optimizer.t

    doc = splits.test[0]
    ex = tr.encode_document(doc, ckpt.vocabulary, ckpt.label_spaces,
                            ckpt.config.max_seq_len)
    out_a = tr.forward_document(ckpt.params, ex, with_losses=False)
    out_b = tr.forward_document(loaded.params, ex, with_losses=False)
    assert out_a.ruling_probability.item() == out_b.ruling_probability.item()
    assert np.array_equal(out_a.article_distribution.data, out_b.article_distribution.data)


def test_checkpoint_truncation_detected(tmp_path):
    _, ckpt = make_checkpoint()
    blob = tr.serialize_checkpoint(ckpt)
    path = tmp_path / "model.ckpt"
    path.write_bytes(blob[:-10])
    with pytest.raises(tr.CheckpointError, match="checksum|truncated"):
        tr.load_checkpoint(path)


def test_checkpoint_corruption_detected(tmp_path):
    _, ckpt = make_checkpoint()
    blob = bytearray(tr.serialize_checkpoint(ckpt))
    blob[len(blob) // 2] ^= 0xFF
    path = tmp_path / "model.ckpt"
    path.write_bytes(bytes(blob))
    with pytest.raises(tr.CheckpointError):
        tr.load_checkpoint(path)


def test_checkpoint_shape_mismatch_reported(tmp_path):
    import json
    import struct

    _, ckpt = make_checkpoint()
    blob = tr.serialize_checkpoint(ckpt)
    magic_len = len(b"SMAJCKP1")
    (header_len,) = struct.unpack_from("<Q", blob, magic_len + 4)
    start = magic_len + 4 + 8
    header = json.loads(blob[start:start + header_len])
    # claim a different hidden size than the stored arrays were built with
    header["config"]["hidden_size"] = ckpt.config.hidden_size + 1
    rebuilt_config = tr.TrainConfig.from_dict(header["config"])
    header["config_digest"] = rebuilt_config.digest()
    new_header = json.dumps(header, sort_keys=True).encode()
    body = blob[start + header_len:-32]
    prefix = blob[:magic_len + 4] + struct.pack("<Q", len(new_header)) + new_header + body
    import hashlib
    tampered = prefix + hashlib.sha256(prefix).digest()
    path = tmp_path / "model.ckpt"
    path.write_bytes(tampered)
    with pytest.raises(tr.CheckpointError, match="shape mismatch"):
        tr.load_checkpoint(path)


def test_predict_appeal_deterministic_and_isolated():
    splits, ckpt = make_checkpoint()
    digest_before = tr.checkpoint_digest(ckpt)
    doc_a, doc_b = splits.test[0], splits.validation[0]

    p1 = tr.predict_appeal(ckpt, doc_a)
    p2 = tr.predict_appeal(ckpt, doc_a)
    assert p1.ruling_probability == p2.ruling_probability
    assert np.array_equal(p1.article_distribution, p2.article_distribution)

    # A then B equals B alone
    tr.predict_appeal(ckpt, doc_a)
    b_after_a = tr.predict_appeal(ckpt, doc_b)
    b_alone = tr.predict_appeal(ckpt, doc_b)
    assert b_after_a.ruling_probability == b_alone.ruling_probability
    assert np.array_equal(b_after_a.article_distribution, b_alone.article_distribution)

    assert tr.checkpoint_digest(ckpt) == digest_before


def test_predict_appeal_zero_steps_equals_forward():
    splits, vocab, spaces, config = small_setup(fine_tune_steps=0)
    ckpt, _ = tr.train(splits, vocab, spaces, config)
    doc = splits.test[0]
    pred = tr.predict_appeal(ckpt, doc)
    ex = tr.encode_document(doc, vocab, spaces, config.max_seq_len)
    out = tr.forward_document(ckpt.params, ex, with_losses=False)
    assert pred.ruling_probability == out.ruling_probability.item()
    assert not pred.fine_tuned


def test_predict_appeal_fine_tune_changes_output():
    splits, ckpt = make_checkpoint()
    doc = splits.test[0]
    with_ft = tr.predict_appeal(ckpt, doc)
    ex = tr.encode_document(doc, ckpt.vocabulary, ckpt.label_spaces,
                            ckpt.config.max_seq_len)
    plain = tr.forward_document(ckpt.params, ex, with_losses=False)
    assert with_ft.fine_tuned
    assert with_ft.ruling_probability != plain.ruling_probability.item()


def test_predict_appeal_missing_lower_record_warns():
    splits, ckpt = make_checkpoint()
    doc = splits.test[0]
    import dataclasses
    stripped = dataclasses.replace(doc, lower_judgment=None, appeal_judgment=None)
    pred = tr.predict_appeal(ckpt, stripped)
    assert not pred.fine_tuned
    assert pred.warnings


def test_predict_appeal_attention_alignment():
    splits, ckpt = make_checkpoint()
    doc = splits.test[0]
    pred = tr.predict_appeal(ckpt, doc)
    assert pred.attention is not None
    assert len(pred.attention) == len(pred.fact_tokens)
    assert abs(pred.attention.sum() - 1.0) <= 1e-9


def test_encode_document_truncates():
    splits, vocab, spaces, _ = small_setup()
    doc = splits.train[0]
    ex = tr.encode_document(doc, vocab, spaces, max_seq_len=2)
    assert len(ex.lower_ids) == 2
    assert len(ex.ground_ids) == 2
    assert len(ex.appeal_ids) == 2 + min(len(doc.new_facts), 2)


@pytest.mark.filterwarnings("ignore:overflow")
def test_divergence_aborts_with_batch_id():
    # squashing keeps moderate blowups finite; 1e200-scale parameters overflow
    splits, vocab, spaces, config = small_setup(learning_rate=1e200, epochs=3)
    with pytest.raises(tr.DivergenceError, match="batch"):
        tr.train(splits, vocab, spaces, config)
