import math

import numpy as np
import pytest

from smajudge import appellate as ap
from smajudge import numerics as nm


def test_combine_order_and_width():
    h = ap.combine(nm.tensor([1.0, 2.0]), nm.tensor([3.0, 4.0, 5.0, 6.0]))
    assert np.array_equal(h.data, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])


def test_combine_default_hidden_width():
    h = ap.combine(nm.tensor(np.zeros(512)), nm.tensor(np.ones(1024)))
    assert h.shape == (1536,)


def test_combine_zero_appellate_half():
    h = ap.combine(nm.tensor([7.0, 8.0]), nm.tensor(np.zeros(4)))
    assert np.array_equal(h.data, [7.0, 8.0, 0.0, 0.0, 0.0, 0.0])


def test_combine_dimension_mismatch():
    with pytest.raises(ValueError):
        ap.combine(nm.tensor([1.0, 2.0]), nm.tensor([1.0, 2.0, 3.0]))


def test_predict_ruling_zero_params():
    head = ap.RulingHead(6, nm.RngStream(0))
    head.w.data[:] = 0.0
    head.b.data = np.zeros(())
    p = ap.predict_ruling(nm.tensor(np.ones(6)), head)
    assert p.item() == pytest.approx(0.5)


def test_predict_ruling_saturated_bias():
    head = ap.RulingHead(4, nm.RngStream(0))
    head.w.data[:] = 0.0
    head.b.data = np.asarray(30.0)
    p = ap.predict_ruling(nm.tensor(np.zeros(4)), head)
    assert p.item() > 1.0 - 1e-9


def test_predict_ruling_hand_case():
    head = ap.RulingHead(2, nm.RngStream(0))
    head.w.data[:] = [0.5, -1.0]
    head.b.data = np.asarray(0.25)
    h = np.array([0.8, 0.3])
    expected = 1.0 / (1.0 + math.exp(-(0.5 * 0.8 - 1.0 * 0.3 + 0.25)))
    assert ap.predict_ruling(nm.tensor(h), head).item() == pytest.approx(expected)


def test_ruling_loss_values():
    assert ap.ruling_loss(nm.tensor(0.5), 0).item() == pytest.approx(math.log(2.0))
    assert ap.ruling_loss(nm.tensor(1.0), 1).item() == 0.0
    assert ap.ruling_loss(nm.tensor(0.9), 0).item() == pytest.approx(-math.log(0.1))


def test_ruling_loss_positive_weight():
    base = ap.ruling_loss(nm.tensor(0.3), 1).item()
    weighted = ap.ruling_loss(nm.tensor(0.3), 1, positive_weight=2.5).item()
    assert weighted == pytest.approx(2.5 * base)
    # the negative class is untouched
    assert ap.ruling_loss(nm.tensor(0.3), 0, positive_weight=2.5).item() == \
        ap.ruling_loss(nm.tensor(0.3), 0).item()


def test_article_head_zero_params_uniform():
    head = ap.ArticleHead(6, 5, nm.RngStream(0))
    head.w.data[:] = 0.0
    head.b.data[:] = 0.0
    dist = ap.predict_article(nm.tensor(np.ones(6)), head)
    assert np.allclose(dist.data, 0.2)
    assert ap.article_loss(dist, 3).item() == pytest.approx(math.log(5.0))


def test_article_loss_perfect_and_delegation():
    dist = nm.tensor([0.1, 0.8, 0.1])
    assert ap.article_loss(dist, 1).item() == nm.cross_entropy(dist, 1).item()
    assert ap.article_loss(nm.tensor([0.0, 1.0]), 1).item() == 0.0


def test_ruling_probability_always_open_interval():
    head = ap.RulingHead(3, nm.RngStream(1))
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = ap.predict_ruling(nm.tensor(rng.normal(size=3) * 5), head).item()
        assert 0.0 < p < 1.0


def test_swapping_halves_changes_prediction():
    head = ap.RulingHead(6, nm.RngStream(2))
    rng = np.random.default_rng(1)
    h_l = rng.normal(size=2)
    h_a = rng.normal(size=4)
    p1 = ap.predict_ruling(ap.combine(nm.tensor(h_l), nm.tensor(h_a)), head).item()
    swapped = np.concatenate([h_a[:2], np.concatenate([h_a[2:], h_l])])
    p2 = ap.predict_ruling(nm.tensor(swapped), head).item()
    assert p1 != p2


def test_gradients_reach_upstream_through_both_losses():
    rng_np = np.random.default_rng(3)
    h_l = nm.tensor(rng_np.normal(size=2), requires_grad=True)
    h_a = nm.tensor(rng_np.normal(size=4), requires_grad=True)
    ruling_head = ap.RulingHead(6, nm.RngStream(3))
    article_head = ap.ArticleHead(6, 4, nm.RngStream(4))
    with nm.Tape() as tape:
        h = ap.combine(h_l, h_a)
        loss = nm.add(ap.ruling_loss(ap.predict_ruling(h, ruling_head), 1),
                      ap.article_loss(ap.predict_article(h, article_head), 2))
    nm.backward(loss, tape)
    for t in (h_l, h_a, ruling_head.w, ruling_head.b, article_head.w, article_head.b):
        assert t.grad is not None and np.any(t.grad != 0)


def test_prediction_class_consistency_enforced():
    with pytest.raises(ValueError):
        ap.AppealPrediction(ruling_probability=0.7, ruling_class=0,
                            article_distribution=np.array([1.0]), article_index=0)
    pred = ap.AppealPrediction(ruling_probability=0.5, ruling_class=1,
                               article_distribution=np.array([1.0]), article_index=0)
    assert pred.ruling_class == 1
