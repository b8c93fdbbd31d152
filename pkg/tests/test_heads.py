"""Transfer heads: loss helpers, training, persistence and context fusion."""
import numpy as np
import pytest
import torch

from heads.context import ContextEmbedding, FusedHead, build_context_embeddings, fuse_context
from heads.mlp import (acuity_loss, acuity_probs, binary_ordinal_probs, ordinal_soft_targets, positive_weights,
                       weighted_bce)
from heads.training import (TrainedHead, acuity_confusion, mean_absolute_error, per_class_auroc, train_acuity_head,
                            train_age_head, train_diagnosis_head)
from llm.clients import MockContextClient
from synthcohort.schema import UNLABELED


@pytest.fixture
def head_cfg(config):
    return config.heads.model_copy(update={'epochs': 40, 'batch_size': 16, 'learning_rate': 1e-2})


def test_positive_weight_is_negatives_over_positives():
    labels = np.array([[1, 0, 1], [0, 0, 1], [0, 0, UNLABELED], [1, 0, 0], [0, 0, 0]])
    weights, active = positive_weights(labels, ['a', 'b', 'c'])
    np.testing.assert_allclose(weights, [1.5, 0.0, 1.0])
    assert active.tolist() == [True, False, True]


def test_weighted_bce_skips_unlabeled_and_inactive_entries():
    logits = torch.tensor([[0.3, -1.0, 2.0], [1.2, 0.4, -0.5]])
    targets = torch.tensor([[1, 0, UNLABELED], [0, 1, 1]])
    pos_weight = torch.tensor([2.0, 1.0, 3.0])
    active = torch.tensor([True, False, True])
    loss = weighted_bce(logits, targets, pos_weight, active)

    def bce(z, y, w):
        z = torch.tensor(z)
        return -(w * y * torch.nn.functional.logsigmoid(z) + (1 - y) * torch.nn.functional.logsigmoid(-z))

    expected = (bce(0.3, 1, 2.0) + bce(1.2, 0, 2.0) + bce(-0.5, 1, 3.0)) / 2
    torch.testing.assert_close(loss, expected)


def test_acuity_distributions():
    torch.manual_seed(0)
    logits = torch.randn(5, 2)
    probs = binary_ordinal_probs(logits)
    assert (probs >= 0).all()
    torch.testing.assert_close(probs.sum(1), torch.ones(5))

    soft = ordinal_soft_targets(torch.tensor([0, 2]), 3)
    torch.testing.assert_close(soft.sum(1), torch.ones(2))
    assert soft.argmax(1).tolist() == [0, 2]
    assert soft[0, 1] > soft[0, 2]


@pytest.mark.parametrize('kind, width', [('cross_entropy', 3), ('ordinal_soft', 3), ('binary_ordinal', 2)])
def test_acuity_losses_are_finite(kind, width):
    torch.manual_seed(1)
    logits = torch.randn(6, width, requires_grad=True)
    loss = acuity_loss(logits, torch.tensor([0, 1, 2, 2, 1, 0]), kind)
    loss.backward()
    assert torch.isfinite(loss)
    assert acuity_probs(logits.detach(), kind).shape == (6, 3)
    assert torch.isfinite(acuity_loss(logits, torch.zeros(6, dtype=torch.long), kind))


def test_unknown_acuity_loss():
    with pytest.raises(ValueError):
        acuity_loss(torch.zeros(2, 3), torch.tensor([0, 1]), 'hinge')


def _separable(rng, n, n_classes=3):
    y = (rng.random((n, n_classes)) < 0.4).astype(int)
    x = np.concatenate([3.0 * y - 1.5, rng.normal(size=(n, 4))], axis=1) + 0.3 * rng.normal(size=(n, n_classes + 4))
    return x.astype(np.float32), y


def test_diagnosis_head_learns_and_round_trips(tmp_path, head_cfg, rng):
    x, y = _separable(rng, 160)
    y[:, 2] = 0
    head = train_diagnosis_head(x[:120], y[:120], x[120:], y[120:], ['a', 'b', 'c'], head_cfg, seed=0,
                                encoder_checksum='abc')
    assert head.active.tolist() == [True, True, False]
    assert head.best_score > 0.9
    assert len(head.history) == head_cfg.epochs
    assert set(per_class_auroc(head, x[120:], y[120:])) == {'a', 'b'}

    loaded = TrainedHead.load(head.save(tmp_path / 'heads' / 'diagnosis.pt'))
    np.testing.assert_allclose(loaded.predict(x[120:]), head.predict(x[120:]), rtol=1e-6)
    assert loaded.encoder_checksum == 'abc'

    records = head.records(x[120:125], y[120:125], [f'S{i}' for i in range(5)], [{'sex': 'F'}] * 5, 'test')
    assert len(records) == 5 and records[0].task == 'diagnosis' and records[0].split == 'test'


@pytest.mark.parametrize('kind', ['cross_entropy', 'binary_ordinal', 'ordinal_soft'])
def test_acuity_head_separates_levels(head_cfg, rng, kind):
    levels = rng.integers(0, 3, 150)
    centers = np.array([[-3.0, 0.0], [0.0, 3.0], [3.0, 0.0]])
    x = (centers[levels] + 0.4 * rng.normal(size=(150, 2))).astype(np.float32)
    head = train_acuity_head(x[:100], levels[:100], x[100:], levels[100:],
                             head_cfg.model_copy(update={'acuity_loss': kind}), seed=0)
    assert head.best_score >= 0.9
    probs = head.predict(x[100:])
    np.testing.assert_allclose(probs.sum(1), 1.0, atol=1e-5)
    scores = head.priority_score(x[100:])
    assert ((scores >= 0) & (scores <= 1)).all()
    confusion = acuity_confusion(head, x[100:], levels[100:])
    assert confusion.shape == (3, 3) and confusion.sum() == 50


def test_age_head_beats_the_mean(head_cfg, rng):
    ages = rng.uniform(1, 90, 160)
    x = np.stack([(ages - 45) / 25, rng.normal(size=160)], axis=1).astype(np.float32)
    head = train_age_head(x[:120], ages[:120], x[120:], ages[120:], head_cfg, seed=0)
    baseline = float(np.mean(np.abs(ages[120:] - ages[:120].mean())))
    assert mean_absolute_error(head, x[120:], ages[120:]) < 0.5 * baseline
    assert head.best_score == pytest.approx(-mean_absolute_error(head, x[120:], ages[120:]), rel=1e-4)


def test_context_fusion(cohort, head_cfg, rng):
    reports = [s.report for s in cohort[:6]]
    ctx = build_context_embeddings(reports, MockContextClient(), 4, 'hash', max_concurrency=2)
    assert ctx.vectors.shape == (6, 4) and ctx.dim == 4
    again = build_context_embeddings(reports, MockContextClient(), 4, 'hash')
    np.testing.assert_array_equal(ctx.vectors, again.vectors)

    study = rng.normal(size=(6, 5)).astype(np.float32)
    fused = fuse_context(study, ctx)
    assert fused.shape == (6, 9)
    with pytest.raises(ValueError):
        fuse_context(study[:5], ctx)
    assert ContextEmbedding.zeros(3, 4).vectors.sum() == 0

    x, y = _separable(rng, 40)
    padded = np.concatenate([x, np.zeros((40, 4), np.float32)], axis=1)
    head = train_diagnosis_head(padded[:32], y[:32], padded[32:], y[32:], ['a', 'b', 'c'],
                                head_cfg.model_copy(update={'epochs': 2}), seed=0)
    row = ctx.vectors[0]
    np.testing.assert_allclose(FusedHead(head, row).logits(x[:3]),
                               head.logits(np.concatenate([x[:3], np.tile(row, (3, 1))], axis=1)), rtol=1e-6)
