import numpy as np
import pytest
from hypothesis import given, strategies as st

from mcmil.mil import EmptyBagError, aggregate_max, aggregate_topk, bag_loss_and_grads

scores_st = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40)


def test_max_examples():
    p = aggregate_max([0.1, 0.9, 0.3])
    assert p.score == 0.9 and p.contributors.tolist() == [1]
    p = aggregate_max([0.4])
    assert p.score == 0.4 and p.contributors.tolist() == [0]
    assert aggregate_max([0.7, 0.7]).contributors.tolist() == [0]


def test_topk_examples():
    assert aggregate_topk([0.9, 0.3, 0.6], 2).score == pytest.approx(0.75)
    assert aggregate_topk([0.2, 0.4, 0.9], 10).score == pytest.approx(0.5)
    p = aggregate_topk([0.5, 0.8, 0.8, 0.1], 2)
    assert p.contributors.tolist() == [1, 2]
    np.testing.assert_array_equal(p.weights, [0.5, 0.5])


@pytest.mark.parametrize("agg", [aggregate_max, lambda s: aggregate_topk(s, 3)])
def test_empty_bag(agg):
    with pytest.raises(EmptyBagError):
        agg([])


def test_topk_needs_positive_k():
    with pytest.raises(ValueError):
        aggregate_topk([0.1], 0)


class TestLoss:
    def test_max_routes_to_one_patch(self):
        pred = aggregate_max([0.2, 0.6, 0.4])
        loss, grads = bag_loss_and_grads(pred, 1)
        assert np.count_nonzero(grads) == 1 and grads[1] == pytest.approx(-1 / 0.6)
        assert loss == pytest.approx(-np.log(0.6))

    def test_negative_label(self):
        loss, grads = bag_loss_and_grads(aggregate_max([0.2, 0.6]), 0)
        assert loss == pytest.approx(-np.log(0.4))
        assert grads[1] == pytest.approx(1 / 0.4)

    @pytest.mark.parametrize("label", [0, 1])
    def test_perfect_prediction(self, label):
        loss, grads = bag_loss_and_grads(aggregate_max([float(label), 0.5 * label]), label)
        assert loss < 1e-6
        assert np.all(np.abs(grads) < 1e-6)

    def test_topk_two_of_five(self):
        pred = aggregate_topk([0.1, 0.8, 0.3, 0.6, 0.2], 2)
        _, grads = bag_loss_and_grads(pred, 1)
        nz = np.flatnonzero(grads)
        assert nz.tolist() == [1, 3]
        dscore = -1 / pred.score
        np.testing.assert_allclose(grads[nz], dscore / 2)

    def test_loss_gradient_matches_finite_difference(self):
        s = np.array([0.3, 0.55, 0.1])
        for label in (0, 1):
            _, grads = bag_loss_and_grads(aggregate_topk(s, 2), label)
            for i in range(3):
                h = 1e-6
                up, down = s.copy(), s.copy()
                up[i] += h
                down[i] -= h
                fd = (bag_loss_and_grads(aggregate_topk(up, 2), label)[0]
                      - bag_loss_and_grads(aggregate_topk(down, 2), label)[0]) / (2 * h)
                assert grads[i] == pytest.approx(fd, abs=1e-6)


@given(scores_st)
def test_topk1_is_max(scores):
    a, b = aggregate_topk(scores, 1), aggregate_max(scores)
    assert a.score == b.score
    assert a.contributors.tolist() == b.contributors.tolist()
    assert a.weights.tolist() == b.weights.tolist()


@given(scores_st, st.randoms())
def test_permutation_equivariance(scores, rnd):
    perm = list(range(len(scores)))
    rnd.shuffle(perm)
    permuted = [scores[i] for i in perm]
    for agg in (aggregate_max, lambda s: aggregate_topk(s, 3)):
        a, b = agg(scores), agg(permuted)
        assert a.score == pytest.approx(b.score, abs=1e-15)
        # contributors map to the same multiset of scores
        assert sorted(np.asarray(scores)[a.contributors]) == sorted(np.asarray(permuted)[b.contributors])


@given(scores_st, st.integers(0, 39), st.floats(0.0, 1.0))
def test_monotone(scores, i, bump):
    i %= len(scores)
    raised = list(scores)
    raised[i] = max(raised[i], bump)
    for agg in (aggregate_max, lambda s: aggregate_topk(s, 4)):
        assert agg(raised).score >= agg(scores).score - 1e-15


@given(scores_st)
def test_smi_consistency(scores):
    positive = aggregate_max(scores).score > 0.5
    assert positive == any(s > 0.5 for s in scores)


@given(scores_st, st.integers(1, 10), st.sampled_from([0, 1]))
def test_gradient_support(scores, k, label):
    pred = aggregate_topk(scores, k)
    _, grads = bag_loss_and_grads(pred, label)
    assert set(np.flatnonzero(grads)) <= set(pred.contributors.tolist())
    assert pred.weights.sum() == pytest.approx(1.0)
    assert np.all(pred.weights >= 0)
