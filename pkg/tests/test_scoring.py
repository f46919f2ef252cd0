import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cape import tensor as T
from cape.errors import DegenerateNorm, UnseenLabelInTraining
from cape.gradcheck import check_gradients
from cape.scoring import (ScoreMatrix, compatibility, cross_entropy_loss, read_score_csv,
                          write_score_csv)
from cape.tensor import Tensor


def test_self_similarity_is_one():
    v = np.array([[0.3, -1.2, 4.0]])
    assert compatibility(v, v).data[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_orthogonal_is_zero():
    assert compatibility([[1.0, 0.0]], [[0.0, 1.0]]).data[0, 0] == 0.0


def test_hand_cosine():
    # dot = 2 + 2 + 4 = 8, both norms 3
    assert abs(compatibility([[1.0, 2.0, 2.0]], [[2.0, 1.0, 2.0]]).data[0, 0] - 8 / 9) < 1e-12


def test_zero_row_raises():
    with pytest.raises(DegenerateNorm):
        compatibility([[1.0, 0.0]], [[0.0, 0.0], [1.0, 1.0]])


def test_logit_scale_multiplies():
    f, y = np.array([[1.0, 2.0]]), np.array([[2.0, 1.0], [1.0, -1.0]])
    np.testing.assert_allclose(compatibility(f, y, 10.0).data, 10 * compatibility(f, y).data)


finite = st.floats(-10, 10).filter(lambda x: abs(x) > 1e-3)


@settings(max_examples=60)
@given(arrays(np.float64, (4, 5), elements=finite), arrays(np.float64, (3, 5), elements=finite),
       st.floats(1e-3, 1e3))
def test_scale_invariance(f, y, c):
    base = compatibility(f, y).data
    np.testing.assert_allclose(compatibility(c * f, y).data, base, atol=1e-12, rtol=0)
    np.testing.assert_allclose(compatibility(f, c * y).data, base, atol=1e-12, rtol=0)
    assert np.all(np.abs(base) <= 1 + 1e-12)
    assert np.array_equal(np.argmax(compatibility(c * f, y).data, 1), np.argmax(base, 1))


def test_uniform_scores_give_log_n():
    scores = Tensor(np.zeros((3, 7)))
    loss = cross_entropy_loss(scores, [0, 4, 6], list(range(7)))
    assert loss.item() == pytest.approx(math.log(7), abs=1e-14)


def test_loss_decreases_with_margin():
    losses = []
    for m in (1, 2, 4):
        s = np.zeros((1, 4))
        s[0, 2] = m
        losses.append(cross_entropy_loss(Tensor(s), [2], [0, 1, 2, 3]).item())
    assert losses[0] > losses[1] > losses[2] > 0


def test_hand_case_against_direct_formula():
    s = np.array([[0.2, -0.5, 0.9], [1.5, 0.1, -0.3]])
    labels = [2, 0]
    direct = 0.0
    for row, y in zip(s, labels):
        direct += -(row[y] - math.log(sum(math.exp(v) for v in row)))
    direct /= 2
    got = cross_entropy_loss(Tensor(s), labels, [0, 1, 2]).item()
    assert abs(got - direct) < 1e-12


def test_labels_map_through_columns():
    s = np.array([[0.0, 3.0]])
    # column 1 holds composition 7
    assert cross_entropy_loss(Tensor(s), [7], [4, 7]).item() < 0.1


def test_unseen_label_rejected():
    with pytest.raises(UnseenLabelInTraining):
        cross_entropy_loss(Tensor(np.zeros((1, 2))), [9], [0, 1])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loss_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    f = Tensor(rng.normal(size=(5, 6)), requires_grad=True)
    y = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    labels = rng.integers(0, 4, 5)

    def loss():
        return cross_entropy_loss(compatibility(f, y, 3.0), labels, range(4))

    errs = check_gradients(loss, {"features": f, "Y_F": y})
    assert max(errs.values()) < 1e-4, errs


@settings(max_examples=40)
@given(arrays(np.float64, (3, 4), elements=st.floats(-20, 20)))
def test_loss_non_negative(s):
    assert cross_entropy_loss(Tensor(s), [0, 1, 3], range(4)).item() >= 0


def test_score_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    sm = ScoreMatrix(rng.normal(size=(3, 3)), ["a+x", "b+y", "a+y"], [False, False, True],
                     labels=[0, 2, 1])
    write_score_csv(tmp_path / "s.csv", sm)
    back = read_score_csv(tmp_path / "s.csv")
    assert back.scores.tobytes() == sm.scores.tobytes()
    assert back.columns == sm.columns and list(back.unseen) == [False, False, True]
    assert list(back.labels) == [0, 2, 1]
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "label,a+x@seen,b+y@seen,a+y@unseen"
