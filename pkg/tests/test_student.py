"""Distilled planner tests: softmax numerics, both trainers, persistence."""

import math

import numpy as np
import pytest

from qplan.student import (
    BoostedStudent, LinearStudent, agreement, boosted_from_dict,
    boosted_predict_proba, boosted_to_dict, cross_entropy, gradient_check,
    linear_from_dict, linear_predict_proba, linear_to_dict, load_student,
    one_hot, predict_arm, predict_proba, save_student, softmax,
    time_callable, train_boosted, train_linear,
)


def _clustered(n_per=40, seed=0, arms=(3, 17, 42)):
    rng = np.random.Generator(np.random.PCG64(seed))
    xs, ys = [], []
    for i, arm in enumerate(arms):
        center = np.zeros(7)
        center[i % 7] = 5.0 * (i + 1)
        xs.append(center + rng.normal(scale=0.3, size=(n_per, 7)))
        ys.append(np.full(n_per, arm, np.int64))
    return np.vstack(xs), np.concatenate(ys)


class TestSoftmax:
    def test_rows_sum_to_one(self):
        rng = np.random.Generator(np.random.PCG64(1))
        z = rng.normal(size=(20, 64)) * 10
        p = softmax(z)
        assert np.allclose(p.sum(axis=1), 1.0)
        assert np.all(p >= 0)

    def test_shift_invariance(self):
        rng = np.random.Generator(np.random.PCG64(2))
        z = rng.normal(size=(10, 8))
        shifted = z + rng.normal(size=(10, 1)) * 100
        assert np.max(np.abs(softmax(z) - softmax(shifted))) < 1e-9

    def test_minus_inf_is_exact_zero(self):
        z = np.array([[0.0, -np.inf, 1.0]])
        p = softmax(z)
        assert p[0, 1] == 0.0
        assert p[0].sum() == pytest.approx(1.0)

    def test_one_hot(self):
        y = one_hot(np.array([2, 0]), 4)
        assert y.tolist() == [[0, 0, 1, 0], [1, 0, 0, 0]]


class TestLinearStudent:
    def test_zero_epochs_is_uniform(self):
        x, y = _clustered()
        student = train_linear(x, y, epochs=0)
        probs = linear_predict_proba(student, x[:5])
        assert np.allclose(probs, 1.0 / 64)

    def test_loss_monotone_within_tolerance(self):
        x, y = _clustered(seed=3)
        student = train_linear(x, y)
        hist = np.asarray(student.loss_history)
        assert hist.shape[0] == 501
        assert np.all(np.diff(hist) <= 1e-9)
        assert hist[-1] < hist[0]

    def test_learns_separable_clusters(self):
        x, y = _clustered(seed=4)
        student = train_linear(x, y)
        assert agreement(student, x, y) >= 0.95

    def test_constant_feature_column_safe(self):
        x, y = _clustered(seed=5)
        x[:, 6] = 2.5
        student = train_linear(x, y, epochs=50)
        probs = linear_predict_proba(student, x)
        assert np.all(np.isfinite(probs))

    def test_serialization_round_trip(self, tmp_path):
        x, y = _clustered(seed=6)
        student = train_linear(x, y, epochs=100)
        path = str(tmp_path / "linear.json")
        save_student(path, student)
        back = load_student(path)
        assert isinstance(back, LinearStudent)
        assert np.array_equal(linear_predict_proba(back, x),
                              linear_predict_proba(student, x))

    def test_loader_refuses_wrong_format(self):
        x, y = _clustered(seed=6)
        blob = linear_to_dict(train_linear(x, y, epochs=1))
        blob["format"] = "other"
        with pytest.raises(ValueError):
            linear_from_dict(blob)

    def test_gradient_matches_finite_differences(self):
        assert gradient_check(seed=0) < 1e-5
        assert gradient_check(seed=7, n_classes=5, d=6) < 1e-5

    def test_empty_training_rejected(self):
        with pytest.raises(ValueError):
            train_linear(np.zeros((0, 7)), np.zeros(0, np.int64))


class TestBoostedStudent:
    def test_balanced_two_class_starts_at_ln2(self):
        rng = np.random.Generator(np.random.PCG64(8))
        x = rng.normal(size=(40, 4))
        y = np.array([0, 1] * 20, np.int64)
        y_sorted = np.sort(y)
        x[y_sorted == 1] += 4.0
        student = train_boosted(x, y_sorted, n_classes=2, n_rounds=3)
        assert student.loss_history[0] == pytest.approx(math.log(2))
        assert student.loss_history[1] < math.log(2)

    def test_loss_monotone_within_tolerance(self):
        x, y = _clustered(seed=9)
        student = train_boosted(x, y)
        hist = np.asarray(student.loss_history)
        assert hist.shape[0] == 51
        assert np.all(np.diff(hist) <= 1e-9)

    def test_absent_classes_stay_at_zero(self):
        x, y = _clustered(seed=10)
        student = train_boosted(x, y, n_rounds=5)
        probs = boosted_predict_proba(student, x)
        absent = sorted(set(range(64)) - set(np.unique(y).tolist()))
        assert np.all(probs[:, absent] == 0.0)
        assert np.isneginf(student.init_logits[absent[0]])

    def test_learns_separable_clusters(self):
        x, y = _clustered(seed=11)
        student = train_boosted(x, y)
        assert agreement(student, x, y) >= 0.99

    def test_serialization_round_trip(self, tmp_path):
        x, y = _clustered(seed=12)
        student = train_boosted(x, y, n_rounds=8)
        path = str(tmp_path / "boosted.json")
        save_student(path, student)
        back = load_student(path)
        assert isinstance(back, BoostedStudent)
        assert np.array_equal(boosted_predict_proba(back, x),
                              boosted_predict_proba(student, x))

    def test_loader_refuses_wrong_format(self):
        x, y = _clustered(seed=12)
        blob = boosted_to_dict(train_boosted(x, y, n_rounds=1))
        blob["version"] = 99
        with pytest.raises(ValueError):
            boosted_from_dict(blob)


class TestDispatch:
    def test_predict_arm_both_students(self):
        x, y = _clustered(seed=13)
        linear = train_linear(x, y, epochs=200)
        boosted = train_boosted(x, y, n_rounds=20)
        for student in (linear, boosted):
            arms = predict_arm(student, x)
            assert arms.shape == (x.shape[0],)
            assert set(np.unique(arms)) <= set(range(64))
            assert predict_proba(student, x[0]).shape == (1, 64)

    def test_unknown_student_rejected(self):
        with pytest.raises(TypeError):
            predict_proba(object(), np.zeros((1, 7)))

    def test_agreement_value(self):
        x, y = _clustered(seed=14)
        student = train_boosted(x, y)
        assert 0.0 <= agreement(student, x, y) <= 1.0

    def test_cross_entropy_perfect_prediction(self):
        probs = one_hot(np.array([1, 0]), 3)
        assert cross_entropy(probs, np.array([1, 0])) == 0.0

    def test_time_callable_positive(self):
        assert time_callable(lambda: sum(range(1000)), repeats=3) >= 0.0
