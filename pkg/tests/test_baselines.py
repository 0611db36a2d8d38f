import numpy as np
import pytest

from seamline.baselines import (
    LabelSequence,
    LogisticConfig,
    LogisticModel,
    classify_sentences,
    load_logistic,
    random_boundaries,
    save_logistic,
    train_logistic,
    transitions_to_boundaries,
)
from seamline.corpus import ground_truth_boundaries
from seamline.errors import DimensionMismatch, SingleClassCorpus

from conftest import G, H, labeled_doc


def _separable_fixture(rng, n=40, margin=1.0):
    """2D points split by the vertical axis with the given margin."""
    xs = []
    labels = []
    for _ in range(n):
        offset = margin + rng.random() * 2
        if rng.random() < 0.5:
            xs.append([offset, rng.standard_normal()])
            labels.append(G)
        else:
            xs.append([-offset, rng.standard_normal()])
            labels.append(H)
    return np.array(xs), labels


class TestTrainLogistic:
    def test_separable_fixture_reaches_full_accuracy(self):
        x, labels = _separable_fixture(np.random.default_rng(0))
        model = train_logistic(x, labels, LogisticConfig(epochs=300))
        sequence = classify_sentences(model, x)
        assert list(sequence.labels) == labels

    def test_all_zero_embeddings_predict_majority(self):
        x = np.zeros((10, 4))
        labels = [G] * 7 + [H] * 3
        model = train_logistic(x, labels)
        sequence = classify_sentences(model, x)
        assert all(lab is G for lab in sequence.labels)

        labels = [G] * 3 + [H] * 7
        model = train_logistic(x, labels)
        sequence = classify_sentences(model, x)
        assert all(lab is H for lab in sequence.labels)

    def test_deterministic_across_runs(self):
        x, labels = _separable_fixture(np.random.default_rng(1))
        model_a = train_logistic(x, labels, LogisticConfig(seed=7))
        model_b = train_logistic(x, labels, LogisticConfig(seed=7))
        assert np.array_equal(model_a.weights, model_b.weights)
        assert model_a.bias == model_b.bias

    def test_single_class_rejected(self):
        x = np.zeros((4, 2))
        with pytest.raises(SingleClassCorpus):
            train_logistic(x, [H, H, H, H])

    def test_loss_non_increasing_with_default_step(self):
        x, labels = _separable_fixture(np.random.default_rng(2))
        # Unit-normalize rows so the default step is inside the stable range.
        x = x / np.linalg.norm(x, axis=1, keepdims=True)
        losses = []
        train_logistic(x, labels, LogisticConfig(epochs=150),
                       loss_callback=losses.append)
        assert len(losses) == 150
        diffs = np.diff(losses)
        assert np.all(diffs <= 1e-12)

    def test_validation_selects_best_snapshot(self):
        x, labels = _separable_fixture(np.random.default_rng(3))
        val_x, val_labels = _separable_fixture(np.random.default_rng(4), n=20)
        model = train_logistic(x, labels, LogisticConfig(epochs=100),
                               val=(val_x, val_labels))
        sequence = classify_sentences(model, val_x)
        accuracy = np.mean([a is b for a, b in zip(sequence.labels, val_labels)])
        assert accuracy == 1.0


class TestClassifySentences:
    def test_zero_logit_is_generated_at_half_confidence(self):
        model = LogisticModel(np.zeros(3), 0.0)
        sequence = classify_sentences(model, np.ones((1, 3)))
        assert sequence.labels[0] is G
        assert sequence.confidences[0] == 0.5

    def test_strong_negative_logit_is_human(self):
        model = LogisticModel(np.array([-10.0]), 0.0)
        sequence = classify_sentences(model, np.array([[5.0]]))
        assert sequence.labels[0] is H
        assert sequence.confidences[0] > 0.999

    def test_batch_order_preserved(self):
        model = LogisticModel(np.array([1.0]), 0.0)
        rows = np.array([[-3.0], [3.0], [-3.0]])
        sequence = classify_sentences(model, rows)
        assert list(sequence.labels) == [H, G, H]

    def test_dim_mismatch(self):
        model = LogisticModel(np.zeros(3), 0.0)
        with pytest.raises(DimensionMismatch):
            classify_sentences(model, np.zeros((2, 4)))


class TestTransitionsToBoundaries:
    def _sequence(self, labels, confidences=None):
        label_objs = tuple(H if ch == "H" else G for ch in labels)
        if confidences is None:
            confidences = tuple(1.0 for _ in labels)
        return LabelSequence(label_objs, tuple(confidences))

    def test_single_transition(self):
        prediction = transitions_to_boundaries(self._sequence("HHG"))
        assert prediction.positions() == [2]

    def test_no_transitions(self):
        prediction = transitions_to_boundaries(self._sequence("HHHH"))
        assert prediction.candidates == ()

    def test_all_transitions_without_k(self):
        prediction = transitions_to_boundaries(self._sequence("GHGH"), k=None)
        assert sorted(prediction.positions()) == [1, 2, 3]

    def test_k_keeps_highest_min_confidence(self):
        sequence = self._sequence("HGHG", confidences=(0.9, 0.6, 0.95, 0.9))
        prediction = transitions_to_boundaries(sequence, k=2)
        # transition scores: pos1 min(.9,.6)=.6, pos2 min(.6,.95)=.6,
        # pos3 min(.95,.9)=.9 -> keep pos3 then the tie at pos1.
        assert prediction.positions() == [3, 1]

    def test_matches_ground_truth_oracle_on_random_sequences(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            n = int(rng.integers(2, 12))
            labels = "".join(rng.choice(["H", "G"]) for _ in range(n))
            prediction = transitions_to_boundaries(self._sequence(labels))
            doc = labeled_doc(labels)
            assert sorted(prediction.positions()) == ground_truth_boundaries(doc)


class TestRandomBoundaries:
    def test_contract(self):
        prediction = random_boundaries(5, 3, np.random.default_rng(0))
        positions = prediction.positions()
        assert len(positions) == len(set(positions)) == 3
        assert all(1 <= pos <= 4 for pos in positions)

    def test_k_clamped(self):
        prediction = random_boundaries(4, 10, np.random.default_rng(1))
        assert sorted(prediction.positions()) == [1, 2, 3]

    def test_seed_determinism(self):
        a = random_boundaries(10, 3, np.random.default_rng(2))
        b = random_boundaries(10, 3, np.random.default_rng(2))
        assert a == b

    def test_equal_scores(self):
        prediction = random_boundaries(10, 3, np.random.default_rng(3))
        scores = {score for _, score in prediction.candidates}
        assert len(scores) == 1

    def test_positions_uniform_chi_square(self):
        rng = np.random.default_rng(42)
        counts = np.zeros(12)
        for _ in range(10_000):
            prediction = random_boundaries(13, 1, rng)
            counts[prediction.positions()[0] - 1] += 1
        expected = 10_000 / 12
        stat = float(np.sum((counts - expected) ** 2 / expected))
        # chi-square critical value, df=11, significance 0.01
        assert stat < 24.725


class TestPersistence:
    def test_round_trip(self, tmp_path):
        model = LogisticModel(np.array([1.0, -2.0]), 0.5, 0.4)
        path = tmp_path / "lr.json"
        save_logistic(model, path, "hash3-d2-s0")
        loaded, provider_id = load_logistic(path)
        assert np.array_equal(loaded.weights, model.weights)
        assert loaded.bias == model.bias
        assert loaded.threshold == 0.4
        assert provider_id == "hash3-d2-s0"
