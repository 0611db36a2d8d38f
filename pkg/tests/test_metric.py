import numpy as np
import pytest

from seamline.corpus import make_document
from seamline.errors import (
    DimensionMismatch,
    NonFiniteLoss,
    SingleClassCorpus,
    UnlabeledSentence,
)
from seamline.metric import (
    ProjectionHead,
    TrainConfig,
    identity_head,
    load_head,
    loss_gradient,
    project,
    sample_triplets,
    save_head,
    train_projection,
    triplet_loss,
)

from conftest import G, H, MappingProvider, labeled_doc, nuisance_fixture_docs


def _head(weights, bias=None):
    weights = np.asarray(weights, dtype=float)
    if bias is None:
        bias = np.zeros(weights.shape[0])
    return ProjectionHead(weights, np.asarray(bias, dtype=float))


def _identity(dim):
    return _head(np.eye(dim))


class TestSampleTriplets:
    def test_one_of_each_label_has_no_positive(self):
        doc = labeled_doc("HG")
        with pytest.raises(SingleClassCorpus):
            sample_triplets([doc], 10, np.random.default_rng(0))

    def test_single_class_rejected(self):
        with pytest.raises(SingleClassCorpus):
            sample_triplets([labeled_doc("HHHH")], 5, np.random.default_rng(0))

    def test_label_invariant_holds(self):
        docs = [labeled_doc("HHGG", doc_id="a"), labeled_doc("HGGH", doc_id="b")]
        triplets = sample_triplets(docs, 100, np.random.default_rng(1))
        assert len(triplets) == 100
        for t in triplets:
            assert t.anchor.label == t.positive.label
            assert t.anchor.label != t.negative.label
            assert (t.anchor.doc_index, t.anchor.sentence_index) != (
                t.positive.doc_index, t.positive.sentence_index)

    def test_seed_determinism(self):
        docs = [labeled_doc("HHGG", doc_id="a"), labeled_doc("GHGH", doc_id="b")]
        first = sample_triplets(docs, 50, np.random.default_rng(13))
        second = sample_triplets(docs, 50, np.random.default_rng(13))
        assert first == second

    def test_same_document_positive_preferred(self):
        # doc a has two H sentences; anchors there must take the local one.
        docs = [labeled_doc("HHG", doc_id="a"), labeled_doc("HGG", doc_id="b")]
        triplets = sample_triplets(docs, 200, np.random.default_rng(2))
        for t in triplets:
            if t.anchor.doc_index == 0 and t.anchor.label is H:
                assert t.positive.doc_index == 0

    def test_corpus_wide_fallback_when_doc_has_single_label_instance(self):
        # Each doc has one H, so positives must come from the other doc.
        docs = [labeled_doc("HG", doc_id="a"), labeled_doc("HG", doc_id="b")]
        triplets = sample_triplets(docs, 50, np.random.default_rng(3))
        for t in triplets:
            if t.anchor.label is H:
                assert t.positive.doc_index != t.anchor.doc_index

    def test_unlabeled_rejected(self):
        doc = make_document("d", 1, "s", [("One line here.", H), ("Two.", None)])
        with pytest.raises(UnlabeledSentence):
            sample_triplets([doc], 5, np.random.default_rng(0))


class TestTripletLoss:
    def test_margin_satisfied_is_zero(self):
        a = np.array([[0.0, 0.0]])
        p = np.array([[0.0, 0.0]])
        n = np.array([[0.0, 2.0]])
        assert triplet_loss(_identity(2), a, p, n, margin=1.0) == 0.0

    def test_hinge_active_equal_distances(self):
        a = np.array([[0.0, 0.0]])
        p = np.array([[1.0, 0.0]])
        n = np.array([[0.0, 1.0]])
        assert triplet_loss(_identity(2), a, p, n, margin=1.0) == 1.0

    def test_batch_mean(self):
        a = np.array([[0.0, 0.0], [0.0, 0.0]])
        p = np.array([[0.0, 0.0], [1.0, 0.0]])
        n = np.array([[0.0, 2.0], [0.0, 1.0]])
        assert triplet_loss(_identity(2), a, p, n, margin=1.0) == 0.5

    def test_loss_nonnegative_random(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            head = _head(rng.standard_normal((3, 5)), rng.standard_normal(3))
            batch = rng.standard_normal((3, 8, 5))
            loss = triplet_loss(head, batch[0], batch[1], batch[2], margin=0.5)
            assert loss >= 0.0

    def test_zero_iff_margin_satisfied_everywhere(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            head = _head(rng.standard_normal((4, 4)))
            a = rng.standard_normal((6, 4))
            p = rng.standard_normal((6, 4))
            n = rng.standard_normal((6, 4))
            pa, pp, pn = (x @ head.weights.T for x in (a, p, n))
            d1 = np.linalg.norm(pa - pp, axis=1)
            d2 = np.linalg.norm(pa - pn, axis=1)
            loss = triplet_loss(head, a, p, n, margin=1.0)
            assert (loss == 0.0) == bool(np.all(d2 >= d1 + 1.0))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            triplet_loss(_identity(2), np.zeros((1, 3)), np.zeros((1, 3)),
                         np.zeros((1, 3)))
        with pytest.raises(DimensionMismatch):
            triplet_loss(_identity(2), np.zeros((1, 2)), np.zeros((2, 2)),
                         np.zeros((1, 2)))


def _fd_gradient(head, a, p, n, margin, step=1e-5):
    """Central finite differences over every weight and bias entry."""
    grad_w = np.zeros_like(head.weights)
    for i in range(head.weights.shape[0]):
        for j in range(head.weights.shape[1]):
            w_plus = head.weights.copy()
            w_plus[i, j] += step
            w_minus = head.weights.copy()
            w_minus[i, j] -= step
            up = triplet_loss(ProjectionHead(w_plus, head.bias), a, p, n, margin)
            down = triplet_loss(ProjectionHead(w_minus, head.bias), a, p, n, margin)
            grad_w[i, j] = (up - down) / (2 * step)
    grad_b = np.zeros_like(head.bias)
    for i in range(head.bias.shape[0]):
        b_plus = head.bias.copy()
        b_plus[i] += step
        b_minus = head.bias.copy()
        b_minus[i] -= step
        up = triplet_loss(ProjectionHead(head.weights, b_plus), a, p, n, margin)
        down = triplet_loss(ProjectionHead(head.weights, b_minus), a, p, n, margin)
        grad_b[i] = (up - down) / (2 * step)
    return grad_w, grad_b


def _relative_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / scale


def _random_smooth_config(rng, margin=1.0):
    """Random (head, batch) staying clear of hinge and sqrt kinks, where
    finite differences of the piecewise-smooth loss are meaningful."""
    while True:
        d_in = int(rng.integers(3, 7))
        d_out = int(rng.integers(2, 6))
        batch = int(rng.integers(2, 9))
        head = ProjectionHead(
            rng.standard_normal((d_out, d_in)), rng.standard_normal(d_out)
        )
        a = rng.standard_normal((batch, d_in))
        p = rng.standard_normal((batch, d_in))
        n = rng.standard_normal((batch, d_in))
        pa = project(head, a)
        d1 = np.linalg.norm(pa - project(head, p), axis=1)
        d2 = np.linalg.norm(pa - project(head, n), axis=1)
        if np.all(np.abs(d1 - d2 + margin) > 1e-3) and np.all(d1 > 1e-3) \
                and np.all(d2 > 1e-3):
            return head, a, p, n


class TestLossGradient:
    def test_all_hinges_inactive_gives_zero(self):
        a = np.array([[0.0, 0.0]])
        p = np.array([[0.1, 0.0]])
        n = np.array([[5.0, 0.0]])
        grad_w, grad_b = loss_gradient(_identity(2), a, p, n, margin=1.0)
        assert np.all(grad_w == 0.0)
        assert np.all(grad_b == 0.0)

    def test_hand_computed_single_active_triplet(self):
        a = np.array([[0.0, 0.0]])
        p = np.array([[1.0, 0.0]])
        n = np.array([[0.0, 1.5]])
        grad_w, grad_b = loss_gradient(_identity(2), a, p, n, margin=1.0)
        assert np.allclose(grad_w, [[1.0, 0.0], [0.0, -1.5]])
        assert np.all(grad_b == 0.0)

    def test_zero_distance_subgradient_is_zero(self):
        a = np.array([[1.0, 1.0]])
        grad_w, _ = loss_gradient(_identity(2), a, a.copy(), a.copy(), margin=1.0)
        assert np.all(grad_w == 0.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            head, a, p, n = _random_smooth_config(rng)
            grad_w, grad_b = loss_gradient(head, a, p, n, margin=1.0)
            fd_w, fd_b = _fd_gradient(head, a, p, n, margin=1.0)
            assert _relative_error(grad_w, fd_w) < 1e-4
            assert np.allclose(fd_b, 0.0, atol=1e-6)
            assert np.all(grad_b == 0.0)


class TestProject:
    def test_identity(self):
        rows = np.random.default_rng(0).standard_normal((4, 3))
        assert np.array_equal(project(_identity(3), rows), rows)

    def test_zero_weights_gives_bias(self):
        bias = np.array([2.0, -1.0])
        head = _head(np.zeros((2, 3)), bias)
        out = project(head, np.ones((5, 3)))
        assert np.all(out == bias)

    def test_matches_naive_triple_loop(self):
        rng = np.random.default_rng(5)
        head = ProjectionHead(rng.standard_normal((4, 6)), rng.standard_normal(4))
        rows = rng.standard_normal((7, 6))
        naive = np.zeros((7, 4))
        for r in range(7):
            for i in range(4):
                total = head.bias[i]
                for j in range(6):
                    total += head.weights[i, j] * rows[r, j]
                naive[r, i] = total
        assert np.allclose(project(head, rows), naive, atol=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            project(_identity(3), np.zeros((2, 4)))


def _tiny_training_fixture(rng, n_docs=24):
    docs, provider = nuisance_fixture_docs(n_docs, rng, dim=16,
                                           nuisance_noise=2.0)
    half = n_docs // 2
    return docs[:half], docs[half:], provider


class _ScriptedScorer:
    def __init__(self, scores):
        self.scores = list(scores)
        self.calls = 0

    def __call__(self, head):
        value = self.scores[min(self.calls, len(self.scores) - 1)]
        self.calls += 1
        return value


class TestTrainProjection:
    def _config(self, **kwargs):
        defaults = dict(
            learning_rate=1e-2, epoch_size=256, batch_size=32,
            max_epochs=4, seed=0, k_validate=3,
        )
        defaults.update(kwargs)
        return TrainConfig(**defaults)

    def test_zero_epochs_returns_initial_head(self):
        train, val, provider = _tiny_training_fixture(np.random.default_rng(0))
        head, history = train_projection(
            train, val, provider, self._config(max_epochs=0)
        )
        assert history.records == ()
        assert history.best_epoch == 0
        assert head.d_in == head.d_out == provider.dim

    def test_learning_rate_sequence_exact(self):
        train, val, provider = _tiny_training_fixture(np.random.default_rng(1))
        scorer = _ScriptedScorer([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
        _, history = train_projection(
            train, val, provider,
            self._config(learning_rate=0.5, max_epochs=5),
            val_scorer=scorer,
        )
        assert len(history.records) == 5
        for record in history.records:
            assert record.learning_rate == 0.5 * 0.8 ** (record.epoch - 1)

    def test_early_stop_on_plateau(self):
        train, val, provider = _tiny_training_fixture(np.random.default_rng(2))
        scorer = _ScriptedScorer([0.3, 0.5, 0.5, 0.9])
        _, history = train_projection(
            train, val, provider, self._config(max_epochs=10),
            val_scorer=scorer,
        )
        assert len(history.records) == 2
        assert history.best_epoch == 1
        assert history.initial_val_f1 == 0.3

    def test_early_stop_counts_initial_score(self):
        train, val, provider = _tiny_training_fixture(np.random.default_rng(3))
        scorer = _ScriptedScorer([0.4, 0.4, 0.9])
        _, history = train_projection(
            train, val, provider, self._config(max_epochs=10),
            val_scorer=scorer,
        )
        assert len(history.records) == 1
        assert history.best_epoch == 0

    def test_patience_two_needs_two_flat_epochs(self):
        train, val, provider = _tiny_training_fixture(np.random.default_rng(4))
        scorer = _ScriptedScorer([0.5, 0.4, 0.4, 0.45, 0.45])
        _, history = train_projection(
            train, val, provider,
            self._config(max_epochs=10, patience=2),
            val_scorer=scorer,
        )
        assert len(history.records) == 2

    def test_training_reproducible_bitwise(self):
        train, val, provider = _tiny_training_fixture(np.random.default_rng(5))
        config = self._config(max_epochs=2)
        head_a, _ = train_projection(train, val, provider, config)
        head_b, _ = train_projection(train, val, provider, config)
        assert head_a.weights.tobytes() == head_b.weights.tobytes()
        assert head_a.bias.tobytes() == head_b.bias.tobytes()

    def test_random_labels_stop_early_and_stay_flat(self):
        rng = np.random.default_rng(6)
        mapping = {}
        docs = []
        for d in range(16):
            pairs = []
            for i in range(1, 13):
                text = f"rand{d}-s{i}"
                mapping[text] = rng.standard_normal(16)
                pairs.append((text, H if rng.random() < 0.5 else G))
            if len({lab for _, lab in pairs}) < 2:
                pairs[0] = (pairs[0][0], H)
                pairs[1] = (pairs[1][0], G)
            docs.append(make_document(f"rand{d}", 1, f"rs{d}", pairs))
        provider = MappingProvider(mapping, 16)
        head, history = train_projection(
            docs[:10], docs[10:], provider, self._config(max_epochs=6)
        )
        stop_epoch = history.records[-1].epoch if history.records else 0
        assert stop_epoch <= 3
        best_score = max(
            [history.initial_val_f1] + [r.val_f1 for r in history.records]
        )
        assert abs(best_score - history.initial_val_f1) < 0.05

    def test_separable_fixture_improves(self):
        rng = np.random.default_rng(7)
        docs, provider = nuisance_fixture_docs(60, rng, dim=16,
                                               nuisance_noise=2.0)
        train, val, held = docs[:30], docs[30:45], docs[45:]
        config = self._config(learning_rate=3e-2, epoch_size=1024, max_epochs=6)
        head, history = train_projection(train, val, provider, config)
        best = max([history.initial_val_f1] + [r.val_f1 for r in history.records])
        assert best > history.initial_val_f1

        # Within-class spread shrinks below between-class spread on held-out
        # sentences once the head has been applied.
        vectors = {"H": [], "G": []}
        for doc in held:
            projected = project(head, provider.embed(doc.texts()))
            for sentence, row in zip(doc.sentences, projected):
                vectors[sentence.label.value].append(row)
        h = np.array(vectors["H"])
        g = np.array(vectors["G"])

        def mean_pairwise(x, y):
            dists = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2)
            return float(dists.mean())

        within = 0.5 * (mean_pairwise(h, h) + mean_pairwise(g, g))
        between = mean_pairwise(h, g)
        assert within < between

    def test_lr_grid_returns_best(self):
        train, val, provider = _tiny_training_fixture(np.random.default_rng(8))
        config = TrainConfig(
            lr_grid=(1e-5, 3e-2), epoch_size=256, batch_size=32,
            max_epochs=3, seed=0,
        )
        _, history = train_projection(train, val, provider, config)
        assert len(history.rate_results) == 2
        best_rate, best_score = max(history.rate_results, key=lambda x: x[1])
        assert history.base_rate == best_rate or (
            best_score == dict(history.rate_results)[history.base_rate]
        )

    def test_single_class_corpus_rejected(self):
        docs = [labeled_doc("HHHH", doc_id="a")]
        provider = MappingProvider(
            {s.text: np.zeros(8) for s in docs[0].sentences}, 8
        )
        with pytest.raises(SingleClassCorpus):
            train_projection(docs, docs, provider, self._config())

    def test_nonfinite_loss_raised_on_divergence(self):
        train, val, provider = _tiny_training_fixture(np.random.default_rng(9))
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NonFiniteLoss):
                train_projection(
                    train, val, provider,
                    self._config(learning_rate=1e200, max_epochs=1),
                    val_scorer=lambda head: 0.0,
                )


class TestProjectionHeadInvariants:
    def test_rejects_single_output_dimension(self):
        with pytest.raises(ValueError):
            ProjectionHead(np.ones((1, 4)), np.zeros(1))

    def test_rejects_non_finite_parameters(self):
        with pytest.raises(ValueError):
            ProjectionHead(np.array([[np.inf, 0.0], [0.0, 1.0]]), np.zeros(2))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            ProjectionHead(np.eye(3), np.zeros(2))


class TestHeadPersistence:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        head = identity_head(8, rng)
        path = tmp_path / "head.json"
        save_head(head, path, "hash3-d8-s0", TrainConfig(learning_rate=1e-3))
        loaded, meta = load_head(path)
        assert np.allclose(loaded.weights, head.weights)
        assert np.allclose(loaded.bias, head.bias)
        assert meta["provider_id"] == "hash3-d8-s0"
        assert meta["config"]["learning_rate"] == 1e-3
