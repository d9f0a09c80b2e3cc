import math
import warnings

import numpy as np
import pytest

from tagstress.classifiers import (Codebook, DataError,
                                   DegenerateTrainingError, MarkovModel,
                                   build_dictionary, encode, kmeans,
                                   load_system, predict_linear,
                                   predict_srcam, save_system, score_vqmm,
                                   sequence_log_prob, solve_bpdn,
                                   threshold_tags, train_codebook,
                                   train_linear_bff, train_markov,
                                   train_system)
from tagstress.labels import NONVOCALS, VOCALS


def lifted_toy(n_per_class=20, seed=0, dim=68):
    """Linearly separable 2-D blobs zero-padded to 68 dims."""
    rng = np.random.default_rng(seed)
    a = rng.normal([2.0, 2.0], 0.3, size=(n_per_class, 2))
    b = rng.normal([-2.0, -2.0], 0.3, size=(n_per_class, 2))
    out = []
    for row in a:
        v = np.zeros(dim)
        v[:2] = row
        out.append((v, VOCALS))
    for row in b:
        v = np.zeros(dim)
        v[:2] = row
        out.append((v, NONVOCALS))
    return out


class TestLinearBff:
    def test_separable_toy_reaches_perfect_training_accuracy(self):
        train = lifted_toy()
        model = train_linear_bff(train, seed=1)
        correct = sum(predict_linear(model, v) == lab for v, lab in train)
        assert correct == len(train)

    def test_normalization_maps_max_vector_to_ones(self):
        train = lifted_toy(seed=2)
        model = train_linear_bff(train, seed=1)
        top = np.array([model.feat_max.copy()])[0]
        z = model.normalize(top)
        assert np.all((z == 1.0) | (model.feat_max == model.feat_min))

    def test_deterministic_given_seed(self):
        train = lifted_toy(seed=3)
        m1 = train_linear_bff(train, seed=9)
        m2 = train_linear_bff(train, seed=9)
        assert np.array_equal(m1.weights, m2.weights)

    def test_single_class_raises(self):
        rows = [(np.ones(68) * k, VOCALS) for k in range(5)]
        with pytest.raises(DegenerateTrainingError):
            train_linear_bff(rows, seed=0)

    def test_tie_goes_to_vocals(self):
        train = lifted_toy(seed=4)
        model = train_linear_bff(train, seed=1)
        zero_model = type(model)(weights=np.zeros(69), feat_min=model.feat_min,
                                 feat_max=model.feat_max, seed=0)
        assert predict_linear(zero_model, np.ones(68)) == VOCALS

    def test_replay_oracle(self):
        # Training vectors classify identically when predicted again.
        train = lifted_toy(seed=5)
        model = train_linear_bff(train, seed=2)
        first = [predict_linear(model, v) for v, _ in train]
        second = [predict_linear(model, v) for v, _ in train]
        assert first == second

    def test_affine_rescaling_invariance(self):
        # Rescaling one dimension in train and test is absorbed by the
        # stored min/max normalization.
        train = lifted_toy(seed=6)
        scale, shift = 37.5, -4.0
        rescaled = []
        for v, lab in train:
            w = v.copy()
            w[1] = scale * w[1] + shift
            rescaled.append((w, lab))
        m1 = train_linear_bff(train, seed=3)
        m2 = train_linear_bff(rescaled, seed=3)
        for (v, _), (w, _) in zip(train, rescaled):
            assert predict_linear(m1, v) == predict_linear(m2, w)


class TestKmeans:
    def test_two_separated_clouds(self):
        rng = np.random.default_rng(0)
        a = rng.normal(0.0, 0.01, size=(50, 3)) + np.array([5.0, 0.0, 0.0])
        b = rng.normal(0.0, 0.01, size=(50, 3)) - np.array([5.0, 0.0, 0.0])
        pts = np.vstack([a, b])
        centroids, _ = kmeans(pts, 2, seed=1)
        got = sorted(centroids[:, 0])
        assert got[0] == pytest.approx(b[:, 0].mean(), abs=1e-6)
        assert got[1] == pytest.approx(a[:, 0].mean(), abs=1e-6)

    def test_k1_is_global_mean(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-1, 1, size=(40, 5))
        centroids, _ = kmeans(pts, 1, seed=0)
        assert np.allclose(centroids[0], pts.mean(axis=0), atol=1e-9)

    def test_objective_non_increasing(self):
        rng = np.random.default_rng(2)
        pts = rng.standard_normal((300, 8))
        _, trace = kmeans(pts, 7, seed=5)
        assert len(trace) >= 1
        for earlier, later in zip(trace, trace[1:]):
            assert later <= earlier + 1e-9

    def test_codebook_requires_distinct_frames(self):
        frames = np.tile(np.arange(13.0), (10, 1))
        with pytest.raises(DataError):
            train_codebook(frames, k=5, seed=0)

    def test_codebook_deterministic(self):
        rng = np.random.default_rng(3)
        frames = rng.standard_normal((400, 13))
        c1 = train_codebook(frames, k=10, seed=4)
        c2 = train_codebook(frames, k=10, seed=4)
        assert np.array_equal(c1.centroids, c2.centroids)


class TestEncode:
    def make_codebook(self):
        centroids = np.zeros((20, 2))
        centroids[:, 0] = np.arange(20, dtype=float)
        return Codebook(centroids=centroids, seed=0)

    def test_exact_centroid(self):
        cb = self.make_codebook()
        codes = encode(cb, np.array([[17.0, 0.0]]))
        assert codes[0] == 17

    def test_tie_goes_to_lowest_index(self):
        centroids = np.zeros((10, 2))
        centroids[3] = [1.0, 0.0]
        centroids[9] = [-1.0, 0.0]
        centroids[0] = [5.0, 5.0]
        for i in (1, 2, 4, 5, 6, 7, 8):
            centroids[i] = [9.0 + i, 9.0]
        cb = Codebook(centroids=centroids, seed=0)
        codes = encode(cb, np.array([[0.0, 0.0]]))
        assert codes[0] == 3

    def test_idempotent(self):
        cb = self.make_codebook()
        frames = np.random.default_rng(0).uniform(0, 19, size=(30, 2))
        a = encode(cb, frames)
        b = encode(cb, frames)
        assert np.array_equal(a, b)


class TestMarkov:
    def test_deterministic_chain_without_smoothing(self):
        seq = np.array([0, 1] * 10)
        model = train_markov([seq], alphabet_size=2, smoothing=0.0)
        assert math.exp(model.log_transition[0, 1]) == pytest.approx(1.0)
        assert math.exp(model.log_transition[1, 0]) == pytest.approx(1.0)

    def test_laplace_hand_count(self):
        # 5-transition corpus: 0->1, 1->0, 0->2, 2->0, 0->1 over 75 codes.
        seq = [0, 1, 0, 2, 0, 1]
        model = train_markov([seq], alphabet_size=75, smoothing=1.0)
        n0 = 3
        assert math.exp(model.log_transition[0, 5]) == pytest.approx(1.0 / (n0 + 75), rel=1e-12)
        assert math.exp(model.log_transition[0, 1]) == pytest.approx(3.0 / (n0 + 75), rel=1e-12)
        assert math.exp(model.log_transition[1, 0]) == pytest.approx(2.0 / (1 + 75), rel=1e-12)
        assert math.exp(model.log_initial[0]) == pytest.approx(2.0 / (1 + 75), rel=1e-12)
        assert math.exp(model.log_initial[33]) == pytest.approx(1.0 / (1 + 75), rel=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        seqs = [rng.integers(0, 75, size=50) for _ in range(10)]
        model = train_markov(seqs, alphabet_size=75, smoothing=1.0)
        rows = np.exp(model.log_transition).sum(axis=1)
        assert np.allclose(rows, 1.0, atol=1e-9)
        assert np.exp(model.log_initial).sum() == pytest.approx(1.0, abs=1e-9)

    def test_empty_corpus_raises(self):
        with pytest.raises(DataError):
            train_markov([], alphabet_size=5)


class TestScoreVqmm:
    def hand_models(self):
        t = MarkovModel(log_initial=np.log([0.6, 0.4]),
                        log_transition=np.log([[0.7, 0.3], [0.2, 0.8]]),
                        smoothing=0.0)
        tbar = MarkovModel(log_initial=np.log([0.5, 0.5]),
                           log_transition=np.log([[0.5, 0.5], [0.5, 0.5]]),
                           smoothing=0.0)
        return t, tbar

    def test_hand_arithmetic(self):
        t, tbar = self.hand_models()
        lp_t, lp_tbar, label = score_vqmm(t, tbar, [0, 1, 1])
        assert lp_t == pytest.approx(math.log(0.6) + math.log(0.3) + math.log(0.8), abs=1e-12)
        assert lp_tbar == pytest.approx(3 * math.log(0.5), abs=1e-12)
        assert label == VOCALS  # 0.144 > 0.125

    def test_equal_models_tie_to_vocals(self):
        t, _ = self.hand_models()
        _, _, label = score_vqmm(t, t, [0, 1, 0])
        assert label == VOCALS

    def test_appending_never_increases_log_prob(self):
        t, tbar = self.hand_models()
        rng = np.random.default_rng(5)
        codes = list(rng.integers(0, 2, size=30))
        prev = sequence_log_prob(t, codes[:1])
        for k in range(2, len(codes) + 1):
            cur = sequence_log_prob(t, codes[:k])
            assert cur <= prev + 1e-12
            prev = cur

    def test_permuting_codebook_indices_preserves_predictions(self):
        rng = np.random.default_rng(6)
        frames = rng.standard_normal((300, 4))
        cb = train_codebook(frames, k=8, seed=1)
        seq_a = [encode(cb, rng.standard_normal((40, 4))) for _ in range(4)]
        seq_b = [encode(cb, rng.standard_normal((40, 4))) for _ in range(4)]
        mt = train_markov(seq_a, alphabet_size=8)
        mtbar = train_markov(seq_b, alphabet_size=8)

        perm = rng.permutation(8)
        cb_p = Codebook(centroids=cb.centroids[perm], seed=cb.seed)
        inv = np.argsort(perm)
        # Relabel model matrices consistently: new index i is old perm[i].
        mt_p = MarkovModel(log_initial=mt.log_initial[perm],
                           log_transition=mt.log_transition[np.ix_(perm, perm)],
                           smoothing=mt.smoothing)
        mtbar_p = MarkovModel(log_initial=mtbar.log_initial[perm],
                              log_transition=mtbar.log_transition[np.ix_(perm, perm)],
                              smoothing=mtbar.smoothing)
        for _ in range(10):
            mfcc = rng.standard_normal((25, 4))
            base = score_vqmm(mt, mtbar, encode(cb, mfcc))
            perm_r = score_vqmm(mt_p, mtbar_p, encode(cb_p, mfcc))
            assert base[2] == perm_r[2]
            assert base[0] == pytest.approx(perm_r[0], abs=1e-9)


class TestDictionary:
    def test_min_max_normalization(self):
        rows = [(np.array([2.0, 1.0]), VOCALS),
                (np.array([4.0, 1.0]), NONVOCALS),
                (np.array([6.0, 1.0]), VOCALS)]
        d = build_dictionary(rows)
        assert np.allclose(d.atoms[0], [0.0, 0.5, 1.0])
        assert np.all(d.atoms[1] == 0.0)  # constant dimension maps to zeros

    def test_column_count_equals_training_size(self):
        rng = np.random.default_rng(7)
        rows = [(rng.uniform(0, 1, 6), VOCALS if i % 2 else NONVOCALS)
                for i in range(9)]
        d = build_dictionary(rows)
        assert d.atoms.shape == (6, 9)
        assert d.tag_atoms.shape == (2, 9)
        assert np.allclose(np.linalg.norm(d.tag_atoms, axis=0), 1.0)

    def test_single_instance_raises(self):
        with pytest.raises(DataError):
            build_dictionary([(np.ones(3), VOCALS)])


def reference_bpdn(D, f, eps2=0.01, iters=10000, bisections=40):
    """Independent long-run oracle: plain (non-accelerated) ISTA plus a
    denser bisection on the penalty weight."""
    D = np.asarray(D, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if f @ f <= eps2:
        return np.zeros(D.shape[1])
    L = np.linalg.norm(D, 2) ** 2
    hi = np.max(np.abs(D.T @ f))
    lo = 0.0
    best = None
    best_l1 = np.inf
    for _ in range(bisections):
        mu = 0.5 * (lo + hi)
        s = np.zeros(D.shape[1])
        for _ in range(iters):
            g = D.T @ (D @ s - f)
            s = s - g / L
            s = np.sign(s) * np.maximum(np.abs(s) - mu / L, 0.0)
        if np.sum((f - D @ s) ** 2) <= eps2:
            l1 = np.abs(s).sum()
            if l1 < best_l1:
                best, best_l1 = s, l1
            lo = mu
        else:
            hi = mu
    return best


class TestSolveBpdn:
    def test_orthonormal_exact_atom(self):
        rng = np.random.default_rng(8)
        D, _ = np.linalg.qr(rng.standard_normal((10, 10)))
        f = D[:, 5].copy()
        s, feasible = solve_bpdn(D, f, eps2=0.01)
        assert feasible
        assert np.argmax(np.abs(s)) == 5
        assert abs(s[5]) >= 0.85
        others = np.delete(s, 5)
        assert np.max(np.abs(others)) < 1e-3
        assert np.sum((f - D @ s) ** 2) <= 0.01 + 1e-9

    def test_zero_solution_when_eps_covers_query(self):
        rng = np.random.default_rng(9)
        D = rng.standard_normal((5, 8))
        f = rng.standard_normal(5)
        f /= np.linalg.norm(f)
        s, feasible = solve_bpdn(D, f, eps2=1.01)
        assert feasible
        assert np.all(s == 0.0)

    def test_residual_satisfied_on_feasible_returns(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            D = rng.standard_normal((10, 20))
            f = rng.standard_normal(10)
            f /= np.linalg.norm(f)
            s, feasible = solve_bpdn(D, f, eps2=0.01)
            if feasible:
                assert np.sum((f - D @ s) ** 2) <= 0.01 + 1e-9

    def test_l1_within_one_percent_of_long_run_reference(self):
        rng = np.random.default_rng(11)
        checked = 0
        for _ in range(20):
            D = rng.standard_normal((10, 20))
            f = rng.standard_normal(10)
            f /= np.linalg.norm(f)
            s, feasible = solve_bpdn(D, f, eps2=0.01)
            ref = reference_bpdn(D, f, eps2=0.01)
            assert feasible and ref is not None
            ours = np.abs(s).sum()
            target = np.abs(ref).sum()
            assert abs(ours - target) <= 0.01 * target + 1e-9
            checked += 1
        assert checked == 20


class TestThreshold:
    def test_clear_vocals(self):
        assert threshold_tags(np.array([1.0, 0.1]), 0.25) == VOCALS

    def test_both_survive_argmax(self):
        assert threshold_tags(np.array([0.6, 1.0]), 0.25) == NONVOCALS

    def test_degenerate_zero_vector(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            label = threshold_tags(np.array([0.0, 0.0]), 0.25)
        assert label == VOCALS
        assert any("degenerate" in str(w.message) for w in caught)

    def test_tie_to_vocals(self):
        assert threshold_tags(np.array([0.8, 0.8]), 0.25) == VOCALS


class TestSerialization:
    def roundtrip(self, system, vectors, tmp_path):
        path = tmp_path / "model.npz"
        save_system(path, system)
        back = load_system(path)
        assert back.variant == system.variant
        for v in vectors:
            assert system.predict_features(v) == back.predict_features(v)

    def test_linear_roundtrip(self, tmp_path):
        train = lifted_toy(seed=12)
        system = train_system("linear_bff", train, seed=3, train_folds=(0, 1))
        self.roundtrip(system, [v for v, _ in train], tmp_path)

    def test_vqmm_roundtrip(self, tmp_path):
        rng = np.random.default_rng(13)
        rows = []
        for i in range(8):
            base = 1.0 if i % 2 == 0 else -1.0
            frames = rng.normal(base, 0.2, size=(80, 13))
            rows.append((frames, VOCALS if i % 2 == 0 else NONVOCALS))
        system = train_system("vqmm", rows, seed=4)
        self.roundtrip(system, [f for f, _ in rows], tmp_path)

    def test_srcam_roundtrip(self, tmp_path):
        rng = np.random.default_rng(14)
        rows = [(rng.uniform(0, 1, 30), VOCALS if i % 2 else NONVOCALS)
                for i in range(10)]
        system = train_system("srcam", rows, seed=5)
        self.roundtrip(system, [v for v, _ in rows], tmp_path)

    def test_save_is_deterministic(self, tmp_path):
        train = lifted_toy(seed=15)
        system = train_system("linear_bff", train, seed=6)
        p1 = tmp_path / "a.npz"
        p2 = tmp_path / "b.npz"
        save_system(p1, system)
        save_system(p2, system)
        assert p1.read_bytes() == p2.read_bytes()
