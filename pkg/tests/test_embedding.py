"""Skip-gram training: gradients, determinism, similarity, persistence."""
from __future__ import annotations

import numpy as np
import pytest

from memlog.embedding import (
    EMBEDDING_DIM,
    EmbeddingModel,
    Hyperparams,
    Vocabulary,
    build_vocab,
    cosine_similarity,
    load_embeddings,
    most_similar,
    save_embeddings,
    sgns_pair_gradients,
    sgns_pair_loss,
    sgns_pair_step,
    train_embeddings,
)
from memlog.errors import (
    BadMagic,
    CorruptPayload,
    EmptyCorpus,
    UnknownToken,
    VersionMismatch,
    VocabMismatch,
    ZeroVector,
)
from memlog.tokenizer import GroupedTokens


def grouped(*stack_tokens: str, **named_groups) -> GroupedTokens:
    g = GroupedTokens()
    g.stack.extend(stack_tokens)
    for name, tokens in named_groups.items():
        getattr(g, name).extend(tokens)
    return g


class TestVocabulary:
    def test_single_token_counted(self):
        vocab = build_vocab([grouped("a", "a", "a")], min_count=1)
        assert vocab.tokens == ["a"]
        assert vocab.frequencies[0] == 3

    def test_min_count_threshold_and_frequency_order(self):
        corpus = [grouped(*(["a"] * 5 + ["b"] * 2 + ["c"]))]
        vocab = build_vocab(corpus, min_count=2)
        assert vocab.tokens == ["a", "b"]
        assert vocab.index == {"a": 0, "b": 1}

    def test_lexicographic_tie_break(self):
        corpus = [grouped(*(["x"] * 3 + ["m"] * 3))]
        vocab = build_vocab(corpus, min_count=1)
        assert vocab.tokens == ["m", "x"]

    def test_counts_cross_groups_and_logs(self):
        corpus = [grouped("a", modules=["a"]), grouped(modules=["a"])]
        vocab = build_vocab(corpus, min_count=3)
        assert vocab.tokens == ["a"]

    def test_empty_after_filtering_raises(self):
        with pytest.raises(EmptyCorpus):
            build_vocab([grouped("a")], min_count=2)

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(VocabMismatch):
            Vocabulary(["a", "a"], [1, 1])


def make_corpus(n_logs: int = 30) -> list[GroupedTokens]:
    """mal_a/mal_b/mal_c always co-occur; ben_x/ben_y never with them."""
    corpus = []
    for i in range(n_logs):
        if i % 2 == 0:
            corpus.append(grouped("mal_a", "mal_b", "mal_c", modules=["mal_a", "mal_b"]))
        else:
            corpus.append(grouped("ben_x", "ben_y", modules=["ben_x", "ben_y"]))
    return corpus


class TestTraining:
    def test_dimensions_and_finiteness(self):
        corpus = make_corpus()
        vocab = build_vocab(corpus, min_count=1)
        model = train_embeddings(corpus, vocab, Hyperparams(epochs=2))
        assert model.dim == EMBEDDING_DIM == 32
        assert model.input_vectors.shape == (len(vocab), 32)
        assert model.output_vectors.shape == (len(vocab), 32)
        assert np.isfinite(model.input_vectors).all()
        assert np.isfinite(model.output_vectors).all()

    def test_deterministic_bit_identical(self):
        corpus = make_corpus()
        vocab = build_vocab(corpus, min_count=1)
        a = train_embeddings(corpus, vocab, Hyperparams(epochs=2, seed=3))
        b = train_embeddings(corpus, vocab, Hyperparams(epochs=2, seed=3))
        assert a == b

    def test_seed_changes_model(self):
        corpus = make_corpus()
        vocab = build_vocab(corpus, min_count=1)
        a = train_embeddings(corpus, vocab, Hyperparams(epochs=1, seed=3))
        b = train_embeddings(corpus, vocab, Hyperparams(epochs=1, seed=4))
        assert a != b

    def test_single_token_corpus_keeps_seeded_init(self):
        corpus = [grouped("only")]
        vocab = build_vocab(corpus, min_count=1)
        model = train_embeddings(corpus, vocab, Hyperparams(seed=7))
        rng = np.random.default_rng(7)
        expected = ((rng.random((1, 32), dtype=np.float32) - 0.5) / 32).astype(np.float32)
        assert np.array_equal(model.input_vectors, expected)
        assert np.array_equal(model.output_vectors, np.zeros((1, 32), dtype=np.float32))

    def test_cooccurrence_structure(self):
        corpus = make_corpus(60)
        vocab = build_vocab(corpus, min_count=1)
        model = train_embeddings(corpus, vocab, Hyperparams(epochs=5, seed=1))
        same = cosine_similarity(model.vector("mal_a"), model.vector("mal_b"))
        cross = cosine_similarity(model.vector("mal_a"), model.vector("ben_x"))
        assert same > cross

    def test_no_shared_tokens_raises(self):
        vocab = build_vocab([grouped("a", "a")], min_count=1)
        with pytest.raises(VocabMismatch):
            train_embeddings([grouped("z", "w")], vocab, Hyperparams(epochs=1))

    def test_empty_corpus_raises(self):
        vocab = build_vocab([grouped("a", "a")], min_count=1)
        with pytest.raises(EmptyCorpus):
            train_embeddings([], vocab, Hyperparams())

    def test_window_must_be_positive(self):
        corpus = make_corpus(4)
        vocab = build_vocab(corpus, min_count=1)
        with pytest.raises(ValueError):
            train_embeddings(corpus, vocab, Hyperparams(window=0))


class TestPairObjective:
    def rand(self, rng, *shape):
        return rng.standard_normal(shape)

    def test_gradient_check_central_differences(self):
        rng = np.random.default_rng(42)
        eps = 1e-4
        for _ in range(100):
            center = self.rand(rng, 8)
            context = self.rand(rng, 8)
            negatives = self.rand(rng, 5, 8)
            gc, go, gn = sgns_pair_gradients(center, context, negatives)

            def check(array, grad):
                flat = array.reshape(-1)
                gflat = grad.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + eps
                    up = sgns_pair_loss(center, context, negatives)
                    flat[i] = orig - eps
                    down = sgns_pair_loss(center, context, negatives)
                    flat[i] = orig
                    numeric = (up - down) / (2 * eps)
                    scale = max(abs(numeric), abs(gflat[i]), 1e-8)
                    assert abs(numeric - gflat[i]) / scale < 1e-5

            check(center, gc)
            check(context, go)
            check(negatives, gn)

    def test_sgd_step_strictly_decreases_pair_loss(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            center = self.rand(rng, 16)
            context = self.rand(rng, 16)
            negatives = self.rand(rng, 5, 16)
            before = sgns_pair_loss(center, context, negatives)
            after = sgns_pair_loss(*sgns_pair_step(center, context, negatives, lr=1e-3))
            assert after < before


class TestSimilarityQueries:
    def test_cosine_identities(self):
        v = np.array([1.0, 2.0, -3.0])
        assert cosine_similarity(v, v) == pytest.approx(1.0)
        assert cosine_similarity(v, -v) == pytest.approx(-1.0)
        e1, e2 = np.eye(3)[0], np.eye(3)[1]
        assert cosine_similarity(e1, e2) == 0.0

    def test_cosine_zero_vector_raises(self):
        with pytest.raises(ZeroVector):
            cosine_similarity(np.zeros(3), np.ones(3))

    def model(self) -> EmbeddingModel:
        corpus = make_corpus(40)
        vocab = build_vocab(corpus, min_count=1)
        return train_embeddings(corpus, vocab, Hyperparams(epochs=3, seed=5))

    def test_most_similar_excludes_query_and_descends(self):
        model = self.model()
        result = most_similar(model, "mal_a", k=3)
        tokens = [t for t, _ in result]
        assert "mal_a" not in tokens
        sims = [s for _, s in result]
        assert sims == sorted(sims, reverse=True)

    def test_most_similar_full_scan_oracle(self):
        model = self.model()
        for query in model.vocab.tokens:
            qv = model.vector(query)
            scored = []
            for token in model.vocab.tokens:
                if token == query:
                    continue
                try:
                    sim = cosine_similarity(qv, model.vector(token))
                except ZeroVector:
                    sim = float("-inf")
                scored.append((token, sim))
            scored.sort(key=lambda pair: (-pair[1], pair[0]))
            k = len(model.vocab) - 1
            got = most_similar(model, query, k)
            assert [t for t, _ in got] == [t for t, _ in scored]
            for (_, a), (_, b) in zip(got, scored):
                assert a == pytest.approx(b, abs=1e-12)

    def test_most_similar_prefix_nesting(self):
        model = self.model()
        small = {t for t, _ in most_similar(model, "mal_a", 2)}
        large = {t for t, _ in most_similar(model, "mal_a", 4)}
        assert small <= large

    def test_unknown_token(self):
        with pytest.raises(UnknownToken):
            most_similar(self.model(), "nope", 1)

    def test_k_bounds(self):
        model = self.model()
        with pytest.raises(ValueError):
            most_similar(model, "mal_a", 0)
        with pytest.raises(ValueError):
            most_similar(model, "mal_a", len(model.vocab))


class TestPersistence:
    def model(self) -> EmbeddingModel:
        corpus = make_corpus(20)
        vocab = build_vocab(corpus, min_count=1)
        return train_embeddings(corpus, vocab, Hyperparams(epochs=1, seed=9))

    def test_round_trip_bit_exact(self, tmp_path):
        model = self.model()
        path = tmp_path / "emb.mleb"
        save_embeddings(model, str(path))
        assert load_embeddings(str(path)) == model

    def test_double_save_identical_bytes(self, tmp_path):
        model = self.model()
        a, b = tmp_path / "a", tmp_path / "b"
        save_embeddings(model, str(a))
        save_embeddings(model, str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(BadMagic):
            load_embeddings(str(path))

    def test_version_mismatch(self, tmp_path):
        model = self.model()
        path = tmp_path / "emb.mleb"
        save_embeddings(model, str(path))
        blob = bytearray(path.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(VersionMismatch):
            load_embeddings(str(path))

    def test_truncation_is_corrupt(self, tmp_path):
        model = self.model()
        path = tmp_path / "emb.mleb"
        save_embeddings(model, str(path))
        blob = path.read_bytes()
        for cut in (6, 20, len(blob) // 2, len(blob) - 3):
            path.write_bytes(blob[:cut])
            with pytest.raises(CorruptPayload):
                load_embeddings(str(path))

    def test_trailing_garbage_is_corrupt(self, tmp_path):
        model = self.model()
        path = tmp_path / "emb.mleb"
        save_embeddings(model, str(path))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CorruptPayload):
            load_embeddings(str(path))
