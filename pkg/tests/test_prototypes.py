"""Batch prototypes, momentum accumulation, the pool, and text variants."""

from __future__ import annotations

import numpy as np
import pytest

from disco.prototypes import (
    EmbeddingError,
    HashedTextEmbedding,
    MomentumState,
    PrototypeError,
    PrototypePool,
    batch_prototype,
    load_pool,
    momentum_update,
    prompt_key_prototype,
    save_pool,
    task_prompt,
    text_prototype,
)


class TestBatchPrototype:
    def test_symmetric_pair(self):
        np.testing.assert_allclose(batch_prototype([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.5])

    def test_singleton_identity(self):
        np.testing.assert_allclose(batch_prototype([[2.0, 3.0]]), [2.0, 3.0])

    def test_matches_summation_oracle(self):
        rng = np.random.default_rng(5)
        feats = rng.standard_normal((5, 7))
        # oracle: explicit coordinate-wise summation
        expected = np.zeros(7)
        for row in feats:
            expected += row
        expected /= 5
        np.testing.assert_allclose(batch_prototype(feats), expected, atol=1e-12)

    def test_empty_batch_rejected(self):
        with pytest.raises(PrototypeError):
            batch_prototype(np.zeros((0, 4)))

    def test_non_finite_rejected(self):
        with pytest.raises(PrototypeError):
            batch_prototype([[np.nan, 1.0]])


class TestMomentumUpdate:
    def test_first_batch_kept_verbatim(self):
        state = momentum_update(None, np.asarray([1.0, 0.0]))
        np.testing.assert_allclose(state.vector, [1.0, 0.0])
        assert state.count == 1

    def test_second_batch_running_mean(self):
        state = momentum_update(None, np.asarray([1.0, 0.0]))
        state = momentum_update(state, np.asarray([0.0, 1.0]))
        np.testing.assert_allclose(state.vector, [0.5, 0.5])

    def test_identical_batches_are_a_fixed_point(self):
        v = np.asarray([0.3, -0.7, 2.0])
        state = None
        for _ in range(9):
            state = momentum_update(state, v)
            np.testing.assert_allclose(state.vector, v, atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        state = momentum_update(None, np.ones(3))
        with pytest.raises(PrototypeError):
            momentum_update(state, np.ones(4))

    def test_equals_arithmetic_mean_of_all_batches(self):
        rng = np.random.default_rng(11)
        protos = rng.standard_normal((40, 6))
        state = None
        for p in protos:
            state = momentum_update(state, p)
        np.testing.assert_allclose(state.vector, protos.mean(axis=0), rtol=1e-12)


class TestPrototypePool:
    def test_finalize_after_two_batches(self):
        pool = PrototypePool()
        pool.accumulate(np.asarray([1.0, 0.0]))
        pool.accumulate(np.asarray([0.0, 1.0]))
        np.testing.assert_allclose(pool.finalize_task(1), [0.5, 0.5])
        assert pool.task_ids == (1,)

    def test_finalize_without_batches_rejected(self):
        with pytest.raises(PrototypeError):
            PrototypePool().finalize_task(1)

    def test_duplicate_finalize_rejected(self):
        pool = PrototypePool()
        pool.accumulate(np.ones(2))
        pool.finalize_task(1)
        pool.accumulate(np.ones(2))
        with pytest.raises(PrototypeError):
            pool.finalize_task(1)

    def test_pool_tracks_completed_tasks(self):
        pool = PrototypePool()
        for t in (1, 2, 3):
            pool.accumulate(np.full(2, float(t)))
            pool.finalize_task(t)
        assert pool.task_ids == (1, 2, 3)
        assert len(pool) == 3
        np.testing.assert_allclose(pool.previous(3)[1], [2.0, 2.0])

    def test_entries_immutable_after_finalize(self):
        pool = PrototypePool()
        pool.accumulate(np.asarray([1.0, 2.0]))
        frozen = pool.finalize_task(1)
        with pytest.raises(ValueError):
            frozen[0] = 9.0
        before = pool.get(1).tobytes()
        pool.accumulate(np.asarray([5.0, 5.0]))
        pool.finalize_task(2)
        assert pool.get(1).tobytes() == before

    def test_running_mean_equals_plain_mean_long_sequences(self):
        rng = np.random.default_rng(3)
        pool = PrototypePool()
        protos = rng.normal(scale=4.0, size=(1000, 8))
        for p in protos:
            pool.accumulate(p)
        final = pool.finalize_task(1)
        expected = protos.mean(axis=0)
        rel = np.abs(final - expected) / np.maximum(np.abs(expected), 1e-12)
        assert rel.max() <= 1e-6

    def test_persistence_roundtrip(self, tmp_path):
        pool = PrototypePool()
        rng = np.random.default_rng(0)
        for t in (1, 2):
            pool.accumulate(rng.standard_normal(5))
            pool.finalize_task(t)
        path = tmp_path / "pool.bin"
        save_pool(pool, path)
        loaded = load_pool(path)
        assert loaded.task_ids == (1, 2)
        for t in (1, 2):
            np.testing.assert_allclose(loaded.get(t), pool.get(t), atol=1e-6)
        index = (tmp_path / "pool.bin.idx").read_text().splitlines()
        assert index[0].startswith("1 ")


class TestTextPrototype:
    def test_single_class_template(self):
        assert task_prompt(["cat"]) == "a photo of cat"

    def test_join_rule(self):
        assert task_prompt(["cat", "dog"]) == "a photo of cat or dog"

    def test_deterministic(self):
        provider = HashedTextEmbedding(dim=16, seed=4)
        a = text_prototype(["cat", "dog"], provider)
        b = text_prototype(["cat", "dog"], provider)
        np.testing.assert_array_equal(a, b)

    def test_order_sensitive(self):
        provider = HashedTextEmbedding(dim=16, seed=4)
        ab = text_prototype(["a", "b"], provider)
        ba = text_prototype(["b", "a"], provider)
        assert not np.array_equal(ab, ba)

    def test_empty_class_list_rejected(self):
        with pytest.raises(PrototypeError):
            task_prompt([])

    def test_provider_failure_surfaces(self):
        class Broken:
            dim = 8

            def embed(self, prompt):
                raise IOError("encoder offline")

        with pytest.raises(EmbeddingError, match="encoder offline"):
            text_prototype(["cat"], Broken())

    def test_unit_norm_embeddings(self):
        provider = HashedTextEmbedding(dim=32, seed=0)
        vec = provider.embed("a photo of cat")
        assert np.isclose(np.linalg.norm(vec), 1.0)


class TestPromptKeyPrototype:
    def test_strict_max(self):
        keys = np.asarray([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(prompt_key_prototype([5, 1], keys, 1), [1.0, 0.0])

    def test_tie_breaks_to_lower_index(self):
        keys = np.asarray([[1.0, 0.0], [0.0, 1.0]])
        # oracle: documented (count desc, index asc) ordering
        ranked = sorted(range(2), key=lambda i: (-3, i))
        assert ranked[0] == 0
        np.testing.assert_allclose(prompt_key_prototype([3, 3], keys, 1), keys[0])

    def test_top2_mean_matches_brute_force(self):
        keys = np.asarray([[2.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
        freq = np.asarray([4, 4, 1])
        # oracle: full sort of (freq, index) pairs then plain mean
        order = sorted(range(3), key=lambda i: (-freq[i], i))[:2]
        expected = keys[order].mean(axis=0)
        np.testing.assert_allclose(prompt_key_prototype(freq, keys, 2), expected)

    def test_too_few_selected_rejected(self):
        keys = np.eye(3)
        with pytest.raises(PrototypeError):
            prompt_key_prototype([2, 0, 0], keys, 2)


def test_momentum_state_is_read_only():
    state = MomentumState(vector=np.ones(2), count=1)
    with pytest.raises(ValueError):
        state.vector[0] = 5.0
