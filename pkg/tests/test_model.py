"""Bundle construction, snapshots, classifier expansion, prompt-key selection."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from disco.model import (
    IncrementalClassifier,
    MLPBackbone,
    ModelBundle,
    ModelError,
    ParameterSnapshot,
    SmallCNN,
    architecture_hash,
    build_bundle,
    canonical_param_names,
    load_snapshot,
    random_prompt_pool,
    restore,
    save_snapshot,
    select_keys,
    snapshot,
)


@pytest.fixture
def bundle():
    b = build_bundle("mlp", input_shape=(6,), feature_dim=16, contrast_dim=8, seed=11, hidden_dims=(12, 12))
    b.classifier.expand((0, 1, 2), b.expand_generator)
    return b


class TestBundle:
    def test_build_is_deterministic(self):
        a = build_bundle("mlp", (4,), 8, 4, seed=3)
        b = build_bundle("mlp", (4,), 8, 4, seed=3)
        np.testing.assert_array_equal(snapshot(a).values, snapshot(b).values)

    def test_different_seeds_differ(self):
        a = build_bundle("mlp", (4,), 8, 4, seed=3)
        b = build_bundle("mlp", (4,), 8, 4, seed=4)
        assert not np.array_equal(snapshot(a).values, snapshot(b).values)

    def test_forward_shapes(self, bundle):
        x = torch.randn(5, 6)
        feats = bundle.features(x)
        assert feats.shape == (5, 16)
        assert bundle.project(feats).shape == (5, 8)
        assert bundle.forward(x).shape == (5, 3)

    def test_cnn_backbone_shapes(self):
        b = build_bundle("cnn", input_shape=(1, 8, 8), feature_dim=12, contrast_dim=6, seed=0)
        b.classifier.expand((0, 1), b.expand_generator)
        x = torch.randn(3, 1, 8, 8)
        assert b.forward(x).shape == (3, 2)

    def test_contrast_dim_cannot_exceed_feature_dim(self):
        backbone = MLPBackbone(4, (8, 8), 8)
        with pytest.raises(ModelError):
            ModelBundle(backbone, torch.nn.Linear(8, 16), IncrementalClassifier(8))


class TestSnapshot:
    def test_snapshot_twice_identical(self, bundle):
        np.testing.assert_array_equal(snapshot(bundle).values, snapshot(bundle).values)

    def test_training_step_changes_snapshot(self, bundle):
        before = snapshot(bundle)
        x = torch.randn(8, 6)
        y = torch.randint(0, 3, (8,))
        loss = torch.nn.functional.cross_entropy(bundle.forward(x), y)
        opt = torch.optim.SGD(bundle.trainable_parameters(), lr=0.1)
        opt.zero_grad()
        loss.backward()
        opt.step()
        after = snapshot(bundle)
        assert np.any(before.values != after.values)

    def test_snapshot_is_a_copy(self, bundle):
        snap = snapshot(bundle)
        with torch.no_grad():
            for p in bundle.backbone.parameters():
                p.add_(1.0)
        assert not np.array_equal(snap.values, snapshot(bundle).values)

    def test_two_parameter_toy_model_canonical_order(self):
        # single linear layer, no bias: weight rows in sorted-name order
        class Toy(torch.nn.Module):
            def __init__(self):
                super().__init__()
                self.lin = torch.nn.Linear(2, 1, bias=False)
                self.feature_dim = 1

            def forward(self, x):
                return self.lin(x)

        toy = Toy()
        with torch.no_grad():
            toy.lin.weight.copy_(torch.tensor([[0.5, -1.0]]))
        bundle = ModelBundle(toy, torch.nn.Linear(1, 1), IncrementalClassifier(1))
        np.testing.assert_allclose(snapshot(bundle).values, [0.5, -1.0])

    def test_snapshot_restore_roundtrip_exact(self, bundle):
        snap = snapshot(bundle)
        with torch.no_grad():
            for p in bundle.backbone.parameters():
                p.mul_(3.0).add_(0.7)
        restore(bundle, snap)
        np.testing.assert_array_equal(snapshot(bundle).values, snap.values)

    def test_canonical_order_is_architectural(self):
        a = build_bundle("mlp", (4,), 8, 4, seed=1)
        b = build_bundle("mlp", (4,), 8, 4, seed=99)
        assert canonical_param_names(a.backbone) == canonical_param_names(b.backbone)
        assert architecture_hash(a.backbone) == architecture_hash(b.backbone)

    def test_file_roundtrip(self, bundle, tmp_path):
        snap = snapshot(bundle, task_id=4)
        path = tmp_path / "task_4.bin"
        save_snapshot(snap, path, arch_hash="abc123")
        loaded = load_snapshot(path)
        assert loaded.task_id == 4
        np.testing.assert_array_equal(loaded.values, snap.values)
        sidecar = (tmp_path / "task_4.bin.txt").read_text()
        assert "task_id: 4" in sidecar and "abc123" in sidecar

    def test_file_format_layout(self, tmp_path):
        snap = ParameterSnapshot(task_id=0, values=np.asarray([1.0, 2.0, 3.0], dtype=np.float32))
        path = tmp_path / "snap.bin"
        save_snapshot(snap, path)
        raw = path.read_bytes()
        assert raw[:8] == (3).to_bytes(8, "little")
        np.testing.assert_array_equal(np.frombuffer(raw[8:], dtype="<f4"), [1.0, 2.0, 3.0])


class TestExpandClassifier:
    def test_appends_and_preserves_rows(self, bundle):
        before = bundle.classifier.weight.detach().clone()
        bundle.classifier.expand((10, 11), bundle.expand_generator)
        assert bundle.classifier.class_ids == (0, 1, 2, 10, 11)
        np.testing.assert_array_equal(bundle.classifier.weight.detach()[:3].numpy(), before.numpy())

    def test_overlap_rejected(self, bundle):
        with pytest.raises(ModelError):
            bundle.classifier.expand((2, 3), bundle.expand_generator)

    def test_logit_width_tracks_classes(self, bundle):
        x = torch.randn(2, 6)
        assert bundle.forward(x).shape[1] == 3
        bundle.classifier.expand((5,), bundle.expand_generator)
        assert bundle.forward(x).shape[1] == 4

    def test_expansion_keeps_old_task_predictions(self, bundle):
        # masked evaluation over the original rows is unchanged by expansion
        # (rows stay bit-identical; logits may re-round, argmax may not move)
        torch.manual_seed(0)
        x = torch.randn(50, 6)
        old = bundle.forward(x).detach().numpy()
        bundle.classifier.expand((7, 8), bundle.expand_generator)
        new = bundle.forward(x).detach().numpy()
        np.testing.assert_allclose(new[:, :3], old, atol=1e-6)
        np.testing.assert_array_equal(np.argmax(new[:, :3], axis=1), np.argmax(old, axis=1))


class TestPromptPool:
    def test_exact_match_selects_itself(self):
        pool = random_prompt_pool(size=6, dim=4, prompt_len=2, top_n=1, seed=0)
        idx, counts = select_keys(pool, pool.keys[3])
        assert idx.tolist() == [[3]]
        assert counts[3] == 1

    def test_identical_queries_accumulate_frequency(self):
        pool = random_prompt_pool(size=5, dim=3, prompt_len=2, top_n=1, seed=1)
        batch = np.tile(pool.keys[2], (4, 1))
        _, counts = select_keys(pool, batch)
        assert counts[2] == 4
        assert counts.sum() == 4

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(7)
        pool = random_prompt_pool(size=12, dim=5, prompt_len=2, top_n=3, seed=2)
        queries = rng.standard_normal((9, 5))
        idx, _ = select_keys(pool, queries)
        # oracle: brute-force cosine ranking per query
        for q, row in zip(queries, idx):
            sims = [float(np.dot(q, k) / (np.linalg.norm(q) * np.linalg.norm(k))) for k in pool.keys]
            expected = sorted(range(12), key=lambda i: (-sims[i], i))[:3]
            assert row.tolist() == expected

    def test_top_n_wider_than_pool_rejected(self):
        with pytest.raises(ModelError):
            random_prompt_pool(size=3, dim=4, prompt_len=2, top_n=4, seed=0)

    def test_query_dim_mismatch_rejected(self):
        pool = random_prompt_pool(size=3, dim=4, prompt_len=2, top_n=1, seed=0)
        with pytest.raises(ModelError):
            select_keys(pool, np.ones((2, 5)))
