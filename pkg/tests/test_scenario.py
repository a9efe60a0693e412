"""Scenario construction, domain attachment, manifests, and materialization."""

from __future__ import annotations

import numpy as np
import pytest

from disco.data import gaussian_blobs
from disco.scenario import (
    ContinualScenario,
    DatasetManifest,
    ManifestRecord,
    ScenarioError,
    TaskSpec,
    attach_domains,
    cil_counterpart,
    load_scenario,
    materialize_task,
    read_manifest,
    save_scenario,
    scenario_from_text,
    scenario_to_text,
    split_base_increment,
    split_even,
    strip_domains,
    write_manifest,
)


class TestSplitEven:
    def test_cifar_style_10x10(self):
        scenario = split_even(100, 10, seed=3)
        assert scenario.num_tasks == 10
        assert all(len(t.label_set) == 10 for t in scenario.tasks)

    def test_5_tasks_of_2(self):
        scenario = split_even(10, 5, seed=0)
        assert [len(t.label_set) for t in scenario.tasks] == [2, 2, 2, 2, 2]

    def test_single_task_takes_everything(self):
        scenario = split_even(10, 1, seed=9)
        assert sorted(scenario.tasks[0].label_set) == list(range(10))

    def test_non_divisible_rejected(self):
        with pytest.raises(ScenarioError):
            split_even(10, 3, seed=0)

    def test_zero_tasks_rejected(self):
        with pytest.raises(ScenarioError):
            split_even(10, 0, seed=0)

    def test_deterministic_per_seed(self):
        a = split_even(20, 4, seed=7)
        b = split_even(20, 4, seed=7)
        c = split_even(20, 4, seed=8)
        assert a == b
        assert a != c


class TestSplitBaseIncrement:
    def test_b50_5(self):
        scenario = split_base_increment(100, 50, 5, seed=1)
        assert [len(t.label_set) for t in scenario.tasks] == [50, 10, 10, 10, 10, 10]

    def test_b50_10(self):
        scenario = split_base_increment(100, 50, 10, seed=1)
        assert [len(t.label_set) for t in scenario.tasks] == [50] + [5] * 10

    def test_no_increments(self):
        scenario = split_base_increment(100, 100, 0, seed=1)
        assert scenario.num_tasks == 1
        assert len(scenario.tasks[0].label_set) == 100

    def test_non_divisible_remainder_rejected(self):
        with pytest.raises(ScenarioError):
            split_base_increment(100, 50, 7, seed=1)

    def test_leftover_classes_without_increments_rejected(self):
        with pytest.raises(ScenarioError):
            split_base_increment(100, 60, 0, seed=1)


class TestInvariants:
    def test_disjoint_and_covering_over_random_seeds(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            seed = int(rng.integers(0, 2**31))
            scenario = split_even(24, 4, seed)
            union: set[int] = set()
            for task in scenario.tasks:
                assert not union.intersection(task.label_set)
                union.update(task.label_set)
            assert union == set(range(24))

    def test_cumulative_labels_strictly_grow(self):
        scenario = split_even(12, 3, seed=5)
        sizes = [len(scenario.cumulative_labels(t)) for t in range(1, 4)]
        assert sizes == [4, 8, 12]

    def test_direct_construction_rejects_overlap(self):
        with pytest.raises(ScenarioError):
            ContinualScenario(
                tasks=(TaskSpec(1, (0, 1)), TaskSpec(2, (1, 2))),
                mode="CIL",
                seed=0,
            )

    def test_serialization_roundtrip_is_byte_stable(self):
        a = split_even(10, 5, seed=42)
        b = split_even(10, 5, seed=42)
        assert scenario_to_text(a) == scenario_to_text(b)
        assert scenario_from_text(scenario_to_text(a)) == a

    def test_serialization_roundtrip_with_domains(self, tmp_path):
        scenario = attach_domains(split_even(8, 4, seed=2), ["real", "hue_rotate", "block_shuffle", "contrast_invert"])
        path = tmp_path / "scenario.txt"
        save_scenario(scenario, path)
        assert load_scenario(path) == scenario


class TestAttachDomains:
    def test_assigns_domains_in_order(self):
        base = split_even(12, 6, seed=0)
        order = ["real", "brush", "lamuse", "plum", "peasant", "candy"]
        cild = attach_domains(base, order)
        assert cild.mode == "CILD"
        assert list(cild.domain_order) == order
        # unknown style tags carry no transform; "real" maps to identity
        assert cild.tasks[0].transform_id == "identity"
        assert cild.tasks[1].transform_id is None

    def test_registered_transform_tags_resolve(self):
        cild = attach_domains(split_even(4, 2, seed=0), ["identity", "hue_rotate"])
        assert cild.tasks[1].transform_id == "hue_rotate"

    def test_duplicates_rejected(self):
        with pytest.raises(ScenarioError):
            attach_domains(split_even(12, 6, seed=0), ["real"] * 6)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ScenarioError):
            attach_domains(split_even(6, 3, seed=0), ["real", "candy"])

    def test_cil_counterpart_uses_first_domain_everywhere(self):
        cild = attach_domains(split_even(6, 3, seed=1), ["real", "hue_rotate", "block_shuffle"])
        cil = cil_counterpart(cild)
        assert cil.mode == "CIL"
        assert set(cil.domain_order) == {"real"}
        assert [t.label_set for t in cil.tasks] == [t.label_set for t in cild.tasks]

    def test_attach_then_strip_recovers_partition(self):
        base = split_even(10, 5, seed=3)
        cild = attach_domains(base, ["real", "a", "b", "c", "d"])
        assert strip_domains(cild) == base


class TestManifest:
    def _manifest(self) -> DatasetManifest:
        records = []
        for domain in ("real", "sketch"):
            for label in range(4):
                for i in range(3):
                    records.append(ManifestRecord(f"{domain}/{label}/{i}.npy", label, domain))
        return DatasetManifest(records=tuple(records))

    def test_roundtrip(self, tmp_path):
        manifest = self._manifest()
        path = tmp_path / "data.csv"
        write_manifest(manifest, path)
        assert read_manifest(path) == manifest

    def test_header_required(self, tmp_path):
        path = tmp_path / "broken.csv"
        path.write_text("a.npy,0,real\n")
        with pytest.raises(ScenarioError, match="header"):
            read_manifest(path)

    def test_materialize_filters_label_and_domain(self):
        manifest = self._manifest()
        scenario = attach_domains(split_even(4, 2, seed=0), ["real", "sketch"])
        view = materialize_task(scenario, 2, manifest)
        assert len(view) == 2 * 3  # 2 classes x 3 records
        assert set(view.labels) == set(scenario.task(2).label_set)
        assert all(p.startswith("sketch/") for p in view.samples)

    def test_missing_domain_named_in_error(self):
        records = tuple(ManifestRecord(f"real/{label}.npy", label, "real") for label in range(4))
        manifest = DatasetManifest(records=records)
        scenario = attach_domains(split_even(4, 2, seed=0), ["real", "sketch"])
        with pytest.raises(ScenarioError, match="sketch"):
            materialize_task(scenario, 2, manifest)


class TestMaterializeArrays:
    def test_counts_match_source(self):
        dataset = gaussian_blobs(num_classes=10, dim=4, train_per_class=500, test_per_class=20, seed=0)
        scenario = split_even(10, 10, seed=1)
        view = materialize_task(scenario, 1, dataset, split="train")
        assert len(view) == 500  # 1 class here, 500 train images each

    def test_ten_class_task_has_5000(self):
        dataset = gaussian_blobs(num_classes=10, dim=4, train_per_class=500, test_per_class=20, seed=0)
        scenario = split_even(10, 1, seed=1)
        view = materialize_task(scenario, 1, dataset, split="train")
        assert len(view) == 10 * 500

    def test_never_yields_foreign_labels(self):
        dataset = gaussian_blobs(num_classes=6, dim=3, train_per_class=10, test_per_class=5, seed=0)
        scenario = split_even(6, 3, seed=2)
        for t in range(1, 4):
            view = materialize_task(scenario, t, dataset, split="train")
            assert set(int(v) for v in view.labels) <= set(scenario.task(t).label_set)

    def test_missing_label_errors(self):
        dataset = gaussian_blobs(num_classes=4, dim=3, train_per_class=5, test_per_class=5, seed=0)
        scenario = split_even(6, 3, seed=2)  # labels 0..5, dataset only has 0..3
        with pytest.raises(ScenarioError, match="no samples"):
            for t in range(1, 4):
                materialize_task(scenario, t, dataset, split="train")

    def test_transform_applied_deterministically(self):
        dataset = gaussian_blobs(num_classes=4, dim=6, train_per_class=8, test_per_class=4, seed=0)
        scenario = attach_domains(split_even(4, 2, seed=0), ["real", "contrast_invert"])
        a = materialize_task(scenario, 2, dataset, split="train")
        b = materialize_task(scenario, 2, dataset, split="train")
        np.testing.assert_array_equal(a.samples, b.samples)
        # contrast inversion around 0 is plain negation
        raw = materialize_task(strip_domains(scenario), 2, dataset, split="train")
        np.testing.assert_allclose(np.asarray(a.samples), -np.asarray(raw.samples))

    def test_view_is_read_only(self):
        dataset = gaussian_blobs(num_classes=4, dim=3, train_per_class=5, test_per_class=5, seed=0)
        view = materialize_task(split_even(4, 2, seed=0), 1, dataset, split="train")
        with pytest.raises(ValueError):
            np.asarray(view.samples)[0, 0] = 99.0

    def test_bad_task_index_rejected(self):
        dataset = gaussian_blobs(num_classes=4, dim=3, train_per_class=5, test_per_class=5, seed=0)
        scenario = split_even(4, 2, seed=0)
        with pytest.raises(ScenarioError):
            materialize_task(scenario, 3, dataset, split="train")
