import numpy as np
import pytest

from gradweld.errors import ConfigError, DataError
from gradweld.rng import Xoshiro256StarStar
from gradweld.tasks import (
    EpisodicMemory,
    TaskConfig,
    build_memory,
    export_split_jsonl,
    generate_task,
    import_split_jsonl,
    sample_batch,
)

SMALL = TaskConfig(n_base=4, n_novel=2, feature_dim=3, k_novel=5, n_abundant=30, n_test=10)


def _task(seed=0, config=SMALL):
    return generate_task(config, Xoshiro256StarStar(seed))


class TestGenerateTask:
    def test_deterministic(self):
        a, b = _task(3), _task(3)
        np.testing.assert_array_equal(a.base_train.features, b.base_train.features)
        np.testing.assert_array_equal(a.novel_train.features, b.novel_train.features)
        np.testing.assert_array_equal(a.base_test.features, b.base_test.features)

    def test_counts(self):
        config = TaskConfig(n_base=15, n_novel=5, k_novel=10, n_abundant=50, n_test=20)
        split = generate_task(config, Xoshiro256StarStar(0))
        assert len(split.novel_train) == 50
        assert len(split.base_train) == 15 * 50
        assert len(split.base_test) == 15 * 20
        assert len(split.novel_test) == 5 * 20
        for c in split.novel_classes:
            assert (split.novel_train.labels == c).sum() == 10

    def test_class_sets_disjoint(self):
        split = _task(1)
        assert not set(split.base_classes) & set(split.novel_classes)

    def test_train_test_disjoint(self):
        split = _task(2)
        train = {row.tobytes() for row in split.base_train.features}
        train |= {row.tobytes() for row in split.novel_train.features}
        for part in (split.base_test, split.novel_test):
            for row in part.features:
                assert row.tobytes() not in train

    def test_means_on_sphere(self):
        config = TaskConfig(n_base=3, n_novel=2, feature_dim=4, sigma=0.0, n_abundant=2, n_test=2, k_novel=2)
        split = generate_task(config, Xoshiro256StarStar(4))
        # sigma = 0 -> every sample equals its class mean, radius 4 by default
        for row in split.base_train.features:
            assert np.linalg.norm(row) == pytest.approx(4.0, rel=1e-12)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            TaskConfig(n_base=0)
        with pytest.raises(ConfigError):
            TaskConfig(feature_dim=1)
        with pytest.raises(ConfigError):
            TaskConfig(sigma=-1.0)


class TestBuildMemory:
    def test_size_and_balance(self):
        split = _task(5)
        memory = build_memory(split, 5, Xoshiro256StarStar(6))
        assert len(memory) == 4 * 5
        for c in split.base_classes:
            assert (memory.shots.labels == c).sum() == 5

    def test_balance_across_k_sweep(self):
        config = TaskConfig(n_base=5, n_novel=2, feature_dim=3, n_abundant=12, n_test=4, k_novel=3)
        split = generate_task(config, Xoshiro256StarStar(7))
        for k in (1, 2, 3, 5, 10):
            memory = build_memory(split, k, Xoshiro256StarStar(8))
            for c in split.base_classes:
                assert (memory.shots.labels == c).sum() == k

    def test_full_k_recovers_base_train_per_class(self):
        split = _task(9)
        memory = build_memory(split, 30, Xoshiro256StarStar(10))
        for c in split.base_classes:
            mem_rows = {
                row.tobytes()
                for row in memory.shots.features[memory.shots.labels == c]
            }
            train_rows = {
                row.tobytes()
                for row in split.base_train.features[split.base_train.labels == c]
            }
            assert mem_rows == train_rows

    def test_without_replacement(self):
        split = _task(11)
        memory = build_memory(split, 30, Xoshiro256StarStar(12))
        rows = [row.tobytes() for row in memory.shots.features]
        assert len(rows) == len(set(rows))

    def test_deterministic(self):
        split = _task(13)
        a = build_memory(split, 5, Xoshiro256StarStar(14))
        b = build_memory(split, 5, Xoshiro256StarStar(14))
        assert a.content_hash() == b.content_hash()

    def test_insufficient_samples(self):
        split = _task(15)
        with pytest.raises(DataError):
            build_memory(split, 31, Xoshiro256StarStar(16))

    def test_memory_arrays_read_only(self):
        memory = build_memory(_task(17), 3, Xoshiro256StarStar(18))
        assert memory.frozen_after_build
        with pytest.raises(ValueError):
            memory.shots.features[0, 0] = 99.0


class TestSampleBatch:
    def test_membership(self):
        split = _task(19)
        memory = build_memory(split, 10, Xoshiro256StarStar(20))
        batch = sample_batch(memory, 16, Xoshiro256StarStar(21))
        assert len(batch) == 16
        mem_rows = {row.tobytes() for row in memory.shots.features}
        for row in batch.features:
            assert row.tobytes() in mem_rows

    def test_single_element_source(self):
        memory = EpisodicMemory(
            shots=_task(22).base_train.__class__(
                features=np.array([[1.0, 2.0, 3.0]]), labels=np.array([0])
            ),
            shots_per_class=1,
        )
        batch = sample_batch(memory, 4, Xoshiro256StarStar(23))
        np.testing.assert_array_equal(batch.features, np.tile([1.0, 2.0, 3.0], (4, 1)))

    def test_deterministic_labels(self):
        split = _task(24)
        a = sample_batch(split.base_train, 20, Xoshiro256StarStar(25))
        b = sample_batch(split.base_train, 20, Xoshiro256StarStar(25))
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_zero_batch_rejected(self):
        split = _task(26)
        with pytest.raises(ValueError):
            sample_batch(split.base_train, 0, Xoshiro256StarStar(27))


class TestJsonlRoundTrip:
    def test_lossless(self, tmp_path):
        split = _task(28)
        path = tmp_path / "task.jsonl"
        export_split_jsonl(split, path)
        loaded = import_split_jsonl(path)
        np.testing.assert_array_equal(split.base_train.features, loaded.base_train.features)
        np.testing.assert_array_equal(split.base_train.labels, loaded.base_train.labels)
        np.testing.assert_array_equal(split.novel_test.features, loaded.novel_test.features)
        assert loaded.base_classes == split.base_classes
        assert loaded.novel_classes == split.novel_classes

    def test_record_count(self, tmp_path):
        split = _task(29)
        path = tmp_path / "task.jsonl"
        export_split_jsonl(split, path)
        n_lines = sum(1 for _ in path.open())
        total = sum(
            len(part)
            for part in (split.base_train, split.novel_train, split.base_test, split.novel_test)
        )
        assert n_lines == total

    def test_bad_tag_rejected(self, tmp_path):
        path = tmp_path / "task.jsonl"
        path.write_text('{"split": "mystery", "features": [1, 2], "label": 0}\n')
        with pytest.raises(DataError):
            import_split_jsonl(path)
