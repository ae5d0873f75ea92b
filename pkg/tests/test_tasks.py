"""Task generation, encoding round-trips, IDX parsing, and preprocessing."""

import math
import struct

import numpy as np
import pytest

from kanforget.digit_corpus import (
    ensure_synthetic_corpus,
    render_digit_images,
    write_idx_images,
    write_idx_labels,
)
from kanforget.errors import DataError, IdxFormatError, UsageError
from kanforget.tasks import (
    ImagePreprocessSpec,
    MNIST_CLASS_PLAN,
    TaskDataset,
    TaskMeta,
    bilinear_resize,
    build_image_tasks,
    decode_carry,
    decode_digit,
    encode_carry,
    encode_digit,
    gen_binary_tasks,
    gen_decimal_tasks,
    intrinsic_dimension,
    load_idx_images,
    load_idx_labels,
    load_mnist_idx,
    preprocess_images,
    ripple_carry_steps,
    task_accuracy,
    task_operand_pairs,
    task_to_csv,
)

# Decimal task table transcription: per task, (n, d) for d = 1..9 followed
# by (d, n) for d = 1..9.  The n + n pair appears in both halves.
DECIMAL_TABLE = {
    1: ["1+1", "1+2", "1+3", "1+4", "1+5", "1+6", "1+7", "1+8", "1+9",
        "1+1", "2+1", "3+1", "4+1", "5+1", "6+1", "7+1", "8+1", "9+1"],
    2: ["2+1", "2+2", "2+3", "2+4", "2+5", "2+6", "2+7", "2+8", "2+9",
        "1+2", "2+2", "3+2", "4+2", "5+2", "6+2", "7+2", "8+2", "9+2"],
    3: ["3+1", "3+2", "3+3", "3+4", "3+5", "3+6", "3+7", "3+8", "3+9",
        "1+3", "2+3", "3+3", "4+3", "5+3", "6+3", "7+3", "8+3", "9+3"],
    4: ["4+1", "4+2", "4+3", "4+4", "4+5", "4+6", "4+7", "4+8", "4+9",
        "1+4", "2+4", "3+4", "4+4", "5+4", "6+4", "7+4", "8+4", "9+4"],
    5: ["5+1", "5+2", "5+3", "5+4", "5+5", "5+6", "5+7", "5+8", "5+9",
        "1+5", "2+5", "3+5", "4+5", "5+5", "6+5", "7+5", "8+5", "9+5"],
}

BINARY_TASK1_COLUMN = [
    "0001+0001", "0001+0010", "0001+0011", "0001+0100", "0001+0101",
    "0001+0110", "0001+0111", "0001+1000", "0001+1001",
    "0001+0001", "0010+0001", "0011+0001", "0100+0001", "0101+0001",
    "0110+0001", "0111+0001", "1000+0001", "1001+0001",
]


class TestBinaryTasks:
    def test_pair_construction_matches_table(self):
        tasks = gen_binary_tasks()
        assert len(tasks) == 5
        pairs = tasks[0].meta.pairs
        rendered = [f"{a:04b}+{b:04b}" for a, b in pairs]
        assert rendered == BINARY_TASK1_COLUMN
        assert (1, 1) in pairs and (1, 9) in pairs and (9, 1) in pairs

    def test_eighteen_pairs_per_task(self):
        for task in gen_binary_tasks():
            assert len(task.meta.pairs) == 18
            assert task.n_samples == 18 * 4

    def test_unrolled_targets_match_integer_oracle(self):
        for task in gen_binary_tasks():
            rows = task.inputs.reshape(18, 4, 3)
            outs = task.targets.reshape(18, 4, 2)
            for (a, b), steps_in, steps_out in zip(task.meta.pairs, rows, outs):
                expected_carry = 0
                total = a + b
                for pos in range(4):
                    bit_a, bit_b, carry_in = (int(v) for v in steps_in[pos])
                    assert bit_a == (a >> pos) & 1
                    assert bit_b == (b >> pos) & 1
                    assert carry_in == expected_carry
                    s = bit_a + bit_b + carry_in
                    assert int(steps_out[pos][0]) == s & 1
                    assert int(steps_out[pos][1]) == s >> 1
                    expected_carry = s >> 1
                # Reassemble: sum bits plus final carry give back a + b.
                rebuilt = sum(int(steps_out[pos][0]) << pos for pos in range(4))
                rebuilt += expected_carry << 4
                assert rebuilt == total

    def test_ripple_carry_steps_oracle(self):
        steps = ripple_carry_steps(9, 9)
        assert len(steps) == 4
        rebuilt = sum(s[3] << i for i, s in enumerate(steps)) + (steps[-1][4] << 4)
        assert rebuilt == 18

    def test_bits_are_raw_binary(self):
        task = gen_binary_tasks()[2]
        assert set(np.unique(task.inputs)) <= {0.0, 1.0}
        assert set(np.unique(task.targets)) <= {0.0, 1.0}


class TestDecimalTasks:
    def test_matches_table_transcription(self):
        tasks = gen_decimal_tasks()
        for task in tasks:
            rendered = [f"{a}+{b}" for a, b in task.meta.pairs]
            assert rendered == DECIMAL_TABLE[task.task_index]

    def test_targets_against_integer_oracle(self):
        for task in gen_decimal_tasks():
            for (a, b), target in zip(task.meta.pairs, task.targets):
                assert decode_digit(target[0]) == (a + b) % 10
                assert decode_carry(target[1]) == (a + b) // 10

    def test_seven_plus_five(self):
        task5 = gen_decimal_tasks()[4]
        idx = task5.meta.pairs.index((7, 5))
        target = task5.targets[idx]
        assert decode_digit(target[0]) == 2
        assert decode_carry(target[1]) == 1

    def test_one_plus_one(self):
        task1 = gen_decimal_tasks()[0]
        idx = task1.meta.pairs.index((1, 1))
        target = task1.targets[idx]
        assert decode_digit(target[0]) == 2
        assert decode_carry(target[1]) == 0

    def test_distinct_union_and_per_task_duplicates(self):
        # Each task column repeats exactly its n + n pair; the distinct
        # union over all five tasks covers every pair with an operand <= 5.
        tasks = gen_decimal_tasks()
        union = set()
        for task in tasks:
            n = task.task_index
            pairs = task.meta.pairs
            assert len(pairs) == 18
            assert len(set(pairs)) == 17
            assert pairs.count((n, n)) == 2
            union.update(pairs)
        expected = {
            (a, b)
            for a in range(1, 10)
            for b in range(1, 10)
            if a <= 5 or b <= 5
        }
        assert union == expected
        assert len(union) == 65

    def test_inputs_span_spline_range(self):
        for task in gen_decimal_tasks():
            assert task.inputs.min() >= -1.0 and task.inputs.max() <= 1.0


class TestEncoding:
    def test_digit_round_trip(self):
        digits = np.arange(10)
        np.testing.assert_array_equal(decode_digit(encode_digit(digits)), digits)

    def test_carry_round_trip(self):
        np.testing.assert_array_equal(decode_carry(encode_carry([0, 1])), [0, 1])

    def test_encoding_bounds(self):
        np.testing.assert_allclose(encode_digit([0, 9]), [-1.0, 1.0])
        np.testing.assert_allclose(encode_carry([0, 1]), [-1.0, 1.0])


class TestTaskDataset:
    def test_row_count_mismatch(self):
        with pytest.raises(UsageError):
            TaskDataset(1, np.zeros((3, 2)), np.zeros((2, 2)))

    def test_task_index_positive(self):
        with pytest.raises(UsageError):
            TaskDataset(0, np.zeros((2, 2)), np.zeros((2, 2)))

    def test_csv_export(self, tmp_path):
        task = gen_decimal_tasks()[0]
        path = tmp_path / "task.csv"
        task_to_csv(task, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "task_index,input_0,input_1,target_0,target_1"
        assert len(lines) == 1 + task.n_samples


class TestAccuracy:
    def test_binary_accuracy_threshold(self):
        task = gen_binary_tasks()[0]
        perfect = task.targets * 0.6 + 0.2  # 0 -> 0.2, 1 -> 0.8
        assert task_accuracy(task, perfect) == 1.0
        assert task_accuracy(task, 1.0 - perfect) < 1.0

    def test_decimal_accuracy(self):
        task = gen_decimal_tasks()[0]
        assert task_accuracy(task, task.targets.copy()) == 1.0

    def test_image_accuracy(self):
        task = TaskDataset(
            1,
            np.zeros((3, 4)),
            np.array([0, 1, 2]),
            TaskMeta(kind="image"),
        )
        outputs = np.eye(3, 10) * 5.0
        assert task_accuracy(task, outputs) == 1.0


class TestIdxParsing:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(7, 28, 28), dtype=np.uint8)
        labels = rng.integers(0, 10, size=7, dtype=np.uint8)
        ip = tmp_path / "imgs"
        lp = tmp_path / "labs"
        write_idx_images(ip, images)
        write_idx_labels(lp, labels)
        got_images, got_labels = load_mnist_idx(ip, lp)
        np.testing.assert_array_equal(got_images, images)
        np.testing.assert_array_equal(got_labels, labels)

    def test_magic_mismatch(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(struct.pack(">4i", 1234, 1, 2, 2) + bytes(4))
        with pytest.raises(IdxFormatError, match="magic"):
            load_idx_images(path)
        with pytest.raises(IdxFormatError, match="magic"):
            load_idx_labels(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc"
        path.write_bytes(struct.pack(">4i", 2051, 2, 28, 28) + bytes(100))
        with pytest.raises(IdxFormatError, match="payload"):
            load_idx_images(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "short"
        path.write_bytes(b"\x00\x00")
        with pytest.raises(IdxFormatError, match="header"):
            load_idx_labels(path)

    def test_count_mismatch(self, tmp_path):
        ip = tmp_path / "imgs"
        lp = tmp_path / "labs"
        write_idx_images(ip, np.zeros((3, 4, 4), dtype=np.uint8))
        write_idx_labels(lp, np.zeros(5, dtype=np.uint8))
        with pytest.raises(IdxFormatError, match="count mismatch"):
            load_mnist_idx(ip, lp)


class TestPreprocess:
    def test_binarization(self):
        rng = np.random.default_rng(1)
        raw = rng.integers(0, 256, size=(4, 8, 8), dtype=np.uint8)
        out = preprocess_images(raw, ImagePreprocessSpec(2, (8, 8)))
        assert set(np.unique(out)) <= {-1.0, 1.0}
        assert out.shape == (4, 64)

    def test_identity_shape_high_q(self):
        rng = np.random.default_rng(2)
        raw = rng.integers(0, 256, size=(3, 6, 6), dtype=np.uint8)
        out = preprocess_images(raw, ImagePreprocessSpec(256, (6, 6)))
        reference = (raw.astype(float) / 255.0 * 2.0 - 1.0).reshape(3, -1)
        step = 2.0 / 255.0
        assert np.max(np.abs(out - reference)) <= step + 1e-12

    def test_constant_image_resize_invariance(self):
        raw = np.full((2, 28, 28), 137, dtype=np.uint8)
        out = preprocess_images(raw, ImagePreprocessSpec(256, (14, 14)))
        assert np.allclose(out, out[0, 0])

    def test_resize_identity_returns_same_values(self):
        rng = np.random.default_rng(3)
        images = rng.uniform(size=(2, 9, 9))
        np.testing.assert_array_equal(bilinear_resize(images, (9, 9)), images)

    def test_invalid_spec(self):
        with pytest.raises(UsageError):
            ImagePreprocessSpec(1, (8, 8))
        with pytest.raises(UsageError):
            ImagePreprocessSpec(4, (0, 8))


class TestIntrinsicDimension:
    def test_power_of_two_case(self):
        assert intrinsic_dimension(ImagePreprocessSpec(8, (32, 32))) == 13.0

    def test_minimal_case(self):
        assert intrinsic_dimension(ImagePreprocessSpec(2, (1, 1))) == 1.0

    def test_mnist_binary_case(self):
        spec = ImagePreprocessSpec(2, (28, 28))
        assert intrinsic_dimension(spec) == pytest.approx(math.log2(1568))


class TestImageTasks:
    def make_corpus(self):
        rng = np.random.default_rng(4)
        data = rng.uniform(-1, 1, size=(300, 16))
        labels = np.repeat(np.arange(10), 30)
        return data, labels

    def test_class_plan_and_disjointness(self):
        data, labels = self.make_corpus()
        tasks = build_image_tasks(data, labels, n_per_class=10, seed=0)
        assert tasks[0].meta.classes == (1, 2)
        assert tasks[4].meta.classes == (9, 0)
        seen = set()
        for task in tasks:
            classes = set(task.meta.classes)
            assert not (classes & seen)
            seen |= classes
        assert seen == set(range(10))

    def test_sample_counts_and_head_mapping(self):
        data, labels = self.make_corpus()
        tasks = build_image_tasks(data, labels, n_per_class=7, seed=1)
        for t, task in enumerate(tasks):
            assert task.n_samples == 14
            assert set(np.unique(task.targets)) == {2 * t, 2 * t + 1}

    def test_insufficient_samples(self):
        data, labels = self.make_corpus()
        with pytest.raises(DataError):
            build_image_tasks(data, labels, n_per_class=31, seed=0)

    def test_plan_must_not_repeat(self):
        data, labels = self.make_corpus()
        with pytest.raises(UsageError):
            build_image_tasks(data, labels, class_plan=((1, 2), (2, 3)), n_per_class=5)


class TestSyntheticCorpus:
    def test_rendering_deterministic_and_labeled(self):
        images_a, labels_a = render_digit_images(3, seed=9)
        images_b, labels_b = render_digit_images(3, seed=9)
        np.testing.assert_array_equal(images_a, images_b)
        np.testing.assert_array_equal(labels_a, labels_b)
        assert images_a.shape == (30, 28, 28)
        counts = np.bincount(labels_a, minlength=10)
        np.testing.assert_array_equal(counts, 3)
        assert images_a.max() > 100  # digits actually rendered

    def test_corpus_round_trips_through_idx(self, tmp_path):
        ip, lp = ensure_synthetic_corpus(tmp_path, n_per_class=4, seed=3)
        images, labels = load_mnist_idx(ip, lp)
        assert images.shape == (40, 28, 28)
        assert labels.shape == (40,)
        # Second call reuses the files.
        ip2, lp2 = ensure_synthetic_corpus(tmp_path, n_per_class=4, seed=3)
        assert ip2 == ip and lp2 == lp

    def test_tasks_built_from_corpus(self, tmp_path):
        ip, lp = ensure_synthetic_corpus(tmp_path, n_per_class=6, seed=5)
        images, labels = load_mnist_idx(ip, lp)
        flat = preprocess_images(images, ImagePreprocessSpec(2, (14, 14)))
        tasks = build_image_tasks(flat, labels, MNIST_CLASS_PLAN, n_per_class=5)
        assert len(tasks) == 5
        assert tasks[0].inputs.shape == (10, 196)
