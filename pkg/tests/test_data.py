"""Seeded PRNG, synthetic dataset generation, batch sampling, embedding files."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from gradamp.data import (
    CENTER_SPREAD,
    PairDataset,
    SyntheticConfig,
    XorShift64Star,
    dataset_from_embeddings,
    generate_dataset,
    load_dataset,
    read_embeddings,
    sample_batch,
    splitmix64,
    write_embeddings,
)
from gradamp.errors import (
    BadMagicError,
    InputError,
    InvalidConfigError,
    TruncatedPayloadError,
    UnknownDtypeError,
)


class TestPrng:
    def test_splitmix64_known_answers(self):
        assert splitmix64(0) == 0xE220A8397B1DCDAF
        assert splitmix64(42) == 0xBDD732262FEB6E95

    def test_splitmix64_matches_independent_reimplementation(self):
        for x in (0, 1, 42, 2**63, 2**64 - 1):
            assert splitmix64(x) == oracles.reference_splitmix64(x)

    def test_xorshift_known_sequence(self):
        rng = XorShift64Star(0)
        assert [rng.next_u64() for _ in range(3)] == [
            0x7BBCB40D550682D0,
            0xDE7FE413D00CC9FD,
            0xB3C638353C668C91,
        ]

    def test_xorshift_matches_independent_reimplementation(self):
        for seed in (0, 1, 7, 123456789):
            rng = XorShift64Star(seed)
            got = [rng.next_u64() for _ in range(16)]
            assert got == oracles.reference_xorshift_sequence(seed, 16)

    def test_uniform_range_and_determinism(self):
        a, b = XorShift64Star(9), XorShift64Star(9)
        draws = [a.uniform() for _ in range(1000)]
        assert all(0.0 <= u < 1.0 for u in draws)
        assert draws == [b.uniform() for _ in range(1000)]

    def test_randint_bounds(self):
        rng = XorShift64Star(3)
        draws = [rng.randint(10) for _ in range(2000)]
        assert min(draws) == 0 and max(draws) == 9

    def test_randint_rejects_nonpositive_bound(self):
        with pytest.raises(InvalidConfigError):
            XorShift64Star(0).randint(0)

    def test_gaussian_moments(self):
        rng = XorShift64Star(17)
        draws = np.array([rng.gaussian() for _ in range(20_000)])
        assert abs(float(draws.mean())) < 0.03
        assert abs(float(draws.var()) - 1.0) < 0.05

    def test_gaussian_pair_consumes_two_uniform_draws(self):
        a, b = XorShift64Star(7), XorShift64Star(7)
        a.gaussian()
        a.gaussian()
        b.next_u64()
        b.next_u64()
        assert a.next_u64() == b.next_u64()

    def test_gaussian_vector_matches_scalar_stream(self):
        a, b = XorShift64Star(11), XorShift64Star(11)
        vec = a.gaussian_vector(5)
        assert np.array_equal(vec, np.array([b.gaussian() for _ in range(5)]))


class TestSyntheticConfig:
    def test_round_trips_through_json(self):
        cfg = SyntheticConfig(num_classes=8, input_dim=16, group_size=2, seed=3)
        assert SyntheticConfig.from_json(cfg.to_json()) == cfg

    def test_num_groups(self):
        cfg = SyntheticConfig(num_classes=8, input_dim=16, group_size=2)
        assert cfg.num_groups == 4

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(num_classes=1, input_dim=4),
            dict(num_classes=4, input_dim=1),
            dict(num_classes=4, input_dim=4, group_size=0),
            dict(num_classes=4, input_dim=4, group_size=3),
            dict(num_classes=16, input_dim=4, group_size=2),
            dict(num_classes=4, input_dim=4, noise=-0.1),
            dict(num_classes=4, input_dim=4, noise=float("nan")),
            dict(num_classes=4, input_dim=4, separation=float("inf")),
            dict(num_classes=4, input_dim=4, records_per_class=0),
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(InvalidConfigError):
            SyntheticConfig(**kwargs)

    def test_unknown_json_keys_rejected(self):
        with pytest.raises(InvalidConfigError):
            SyntheticConfig.from_json('{"num_classes": 4, "input_dim": 4, "bogus": 1}')

    def test_malformed_json_rejected(self):
        with pytest.raises(InvalidConfigError):
            SyntheticConfig.from_json("{not json")
        with pytest.raises(InvalidConfigError):
            SyntheticConfig.from_json("[1, 2]")


class TestGenerateDataset:
    def test_zero_noise_collapses_to_centers(self):
        cfg = SyntheticConfig(num_classes=4, input_dim=8, noise=0.0, records_per_class=3)
        ds = generate_dataset(cfg)
        assert np.array_equal(ds.queries, ds.targets)
        for row in range(ds.num_records):
            assert np.array_equal(ds.queries[row], ds.centers[ds.labels[row]])

    def test_same_seed_byte_identical(self):
        cfg = SyntheticConfig(num_classes=6, input_dim=8, group_size=2, seed=12)
        a, b = generate_dataset(cfg), generate_dataset(cfg)
        assert np.array_equal(a.queries, b.queries)
        assert np.array_equal(a.targets, b.targets)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.centers, b.centers)

    def test_different_seeds_differ(self):
        base = dict(num_classes=6, input_dim=8, group_size=2)
        a = generate_dataset(SyntheticConfig(seed=1, **base))
        b = generate_dataset(SyntheticConfig(seed=2, **base))
        assert not np.array_equal(a.queries, b.queries)

    def test_anchor_separation_is_exact(self):
        cfg = SyntheticConfig(num_classes=5, input_dim=8, noise=0.0, separation=4.0)
        ds = generate_dataset(cfg)
        for i in range(5):
            for j in range(i + 1, 5):
                dist = float(np.linalg.norm(ds.centers[i] - ds.centers[j]))
                assert dist == pytest.approx(4.0, abs=1e-12)

    def test_within_group_centers_are_close(self):
        cfg = SyntheticConfig(num_classes=8, input_dim=16, group_size=4, noise=0.05,
                              separation=4.0, seed=2)
        ds = generate_dataset(cfg)
        scale = CENTER_SPREAD * cfg.noise / np.sqrt(cfg.input_dim)
        within = np.linalg.norm(ds.centers[0] - ds.centers[1])
        across = np.linalg.norm(ds.centers[0] - ds.centers[4])
        assert within < 10 * scale * np.sqrt(cfg.input_dim)
        assert across > cfg.separation / 2

    def test_labels_and_record_index(self):
        cfg = SyntheticConfig(num_classes=4, input_dim=4, records_per_class=3)
        ds = generate_dataset(cfg)
        assert ds.num_records == 12
        assert set(ds.labels.tolist()) == {0, 1, 2, 3}
        for c, rows in enumerate(ds.records_by_class):
            assert (ds.labels[rows] == c).all()

    def test_separable_regime_after_training(self):
        # Widely separated single-class groups: after a short training run,
        # every within-class pair scores above every cross-class pair.
        from gradamp.gradcache import embed_in_chunks, make_plan
        from gradamp.harness import RunConfig, run_train

        data = json.dumps(dict(num_classes=8, input_dim=16, group_size=1, noise=0.05,
                               separation=4.0, records_per_class=8, seed=5))
        cfg = RunConfig(data=data, mode="ega", tau=0.05, alpha=20.0, batch_size=8,
                        chunk_size=4, steps=60, lr=2e-3, widths=(32, 8), seed=1,
                        eval_interval=60)
        result = run_train(cfg)
        ds = generate_dataset(SyntheticConfig.from_json(data))
        plan = make_plan(ds.num_records, 8)
        q = embed_in_chunks(result.params, ds.queries, plan)
        t = embed_in_chunks(result.params, ds.targets, plan)
        scores = q @ t.T
        same = ds.labels[:, None] == ds.labels[None, :]
        assert float(scores[same].min()) > float(scores[~same].max())


@pytest.fixture(scope="module")
def dataset() -> PairDataset:
    return generate_dataset(
        SyntheticConfig(num_classes=8, input_dim=8, group_size=2,
                        records_per_class=4, seed=21)
    )


class TestSampleBatch:
    def test_full_batch_hits_every_class(self, dataset):
        _, _, labels = sample_batch(dataset, 8, seed=0, step=0)
        assert sorted(labels.tolist()) == list(range(8))

    def test_labels_pairwise_distinct(self, dataset):
        for step in range(20):
            _, _, labels = sample_batch(dataset, 5, seed=3, step=step)
            assert len(set(labels.tolist())) == 5

    def test_deterministic_in_seed_and_step(self, dataset):
        a = sample_batch(dataset, 6, seed=4, step=9)
        b = sample_batch(dataset, 6, seed=4, step=9)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_steps_give_different_batches(self, dataset):
        _, _, l0 = sample_batch(dataset, 6, seed=4, step=0)
        _, _, l1 = sample_batch(dataset, 6, seed=4, step=1)
        assert not np.array_equal(l0, l1)

    def test_rows_match_their_labels(self, dataset):
        q, t, labels = sample_batch(dataset, 8, seed=7, step=2)
        for row, label in enumerate(labels):
            candidates = dataset.records_by_class[label]
            match = [r for r in candidates if np.array_equal(dataset.queries[r], q[row])]
            assert len(match) == 1
            assert np.array_equal(dataset.targets[match[0]], t[row])

    def test_oversized_batch_rejected(self, dataset):
        with pytest.raises(InvalidConfigError):
            sample_batch(dataset, 9, seed=0, step=0)
        with pytest.raises(InvalidConfigError):
            sample_batch(dataset, 0, seed=0, step=0)


class TestEmbeddingFile:
    def test_round_trip_float64_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((5, 3))
        labels = np.array([0, 1, 2, 0, 1], dtype=np.int64)
        path = tmp_path / "e.egae"
        write_embeddings(path, x, labels)
        got_x, got_labels = read_embeddings(path)
        assert np.array_equal(got_x, x)
        assert np.array_equal(got_labels, labels)

    def test_round_trip_float32_truncates(self, tmp_path):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 6))
        path = tmp_path / "e.egae"
        write_embeddings(path, x, np.zeros(4, dtype=np.int64), dtype="f4")
        got_x, _ = read_embeddings(path)
        assert np.array_equal(got_x, x.astype(np.float32).astype(np.float64))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.egae"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(BadMagicError):
            read_embeddings(path)

    def test_header_only_file_rejected(self, tmp_path):
        path = tmp_path / "h.egae"
        path.write_bytes(b"EGAE" + struct.pack("<HQQB", 1, 5, 3, 2))
        with pytest.raises(TruncatedPayloadError):
            read_embeddings(path)

    def test_truncated_header_rejected(self, tmp_path):
        path = tmp_path / "t.egae"
        path.write_bytes(b"EGAE\x01\x00")
        with pytest.raises(TruncatedPayloadError):
            read_embeddings(path)

    def test_unknown_dtype_code_rejected(self, tmp_path):
        path = tmp_path / "d.egae"
        write_embeddings(path, np.zeros((2, 2)), np.zeros(2, dtype=np.int64))
        raw = bytearray(path.read_bytes())
        raw[4 + 2 + 8 + 8] = 7
        path.write_bytes(bytes(raw))
        with pytest.raises(UnknownDtypeError):
            read_embeddings(path)

    def test_trailing_byte_rejected(self, tmp_path):
        path = tmp_path / "x.egae"
        write_embeddings(path, np.zeros((2, 2)), np.zeros(2, dtype=np.int64))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(TruncatedPayloadError):
            read_embeddings(path)

    def test_unsupported_version_rejected(self, tmp_path):
        path = tmp_path / "v.egae"
        write_embeddings(path, np.zeros((2, 2)), np.zeros(2, dtype=np.int64))
        raw = bytearray(path.read_bytes())
        raw[4:6] = (3).to_bytes(2, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(BadMagicError):
            read_embeddings(path)

    def test_write_rejects_unknown_dtype(self, tmp_path):
        with pytest.raises(UnknownDtypeError):
            write_embeddings(tmp_path / "q.egae", np.zeros((2, 2)),
                             np.zeros(2, dtype=np.int64), dtype="f2")

    def test_write_rejects_label_mismatch(self, tmp_path):
        with pytest.raises(InputError):
            write_embeddings(tmp_path / "q.egae", np.zeros((3, 2)),
                             np.zeros(2, dtype=np.int64))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 12), st.integers(2, 9), st.integers(0, 10_000))
    def test_property_round_trip(self, b, d, seed):
        import tempfile
        from pathlib import Path

        rng = np.random.default_rng(seed)
        x = rng.standard_normal((b, d))
        labels = rng.integers(0, 5, size=b).astype(np.int64)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "r.egae"
            write_embeddings(path, x, labels)
            got_x, got_labels = read_embeddings(path)
        assert np.array_equal(got_x, x)
        assert np.array_equal(got_labels, labels)


class TestDatasetLoading:
    def test_from_embeddings_groups_by_label(self):
        x = np.random.default_rng(2).standard_normal((6, 4))
        labels = np.array([5, 2, 5, 2, 9, 9], dtype=np.int64)
        ds = dataset_from_embeddings(x, labels)
        assert ds.num_classes == 3
        assert np.array_equal(ds.queries, ds.targets)
        assert np.array_equal(ds.class_ids, [2, 5, 9])
        for class_pos, rows in enumerate(ds.records_by_class):
            assert (ds.labels[rows] == ds.class_ids[class_pos]).all()

    def test_from_embeddings_needs_two_labels(self):
        with pytest.raises(InvalidConfigError):
            dataset_from_embeddings(np.zeros((3, 4)), np.zeros(3, dtype=np.int64))

    def test_load_inline_json(self):
        ds = load_dataset('{"num_classes": 4, "input_dim": 4, "seed": 1}')
        assert ds.num_classes == 4

    def test_load_json_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"num_classes": 4, "input_dim": 4, "seed": 1}')
        inline = load_dataset(path.read_text())
        from_file = load_dataset(str(path))
        assert np.array_equal(inline.queries, from_file.queries)

    def test_load_embedding_file(self, tmp_path):
        x = np.random.default_rng(3).standard_normal((4, 4))
        labels = np.array([0, 0, 1, 1], dtype=np.int64)
        path = tmp_path / "d.egae"
        write_embeddings(path, x, labels)
        ds = load_dataset(str(path))
        assert ds.num_records == 4
        assert np.array_equal(ds.queries, x)

    def test_unrecognized_source_rejected(self):
        with pytest.raises(InvalidConfigError):
            load_dataset("mystery.bin")
