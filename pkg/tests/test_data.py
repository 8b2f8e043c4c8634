import struct

import numpy as np
import pytest

from kanspoof.data import (
    DatasetSplit,
    FormatError,
    SyntheticGenConfig,
    UtteranceRecord,
    crop_or_pad,
    load_split,
    read_features,
    read_manifest,
    split_records,
    split_sizes,
    synth_generate,
    write_features,
    write_manifest,
)


class TestFeatureFiles:
    def test_hand_built_file(self, tmp_path):
        raw = b"KFT1" + struct.pack("<III", 2, 2, 3) + struct.pack("<6f", 1, 2, 3, 4, 5, 6)
        (tmp_path / "a.kft").write_bytes(raw)
        x = read_features(tmp_path / "a.kft")
        assert x.dtype == np.float64
        np.testing.assert_array_equal(x, [[1, 2, 3], [4, 5, 6]])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "a.kft").write_bytes(b"XXXX" + struct.pack("<II", 1, 0))
        with pytest.raises(FormatError, match="offset 0"):
            read_features(tmp_path / "a.kft")

    def test_truncated_payload(self, tmp_path):
        raw = b"KFT1" + struct.pack("<III", 2, 2, 3) + struct.pack("<5f", 1, 2, 3, 4, 5)
        (tmp_path / "a.kft").write_bytes(raw)
        with pytest.raises(FormatError, match="offset 16"):
            read_features(tmp_path / "a.kft")

    def test_round_trip_bit_identical(self, tmp_path, rng):
        x = rng.normal(size=(7, 5)).astype(np.float32)
        write_features(tmp_path / "a.kft", x)
        y = read_features(tmp_path / "a.kft")
        assert y.astype(np.float32).tobytes() == x.tobytes()
        write_features(tmp_path / "b.kft", y)
        assert (tmp_path / "a.kft").read_bytes() == (tmp_path / "b.kft").read_bytes()


class TestManifest:
    def test_round_trip(self, tmp_path):
        rows = [("u1", "bonafide"), ("u2", "spoof")]
        write_manifest(tmp_path / "m.csv", rows)
        assert (tmp_path / "m.csv").read_text().splitlines()[0] == "utt_id,label"
        assert read_manifest(tmp_path / "m.csv") == rows

    def test_bad_label(self, tmp_path):
        (tmp_path / "m.csv").write_text("utt_id,label\nu1,fake\n")
        with pytest.raises(FormatError, match=":2:"):
            read_manifest(tmp_path / "m.csv")

    def test_bad_header(self, tmp_path):
        (tmp_path / "m.csv").write_text("id,class\n")
        with pytest.raises(FormatError):
            read_manifest(tmp_path / "m.csv")

    def test_load_split(self, tmp_path, rng):
        write_features(tmp_path / "u1.kft", rng.normal(size=(3, 2)))
        write_manifest(tmp_path / "m.csv", [("u1", "spoof")])
        split = load_split(tmp_path / "m.csv", tmp_path, "dev", 5)
        x, y = split.arrays()
        assert x.shape == (1, 5, 2) and y.tolist() == [1]


class TestCropOrPad:
    def test_identity(self, rng):
        x = rng.normal(size=(5, 2))
        np.testing.assert_array_equal(crop_or_pad(x, 5), x)

    def test_tiles(self):
        np.testing.assert_array_equal(crop_or_pad(np.arange(2.0), 5), [0, 1, 0, 1, 0])

    def test_head_crop(self):
        np.testing.assert_array_equal(crop_or_pad(np.arange(10.0), 4), [0, 1, 2, 3])

    def test_every_example_has_t_fix_frames(self, rng):
        recs = [UtteranceRecord(str(i), rng.normal(size=(int(t), 3)), "bonafide") for i, t in enumerate([1, 7, 30])]
        x, _ = DatasetSplit(recs).arrays(12)
        assert x.shape == (3, 12, 3)

    def test_empty_sequence(self):
        with pytest.raises(ValueError):
            crop_or_pad(np.zeros((0, 3)), 4)


class TestSynthetic:
    def test_deterministic(self):
        a = synth_generate(SyntheticGenConfig(n_per_class=5, T=30, D=4, seed=9))
        b = synth_generate(SyntheticGenConfig(n_per_class=5, T=30, D=4, seed=9))
        for ra, rb in zip(a.records, b.records):
            assert ra.id == rb.id and ra.label == rb.label
            assert ra.features.tobytes() == rb.features.tobytes()

    def test_class_counts(self):
        d = synth_generate(SyntheticGenConfig(n_per_class=7, T=10, D=4))
        labels = [r.label for r in d.records]
        assert labels.count("bonafide") == labels.count("spoof") == 7
        assert all(r.features.shape == (10, 4) for r in d.records)

    def test_bonafide_is_ar1(self):
        d = synth_generate(SyntheticGenConfig(n_per_class=200, T=200, D=16, seed=1))
        x = np.stack([r.features for r in d.records if r.label == "bonafide"])
        # lag-1 autocorrelation and stationary variance 1 / (1 - 0.81)
        x0, x1 = x[:, :-1].ravel(), x[:, 1:].ravel()
        assert abs(np.corrcoef(x0, x1)[0, 1] - 0.9) < 0.01
        assert abs(x.var() / (1 / 0.19) - 1.0) < 0.1

    def test_spoof_energy_at_injected_frequency(self):
        # pin the frequency to bin 50 of a 200-point periodogram
        cfg = SyntheticGenConfig(n_per_class=100, T=200, D=16, seed=2, freq_range=(0.5 * np.pi, 0.5 * np.pi))
        d = synth_generate(cfg)
        power = {"bonafide": [], "spoof": []}
        for r in d.records:
            spec = np.abs(np.fft.rfft(r.features, axis=0)) ** 2 / 200
            power[r.label].append(spec[50].mean())
        assert np.mean(power["spoof"]) > 2 * np.mean(power["bonafide"])

    def test_injected_channel_count(self):
        cfg = SyntheticGenConfig(n_per_class=3, T=50, D=16, seed=4, ar_coeff=0.0, amplitude=100.0)
        d = synth_generate(cfg)
        for r in d.records[3:]:
            assert (r.features.std(axis=0) > 20).sum() == 4


class TestSplits:
    def test_sizes(self):
        assert split_sizes(40) == (28, 6, 6)
        assert split_sizes(400) == (280, 60, 60)
        assert split_sizes(7) == (4, 1, 2)

    def test_partition_and_determinism(self):
        d = synth_generate(SyntheticGenConfig(n_per_class=20, T=5, D=2))
        a = split_records(d, 3)
        b = split_records(d, 3)
        ids = [r.id for role in ("train", "dev", "eval") for r in a[role].records]
        assert sorted(ids) == sorted(r.id for r in d.records)
        assert all([r.id for r in a[k].records] == [r.id for r in b[k].records] for k in a)
        assert [r.id for r in split_records(d, 4)["dev"].records] != [r.id for r in a["dev"].records]
