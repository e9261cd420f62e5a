"""Round trips and failure modes of the tensor container format."""

import numpy as np
import pytest

from otpose.cli import tensorfile as tf


class TestSingleTensor:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.standard_normal((3, 5, 7)).astype(np.float32)
        p = tmp_path / "t.ott"
        tf.save_tensor(p, arr)
        back = tf.load_tensor(p)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, arr)

    def test_float64_serialized_at_f32(self, tmp_path):
        arr = np.array([1.0, np.pi, 1e-8])
        p = tmp_path / "t.ott"
        tf.save_tensor(p, arr)
        np.testing.assert_array_equal(tf.load_tensor(p),
                                      arr.astype(np.float32))

    def test_deterministic_bytes(self, tmp_path):
        arr = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        a, b = tmp_path / "a.ott", tmp_path / "b.ott"
        tf.save_tensor(a, arr)
        tf.save_tensor(b, arr)
        assert a.read_bytes() == b.read_bytes()

    def test_payload_length_matches_extents(self, tmp_path):
        arr = np.ones((4, 6), dtype=np.float32)
        p = tmp_path / "t.ott"
        tf.save_tensor(p, arr)
        raw = p.read_bytes()
        assert len(raw) == 4 + 4 + 2 * 8 + 4 * 24

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ott"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(tf.TensorFileError, match="magic"):
            tf.load(p)

    def test_truncated_payload(self, tmp_path):
        arr = np.ones((4, 4), dtype=np.float32)
        p = tmp_path / "t.ott"
        tf.save_tensor(p, arr)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(tf.TensorFileError, match="truncated|payload"):
            tf.load(p)


class TestContainer:
    def test_named_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        named = {"enc.w": rng.standard_normal((2, 3)).astype(np.float32),
                 "enc.b": np.zeros(3, dtype=np.float32)}
        p = tmp_path / "c.ott"
        tf.save_container(p, named)
        back = tf.load_container(p)
        assert list(back) == ["enc.w", "enc.b"]
        for k in named:
            np.testing.assert_array_equal(back[k], named[k])

    def test_primary_plus_manifest(self, tmp_path):
        p = tmp_path / "c.ott"
        tf.save(p, np.ones(3, dtype=np.float32),
                {"extra": np.zeros((2, 2), dtype=np.float32)})
        primary, named = tf.load(p)
        np.testing.assert_array_equal(primary, np.ones(3, dtype=np.float32))
        assert set(named) == {"extra"}

    def test_single_loader_rejects_container(self, tmp_path):
        p = tmp_path / "c.ott"
        tf.save_container(p, {"x": np.ones(2, dtype=np.float32)})
        with pytest.raises(tf.TensorFileError, match="container"):
            tf.load_tensor(p)

    def test_container_loader_rejects_plain(self, tmp_path):
        p = tmp_path / "t.ott"
        tf.save_tensor(p, np.ones(2, dtype=np.float32))
        with pytest.raises(tf.TensorFileError, match="manifest"):
            tf.load_container(p)

    def test_trailing_garbage_rejected(self, tmp_path):
        p = tmp_path / "c.ott"
        tf.save_container(p, {"x": np.ones(2, dtype=np.float32)})
        p.write_bytes(p.read_bytes() + b"JUNK")
        with pytest.raises(tf.TensorFileError, match="trailing"):
            tf.load(p)
