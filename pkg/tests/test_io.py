import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from navseg.exceptions import DataError
from navseg.io import (chw_to_image, decode_gtsr, encode_gtsr, image_to_chw, load_tensor_dir,
                       read_gtsr, read_pgm, read_ppm, save_tensor_dir, write_gtsr, write_pgm,
                       write_ppm)
from navseg.model import ModelConfig, init_params, load_checkpoint, save_checkpoint


def test_gtsr_layout_by_hand():
    buf = encode_gtsr(np.array([[1.0, 2.0, 3.0]]))
    assert buf[:4] == b"GTSR"
    assert struct.unpack("<3I", buf[4:16]) == (2, 1, 3)
    assert struct.unpack("<3f", buf[16:]) == (1.0, 2.0, 3.0)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_gtsr_round_trip_exact_for_float32(a):
    np.testing.assert_array_equal(decode_gtsr(encode_gtsr(a)), a.astype(np.float64))


def test_gtsr_down_converts_float64(tmp_path):
    x = np.array([0.1, 1 / 3])
    write_gtsr(tmp_path / "x.gtsr", x)
    np.testing.assert_array_equal(read_gtsr(tmp_path / "x.gtsr"), x.astype(np.float32))


@pytest.mark.parametrize("buf", [b"NOPE\x00\x00\x00\x00", b"GTSR\x02\x00\x00\x00\x01\x00",
                                 encode_gtsr(np.ones(3))[:-1], encode_gtsr(np.ones(3)) + b"\x00"])
def test_gtsr_malformed(buf):
    with pytest.raises(DataError):
        decode_gtsr(buf)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9))))
def test_pgm_round_trip(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("pgm") / "a.pgm"
    write_pgm(path, a)
    np.testing.assert_array_equal(read_pgm(path), a)


def test_ppm_round_trip_and_header(tmp_path):
    rgb = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    write_ppm(tmp_path / "a.ppm", rgb)
    raw = (tmp_path / "a.ppm").read_bytes()
    assert raw.startswith(b"P6\n7 5\n255\n")
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), rgb)


def test_netpbm_comments_accepted(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 # width\n1\n255\n\x07\x09")
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[7, 9]])


@pytest.mark.parametrize("raw", [b"P6\n2 1\n255\n\x00\x00", b"P5\n2 2\n255\n\x00\x00\x00",
                                 b"P5\n2 1\n65535\n\x00\x00\x00\x00", b"P5\n2 x\n255\n\x00\x00",
                                 b"P5\n2"])
def test_netpbm_malformed(tmp_path, raw):
    (tmp_path / "bad.pgm").write_bytes(raw)
    with pytest.raises(DataError):
        read_pgm(tmp_path / "bad.pgm")


def test_netpbm_writer_rejects_bad_arrays(tmp_path):
    with pytest.raises(DataError):
        write_pgm(tmp_path / "x.pgm", np.full((2, 2), 300))
    with pytest.raises(DataError):
        write_ppm(tmp_path / "x.ppm", np.zeros((2, 2)))
    assert not list(tmp_path.iterdir())


def test_image_conversions():
    rgb = np.random.default_rng(1).integers(0, 256, size=(4, 6, 3), dtype=np.uint8)
    chw = image_to_chw(rgb)
    assert chw.shape == (3, 4, 6) and chw.max() <= 1
    np.testing.assert_array_equal(chw_to_image(chw), rgb)


def test_tensor_dir_and_checkpoint(tmp_path):
    tensors = {"a": np.arange(6.0).reshape(2, 3), "b": np.ones(4)}
    save_tensor_dir(tmp_path / "t", tensors, {"seed": 3})
    back, manifest = load_tensor_dir(tmp_path / "t")
    assert manifest["seed"] == 3 and manifest["tensors"]["a"]["dims"] == [2, 3]
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])

    cfg = ModelConfig(seed=4)
    params = init_params(cfg)
    save_checkpoint(tmp_path / "ck", params, cfg)
    loaded, cfg2 = load_checkpoint(tmp_path / "ck")
    assert cfg2 == cfg
    for k in params:
        np.testing.assert_array_equal(loaded[k], params[k].astype(np.float32))


def test_tensor_dir_errors(tmp_path):
    with pytest.raises(DataError):
        load_tensor_dir(tmp_path)
    save_tensor_dir(tmp_path / "t", {"a": np.ones(3)}, {})
    manifest = json.loads((tmp_path / "t" / "manifest.json").read_text())
    manifest["tensors"]["a"]["dims"] = [4]
    (tmp_path / "t" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DataError, match="dims"):
        load_tensor_dir(tmp_path / "t")
