import json
import struct

import numpy as np
import pytest
from conftest import tiny_config

from macd.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from macd.model import MacdParams, TrainedModel, predict_array


def _model(seed=0):
    cfg = tiny_config(seed=seed, lam=0.3)
    params = MacdParams.init(5, 2, cfg)
    params.buffers["encoder.bn0.running_mean"] = np.linspace(0, 1, cfg.encoder_hidden)
    return TrainedModel(params, cfg, [f"g{i}" for i in range(5)], ["A", "B"], [(1.5, 0.25), (1.25, 0.125)], {"note": "x"})


def test_round_trip(tmp_path):
    m = _model()
    path = tmp_path / "m.macd"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.config == m.config
    assert back.gene_order == m.gene_order and back.type_order == m.type_order
    assert back.loss_history == m.loss_history
    assert back.metadata == m.metadata
    assert set(back.params.arrays) == set(m.params.arrays)
    for store_a, store_b in ((m.params.arrays, back.params.arrays), (m.params.buffers, back.params.buffers)):
        for k in store_a:
            assert store_a[k].tobytes() == store_b[k].tobytes()
    X = np.random.default_rng(0).random((4, 5))
    np.testing.assert_array_equal(predict_array(back.params, X, back.config), predict_array(m.params, X, m.config))


def test_layout(tmp_path):
    path = tmp_path / "m.macd"
    save_checkpoint(_model(), path)
    data = path.read_bytes()
    assert data[:6] == b"MACD1\n" == MAGIC
    (hlen,) = struct.unpack_from("<Q", data, 6)
    header = json.loads(data[14 : 14 + hlen])
    assert header["format_version"] == 1
    payload = len(data) - 14 - hlen
    assert payload == sum(e["nbytes"] for e in header["arrays"])
    # sorted keys make the file byte-stable
    assert data[14 : 14 + hlen].decode() == json.dumps(header, sort_keys=True, separators=(",", ":"))


def test_save_is_byte_stable(tmp_path):
    save_checkpoint(_model(), tmp_path / "a")
    save_checkpoint(_model(), tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_bad_magic(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"NOTMACD" + b"\0" * 20)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "m.macd"
    save_checkpoint(_model(), p)
    p.write_bytes(p.read_bytes()[:-16])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_corrupt_header(tmp_path):
    p = tmp_path / "m.macd"
    p.write_bytes(MAGIC + struct.pack("<Q", 4) + b"{{{{")
    with pytest.raises(CheckpointError, match="corrupt"):
        load_checkpoint(p)


def test_shape_mismatch(tmp_path):
    m = _model()
    m.gene_order = m.gene_order[:-1]
    p = tmp_path / "m.macd"
    save_checkpoint(m, p)
    with pytest.raises(CheckpointError, match="shapes"):
        load_checkpoint(p)
