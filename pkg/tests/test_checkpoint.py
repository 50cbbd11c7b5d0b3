import json
import struct

import numpy as np
import pytest

from app.errors import CheckpointError
from app.services.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    Checkpoint,
    from_bytes,
    load_checkpoint,
    save_checkpoint,
    to_bytes,
)
from app.services.dataset import Scaler
from app.services.srnn import StructuralRNN, init_params
from app.services.synth import ring_graph

PREFIX = struct.Struct("<8sII")


@pytest.fixture
def ckpt(tiny_hp):
    return Checkpoint(
        params=init_params(tiny_hp, seed=9),
        scaler=Scaler(min=3.5, max=88.25),
        meta={"source": "ring", "seed": 9, "seq_len": 4},
    )


def test_save_load_preserves_everything(tmp_path, ckpt):
    path = save_checkpoint(tmp_path / "m.srnn", ckpt)
    loaded = load_checkpoint(path)
    assert loaded.hyperparams == ckpt.hyperparams
    assert loaded.scaler == ckpt.scaler
    assert loaded.meta == ckpt.meta
    assert list(loaded.params.arrays) == list(ckpt.params.arrays)
    for name, arr in ckpt.params.arrays.items():
        np.testing.assert_array_equal(loaded.params.arrays[name], arr)


def test_serialization_is_byte_stable(ckpt):
    data = to_bytes(ckpt)
    assert data.startswith(MAGIC)
    assert to_bytes(from_bytes(data)) == data


def test_truncated_payload(ckpt):
    data = to_bytes(ckpt)
    with pytest.raises(CheckpointError):
        from_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        from_bytes(data[:-3])
    with pytest.raises(CheckpointError):
        from_bytes(data[:5])


def test_trailing_values(ckpt):
    with pytest.raises(CheckpointError, match="trailing"):
        from_bytes(to_bytes(ckpt) + np.zeros(2).tobytes())


def test_wrong_magic(ckpt):
    data = bytearray(to_bytes(ckpt))
    data[:8] = b"NOTACKPT"
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        from_bytes(bytes(data))


def test_refuses_non_finite_weights(ckpt):
    ckpt.params.arrays["output.bias"][0, 0] = np.nan
    with pytest.raises(CheckpointError):
        to_bytes(ckpt)


def test_scaler_is_optional(tiny_hp):
    loaded = from_bytes(to_bytes(Checkpoint(params=init_params(tiny_hp))))
    assert loaded.scaler is None
    assert loaded.meta == {}


def _split(data):
    _, version, header_len = PREFIX.unpack_from(data)
    start = PREFIX.size
    return version, json.loads(data[start:start + header_len]), data[start + header_len:]


def _join(version, header, payload):
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return PREFIX.pack(MAGIC, version, len(blob)) + blob + payload


def test_version_mismatch(ckpt):
    version, header, payload = _split(to_bytes(ckpt))
    assert version == FORMAT_VERSION
    with pytest.raises(CheckpointError, match="format version"):
        from_bytes(_join(FORMAT_VERSION + 1, header, payload))


@pytest.mark.parametrize("field", ["shape", "count", "offset", "name"])
def test_tampered_array_table_is_a_checkpoint_error(ckpt, field):
    version, header, payload = _split(to_bytes(ckpt))
    del header["arrays"][0][field]
    with pytest.raises(CheckpointError):
        from_bytes(_join(version, header, payload))


def test_tampered_header_values_are_checkpoint_errors(ckpt):
    version, header, payload = _split(to_bytes(ckpt))
    header["arrays"][1]["shape"] = "wide"
    with pytest.raises(CheckpointError):
        from_bytes(_join(version, header, payload))
    _, header, _ = _split(to_bytes(ckpt))
    header["scaler"] = {"min": 1.0}
    with pytest.raises(CheckpointError, match="scaler"):
        from_bytes(_join(version, header, payload))


def test_untouched_header_rebuilds_the_same_bytes(ckpt):
    data = to_bytes(ckpt)
    assert _join(*_split(data)) == data


def test_loaded_weights_bind_to_a_graph_of_another_size(tmp_path, ckpt):
    loaded = load_checkpoint(save_checkpoint(tmp_path / "m.srnn", ckpt))
    model = StructuralRNN(loaded.params)
    for g in (ring_graph(3), ring_graph(11, chords=[(0, 5)])):
        out = model.predict(g, np.full((5, g.n), 0.4))
        assert out.shape == (g.n, 4)
        assert np.all(np.isfinite(out))
