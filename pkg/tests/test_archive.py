import struct

import numpy as np
import pytest

from conftest import random_clip, toy_config

from avfusion.archive import MAGIC, VERSION, from_bytes, load_model, load_model_with_metadata, save_model, to_bytes
from avfusion.errors import CorruptionError, FormatError
from avfusion.model import Model, ModelConfig, forward
from avfusion.whiten import pca_whiten_fit


@pytest.fixture
def whitened_model(rng):
    model = Model.create(toy_config(), seed=3)
    model.whiten = {"audio": pca_whiten_fit(rng.standard_normal((30, 4)), 2)}
    return model


def test_round_trip_is_bit_exact(tmp_path, whitened_model):
    path = tmp_path / "m.avfm"
    save_model(whitened_model, path, {"note": "x", "run": 2})
    back, meta = load_model_with_metadata(path)
    assert meta == {"note": "x", "run": 2}
    assert back.config == whitened_model.config and back.seed == whitened_model.seed
    assert list(back.params) == list(whitened_model.params)
    for k, v in whitened_model.params.items():
        assert back.params[k].dtype == np.float64 and back.params[k].tobytes() == v.tobytes()
    w0, w1 = whitened_model.whiten["audio"], back.whiten["audio"]
    assert w0.mean.tobytes() == w1.mean.tobytes() and w0.projection.tobytes() == w1.projection.tobytes()


def test_posterior_bits_survive_round_trip(tmp_path, rng):
    model = Model.create(toy_config(), seed=8)
    clip = random_clip(rng, label=1)
    save_model(model, tmp_path / "m.avfm")
    before, _ = forward(model, clip)
    after, _ = forward(load_model(tmp_path / "m.avfm"), clip)
    assert before.tobytes() == after.tobytes()


def test_serialization_is_deterministic(whitened_model):
    assert to_bytes(whitened_model, {"a": 1}) == to_bytes(whitened_model.copy(), {"a": 1})


def test_every_single_byte_corruption_is_detected(whitened_model):
    data = to_bytes(whitened_model)
    hlen = struct.unpack_from("<8sHI", data)[2]
    for pos in range(14, len(data)):
        bad = bytearray(data)
        bad[pos] ^= 0x5A
        with pytest.raises(CorruptionError):
            from_bytes(bytes(bad))
    assert len(data) > 14 + hlen + 4


def test_payload_corruption_has_corruption_exit_code(tmp_path, whitened_model):
    path = tmp_path / "m.avfm"
    save_model(whitened_model, path)
    raw = bytearray(path.read_bytes())
    raw[-3] ^= 1
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptionError) as err:
        load_model(path)
    assert err.value.exit_code == 5


@pytest.mark.parametrize("cut", [3, 12, 40, -1])
def test_truncation_is_corruption(whitened_model, cut):
    data = to_bytes(whitened_model)
    with pytest.raises(CorruptionError):
        from_bytes(data[:cut])


def test_bad_magic_and_version_are_format_errors(whitened_model):
    data = to_bytes(whitened_model)
    with pytest.raises(FormatError) as err:
        from_bytes(b"NOTMODEL" + data[8:])
    assert type(err.value) is FormatError and err.value.exit_code == 4
    bumped = data[:8] + struct.pack("<H", VERSION + 1) + data[10:]
    with pytest.raises(FormatError, match="version"):
        from_bytes(bumped)
    assert data.startswith(MAGIC)


def test_default_config_archive_lists_seven_embeddings_of_length_eight(tmp_path):
    model = Model.create(ModelConfig(shape_dim=5, audio_dim=6), seed=1)
    save_model(model, tmp_path / "d.avfm")
    data = (tmp_path / "d.avfm").read_bytes()
    header = data[14 : 14 + struct.unpack_from("<8sHI", data)[2]].decode()
    assert '"dims":[7,8],"name":"percep.E"' in header
    assert load_model(tmp_path / "d.avfm").params["percep.E"].shape == (7, 8)
