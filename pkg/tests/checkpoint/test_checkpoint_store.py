import json
import struct

import numpy as np
import pytest

from checkpoint.model import Checkpoint, CheckpointMeta, MAGIC
from checkpoint.service import HEADER_START, load, materialize_dense, read_header, save
from exceptions import FormatError, SchemaError, UnsupportedMethod
from tinylm.model import LayerKind
from tinylm.network import logits
from tinylm.params import init_params, sparse_mask


def _meta(cfg, step=0):
    return CheckpointMeta(model=cfg, method=cfg.layer_kind.value, step=step, seed=cfg.seed)


def test_round_trip_is_bitwise(tmp_path, kind_cfg, kind_params):
    """Saved tensors load back bit for bit with their metadata."""
    path = save(kind_params, _meta(kind_cfg, step=6), tmp_path / "ckpt.lrl")
    params, meta = load(path)
    assert meta == _meta(kind_cfg, step=6)
    assert list(params) == list(kind_params)
    for key, value in kind_params.items():
        assert params[key].dtype == np.float64
        assert np.array_equal(params[key], value)


def test_special_values_survive(tmp_path, tiny_cfg):
    """Signed zeros and subnormals keep their exact bit patterns."""
    params = init_params(tiny_cfg)
    params["final_norm"] = np.array([-0.0, 5e-324, 1.0, -1e300, 0.0, 2.0, 3.0, 4.0])
    loaded = load(save(params, _meta(tiny_cfg), tmp_path / "c.lrl")).params["final_norm"]
    assert loaded.tobytes() == params["final_norm"].tobytes()


def test_header_reads_without_payload(tmp_path, tiny_cfg):
    """The header parses even when the payload is cut off."""
    path = save(init_params(tiny_cfg), _meta(tiny_cfg, step=2), tmp_path / "c.lrl")
    path.write_bytes(path.read_bytes()[:-64])
    header = read_header(path)
    assert header.step == 2
    assert header.tensors[0].name == "embed"


def test_bad_magic_and_version(tmp_path, tiny_cfg):
    """A wrong magic reports offset 0, an unknown version the version field offset."""
    path = save(init_params(tiny_cfg), _meta(tiny_cfg), tmp_path / "c.lrl")
    data = path.read_bytes()
    path.write_bytes(b"XXXXXXX" + data[len(MAGIC):])
    with pytest.raises(FormatError) as exc_info:
        load(path)
    assert exc_info.value.offset == 0
    path.write_bytes(MAGIC + struct.pack("<I", 99) + data[len(MAGIC) + 4:])
    with pytest.raises(FormatError) as exc_info:
        load(path)
    assert exc_info.value.offset == len(MAGIC)


def test_truncated_payload_reports_offset(tmp_path, tiny_cfg):
    """A short payload fails with the offset where data runs out."""
    path = save(init_params(tiny_cfg), _meta(tiny_cfg), tmp_path / "c.lrl")
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(FormatError) as exc_info:
        load(path)
    assert exc_info.value.offset == len(data) - 8
    path.write_bytes(data[:HEADER_START + 3])
    with pytest.raises(FormatError) as exc_info:
        load(path)
    assert exc_info.value.offset == HEADER_START + 3


def test_corrupt_header_json(tmp_path, tiny_cfg):
    """Garbage header bytes fail at the header start."""
    path = save(init_params(tiny_cfg), _meta(tiny_cfg), tmp_path / "c.lrl")
    data = bytearray(path.read_bytes())
    data[HEADER_START] = ord("?")
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError) as exc_info:
        load(path)
    assert exc_info.value.offset == HEADER_START


def test_negative_dims_are_format_errors(tmp_path, tiny_cfg):
    """A header shape like [-32, -8] keeps its element count but is rejected at the header."""
    path = save(init_params(tiny_cfg), _meta(tiny_cfg), tmp_path / "c.lrl")
    data = path.read_bytes()
    version, header_len = struct.unpack("<IQ", data[len(MAGIC):HEADER_START])
    header = json.loads(data[HEADER_START:HEADER_START + header_len])
    header["tensors"][0]["shape"] = [-dim for dim in header["tensors"][0]["shape"]]
    raw = json.dumps(header).encode("utf-8")
    path.write_bytes(MAGIC + struct.pack("<IQ", version, len(raw)) + raw
                     + data[HEADER_START + header_len:])
    with pytest.raises(FormatError) as exc_info:
        load(path)
    assert exc_info.value.offset == HEADER_START


def test_save_validates_schema(tmp_path, tiny_cfg):
    """Params that do not match the config are not written."""
    params = init_params(tiny_cfg)
    params.pop("head")
    with pytest.raises(SchemaError):
        save(params, _meta(tiny_cfg), tmp_path / "c.lrl")
    assert not (tmp_path / "c.lrl").exists()


def test_dense_view_matches_factored_model(tiny_cfg, tiny_batch):
    """Adapter and SLTrain dense views compute the same logits as the factored model."""
    for kind in (LayerKind.adapter, LayerKind.sltrain):
        cfg = tiny_cfg.with_kind(kind)
        rng = np.random.default_rng(5)
        params = {key: (rng.normal(0.0, 0.05, value.shape) if key.endswith(".B") else value)
                  for key, value in init_params(cfg).items()}
        view = materialize_dense(Checkpoint(params, _meta(cfg)))
        assert view.cfg.layer_kind == LayerKind.dense
        assert np.allclose(logits(view.params, view.cfg, tiny_batch),
                           logits(params, cfg, tiny_batch), atol=1e-10)
        if kind == LayerKind.sltrain:
            key = "layers.0.w_up"
            expected = params[f"{key}.B"] @ params[f"{key}.A"] + params[f"{key}.S"] * sparse_mask(cfg, key)
            assert np.array_equal(view.params[key], expected)


def test_dense_view_passes_dense_through_and_rejects_cola(tiny_cfg):
    """Dense params pass through unchanged; CoLA has no dense equivalent."""
    params = init_params(tiny_cfg)
    view = materialize_dense(Checkpoint(params, _meta(tiny_cfg)))
    assert all(np.array_equal(view.params[k], params[k]) for k in params)
    cola = tiny_cfg.with_kind(LayerKind.cola)
    with pytest.raises(UnsupportedMethod) as exc_info:
        materialize_dense(Checkpoint(init_params(cola), _meta(cola)))
    assert exc_info.value.detail["method"] == "cola"
