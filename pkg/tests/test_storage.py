import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from playact.datamodel import ActivationMap, InstrumentVocabulary, KeyPointAnnotationSet, SoundActivation
from playact.exceptions import FormatError, SchemaError
from playact.storage import (annotations_from_dict, annotations_to_dict, decode_tensor,
                             encode_tensor, load_activation, load_annotations, load_state_dict,
                             load_tensor, persist_tensor, save_activation, save_annotations,
                             save_state_dict)


def test_zero_tensor_round_trip(tmp_path):
    x = np.zeros((9, 10, 8, 6), np.float32)
    persist_tensor(x, tmp_path / "z.tnsr")
    y = load_tensor(tmp_path / "z.tnsr")
    assert y.shape == x.shape and y.tobytes() == x.tobytes()


def test_container_layout():
    buf = encode_tensor(np.array([[1.0, 2.0, 3.0]], np.float32))
    assert buf[:4] == b"TNSR"
    assert buf[4:8] == (2).to_bytes(4, "little")
    assert buf[8:16] == (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert np.frombuffer(buf[16:], "<f4").tolist() == [1.0, 2.0, 3.0]


def test_scalar_tensor():
    assert decode_tensor(encode_tensor(np.float32(2.5))).item() == 2.5


def test_truncated_file(tmp_path):
    persist_tensor(np.ones((3, 4)), tmp_path / "t.tnsr")
    data = (tmp_path / "t.tnsr").read_bytes()
    (tmp_path / "t.tnsr").write_bytes(data[:-3])
    with pytest.raises(FormatError):
        load_tensor(tmp_path / "t.tnsr")
    with pytest.raises(FormatError):
        decode_tensor(data[:10])


def test_bad_magic_and_rank():
    with pytest.raises(FormatError):
        decode_tensor(b"XXXX" + bytes(8))
    with pytest.raises(FormatError):
        encode_tensor(np.zeros((1, 1, 1, 1, 1)))
    with pytest.raises(FormatError):
        decode_tensor(b"TNSR" + (5).to_bytes(4, "little") + bytes(20))


@settings(max_examples=40)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
                  elements=st.floats(width=32, allow_nan=True, allow_infinity=True)))
def test_tensor_round_trip_bit_exact(x):
    assert decode_tensor(encode_tensor(x)).tobytes() == x.tobytes()


def _ann():
    return KeyPointAnnotationSet("clip7", frames={0: {}, 3: {"Cello": [(10, 20), (0, 0)]},
                                                  4: {"Cello": [(1, 1)], "Drum": [(255, 255)]}})


def test_annotation_round_trip(tmp_path):
    ann = _ann()
    save_annotations(ann, tmp_path / "a.json")
    assert load_annotations(tmp_path / "a.json") == ann


def test_annotation_json_schema():
    doc = annotations_to_dict(_ann())
    assert set(doc) == {"clip_id", "fps", "frames"}
    assert doc["frames"]["0"] == {}
    assert sorted(doc["frames"]["3"]["Cello"]) == [[0, 0], [10, 20]]


def test_annotation_out_of_bounds():
    doc = {"clip_id": "c", "fps": 1.953125, "frames": {"0": {"Cello": [[300, 10]]}}}
    with pytest.raises(SchemaError, match=r"frames\['0'\]\['Cello'\]\[0\]"):
        annotations_from_dict(doc)
    # a declared frame size moves the bound
    annotations_from_dict(dict(doc, frame_size=[320, 240]))


@pytest.mark.parametrize("doc, where", [
    ({"fps": 1, "frames": {}}, "clip_id"),
    ({"clip_id": "c", "fps": -1, "frames": {}}, "fps"),
    ({"clip_id": "c", "fps": 1, "frames": {"x": {}}}, "frame key"),
    ({"clip_id": "c", "fps": 1, "frames": {"0": {"Cello": [[1]]}}}, "point"),
    ({"clip_id": "c", "fps": 1, "frames": {}, "extra": 1}, "unknown"),
])
def test_annotation_schema_errors(doc, where):
    with pytest.raises(SchemaError, match=where):
        annotations_from_dict(doc)


def test_annotation_unknown_instrument():
    doc = {"clip_id": "c", "fps": 1, "frames": {"0": {"Banjo": [[1, 1]]}}}
    with pytest.raises(SchemaError, match="unknown instrument"):
        annotations_from_dict(doc, vocabulary=InstrumentVocabulary())


def test_annotation_json_syntax_error_reports_line(tmp_path):
    (tmp_path / "bad.json").write_text('{"clip_id": "c",\n "fps": }')
    with pytest.raises(SchemaError, match="line 2"):
        load_annotations(tmp_path / "bad.json")


def test_state_dict_round_trip(tmp_path):
    state = {"w": np.arange(6, dtype=np.float32).reshape(2, 3),
             "n": np.array(17, dtype=np.int64),
             "big": np.zeros((1, 2, 1, 2, 1), np.float32)}
    save_state_dict(state, tmp_path / "s", {"epoch": 3})
    back, manifest = load_state_dict(tmp_path / "s")
    assert manifest["epoch"] == 3
    for k, v in state.items():
        assert back[k].dtype == v.dtype and back[k].shape == v.shape
        assert np.array_equal(back[k], v)


def test_activation_round_trip(tmp_path):
    amap = ActivationMap(np.random.default_rng(0).random((2, 3, 4, 5)), 1.953125, 8, "object")
    save_activation(amap, tmp_path / "a")
    back = load_activation(tmp_path / "a.tnsr")
    assert (back.fps, back.stride, back.modality) == (1.953125, 8, "object")
    assert np.array_equal(back.data, amap.data)
    snd = SoundActivation(np.full((2, 7), 0.25))
    save_activation(snd, tmp_path / "s")
    assert np.array_equal(load_activation(tmp_path / "s").data, snd.data)
    assert json.loads((tmp_path / "s.json").read_text())["kind"] == "sound"
