import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clustermatch.data import (
    ConfigError,
    DiscoveryConfig,
    EmbeddingSet,
    FormatError,
    load_config,
    load_embeddings,
    save_embeddings,
)


def cef_bytes(n, d, has_labels, vectors, labels=b""):
    return b"CEF1" + struct.pack("<IIB", n, d, has_labels) + vectors + labels


def test_load_identity_round_trip(tmp_path):
    raw = cef_bytes(2, 2, 0, np.array([[1, 0], [0, 1]], dtype="<f4").tobytes())
    path = tmp_path / "e.cef"
    path.write_bytes(raw)
    es = load_embeddings(path)
    assert es.count == 2 and es.dim == 2 and es.labels is None
    assert np.array_equal(es.vectors, np.array([[1, 0], [0, 1]], dtype=np.float32))


def test_load_renormalizes_345_vector(tmp_path):
    path = tmp_path / "e.cef"
    path.write_bytes(cef_bytes(1, 2, 0, np.array([[3, 4]], dtype="<f4").tobytes()))
    es = load_embeddings(path)
    assert np.allclose(es.vectors, [[0.6, 0.8]], atol=1e-7)


def test_bad_magic(tmp_path):
    path = tmp_path / "e.cef"
    path.write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(FormatError, match="bad magic"):
        load_embeddings(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "e.cef"
    path.write_bytes(cef_bytes(3, 4, 0, bytes(8)))
    with pytest.raises(FormatError, match="truncated"):
        load_embeddings(path)


def test_trailing_data_rejected(tmp_path):
    path = tmp_path / "e.cef"
    path.write_bytes(cef_bytes(1, 2, 0, np.array([[1, 0]], dtype="<f4").tobytes()) + b"zz")
    with pytest.raises(FormatError, match="trailing"):
        load_embeddings(path)


def test_zero_norm_row_rejected(tmp_path):
    path = tmp_path / "e.cef"
    path.write_bytes(cef_bytes(2, 2, 0, np.array([[1, 0], [0, 0]], dtype="<f4").tobytes()))
    with pytest.raises(FormatError, match="zero-norm row 1"):
        load_embeddings(path)


def test_save_label_out_of_u32_range(tmp_path):
    es = EmbeddingSet(np.eye(2, dtype=np.float32), np.array([0, 2**33]))
    with pytest.raises(FormatError, match="u32"):
        save_embeddings(es, tmp_path / "e.cef")


def test_round_trip_bit_exact_and_deterministic(tmp_path):
    rng = np.random.default_rng(0)
    v = rng.standard_normal((10, 8))
    es = EmbeddingSet.from_raw(v, rng.integers(0, 4, 10))
    p1, p2 = tmp_path / "a.cef", tmp_path / "b.cef"
    save_embeddings(es, p1)
    back = load_embeddings(p1)
    assert back.vectors.tobytes() == es.vectors.tobytes()
    assert np.array_equal(back.labels, es.labels)
    save_embeddings(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_labels_set_header_flag(tmp_path):
    es = EmbeddingSet(np.eye(3, dtype=np.float32), np.array([0, 1, 2]))
    path = tmp_path / "e.cef"
    save_embeddings(es, path)
    raw = path.read_bytes()
    assert raw[12] == 1
    assert len(raw) == 13 + 4 * 9 + 4 * 3


def test_empty_set_round_trip(tmp_path):
    es = EmbeddingSet(np.zeros((0, 8), dtype=np.float32))
    path = tmp_path / "e.cef"
    save_embeddings(es, path)
    assert len(path.read_bytes()) == 13
    back = load_embeddings(path)
    assert back.count == 0 and back.dim == 8 and back.labels is None


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(1, 12),
    d=st.integers(1, 6),
    labeled=st.booleans(),
    seed=st.integers(0, 2**32 - 1),
)
def test_round_trip_property(tmp_path_factory, n, d, labeled, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, d))
    v[np.linalg.norm(v, axis=1) < 1e-3] = 1.0
    es = EmbeddingSet.from_raw(v, rng.integers(0, 5, n) if labeled else None)
    path = tmp_path_factory.mktemp("rt") / "e.cef"
    save_embeddings(es, path)
    back = load_embeddings(path)
    assert back.vectors.tobytes() == es.vectors.tobytes()
    norms = np.linalg.norm(back.vectors.astype(np.float64), axis=1)
    assert np.abs(norms - 1.0).max() <= 1e-4


def test_csv_with_labels(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("f0,f1,label\n1.0,0.0,3\n3.0,4.0,1\n")
    es = load_embeddings(path)
    assert es.count == 2 and es.dim == 2
    assert np.array_equal(es.labels, [3, 1])
    assert np.allclose(es.vectors[1], [0.6, 0.8], atol=1e-7)


def test_csv_without_labels(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("a,b\n0.0,1.0\n")
    es = load_embeddings(path)
    assert es.labels is None and es.count == 1


def test_csv_requires_header(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("")
    with pytest.raises(FormatError, match="header"):
        load_embeddings(path)


def test_csv_bad_label(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("f0,f1,label\n1.0,0.0,x\n")
    with pytest.raises(FormatError, match="row 0"):
        load_embeddings(path)


def test_config_defaults_match_published_values(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{}")
    cfg = load_config(path)
    assert cfg.tau == 0.3
    assert cfg.lam == 0.1
    assert cfg.batch_size == 32
    assert cfg.iterations == 1000
    assert cfg.lr_head == 0.001
    assert cfg.lr_adapter == 0.0001


def test_config_override_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"tau": 0.5}))
    assert load_config(path).tau == 0.5
    assert load_config(path, {"tau": 0.2}).tau == 0.2


@pytest.mark.parametrize(
    "payload",
    [{"tau": 1.5}, {"tau": 0.0}, {"lambda": -0.1}, {"batch_size": 0}, {"nope": 1}],
)
def test_config_validation(tmp_path, payload):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_json_round_trip_uses_lambda_key():
    d = DiscoveryConfig().to_json_dict()
    assert "lambda" in d and "lam" not in d


def test_embedding_set_validates_shape_and_labels():
    with pytest.raises(ValueError):
        EmbeddingSet(np.ones((2, 2), dtype=np.float32))  # rows not unit norm
    with pytest.raises(ValueError):
        EmbeddingSet(np.eye(2, dtype=np.float32), np.array([0]))
    with pytest.raises(ValueError):
        EmbeddingSet(np.eye(2, dtype=np.float32), np.array([-1, 0]))
