import json
import math

import numpy as np
import pytest

from openset import io
from openset.core import InvalidInputError, ScoreMatrix, ValidationError, make_dataset
from openset.evaluation import CurvePoint
from openset.evm import EvmConfig, train
from openset.protocol import build_partition, gallery_templates, training_set
from openset.subspace import fit_subspace
from openset.synthetic import SyntheticSpec, generate_synthetic

SMALL = SyntheticSpec(dimension=6, known=4, known_unknown=3, unknown_unknown=3, seed=2)


def test_fmt_round_trips_doubles():
    rng = np.random.default_rng(0)
    for x in np.concatenate([rng.standard_normal(500), rng.standard_normal(500) * 1e-200, [0.1, 1 / 3]]):
        assert float(io.fmt(x)) == x
    with pytest.raises(InvalidInputError):
        io.fmt(math.nan)


def test_dumps():
    doc = {"a": [1, 2.5, None, True], "b": {"c": "x\"y"}, "d": [], "e": [[1, 2], [3, 4]]}
    text = io.dumps(doc)
    assert json.loads(text) == doc
    assert '"a": [1, 2.5, null, true]' in text
    assert io.dumps(0.1) == "0.10000000000000001"
    with pytest.raises(TypeError):
        io.dumps(object())


def test_feature_table_examples(tmp_path):
    f = tmp_path / "t.csv"
    f.write_text("identity,image,f0,f1\na,1,1.0,0.0\nb,1,0.0,2e-3\n")
    d = io.read_feature_table(f)
    assert len(d) == 2 and d.dimension == 2
    assert d.records[1].feature[1] == 0.002

    f.write_text("identity,image,f0,f1\na,1,1.0,0.0\nb,1,0.0\n")
    with pytest.raises(io.ParseError) as err:
        io.read_feature_table(f)
    assert err.value.line == 3 and "line 3" in str(err.value)

    f.write_text("identity,image,f0,f1\na,1,1.0,0.0\na,1,0.0,1.0\n")
    with pytest.raises(ValidationError, match="duplicate"):
        io.read_feature_table(f)


@pytest.mark.parametrize(
    "text",
    [
        "",
        "id,img,f0\n",
        "identity,image\n",
        "identity,image,f0\na,x,1.0\n",
        "identity,image,f0\na,1,abc\n",
        "identity,image,f0\n,1,1.0\n",
        "identity,image,f0\n",
    ],
)
def test_feature_table_parse_errors(text):
    with pytest.raises(io.ParseError):
        io.parse_feature_table(text)


def test_unchecked_parse_keeps_bad_records():
    d = io.parse_feature_table("identity,image,f0\na,1,0\na,1,nan\n", check=False)
    assert len(d) == 2


def test_feature_table_round_trip_is_byte_identical(tmp_path):
    text = io.format_feature_table(generate_synthetic(SMALL))
    assert io.format_feature_table(io.parse_feature_table(text)) == text
    f = tmp_path / "x.csv"
    f.write_text(text)
    io.write_feature_table(tmp_path / "y.csv", io.read_feature_table(f))
    assert (tmp_path / "y.csv").read_text() == text


def test_identity_with_comma_rejected():
    d = make_dataset([("a,b", 1, [1.0])])
    with pytest.raises(InvalidInputError):
        io.format_feature_table(d)


def test_score_matrix_round_trip(tmp_path):
    m = ScoreMatrix((("a", 4), ("u", 1)), ("a", "b"), [[0.1, 1 / 3], [-0.5, 2e-17]])
    io.write_score_matrix(tmp_path / "s.csv", m)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "identity,image,a,b"
    back = io.read_score_matrix(tmp_path / "s.csv")
    assert back.probe_keys == m.probe_keys and back.gallery_subjects == m.gallery_subjects
    assert np.array_equal(back.scores, m.scores)


def test_curve_writers(tmp_path):
    io.write_cmc(tmp_path / "c.csv", [CurvePoint(1, 0.5), CurvePoint(2, 1.0)])
    assert (tmp_path / "c.csv").read_text() == "rank,cmc\n1,0.5\n2,1\n"
    io.write_dir(tmp_path / "d.csv", [CurvePoint(0.25, 0.5, 0.9)])
    assert (tmp_path / "d.csv").read_text() == "far,dir\n0.25,0.5\n"
    io.write_roc(tmp_path / "r.csv", [CurvePoint(0.0, 0.0, 1.0)])
    assert (tmp_path / "r.csv").read_text() == "fmr,tmr,threshold\n0,0,1\n"


def test_partition_round_trip(tmp_path):
    p = build_partition(generate_synthetic(SMALL))
    io.write_partition(tmp_path / "p.json", p)
    assert io.read_partition(tmp_path / "p.json") == p


def test_subspace_round_trip(tmp_path):
    d = generate_synthetic(SMALL)
    p = build_partition(d)
    t = training_set(d, p)
    m = fit_subspace([p.training_label(r.key) for r in t], [r.feature for r in t], 0.99)
    io.write_subspace(tmp_path / "m.json", m)
    back = io.read_subspace(tmp_path / "m.json")
    assert np.array_equal(back.matrix, m.matrix) and np.array_equal(back.mean, m.mean)
    assert np.array_equal(back.pca.components, m.pca.components)
    assert np.array_equal(back.lda.projection, m.lda.projection)
    io.write_subspace(tmp_path / "m2.json", back)
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()


@pytest.mark.parametrize("fusion", ["max", "avg"])
def test_evm_round_trip(tmp_path, fusion):
    d = generate_synthetic(SMALL)
    p = build_partition(d)
    model = train(gallery_templates(d, p), training_set(d, p), EvmConfig(tail_size=5, fusion=fusion))
    io.write_evm(tmp_path / "e.json", model)
    back = io.read_evm(tmp_path / "e.json")
    assert back.config == model.config
    assert [s.fits for s in back.subjects] == [s.fits for s in model.subjects]
    assert all(np.array_equal(a.anchors, b.anchors) for a, b in zip(back.subjects, model.subjects))
    doc = json.loads((tmp_path / "e.json").read_text())
    first = doc["subjects"]["known0000"][0]
    assert set(first) == {"feature", "shape", "scale", "tail_size_used", "clamped"}


def test_malformed_models(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(io.ParseError):
        io.read_evm(tmp_path / "bad.json")
    (tmp_path / "empty.json").write_text("{}")
    with pytest.raises(io.ParseError):
        io.read_subspace(tmp_path / "empty.json")
    with pytest.raises(io.ParseError):
        io.read_evm(tmp_path / "empty.json")
