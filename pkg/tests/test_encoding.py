import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdelm.encoding import (
    MISSING,
    OTHER,
    EncodingSchema,
    ProjectionSpec,
    RawRecord,
    VariableSpec,
    encode_bow,
    encode_dataset,
    encode_log_age,
    encode_onehot,
    encode_presence,
    fit_schema,
    make_projection,
    project,
    read_feature_csv,
    read_records,
    tokenize,
)
from mdelm.errors import ValidationError

FIXTURES = Path(__file__).parent / "fixtures"


def recs(*dicts):
    return [RawRecord(f"r{i}", d) for i, d in enumerate(dicts)]


# --- fit_schema ------------------------------------------------------------


def test_publisher_top_k_plus_other():
    pubs = [f"pub{i:03d}" for i in range(150)]
    # pubN appears (150 - N) times, so the order by frequency is pub000, pub001, ...
    rows = [{"publisher": p} for i, p in enumerate(pubs) for _ in range(150 - i)]
    schema = fit_schema(recs(*rows), [{"name": "publisher", "kind": "onehot", "max_categories": 100}])
    vocab = schema.variables[0].vocabulary
    assert len(vocab) == 101
    assert vocab[:100] == pubs[:100]
    assert vocab[-1] == OTHER


def test_all_missing_column_gets_missing_only():
    schema = fit_schema(recs({"x": None}, {}, {"x": ""}), [{"name": "x", "kind": "onehot"}])
    assert schema.variables[0].vocabulary == [MISSING]


def test_frequency_ties_break_lexicographically():
    schema = fit_schema(recs({"type": "journal"}, {"type": "conference"}),
                        [{"name": "type", "kind": "onehot"}])
    assert schema.variables[0].vocabulary == ["conference", "journal"]


def test_frequency_beats_lexicographic():
    schema = fit_schema(recs({"t": "b"}, {"t": "b"}, {"t": "a"}), [{"name": "t", "kind": "onehot"}])
    assert schema.variables[0].vocabulary == ["b", "a"]


def test_fit_errors():
    with pytest.raises(ValidationError):
        fit_schema(recs({"a": 1}), [{"name": "a", "kind": "onehot"}, {"name": "a", "kind": "presence"}])
    with pytest.raises(ValidationError):
        fit_schema(recs({"a": 1}), [{"name": "a", "kind": "onehot", "max_categories": 0}])
    with pytest.raises(ValidationError):
        fit_schema([], [{"name": "a", "kind": "onehot"}])


# --- per-kind encoders -----------------------------------------------------


def test_encode_onehot_examples():
    types = ["journal", "conference", "book series"]
    assert encode_onehot("journal", types).tolist() == [1, 0, 0]
    assert encode_onehot(None, types, include_missing=True).tolist() == [0, 0, 0, 1]
    assert encode_onehot("journal", ["journal"]).tolist() == [1]


def test_encode_onehot_unknown_routing():
    assert encode_onehot("zzz", ["a", OTHER, MISSING]).tolist() == [0, 1, 0]
    assert encode_onehot("zzz", ["a", MISSING]).tolist() == [0, 1]
    assert encode_onehot("zzz", ["a", "b"]).tolist() == [0, 0]
    with pytest.raises(ValidationError):
        encode_onehot("a", [])


def test_encode_presence():
    assert encode_presence("0028-0836") == 1
    assert encode_presence(None) == 0
    assert encode_presence("") == 0


def test_encode_log_age():
    v, f = encode_log_age(2014, 2015)
    assert v == pytest.approx(0.6931, abs=1e-4) and f == 0
    assert encode_log_age(2015, 2015) == (0.0, 0.0)
    assert encode_log_age(None, 2015) == (0.0, 1.0)
    with pytest.raises(ValidationError):
        encode_log_age(2016, 2015)


def test_encode_bow():
    vocab = ["journal", "applied"]
    assert encode_bow("Journal of Applied Journal Studies", vocab).tolist() == [2, 1]
    assert encode_bow(None, vocab).tolist() == [0, 0]
    assert encode_bow("zebra quagga", vocab).tolist() == [0, 0]


def test_tokenize_rules():
    assert tokenize("A Journal-of  X-Ray's 3D") == ["journal", "of", "ray", "3d"]


# --- projection ------------------------------------------------------------


def test_projection_title_shape_and_values():
    spec = ProjectionSpec(3700, 30, seed=1)
    P = make_projection(spec)
    assert P.shape == (30, 3700)
    s = 1.0 / math.sqrt(spec.density * 30)
    assert set(np.unique(P)) <= {-s, 0.0, s}
    assert spec.density == pytest.approx(1 / math.sqrt(3700))
    # fraction of nonzeros close to the requested density
    assert np.mean(P != 0) == pytest.approx(spec.density, rel=0.15)


def test_projection_zero_vector_and_mismatch():
    P = make_projection(ProjectionSpec(50, 10, seed=0))
    assert np.all(project(np.zeros(50), P) == 0)
    with pytest.raises(ValidationError):
        project(np.zeros(49), P)


def test_projection_norm_preservation_monte_carlo():
    P = make_projection(ProjectionSpec(3700, 30, seed=3))
    rng = np.random.default_rng(11)
    V = rng.normal(size=(100, 3700))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    ratio = np.sum(project(V, P) ** 2, axis=1)
    assert 0.7 <= ratio.mean() <= 1.3


def test_projection_deterministic():
    a = make_projection(ProjectionSpec(200, 20, seed=9))
    b = make_projection(ProjectionSpec(200, 20, seed=9))
    c = make_projection(ProjectionSpec(200, 20, seed=10))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_projection_spec_validation():
    with pytest.raises(ValidationError):
        ProjectionSpec(10, 20)
    with pytest.raises(ValidationError):
        ProjectionSpec(10, 5, density=0.0)


# --- dataset encoding ------------------------------------------------------


@pytest.fixture(scope="module")
def golden():
    records = read_records(FIXTURES / "raw_records.csv")
    spec = json.loads((FIXTURES / "encode_spec.json").read_text())
    schema = fit_schema(records, spec["variables"], label=spec["label"])
    return records, schema


def test_golden_matrix_bit_exact(golden):
    records, schema = golden
    fm = encode_dataset(records, schema)
    ref = read_feature_csv(FIXTURES / "golden_encoded.csv")
    assert fm.feature_names == ref.feature_names
    assert fm.sample_ids == ref.sample_ids
    assert np.array_equal(fm.labels, ref.labels)
    assert np.array_equal(fm.values, ref.values)


def test_golden_schema_round_trip(golden, tmp_path):
    _, schema = golden
    saved = EncodingSchema.load(FIXTURES / "golden_schema.json")
    assert saved.to_dict() == schema.to_dict()
    path = tmp_path / "s.json"
    saved.save(path)
    assert path.read_text() == (FIXTURES / "golden_schema.json").read_text()


def test_golden_hand_computed_columns(golden):
    """Non-projection columns checked against values worked out by hand."""
    records, schema = golden
    fm = encode_dataset(records, schema)
    col = {n: i for i, n in enumerate(fm.feature_names)}

    def row(rid):
        return fm.values[fm.sample_ids.index(rid)]

    expected = {
        "j1": {"website=fi": 1, "type=journal": 1, "issn_print": 1, "issn_online": 1,
               "start_year:log_age": math.log(26), "country=Finland": 1,
               "publisher=Elsevier": 1, "language=English": 1, "erih=A": 1,
               "sjr": 2.5, "snip": 1.8, "ipp": 3.1, "field=natural sciences": 1,
               "field=engineering": 1, "panel=7": 1},
        "j2": {"website=se": 1, "type=journal": 1, "issn_print": 1,
               "start_year:log_age": math.log(2), "country=Sweden": 1,
               "publisher=<other>": 1, "language=English": 1, "erih=B": 1,
               "sjr:missing": 1, "snip": 0.4, "ipp:missing": 1,
               "field=humanities": 1, "panel=20": 1},
        "c1": {"website=<missing>": 1, "type=conference": 1, "start_year:missing": 1,
               "country=<missing>": 1, "publisher=ACM": 1, "language=English": 1,
               "erih=<missing>": 1, "sjr:missing": 1, "snip:missing": 1,
               "ipp:missing": 1, "field=natural sciences": 1, "panel=3": 1, "isbn": 2},
        "b1": {"website=fi": 1, "type=book series": 1, "issn_print": 1,
               "country=Finland": 1, "publisher=Elsevier": 1, "language=Finnish": 1,
               "erih=<missing>": 1, "sjr:missing": 1, "snip:missing": 1,
               "ipp:missing": 1, "panel=<missing>": 1, "isbn": 1},
        "x1": {"website=<missing>": 1, "type=journal": 1, "start_year:missing": 1,
               "country=<missing>": 1, "language=<missing>": 1, "erih=<missing>": 1,
               "sjr:missing": 1, "snip:missing": 1, "ipp:missing": 1,
               "panel=<missing>": 1},
    }
    for rid, nonzero in expected.items():
        r = row(rid)
        for name, i in col.items():
            if name.startswith("title:"):
                continue
            want = nonzero.get(name, 0.0)
            assert r[i] == want, (rid, name)
    assert fm.labels.tolist() == [3, 1, 2, 0, 1]


def test_golden_title_projection(golden):
    records, schema = golden
    fm = encode_dataset(records, schema)
    title = schema.variables[0]
    assert title.projection.out_dim == 30 and title.projection.in_dim == 31
    P = make_projection(title.projection)
    vocab = title.vocabulary
    counts = np.zeros(len(vocab))
    for tok in "journal of applied quantum materials research letters and rapid communications".split():
        counts[vocab.index(tok)] += 1
    cols = [i for i, n in enumerate(fm.feature_names) if n.startswith("title:")]
    assert np.array_equal(fm.values[0, cols], P @ counts)
    assert np.all(fm.values[4, cols] == 0)  # x1 has no title


def test_all_missing_record_row():
    spec = [
        {"name": "t", "kind": "onehot", "include_missing_slot": True},
        {"name": "y", "kind": "log_age", "reference_year": 2015},
        {"name": "r", "kind": "real_with_indicator"},
        {"name": "p", "kind": "presence"},
    ]
    records = recs({"t": "a", "y": 2000, "r": 1.5, "p": "x"}, {})
    fm = encode_dataset(records, fit_schema(records, spec))
    assert fm.feature_names == ["t=a", "t=<missing>", "y:log_age", "y:missing", "r", "r:missing", "p"]
    assert fm.values[1].tolist() == [0, 1, 0, 1, 0, 1, 0]


def test_empty_record_list():
    schema = fit_schema(recs({"t": "a"}), [{"name": "t", "kind": "onehot"}])
    fm = encode_dataset([], schema)
    assert fm.values.shape == (0, 1)


def test_type_contradiction_names_record():
    records = recs({"r": 1.0})
    schema = fit_schema(records, [{"name": "r", "kind": "real_with_indicator"}])
    with pytest.raises(ValidationError, match="bad"):
        encode_dataset([RawRecord("bad", {"r": "not-a-number"})], schema)


def test_duplicate_feature_names_rejected():
    with pytest.raises(ValidationError):
        EncodingSchema([VariableSpec("a=b", "presence"),
                        VariableSpec("a", "onehot", vocabulary=["b"])])


def test_record_id_required():
    with pytest.raises(ValidationError):
        RawRecord("", {})


def test_read_records_jsonl(tmp_path):
    p = tmp_path / "r.jsonl"
    p.write_text('{"id": "a", "x": 1}\n{"id": "b", "x": null}\n')
    rs = read_records(p)
    assert [r.id for r in rs] == ["a", "b"]
    p.write_text('{"id": "a"}\n{"id": "a"}\n')
    with pytest.raises(ValidationError, match="duplicate"):
        read_records(p)


# --- properties ------------------------------------------------------------

cats = st.sampled_from(["a", "b", "c", "d", None, ""])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.fixed_dictionaries({"t": cats, "m": st.lists(st.sampled_from("xyz"), max_size=3)}),
                min_size=1, max_size=20))
def test_onehot_rows_sum_to_one_and_deterministic(rows):
    records = recs(*rows)
    spec = [{"name": "t", "kind": "onehot", "include_missing_slot": True},
            {"name": "m", "kind": "multihot"}]
    schema = fit_schema(records, spec)
    a = encode_dataset(records, schema)
    b = encode_dataset(records, fit_schema(records, spec))
    assert np.array_equal(a.values, b.values)
    width = len(schema.variables[0].vocabulary)
    assert np.all(a.values[:, :width].sum(axis=1) == 1)
    assert np.all(a.values[:, width:].sum(axis=1) >= 0)
    assert set(np.unique(a.values)) <= {0.0, 1.0}


@settings(max_examples=30, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(-1e6, 1e6)), min_size=1, max_size=15))
def test_real_with_indicator_pairs(values):
    records = recs(*[{"v": v} for v in values])
    fm = encode_dataset(records, fit_schema(records, [{"name": "v", "kind": "real_with_indicator"}]))
    assert fm.feature_names == ["v", "v:missing"]
    for v, (x, flag) in zip(values, fm.values):
        assert flag == (1.0 if v is None else 0.0)
        assert x == (0.0 if v is None else v)
