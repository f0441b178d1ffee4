import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdelm.datasets import (
    Dataset,
    SynthSpec,
    load_csv,
    save_csv,
    save_truth,
    subsample_focus,
    synth_blobs,
)
from mdelm.errors import ValidationError

COUNTS = (5743, 20503, 2329, 668)


def table_dataset():
    labels = np.repeat(np.arange(4), COUNTS)
    n = labels.size
    return Dataset(np.zeros((n, 0)), labels, 4, [str(i) for i in range(n)], [])


def test_csv_three_rows(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("id,label,a,b\nx,0,1.5,2\ny,1,0,0\nz,3,-1,1e-3\n")
    ds = load_csv(p)
    assert ds.n_samples == 3 and ds.n_classes == 4
    assert ds.feature_names == ["a", "b"]
    assert ds.X[2, 1] == 1e-3


def test_csv_label_out_of_range_names_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("id,label,a\nx,0,1\ny,7,2\n")
    with pytest.raises(ValidationError, match="row 2"):
        load_csv(p, n_classes=4)


def test_csv_missing_label_and_bad_cell(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("id,a\nx,1\n")
    with pytest.raises(ValidationError):
        load_csv(p)
    p.write_text("id,label,a\nx,0,abc\n")
    with pytest.raises(ValidationError):
        load_csv(p)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.integers(1, 6))
def test_csv_round_trip(tmp_path_factory, seed, n, d):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.normal(size=(n, d)) * 10.0 ** rng.integers(-5, 5, size=d), rng.integers(0, 3, n),
                 3, [f"id{i}" for i in range(n)], [f"c{j}" for j in range(d)])
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    save_csv(ds, p)
    assert load_csv(p, n_classes=3) == ds


def test_subsample_table_counts():
    sub = subsample_focus(table_dataset(), 3, 900, seed=0)
    assert sub.n_samples == 1568
    assert np.sum(sub.labels == 3) == 668


def test_subsample_full_and_seeds():
    ds = table_dataset().take(np.arange(0, 29243, 50))
    other = int(np.sum(ds.labels != 3))
    focus_n = int(np.sum(ds.labels == 3))
    full = subsample_focus(ds, 3, other, seed=1)
    assert full == ds
    a = subsample_focus(ds, 3, 100, seed=1)
    b = subsample_focus(ds, 3, 100, seed=2)
    fa = [i for i, l in zip(a.ids, a.labels) if l == 3]
    fb = [i for i, l in zip(b.ids, b.labels) if l == 3]
    assert fa == fb and len(fa) == focus_n
    assert set(a.ids) != set(b.ids)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 40), st.booleans())
def test_subsample_invariants(seed, n_other, stratified):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, 60)
    labels[0] = 2
    ds = Dataset(rng.normal(size=(60, 2)), labels, 4, [f"r{i}" for i in range(60)], ["a", "b"])
    n_other = min(n_other, int(np.sum(labels != 2)))
    sub = subsample_focus(ds, 2, n_other, seed, stratified=stratified)
    assert len(set(sub.ids)) == sub.n_samples
    assert {i for i, l in zip(ds.ids, labels) if l == 2} <= set(sub.ids)
    assert int(np.sum(sub.labels != 2)) == n_other


def test_subsample_errors():
    ds = table_dataset().take(np.arange(10))
    with pytest.raises(ValidationError):
        subsample_focus(ds, 3, 1, seed=0)
    with pytest.raises(ValidationError):
        subsample_focus(table_dataset(), 3, 10**6, seed=0)


def test_synth_counts_and_flips():
    res = synth_blobs(SynthSpec(300, 4, 20, n_noise=30, flip_fraction=0.03, seed=7))
    assert len(res.hidden_flips) == 36
    assert res.clean.X.shape == (1200, 50)
    f = np.array(res.hidden_flips)
    assert np.all(res.flipped.labels[f] != res.clean.labels[f])
    mask = np.ones(1200, bool)
    mask[f] = False
    assert np.array_equal(res.flipped.labels[mask], res.clean.labels[mask])


def test_synth_zero_flip_and_determinism():
    res = synth_blobs(SynthSpec(20, 3, 4, n_noise=2, flip_fraction=0.0, seed=1))
    assert res.flipped == res.clean and res.hidden_flips == []
    a = synth_blobs(SynthSpec(20, 3, 4, seed=5))
    b = synth_blobs(SynthSpec(20, 3, 4, seed=5))
    assert a.flipped == b.flipped and a.hidden_flips == b.hidden_flips


def test_synth_spec_bounds():
    with pytest.raises(ValidationError):
        SynthSpec(flip_fraction=0.6)
    with pytest.raises(ValidationError):
        SynthSpec(n_classes=1)


def test_truth_sidecar(tmp_path):
    res = synth_blobs(SynthSpec(10, 2, 3, n_noise=0, flip_fraction=0.1, seed=2))
    p = tmp_path / "t.json"
    save_truth(res, p)
    doc = json.loads(p.read_text())
    assert doc["hidden_flip_ids"] == res.hidden_flip_ids
    assert doc["spec"]["seed"] == 2
