import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_dataset
from rankbias.datagen import generate, paper_dgp, write_csv
from rankbias.ingest import (
    ColumnMapping,
    DataValidationError,
    SplitSpec,
    load_csv,
    parse_split,
    split,
)

CRITEO_FEATURES = tuple(f"f{j}" for j in range(12))


def write_criteo(path, n, treated, seed=0, corrupt=None):
    rng = np.random.default_rng(seed)
    w = np.zeros(n, int)
    w[rng.choice(n, treated, replace=False)] = 1
    with open(path, "w") as fh:
        fh.write(",".join(CRITEO_FEATURES) + ",treatment,conversion,visit,exposure\n")
        for i in range(n):
            feats = ",".join(f"{v:.6f}" for v in rng.random(12))
            conv = str(int(rng.random() < 0.1))
            if corrupt and corrupt[0] == i + 1:
                conv = corrupt[1]
            fh.write(f"{feats},{w[i]},{conv},0,1\n")
    return w


def criteo_mapping(**kw):
    return ColumnMapping(CRITEO_FEATURES, "treatment", "conversion", **kw)


def test_criteo_format_estimates_p(tmp_path):
    path = tmp_path / "c.csv"
    write_criteo(path, 1000, 850)
    d = load_csv(path, criteo_mapping())
    assert d.n == 1000 and d.n_features == 12
    assert d.treatment_probability == pytest.approx(0.85)
    assert not d.has_ground_truth


def test_known_p_is_used(tmp_path):
    path = tmp_path / "c.csv"
    write_criteo(path, 100, 50)
    assert load_csv(path, criteo_mapping(treatment_probability=0.85)).treatment_probability == 0.85


@pytest.mark.parametrize("chunk_rows", [3, 200_000])
def test_bad_outcome_names_row(tmp_path, chunk_rows):
    path = tmp_path / "c.csv"
    write_criteo(path, 20, 10, corrupt=(7, "2"))
    with pytest.raises(DataValidationError, match="row 7") as err:
        load_csv(path, criteo_mapping(), chunk_rows=chunk_rows)
    assert err.value.row == 7 and err.value.column == "conversion"


@pytest.mark.parametrize("chunk_rows", [4, 200_000])
def test_non_numeric_value_names_row_and_column(tmp_path, chunk_rows):
    path = tmp_path / "c.csv"
    path.write_text("a,b,treatment,outcome\n1,2,0,1\n3,4,1,0\n5,x7,1,1\n7,8,0,0\n")
    with pytest.raises(DataValidationError, match="row 3, column 'b'") as err:
        load_csv(path, ColumnMapping(("a", "b")), chunk_rows=chunk_rows)
    assert err.value.row == 3


def test_missing_value_rejected(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("a,treatment,outcome\n1,0,1\n,1,0\n")
    with pytest.raises(DataValidationError, match="row 2"):
        load_csv(path, ColumnMapping(("a",)))


def test_missing_column(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("a,treatment,outcome\n1,0,1\n")
    with pytest.raises(DataValidationError, match="missing column"):
        load_csv(path, ColumnMapping(("a", "z")))


@pytest.mark.parametrize("text", ["", "a,treatment,outcome\n"])
def test_empty_file(tmp_path, text):
    path = tmp_path / "c.csv"
    path.write_text(text)
    with pytest.raises(DataValidationError, match="empty"):
        load_csv(path, ColumnMapping(("a",)))


def test_single_arm_cannot_estimate_p(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("a,treatment,outcome\n1,1,1\n2,1,0\n")
    with pytest.raises(DataValidationError):
        load_csv(path, ColumnMapping(("a",)))


def test_mapping_validation():
    with pytest.raises(ValueError):
        ColumnMapping(("a", "a"))
    with pytest.raises(ValueError):
        ColumnMapping(())
    with pytest.raises(ValueError):
        ColumnMapping(("a",), treatment_probability=1.0)


def test_round_trip(tmp_path):
    d = generate(paper_dgp(seed=3))
    path = tmp_path / "d.csv"
    write_csv(d, path, ground_truth=False)
    back = load_csv(path, ColumnMapping(("f0",)))
    np.testing.assert_array_equal(back.features, d.features)
    np.testing.assert_array_equal(back.treatment, d.treatment)
    np.testing.assert_array_equal(back.outcome, d.outcome)


def test_no_final_newline_and_spaces(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("a, treatment, outcome\n1.5, 0, 1\n2.5, 1, 0")
    d = load_csv(path, ColumnMapping(("a",)))
    np.testing.assert_array_equal(d.features[:, 0], [1.5, 2.5])


def test_split_sizes_small():
    d = make_dataset(np.arange(10.0), [0, 1] * 5, [0] * 10)
    parts = split(d, SplitSpec(0.1, 0.1, 0.8, seed=1))
    assert [p.n for p in parts] == [1, 1, 8]


def test_split_deterministic():
    d = make_dataset(np.arange(100.0), [0, 1] * 50, [0] * 100)
    a = split(d, SplitSpec(seed=4))
    b = split(d, SplitSpec(seed=4))
    c = split(d, SplitSpec(seed=5))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.features, y.features)
    assert not np.array_equal(a[2].features, c[2].features)


def test_split_treated_share():
    d = generate(paper_dgp(n_observations=100_000, seed=2))
    share = d.treatment.mean()
    for part in split(d, SplitSpec(seed=3)):
        se = math.sqrt(share * (1 - share) / part.n)
        assert abs(part.treatment.mean() - share) <= 3 * se


@settings(max_examples=60, deadline=None)
@given(n=st.integers(10, 500), a=st.floats(0.01, 0.5), b=st.floats(0.01, 0.45), seed=st.integers(0, 2**64 - 1))
def test_split_is_a_partition(n, a, b, seed):
    spec = SplitSpec(a, b, 1.0 - a - b, seed)
    d = make_dataset(np.arange(n, dtype=float), [0, 1] * (n // 2) + [0] * (n % 2), [0] * n)
    try:
        parts = split(d, spec)
    except ValueError:
        return  # a part would be empty at this n
    ids = np.concatenate([p.features[:, 0] for p in parts])
    np.testing.assert_array_equal(np.sort(ids), np.arange(n))
    for p, frac in zip(parts, (a, b, 1 - a - b)):
        assert abs(p.n - frac * n) <= 1 + 1e-9


@pytest.mark.parametrize("fr", [(0.5, 0.5, 0.0), (0.2, 0.2, 0.5), (-0.1, 0.3, 0.8)])
def test_split_spec_validation(fr):
    with pytest.raises(ValueError):
        SplitSpec(*fr)


def test_parse_split():
    assert parse_split("0.1,0.1,0.8", seed=3) == SplitSpec(0.1, 0.1, 0.8, 3)
    with pytest.raises(ValueError):
        parse_split("0.5,0.5")


def test_split_too_small():
    with pytest.raises(ValueError):
        split(make_dataset(np.arange(9.0), [0, 1] * 4 + [0], [0] * 9), SplitSpec())
