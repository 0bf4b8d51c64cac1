import numpy as np
import pandas as pd
import pytest

from factor.errors import ParseError, UsageError
from factor.model import CellKind, Dataset, PatternMatrix
from files.patterns import format_pattern, load_pattern, parse_pattern
from files.tables import (draws_frame, export_draws, import_draws, load_dataset, loading_histograms, save_dataset,
                          write_histograms)
from sampler.gibbs import Chain

TWO_FACTOR_GRID = """# two factors, six items
*, *
+, 0
*, *
*, *
*, *
0, +
"""


def test_parse_two_factor_grid(two_factor_pattern):
    pattern = parse_pattern(TWO_FACTOR_GRID)
    assert pattern.same_as(two_factor_pattern)
    assert pattern.anchors() == [[1], [5]]


def test_parse_whitespace_and_fixed_values():
    pattern = parse_pattern("+ 0.4\n* +\n")
    assert pattern.kinds[0, 1] == CellKind.VALUE
    assert pattern.values[0, 1] == 0.4
    assert parse_pattern(format_pattern(pattern)).same_as(pattern)


@pytest.mark.parametrize("text, line, column", [
    ("*, *\n*, x\n", 2, 4),
    ("*, *\n*, *, *\n", 2, 7),
    ("*, *\n*\n", 2, 2),
    ("# nothing\n\n", 1, 1),
])
def test_pattern_errors(text, line, column):
    with pytest.raises(ParseError) as info:
        parse_pattern(text, source="p.txt")
    assert (info.value.line, info.value.column) == (line, column)


def test_load_pattern_missing_file(tmp_path):
    with pytest.raises(UsageError):
        load_pattern(str(tmp_path / "none.txt"))


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_load_dataset_standardizes(tmp_path):
    path = write(tmp_path, "data.csv", "a,b\n1,2\n2,4\n3,9\n")
    data = load_dataset(path)
    assert data.item_names == ("a", "b")
    assert data.standardized
    np.testing.assert_allclose(data.values[:, 0], [-1.0, 0.0, 1.0], atol=1e-12)
    raw = load_dataset(path, standardize_data=False)
    assert not raw.standardized
    np.testing.assert_allclose(raw.values[:, 1], [-3.0, -1.0, 4.0], atol=1e-12)


def test_raw_load_is_centered(tmp_path, rng):
    values = 5.0 + rng.normal(size=(40, 3))
    path = str(tmp_path / "shifted.csv")
    pd.DataFrame(values, columns=["a", "b", "c"]).to_csv(path, index=False)
    raw = load_dataset(path, standardize_data=False)
    np.testing.assert_allclose(raw.values.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(np.cov(raw.values, rowvar=False), np.cov(values, rowvar=False), atol=1e-12)


def test_rows_wider_than_header_are_rejected(tmp_path):
    with pytest.raises(UsageError):
        load_dataset(write(tmp_path, "wide.csv", "a,b\n1,2,3\n2,3,4\n3,4,6\n"))


@pytest.mark.parametrize("text, fragment", [
    ("a,b\n1,2\n2,\n3,4\n", "line 3"),
    ("a,b\n1,2\n2\n3,4\n", "line 3"),
    ("a,b\n1,x\n2,3\n", "non-numeric"),
    ("a,b\n1,2\n", "at least two observations"),
    ("a,b\n1,2\n1,3\n1,4\n", "constant"),
])
def test_load_dataset_rejects_bad_files(tmp_path, text, fragment):
    with pytest.raises(UsageError, match=fragment):
        load_dataset(write(tmp_path, "bad.csv", text))


def test_load_dataset_missing_file(tmp_path):
    with pytest.raises(UsageError, match="no such file"):
        load_dataset(str(tmp_path / "absent.csv"))


def test_save_and_reload_dataset(tmp_path, rng):
    values = rng.normal(size=(5, 2))
    data = Dataset(values - values.mean(axis=0), ("x", "y"))
    path = str(tmp_path / "out" / "data.csv")
    save_dataset(data, path)
    again = load_dataset(path, standardize_data=False)
    assert again.item_names == ("x", "y")
    np.testing.assert_allclose(again.values, data.values, rtol=1e-9, atol=1e-9)


def sample_chains(pattern, rng):
    out = []
    for c in range(2):
        lam = pattern.fill(np.zeros(pattern.shape))[None] + rng.uniform(0.1, 0.9, size=(30, *pattern.shape)) * pattern.free_mask
        phi = np.broadcast_to(np.eye(2), (30, 2, 2)).copy()
        phi[:, 0, 1] = phi[:, 1, 0] = rng.uniform(-0.5, 0.5, size=30)
        out.append(Chain.from_arrays(lam, rng.uniform(0.2, 1.0, size=(30, pattern.p)), phi, rng.normal(size=30),
                                     pattern=pattern, chain_index=c))
    return out


def test_draws_export_and_import(tmp_path, two_factor_pattern, rng):
    chains = sample_chains(two_factor_pattern, rng)
    frame = draws_frame(chains)
    assert list(frame.columns[:4]) == ["chain", "draw", "L[1,1]", "L[1,2]"]
    assert "phi[1,2]" in frame.columns and frame.columns[-1] == "logkernel"
    path = str(tmp_path / "draws.csv")
    export_draws(chains, path)
    back = import_draws(path, two_factor_pattern)
    assert len(back) == 2
    np.testing.assert_allclose(back[1].loadings, chains[1].loadings, rtol=1e-9)
    np.testing.assert_allclose(back[0].phi, chains[0].phi, rtol=1e-9)


def test_import_draws_checks_pattern(tmp_path, two_factor_pattern, rng):
    path = str(tmp_path / "draws.csv")
    export_draws(sample_chains(two_factor_pattern, rng), path)
    with pytest.raises(UsageError, match="loading columns"):
        import_draws(path, PatternMatrix.efa(5, 2))
    frame = pd.read_csv(path)
    frame.loc[3, "L[2,2]"] = 0.5
    frame.to_csv(path, index=False)
    with pytest.raises(UsageError, match="violate the base pattern"):
        import_draws(path, two_factor_pattern)


def test_loading_histograms(tmp_path, two_factor_pattern, rng):
    chains = sample_chains(two_factor_pattern, rng)
    table = loading_histograms(chains, bins=10)
    assert set(table["parameter"]) == {f"L[{i},{j}]" for i, j in
                                       [(1, 1), (1, 2), (2, 1), (3, 1), (3, 2), (4, 1), (4, 2), (5, 1), (5, 2), (6, 2)]}
    assert (table.groupby("parameter")["count"].sum() == 60).all()
    path = tmp_path / "hist.csv"
    write_histograms(chains, str(path), bins=10)
    assert len(pd.read_csv(path)) == 100
