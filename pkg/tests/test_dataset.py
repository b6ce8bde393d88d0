import numpy as np
import pytest

from attkit.dataset import (CovariateSchema, ObservationTable, compose_sample,
                            derive_indicators, ldw_schema, load_table,
                            original_lalonde_schema, summarize)
from attkit.errors import DomainError, ParseError, SchemaError

from conftest import make_table

HEADER = "treat,age,education,black,hispanic,married,nodegree,re74,re75,re78"


def write_rows(path, rows, header=HEADER):
    path.write_text("\n".join([header] + rows) + "\n")
    return path


def test_schema_requires_single_treatment_and_outcome():
    with pytest.raises(SchemaError):
        CovariateSchema(names=("a", "b"), roles={"a": "covariate", "b": "covariate"})


def test_ldw_schema_roundtrip(tmp_path):
    f = write_rows(tmp_path / "t.csv", [
        "1,25,11,1,0,0,1,0,0,5000.5",
        "1,33,12,0,1,1,0,1200,900,0",
    ])
    tab = load_table(f, ldw_schema(), source_tag="experimental-treated")
    assert tab.n == 2
    assert tab.n_treated == 2
    assert tab.schema.covariates == ("age", "education", "black", "hispanic",
                                     "married", "nodegree", "re74", "re75")
    assert tab.y[0] == 5000.5
    assert list(tab.pos) == [0, 1]


def test_load_missing_column_names_it(tmp_path):
    f = (tmp_path / "bad.csv")
    f.write_text("treat,age\n1,25\n")
    with pytest.raises(SchemaError, match="education"):
        load_table(f, ldw_schema())


def test_load_unparseable_cell_is_addressed(tmp_path):
    f = write_rows(tmp_path / "bad.csv", ["1,25,11,1,0,0,1,0,oops,5000"])
    with pytest.raises(ParseError, match=r"row 1, column 're75'"):
        load_table(f, ldw_schema())


def test_negative_earnings_rejected(tmp_path):
    f = write_rows(tmp_path / "neg.csv", ["0,25,11,1,0,0,1,0,-5,5000"])
    with pytest.raises(DomainError, match="re75"):
        load_table(f, ldw_schema())


def test_whitespace_delimited_files_load(tmp_path):
    f = (tmp_path / "ws.txt")
    f.write_text(HEADER.replace(",", " ") + "\n" +
                 "1 25 11 1 0 0 1 0 0 5000\n")
    tab = load_table(f, ldw_schema())
    assert tab.n == 1


def test_derive_indicators_definition_and_idempotence(tmp_path):
    f = write_rows(tmp_path / "t.csv", [
        "1,25,11,1,0,0,1,0,0,5000",
        "1,30,12,0,0,1,0,3000,1532,2000",
    ])
    tab = derive_indicators(load_table(f, ldw_schema()))
    assert tab.schema.covariates[-2:] == ("u74", "u75")
    assert list(tab.column("u75")) == [1.0, 0.0]
    assert list(tab.column("u74")) == [1.0, 0.0]
    again = derive_indicators(tab)
    assert again.schema.covariates == tab.schema.covariates
    assert np.array_equal(again.X, tab.X)


def test_original_schema_lacks_re74(tmp_path):
    header = "treat,age,education,black,hispanic,married,nodegree,re75,re78"
    f = (tmp_path / "orig.csv")
    f.write_text(header + "\n0,40,8,0,0,1,1,900,1000\n")
    tab = derive_indicators(load_table(f, original_lalonde_schema()))
    assert "u75" in tab.schema.covariates
    assert "u74" not in tab.schema.covariates


def test_indicator_inconsistency_rejected():
    # u74 says unemployed but re74 is positive
    with pytest.raises(DomainError, match="u74"):
        make_table(np.array([[100.0, 1.0]]), [0], [0.0], names=("re74", "u74"))


def test_compose_sample_counts_and_tags():
    t = make_table(np.array([[1.0], [2.0]]), [1, 1], [5.0, 6.0],
                   tags=np.array(["experimental-treated"] * 2, dtype=object))
    c = make_table(np.array([[1.5], [2.5], [3.0]]), [0, 0, 0], [1.0, 2.0, 3.0],
                   tags=np.array(["cps"] * 3, dtype=object))
    s = compose_sample(t, c)
    assert s.n == 5
    assert s.n_treated == 2 and s.n_control == 3
    assert s.source_tag == "experimental-treated+cps"
    assert s.row_keys()[0] == "experimental-treated:0"
    stats = summarize(s)
    assert stats.n_treated == 2 and stats.n_control == 3


def test_compose_rejects_schema_mismatch():
    t = make_table(np.array([[1.0]]), [1], [5.0], names=("a",))
    c = make_table(np.array([[1.0]]), [0], [5.0], names=("b",))
    with pytest.raises(SchemaError, match="differing"):
        compose_sample(t, c)


def test_compose_rejects_empty_and_misassigned_arm():
    t = make_table(np.array([[1.0]]), [1], [5.0])
    bad = make_table(np.array([[1.0]]), [1], [5.0])
    with pytest.raises(DomainError):
        compose_sample(t, bad)


def test_summarize_sd_conventions():
    tab = make_table(np.array([[2.0], [2.0], [2.0]]), [1, 1, 0], [4.0, 6.0, 5.0])
    stats = summarize(tab)
    assert stats.by_arm["treated"]["x1"].sd == 0.0          # identical values
    assert stats.by_arm["control"]["x1"].sd is None          # single row: undefined
    assert stats.by_arm["treated"]["y"].sd == pytest.approx(np.std([4, 6], ddof=1))


def test_table_is_immutable(toy4):
    with pytest.raises(ValueError):
        toy4.X[0, 0] = 99.0
