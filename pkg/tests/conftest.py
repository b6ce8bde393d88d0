import numpy as np
import pytest

from attkit.dataset import (ROLE_COVARIATE, ROLE_OUTCOME, ROLE_TREATMENT,
                            CovariateSchema, ObservationTable)


def make_table(X, w, y, names=None, tags=None):
    """Small helper: wrap arrays in an ObservationTable with a generic schema."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != len(w):
        X = X.T
    p = X.shape[1]
    names = tuple(names) if names else tuple(f"x{j + 1}" for j in range(p))
    all_names = ("w",) + names + ("y",)
    roles = {n: ROLE_COVARIATE for n in all_names}
    roles["w"] = ROLE_TREATMENT
    roles["y"] = ROLE_OUTCOME
    schema = CovariateSchema(names=all_names, roles=roles)
    n = len(w)
    if tags is None:
        tags = np.array(["synthetic"] * n, dtype=object)
    return ObservationTable(schema, X, np.asarray(w), np.asarray(y),
                            tags=tags, pos=np.arange(n))


@pytest.fixture
def toy4():
    """Two treated and two controls with matched covariates; DIM = 4."""
    X = np.array([[1.0], [3.0], [1.0], [3.0]])
    w = np.array([1, 1, 0, 0])
    y = np.array([10.0, 30.0, 8.0, 24.0])
    return make_table(X, w, y, names=("x",))
