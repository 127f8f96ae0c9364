import numpy as np
import pytest

from covaset.data import CellMatrix, CohortDataset, CovariateValue, SampleRecord


def build_cohort(values_by_id, outcomes, covariates=None, markers=None):
    """Assemble a cohort from {id: (m, n) array}, {id: outcome} and
    optionally {id: {name: CovariateValue}}."""
    first = next(iter(values_by_id.values()))
    n = np.asarray(first).shape[1]
    markers = tuple(markers or (f"m{i}" for i in range(n)))
    pairs = []
    for sid in sorted(values_by_id):
        mat = CellMatrix(sid, markers, np.asarray(values_by_id[sid], dtype=float))
        covs = (covariates or {}).get(sid, {})
        pairs.append((mat, SampleRecord(sid, outcomes[sid], covs)))
    return CohortDataset(tuple(pairs), markers)


def binary_cov(value):
    return CovariateValue(kind="binary", raw=float(value))


@pytest.fixture
def tiny_cohort():
    """Six samples, 3 per class, with a binary covariate equal to outcome."""
    rng = np.random.default_rng(42)
    values, outcomes, covs = {}, {}, {}
    for i in range(6):
        sid = f"s{i}"
        y = i % 2
        values[sid] = rng.normal(size=(20, 4)) + (0.5 * y)
        outcomes[sid] = y
        covs[sid] = {"grp": binary_cov(y)}
    return build_cohort(values, outcomes, covs)
