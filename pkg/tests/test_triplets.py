import itertools

import numpy as np
import pytest

from covaset.errors import DataError
from covaset.rff import SampleSignature
from covaset.triplets import (
    Triplet,
    TripletConfig,
    pairwise_distances,
    quantile_threshold,
    select_triplets,
)

from conftest import binary_cov, build_cohort


def sig(sample_id, vec):
    return SampleSignature(sample_id, np.asarray(vec, dtype=float))


def cov_cohort(cov_by_id):
    """Cohort whose cells are irrelevant; only the covariate matters."""
    values = {sid: np.zeros((2, 2)) for sid in cov_by_id}
    outcomes = {sid: 0 for sid in cov_by_id}
    outcomes[sorted(cov_by_id)[-1]] = 1  # keep both outcome classes legal
    covs = {sid: {"c": binary_cov(v)} for sid, v in cov_by_id.items()}
    return build_cohort(values, outcomes, covs)


def brute_force_admissible(sigs, cov_by_id, h_s, h_d):
    """Independent enumeration of the admissible (ref, same, diff) set."""
    ids = sorted(cov_by_id)
    by_id = {s.sample_id: s for s in sigs}

    def dist(a, b):
        return float(np.linalg.norm(by_id[a].S - by_id[b].S))

    same_pairs = [
        dist(a, b)
        for a, b in itertools.combinations(ids, 2)
        if cov_by_id[a] == cov_by_id[b]
    ]
    t_s = np.quantile(same_pairs, h_s / 100.0)
    margins = [
        dist(r, j) - dist(r, k)
        for r in ids
        for k in ids
        for j in ids
        if k != r and cov_by_id[k] == cov_by_id[r] and cov_by_id[j] != cov_by_id[r]
    ]
    t_d = np.quantile(margins, (100 - h_d) / 100.0)
    out = set()
    for r in ids:
        for k in ids:
            if k == r or cov_by_id[k] != cov_by_id[r]:
                continue
            for j in ids:
                if cov_by_id[j] == cov_by_id[r]:
                    continue
                if dist(r, k) <= t_s and dist(r, j) - dist(r, k) >= t_d:
                    out.add((r, k, j))
    return out


class TestPairwiseDistances:
    def test_identical_signatures(self):
        dm = pairwise_distances([sig("a", [1, 2]), sig("b", [1, 2])])
        np.testing.assert_array_equal(dm.D, np.zeros((2, 2)))

    def test_3_4_5(self):
        dm = pairwise_distances([sig("a", [0, 0]), sig("b", [3, 4])])
        assert dm.distance("a", "b") == 5.0

    def test_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(0)
        sigs = [sig(f"s{i}", rng.normal(size=6)) for i in range(10)]
        dm = pairwise_distances(sigs)
        assert np.array_equal(dm.D, dm.D.T)
        assert np.all(np.diag(dm.D) == 0.0)

    def test_length_mismatch(self):
        with pytest.raises(DataError, match="mismatch"):
            pairwise_distances([sig("a", [0, 0]), sig("b", [0, 0, 0])])


class TestQuantile:
    def test_linear_interpolation_oracle(self):
        # hand evaluation: position (5-1)*0.2 = 0.8 between 1 and 2
        assert quantile_threshold([1, 2, 3, 4, 5], 20) == pytest.approx(1.8)

    def test_upper_boundary_is_max(self):
        vals = [3.0, 9.0, 1.0]
        assert quantile_threshold(vals, 99.999) == pytest.approx(9.0, abs=1e-3)

    def test_single_value(self):
        for q in (20, 40, 60, 80):
            assert quantile_threshold([7.0], q) == 7.0

    def test_empty_list(self):
        with pytest.raises(DataError, match="empty"):
            quantile_threshold([], 20)


class TestSelectTriplets:
    def test_three_sample_role_assignment(self):
        # s1, s2 share the covariate; s3 differs; distances make s1 the
        # reference with the largest margin so it survives any threshold
        cohort = cov_cohort({"s1": 0, "s2": 0, "s3": 1})
        sigs = [sig("s1", [0.0, 0.0]), sig("s2", [1.0, 0.0]), sig("s3", [5.0, 0.0])]
        cfg = TripletConfig(covariate="c", h_s=80, h_d=80, max_per_reference=1)
        out = select_triplets(cohort, sigs, cfg)
        assert Triplet("s1", "s3", "s2", 1.0, 5.0) in out

    def test_covariate_group_empty(self):
        cohort = cov_cohort({"s1": 0, "s2": 0, "s3": 0})
        sigs = [sig(s, [float(i)]) for i, s in enumerate(["s1", "s2", "s3"])]
        with pytest.raises(DataError, match="covariate group empty"):
            select_triplets(cohort, sigs, TripletConfig(covariate="c"))

    def test_roles_respect_covariates(self):
        rng = np.random.default_rng(3)
        cov_by_id = {f"s{i}": i % 2 for i in range(8)}
        cohort = cov_cohort(cov_by_id)
        sigs = [sig(f"s{i}", rng.normal(size=4)) for i in range(8)]
        out = select_triplets(
            cohort, sigs, TripletConfig(covariate="c", h_s=80, h_d=20)
        )
        assert out
        for t in out:
            assert cov_by_id[t.ref_id] == cov_by_id[t.same_id]
            assert cov_by_id[t.ref_id] != cov_by_id[t.diff_id]
            assert len({t.ref_id, t.diff_id, t.same_id}) == 3

    @pytest.mark.parametrize("knob", ["h_s", "h_d"])
    def test_monotone_in_thresholds(self, knob):
        # brute-force enumeration at both settings: tighter never admits more
        rng = np.random.default_rng(11)
        cov_by_id = {f"s{i}": int(i < 5) for i in range(11)}
        sigs = [sig(f"s{i}", rng.normal(size=5)) for i in range(11)]
        cohort = cov_cohort(cov_by_id)
        kwargs_tight = {"h_s": 80, "h_d": 80, knob: 20}
        kwargs_loose = {"h_s": 80, "h_d": 80}
        tight = brute_force_admissible(sigs, cov_by_id, kwargs_tight["h_s"], kwargs_tight["h_d"])
        loose = brute_force_admissible(sigs, cov_by_id, kwargs_loose["h_s"], kwargs_loose["h_d"])
        assert tight <= loose
        # and the selected (pre-cap) lists agree with the enumeration
        out = select_triplets(
            cohort, sigs,
            TripletConfig(covariate="c", max_per_reference=1000, **kwargs_tight),
        )
        assert {(t.ref_id, t.same_id, t.diff_id) for t in out} == tight

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        cov_by_id = {f"s{i}": i % 2 for i in range(9)}
        cohort = cov_cohort(cov_by_id)
        sigs = [sig(f"s{i}", rng.normal(size=3)) for i in range(9)]
        cfg = TripletConfig(covariate="c", h_s=60, h_d=40, max_per_reference=2)
        assert select_triplets(cohort, sigs, cfg) == select_triplets(cohort, sigs, cfg)

    def test_scale_invariance(self):
        rng = np.random.default_rng(5)
        cov_by_id = {f"s{i}": i % 2 for i in range(7)}
        cohort = cov_cohort(cov_by_id)
        sigs = [sig(f"s{i}", rng.normal(size=4)) for i in range(7)]
        # power-of-two scaling is exact in floating point
        scaled = [sig(s.sample_id, 4.0 * s.S) for s in sigs]
        cfg = TripletConfig(covariate="c", h_s=40, h_d=60)
        a = [(t.ref_id, t.same_id, t.diff_id) for t in select_triplets(cohort, sigs, cfg)]
        b = [(t.ref_id, t.same_id, t.diff_id) for t in select_triplets(cohort, scaled, cfg)]
        assert a == b

    def test_cap_and_preference_order(self):
        # reference s0: two admissible sames at distances 1 and 2; the
        # closer one must win under max_per_reference=1
        cov_by_id = {"s0": 0, "s1": 0, "s2": 0, "s3": 1}
        cohort = cov_cohort(cov_by_id)
        sigs = [
            sig("s0", [0.0]), sig("s1", [1.0]), sig("s2", [2.0]), sig("s3", [10.0]),
        ]
        out = select_triplets(
            cohort, sigs, TripletConfig(covariate="c", h_s=80, h_d=80)
        )
        mine = [t for t in out if t.ref_id == "s0"]
        assert len(mine) == 1 and mine[0].same_id == "s1"
