"""Pre-measure recovery, inclusion-exclusion extension, outer measure,
measurability splits, outer continuity, and the characterization verdict."""

import itertools

import numpy as np
import pytest

from sifbm.flows import flows_through, required_flow_indices
from sifbm.gaussian import (
    HurstParam,
    SampleEnsemble,
    build_cov_matrix,
    cholesky,
    sample_ensemble,
)
from sifbm.recovery import (
    CharacterizationReport,
    CoverError,
    CoverFamily,
    MissingPsiError,
    PreMeasureTable,
    Thresholds,
    additivity_se,
    characterize,
    check_additivity,
    estimate_psi,
    measurability_check,
    outer_continuity_check,
    outer_measure,
    outer_measure_details,
    psi_on_C,
    psi_on_C_with_se,
    tiling_cover,
    verify_extension,
    verify_extension_details,
)
from sifbm.rects import (
    EMPTY,
    LeftNeighborhood,
    Rect,
    left_nbhd_measure,
    rect,
    rect_intersection,
    rect_measure,
)


def lattice(nx=3, ny=3, sx=1.0, sy=1.0):
    return [rect(i * sx, j * sy) for i in range(1, nx + 1) for j in range(1, ny + 1)]


def exact_ensemble(indices, h, n, seed):
    f = cholesky(build_cov_matrix(sorted(indices, key=lambda r: r.corner), HurstParam(h)))
    return sample_ensemble(f, n, seed=seed)


class TestEstimatePsi:
    def test_degenerate_column_zero(self):
        e = exact_ensemble([rect(0, 1), rect(1, 1)], 0.3, 200, seed=1)
        assert estimate_psi(e, rect(0, 1), HurstParam(0.3)) == 0.0

    def test_recovers_unit_measure(self):
        h = 0.35
        e = exact_ensemble([rect(1, 1)], h, 20_000, seed=12)
        got = estimate_psi(e, rect(1, 1), HurstParam(h))
        assert got == pytest.approx(1.0, rel=0.05)

    def test_scaling_homogeneity(self):
        h = HurstParam(0.25)
        e = exact_ensemble([rect(1, 1)], h.value, 500, seed=3)
        base = estimate_psi(e, rect(1, 1), h)
        c = 1.9
        scaled = SampleEnsemble(e.indices, c * e.samples, e.seed, e.hurst)
        got = estimate_psi(scaled, rect(1, 1), h)
        assert got == pytest.approx(c ** (1 / h.value) * base, rel=1e-9)

    def test_small_sample_rejected(self):
        e = exact_ensemble([rect(1, 1)], 0.3, 50, seed=1)
        with pytest.raises(ValueError):
            estimate_psi(e, rect(1, 1), HurstParam(0.3))

    def test_zero_variance_on_nondegenerate_warns(self):
        e = SampleEnsemble((rect(1, 1),), np.zeros((200, 1)), 0, HurstParam(0.3))
        with pytest.warns(UserWarning, match="zero empirical variance"):
            got = estimate_psi(e, rect(1, 1), HurstParam(0.3))
        assert got == 0.0


class TestPsiOnC:
    def test_self_subtraction_cancels(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        u = rect(2, 1)
        assert psi_on_C(t, LeftNeighborhood(u, (u,))) == 0.0

    def test_corner_cell(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        c = LeftNeighborhood(rect(2, 2), (rect(1, 2), rect(2, 1)))
        # 4 - 2 - 2 + 1
        assert psi_on_C(t, c) == pytest.approx(1.0)

    def test_no_subtraction(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        u = rect(1.5, 2)
        assert psi_on_C(t, LeftNeighborhood(u)) == rect_measure(u)

    def test_matches_lebesgue_on_random_neighborhoods(self):
        t = PreMeasureTable.analytic(HurstParam(0.2), 2)
        rng = np.random.default_rng(42)
        for _ in range(100):
            base = Rect(tuple(rng.uniform(0.5, 3, 2)))
            subs = tuple(
                Rect(tuple(rng.uniform(0, 3, 2))) for _ in range(rng.integers(0, 4))
            )
            c = LeftNeighborhood(base, subs)
            want = left_nbhd_measure(c)
            assert psi_on_C(t, c) == pytest.approx(want, rel=1e-12, abs=1e-12)

    def test_missing_entries_listed(self):
        e = exact_ensemble([rect(1, 2), rect(2, 1)], 0.3, 200, seed=5)
        t = PreMeasureTable.from_ensemble(e)
        c = LeftNeighborhood(rect(1, 2), (rect(2, 1),))
        with pytest.raises(MissingPsiError) as ei:
            psi_on_C(t, c)
        assert rect(1, 1) in ei.value.missing


class TestAdditivity:
    def test_identical_pieces(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        c = LeftNeighborhood(rect(2, 2), (rect(1, 2),))
        assert check_additivity(t, c, c, c) == pytest.approx(0.0, abs=1e-12)

    def test_tile_split_exact(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        v, u = rect(2, 2), rect(1, 2)
        c1 = LeftNeighborhood(v, (u,))
        c2 = LeftNeighborhood(u)
        assert check_additivity(t, c1, c2, LeftNeighborhood(v)) <= 1e-12

    def test_invalid_union_expression(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        c1 = LeftNeighborhood(rect(1, 1))
        c2 = LeftNeighborhood(rect(2, 1), (rect(1, 1),))
        with pytest.raises(ValueError, match="union_expr"):
            check_additivity(t, c1, c2, LeftNeighborhood(rect(3, 3)))

    def test_empirical_within_propagated_error(self):
        h = 0.3
        idx = lattice(2, 2)
        e = exact_ensemble(idx, h, 20_000, seed=21)
        t = PreMeasureTable.from_ensemble(e)
        v, u = rect(2, 2), rect(1, 2)
        c1, c2, un = LeftNeighborhood(v, (u,)), LeftNeighborhood(u), LeftNeighborhood(v)
        resid = check_additivity(t, c1, c2, un)
        assert resid <= 3 * additivity_se(t, c1, c2, un)


def brute_force_cover_min(table, covers, target_rect, n_pts=4000, seed=0):
    """Independent oracle: minimum cover cost by full subset enumeration with
    Monte Carlo point-membership coverage."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 1, (n_pts, len(target_rect.corner))) * np.asarray(
        target_rect.corner
    )

    def in_nbhd(c, p):
        if c.base.is_empty or not np.all(p <= c.base.corner):
            return False
        return not any(np.all(p <= s.corner) for s in c.subtracted)

    member = np.array(
        [[in_nbhd(el, p) for el in covers.elements] for p in pts], dtype=bool
    )
    best = np.inf
    for k in range(len(covers.elements) + 1):
        for combo in itertools.combinations(range(len(covers.elements)), k):
            if not combo:
                covered = not member.shape[0]
            else:
                covered = bool(np.all(member[:, list(combo)].any(axis=1)))
            if covered:
                cost = sum(psi_on_C(table, covers.elements[i]) for i in combo)
                best = min(best, cost)
    return best


class TestOuterMeasure:
    def test_singleton_cover(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        u = rect(2, 1.5)
        covers = CoverFamily((LeftNeighborhood(u),))
        assert outer_measure(t, covers, u) == pytest.approx(rect_measure(u))

    def test_empty_target(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        covers = CoverFamily((LeftNeighborhood(rect(1, 1)),))
        assert outer_measure(t, covers, EMPTY) == 0.0

    def test_redundant_expensive_piece_ignored(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        target = rect(2, 1)
        tiles = (
            LeftNeighborhood(rect(1, 1)),
            LeftNeighborhood(rect(2, 1), (rect(1, 1),)),
            LeftNeighborhood(rect(5, 5)),  # covers everything, costs 25
        )
        got = outer_measure(t, CoverFamily(tiles), target)
        assert got == pytest.approx(2.0)

    def test_matches_brute_force_oracle(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        target = rect(2, 2)
        covers = tiling_cover((2, 2), (2, 2))
        extra = CoverFamily(covers.elements + (LeftNeighborhood(rect(2, 2)),))
        got = outer_measure(t, extra, target)
        want = brute_force_cover_min(t, extra, target)
        assert got == pytest.approx(want, rel=1e-9)

    def test_no_cover_raises(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        covers = CoverFamily((LeftNeighborhood(rect(1, 1)),))
        with pytest.raises(CoverError):
            outer_measure(t, covers, rect(3, 3))

    def test_monotone_in_target(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        covers = tiling_cover((3, 3), (3, 3))
        small = outer_measure(t, covers, rect(1.5, 1.5))
        big = outer_measure(t, covers, rect(2.5, 2.5))
        assert small <= big

    def test_subadditive_over_unions(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        covers = tiling_cover((3, 3), (3, 3))
        a = LeftNeighborhood(rect(2, 1))
        b = LeftNeighborhood(rect(1, 2))
        both = outer_measure(t, covers, [a, b])
        assert both <= outer_measure(t, covers, a) + outer_measure(t, covers, b) + 1e-12

    def test_tie_break_deterministic(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        u = rect(1, 1)
        covers = CoverFamily((LeftNeighborhood(u), LeftNeighborhood(u)))
        det = outer_measure_details(t, covers, u)
        assert det.chosen == (0,)

    def test_family_cap(self):
        tiles = tuple(
            LeftNeighborhood(rect(i, 1), (rect(i - 1, 1),)) for i in range(1, 18)
        )
        with pytest.raises(ValueError, match="capped"):
            CoverFamily(tiles)


class TestVerifyExtension:
    def test_self_cover(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        u = rect(2, 2)
        assert verify_extension(t, CoverFamily((LeftNeighborhood(u),)), u) == 0.0

    def test_tilings_two_granularities(self):
        t = PreMeasureTable.analytic(HurstParam(0.25), 2)
        u = rect(2, 2)
        for divs in ((2, 2), (3, 3)):
            covers = tiling_cover((2, 2), divs)
            assert verify_extension(t, covers, u) <= 1e-12

    def test_empirical_within_tolerance(self):
        h = 0.35
        idx = sorted(set(lattice(2, 2)), key=lambda r: r.corner)
        e = exact_ensemble(idx, h, 20_000, seed=33)
        t = PreMeasureTable.from_ensemble(e)
        covers = tiling_cover((2, 2), (2, 2))
        u = rect(2, 2)
        resid, se = verify_extension_details(t, covers, u)
        assert resid <= 3 * se


class TestMeasurability:
    def test_disjoint_tiles_additive(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        covers = tiling_cover((3, 3), (3, 3))
        u = rect(2, 2)
        a = LeftNeighborhood(rect(1, 1))
        b = LeftNeighborhood(rect(3, 1), (rect(2, 1),))
        assert measurability_check(t, covers, u, a, b) <= 1e-12

    def test_random_disjoint_pairs(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        covers = tiling_cover((3, 3), (3, 3))
        u = rect(2, 2)
        inside = [
            LeftNeighborhood(rect(1, 1)),
            LeftNeighborhood(rect(2, 1), (rect(1, 1),)),
            LeftNeighborhood(rect(1, 2), (rect(1, 1),)),
            LeftNeighborhood(rect(2, 2), (rect(1, 2), rect(2, 1))),
        ]
        outside = [
            LeftNeighborhood(rect(3, 1), (rect(2, 1),)),
            LeftNeighborhood(rect(3, 2), (rect(2, 2), rect(3, 1))),
            LeftNeighborhood(rect(1, 3), (rect(1, 2),)),
            LeftNeighborhood(rect(3, 3), (rect(2, 3), rect(3, 2))),
        ]
        for a in inside:
            for b in outside:
                assert measurability_check(t, covers, u, a, b) <= 1e-12

    def test_containment_violated(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        covers = tiling_cover((3, 3), (3, 3))
        with pytest.raises(ValueError, match="not contained"):
            measurability_check(
                t, covers, rect(1, 1), LeftNeighborhood(rect(2, 2)), LeftNeighborhood(rect(3, 3), (rect(1, 1),))
            )

    def test_overlap_violated(self):
        t = PreMeasureTable.analytic(HurstParam(0.3), 2)
        covers = tiling_cover((3, 3), (3, 3))
        with pytest.raises(ValueError, match="overlaps"):
            measurability_check(
                t, covers, rect(2, 2), LeftNeighborhood(rect(1, 1)), LeftNeighborhood(rect(3, 3))
            )


class TestOuterContinuity:
    def test_constant_sequence_zero(self):
        u = rect(1, 1)
        vals = outer_continuity_check(HurstParam(0.3), [u.corner] * 5, u)
        assert np.all(vals == 0.0)

    def test_harmonic_shrink_half(self):
        u = rect(1, 1)
        corners = [(1 + 1 / n, 1.0) for n in range(1, 30)]
        vals = outer_continuity_check(HurstParam(0.5), corners, u)
        want = np.array([1 / n for n in range(1, 30)])
        assert np.allclose(vals, want, rtol=1e-9)

    def test_harmonic_shrink_quarter(self):
        u = rect(1, 1)
        corners = [(1 + 1 / n, 1.0) for n in range(1, 30)]
        vals = outer_continuity_check(HurstParam(0.25), corners, u)
        assert np.allclose(vals, np.array([(1 / n) ** 0.5 for n in range(1, 30)]), rtol=1e-9)

    def test_not_decreasing_rejected(self):
        u = rect(1, 1)
        with pytest.raises(ValueError, match="nonincreasing"):
            outer_continuity_check(HurstParam(0.3), [(1.1, 1), (1.2, 1)], u)

    def test_must_contain_limit(self):
        u = rect(1, 1)
        with pytest.raises(ValueError, match="does not contain"):
            outer_continuity_check(HurstParam(0.3), [(0.5, 1)], u)

    def test_degenerate_limit_reaches_floor(self):
        h = HurstParam(0.2)
        origin = rect(0, 0)
        corners = [(d, d) for d in np.geomspace(1.0, 1e-9, 12)]
        vals = outer_continuity_check(h, corners, origin)
        assert np.all(np.diff(vals) <= 0)
        assert vals[-1] <= 1e-6


def battery_and_indices(h, n, seed, lattice_pts):
    flows = [
        flows_through(rect(2, 2), points=12),
        flows_through(rect(3, 1), points=12),
    ]
    idx = set(lattice_pts)
    for f in flows:
        idx |= required_flow_indices(f)
    e = exact_ensemble(sorted(idx, key=lambda r: r.corner), h, n, seed)
    return e, flows


class TestCharacterize:
    H = 0.3
    LATTICE = lattice(3, 3)
    COVERS = tiling_cover((3, 3), (3, 3))

    def _run(self, e, flows, h=None):
        return characterize(
            e,
            flows,
            HurstParam(h or self.H),
            self.COVERS,
            table_indices=self.LATTICE,
        )

    def test_exact_field_passes(self):
        e, flows = battery_and_indices(self.H, 20_000, 101, self.LATTICE)
        rep = self._run(e, flows)
        assert rep.verdict, rep.failed

    def test_wrong_h_fails_on_profile(self):
        e, flows = battery_and_indices(self.H, 20_000, 102, self.LATTICE)
        rep = self._run(e, flows, h=self.H + 0.15)
        assert not rep.verdict
        assert "variance_profile" in rep.failed

    def test_independent_columns_fail_on_profile(self):
        e, flows = battery_and_indices(self.H, 4_000, 103, self.LATTICE)
        rng = np.random.default_rng(5)
        noise = rng.standard_normal(e.samples.shape)
        bad = SampleEnsemble(e.indices, noise, e.seed, e.hurst)
        rep = self._run(bad, flows)
        assert not rep.verdict
        assert "variance_profile" in rep.failed

    def test_mean_shift_fails_on_recovery(self):
        e, flows = battery_and_indices(self.H, 20_000, 104, self.LATTICE)
        shifted = e.samples.copy()
        col = e.indices.index(rect(2, 2))
        shifted[:, col] += 0.5
        bad = SampleEnsemble(e.indices, shifted, e.seed, e.hurst)
        rep = self._run(bad, flows)
        assert not rep.verdict
        assert "psi_recovery" in rep.failed

    def test_insufficient_samples_rejected(self):
        e, flows = battery_and_indices(self.H, 500, 105, self.LATTICE)
        with pytest.raises(ValueError, match="1000"):
            self._run(e, flows)

    def test_report_serializes(self):
        e, flows = battery_and_indices(self.H, 2_000, 106, self.LATTICE)
        rep = self._run(e, flows)
        d = rep.to_dict()
        assert d["verdict"] in ("pass", "fail")
        assert {c["name"] for c in d["criteria"]} >= {
            "variance_profile",
            "gaussianity",
            "psi_recovery",
            "psi_monotonicity",
            "additivity",
            "extension",
            "covariance_comparison",
        }
