import numpy as np
import pytest

from spdpotts.errors import InvalidDof, LatticeMismatch
from spdpotts.lattice import Lattice
from spdpotts.potts import PottsHyper
from spdpotts.spd import validate_spd_batch
from spdpotts.synth import (
    GroundTruth,
    ScenarioSpec,
    eval_detection,
    generate_cholesky_scenario,
    generate_mixture_scenario,
    generate_prior_field,
    generate_prior_group_fields,
    mixture_partition,
)
from spdpotts.variogram import (
    empirical_variogram,
    gamma_nonspatial,
    pairs_at_distances,
    spatial_term_mc,
)


def _rng(seed):
    return np.random.default_rng(seed)


class TestMixtureScenario:
    def test_full_scale_mask_has_100_voxels(self):
        control, treatment = mixture_partition((40, 40))
        assert (control != treatment).sum() == 100

    def test_band_boundaries_right_to_left(self):
        control, _ = mixture_partition((40, 40))
        # rightmost band carries label 1, leftmost label 4
        assert control[0, 39] == 1 and control[0, 0] == 4
        for boundary in (10, 20, 30):
            assert control[0, boundary - 1] != control[0, boundary]
        assert set(np.unique(control)) == {1, 2, 3, 4}

    def test_five_labels_used(self):
        _, treatment = mixture_partition((40, 40))
        assert set(np.unique(treatment)) == {1, 2, 3, 4, 5}

    def test_block_centered_in_band_two(self):
        control, treatment = mixture_partition((40, 40))
        rows, cols = np.nonzero(control != treatment)
        assert rows.min() == 15 and rows.max() == 24
        assert cols.min() == 20 and cols.max() == 29

    def test_fields_and_determinism(self):
        fields, truth = generate_mixture_scenario(11, dims=(20, 20), subjects_per_group=2)
        assert len(fields) == 4
        assert truth.difference_mask.sum() == 25  # 5x5 block at desk scale
        assert [f.group for f in fields] == [0, 0, 1, 1]
        for f in fields:
            validate_spd_batch(f.tensors)
        again, _ = generate_mixture_scenario(11, dims=(20, 20), subjects_per_group=2)
        for a, b in zip(fields, again):
            assert np.array_equal(a.tensors, b.tensors)
        other, _ = generate_mixture_scenario(12, dims=(20, 20), subjects_per_group=2)
        assert not np.array_equal(fields[0].tensors, other[0].tensors)


class TestCholeskyScenario:
    def test_degenerate_variance_gives_identity_off_center(self):
        fields, truth = generate_cholesky_scenario(
            3, dims=(8, 8), subjects_per_group=1, tau2=0.0
        )
        control, treated = fields
        assert np.allclose(control.tensors, np.eye(3))
        off = ~truth.difference_mask
        assert np.allclose(treated.tensors[off], np.eye(3))
        inside = treated.tensors[truth.difference_mask]
        assert not np.allclose(inside, np.eye(3))

    def test_all_outputs_spd(self):
        fields, _ = generate_cholesky_scenario(4, dims=(10, 8), subjects_per_group=2)
        for f in fields:
            validate_spd_batch(f.tensors)

    def test_truth_is_centered_block(self):
        _, truth = generate_cholesky_scenario(5, dims=(40, 40), subjects_per_group=1)
        grid = truth.lattice.to_grid(truth.difference_mask, fill=False)
        rows, cols = np.nonzero(grid)
        assert grid.sum() == 100
        assert rows.min() == 15 and rows.max() == 24
        assert cols.min() == 15 and cols.max() == 24

    @pytest.mark.slow
    def test_gp_covariance_oracle(self):
        # recover U from the Cholesky factors of the outputs, then check
        # cov(U_s, U_t) ~= tau2 * exp(-d / rho) over replications
        reps = 500
        fields, _ = generate_cholesky_scenario(
            6, dims=(8, 8), subjects_per_group=reps, tau2=0.1, rho=2.0
        )
        lat = fields[0].lattice
        a = lat.site_at((2, 2))
        pairs = [(a, lat.site_at((2, 3))), (a, lat.site_at((2, 4))), (a, lat.site_at((5, 6)))]
        us = np.empty((reps, 6, lat.n_sites))
        for r in range(reps):
            low = np.linalg.cholesky(fields[r].tensors)
            us[r, 0] = np.log(low[:, 0, 0])
            us[r, 1] = np.log(low[:, 1, 1])
            us[r, 2] = np.log(low[:, 2, 2])
            us[r, 3] = low[:, 1, 0]
            us[r, 4] = low[:, 2, 0]
            us[r, 5] = low[:, 2, 1]
        for s, t in pairs:
            d = np.linalg.norm(lat.coords[s].astype(float) - lat.coords[t])
            prods = (us[:, :, s] - us[:, :, s].mean(0)) * (
                us[:, :, t] - us[:, :, t].mean(0)
            )
            est = prods.mean()
            se = prods.std() / np.sqrt(prods.size)
            assert abs(est - 0.1 * np.exp(-d / 2.0)) < 3.5 * se


class TestPriorField:
    def test_k1_constant_labels(self):
        f, labels = generate_prior_field(
            (5, 5), K=1, theta=PottsHyper(0, 2.0, 0.0), m=8.0, nu=10.0,
            sigma=np.eye(3), sweeps=5, rng=_rng(7),
        )
        assert np.all(labels.g == 1)
        validate_spd_batch(f.tensors)

    def test_requires_valid_m(self):
        with pytest.raises(InvalidDof):
            generate_prior_field(
                (4, 4), K=3, theta=PottsHyper(0, 1.0, 0.0), m=4.0, nu=30.0,
                sigma=np.eye(3), sweeps=1, rng=_rng(8),
            )

    def test_beta_orders_more_than_weak_beta(self):
        agree = {}
        for beta in (1.0, 6.0):
            _, labels = generate_prior_field(
                (12, 12), K=5, theta=PottsHyper(0.0, beta, 0.0), m=8.0,
                nu=10.0, sigma=np.eye(3), sweeps=60, rng=_rng(9),
            )
            lat = Lattice.grid((12, 12))
            eu, ev = lat.edges.T
            agree[beta] = (labels.g[0, eu] == labels.g[0, ev]).mean()
        assert agree[6.0] > agree[1.0]

    def test_group_fields_layout(self):
        fields, labels = generate_prior_group_fields(
            dims=(4, 4), K=3, theta=PottsHyper(1.0, 1.0, 0.5), m=8.0, nu=10.0,
            sigma=np.eye(2), sweeps=3, subjects_per_group=2, rng=_rng(10),
        )
        assert [f.group for f in fields] == [0, 0, 1, 1]
        assert labels.g.shape == (4, 16)


class TestEvalDetection:
    def _truth(self):
        lat = Lattice.grid((2, 2))
        return GroundTruth(lat, np.array([True, False, False, False]))

    def test_perfect(self):
        t = self._truth()
        m = eval_detection(t.difference_mask, t)
        assert (m.tpr, m.fpr, m.fdr) == (1.0, 0.0, 0.0)

    def test_no_discoveries(self):
        m = eval_detection(np.zeros(4, dtype=bool), self._truth())
        assert (m.tpr, m.fpr, m.fdr) == (0.0, 0.0, 0.0)

    def test_complement_hand_count(self):
        t = self._truth()
        m = eval_detection(~t.difference_mask, t)
        # TP=0, FP=3, FN=1, TN=0
        assert (m.tpr, m.fpr, m.fdr) == (0.0, 1.0, 1.0)

    def test_mismatch(self):
        with pytest.raises(LatticeMismatch):
            eval_detection(np.zeros(5, dtype=bool), self._truth())


class TestScenarioSpec:
    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            ScenarioSpec(kind="bogus")

    def test_dispatch(self):
        fields, truth = ScenarioSpec(
            kind="mixture", dims=(20, 20), subjects_per_group=1, seed=1
        ).generate()
        assert len(fields) == 2 and truth.difference_mask.sum() == 25


@pytest.mark.slow
def test_separability_of_simulated_fields():
    # Empirical variogram of model simulations ~= gamma * MC spatial term.
    # The separable form drops the within-cluster dispersion term, so the
    # comparison runs at large m (tensors concentrated near their atom) and
    # large-ish K, where that term is a small fraction of the total.
    m, nu, K = 50.0, 4.0, 20
    theta = PottsHyper(0.0, 1.0, 0.0)
    dims = (30, 30)
    reps = 24
    sums = None
    for r in range(reps):
        f, _ = generate_prior_field(
            dims, K=K, theta=theta, m=m, nu=nu, sigma=np.eye(2),
            sweeps=120, rng=_rng(100 + r),
        )
        curve = empirical_variogram(f, f, max_dist=2.0)
        sums = curve.values if sums is None else sums + curve.values
    empirical = sums / reps

    lat = Lattice.grid(dims)
    pairs = pairs_at_distances(lat, [1.0, np.sqrt(2.0), 2.0], cap=400, rng=_rng(0))
    spatial = spatial_term_mc(
        lat, theta, K=K, N=1, pairs=pairs,
        burn_in=120, sweeps=300, replications=6, rng=_rng(200),
    )
    model = gamma_nonspatial(m, nu, np.eye(2)) * spatial.values
    rel = np.abs(empirical - model) / model
    assert np.all(rel < 0.10)
