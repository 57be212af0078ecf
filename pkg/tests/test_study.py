import math

import numpy as np
import pytest

from gfbgg.fit import fit
from gfbgg.model import ModelFamily
from gfbgg.selection import CRITERIA
from gfbgg.simulate import SimConfig, simulate_dataset
from gfbgg.study import (
    RecoveryDesign,
    ReplicateOutcome,
    StudyDesign,
    run_parameter_study,
    run_recovery_study,
    summarize,
    truth_for,
)

M1 = ModelFamily.parse("M1")
M14 = ModelFamily.parse("M14")


class TestParameterStudy:
    def test_single_replicate(self):
        design = StudyDesign(M1, {}, n=80, replicates=1, ci_method="none", seed=4)
        rep = run_parameter_study(design)
        d = simulate_dataset(SimConfig(M1.build(truth_for(M1)), 80, 4, 0))
        est = fit(M1, d).estimates
        for nm in M1.free_names:
            assert rep.ae[nm] == est[nm]
            assert rep.mse[nm] == pytest.approx((est[nm] - design.truth[nm]) ** 2, rel=1e-14)
        assert rep.n_fitted == 1 and rep.convergence_rate == 1.0

    def test_mse_is_bias_squared_plus_variance(self):
        rng = np.random.default_rng(0)
        design = StudyDesign(M1, {}, n=50, replicates=40, ci_method="none")
        outs = [ReplicateOutcome(r, {nm: float(v) for nm, v in zip(M1.free_names, rng.gamma(4, 0.1, 4))})
                for r in range(40)]
        rep = summarize(design, outs)
        for nm in M1.free_names:
            est = np.array([o.estimates[nm] for o in outs])
            assert rep.mse[nm] == pytest.approx((rep.ae[nm] - design.truth[nm]) ** 2 + est.var(), rel=1e-12)
            assert rep.mse[nm] >= (rep.ae[nm] - design.truth[nm]) ** 2

    def test_coverage_length_and_failures(self):
        design = StudyDesign(M1, {}, n=50, replicates=4)
        t = design.truth
        lo = {nm: t[nm] - 0.1 for nm in M1.free_names}
        hi = {nm: t[nm] + 0.1 for nm in M1.free_names}
        miss = {nm: t[nm] + 0.05 for nm in M1.free_names}
        outs = [
            ReplicateOutcome(0, dict(t), lo, hi),
            ReplicateOutcome(1, dict(t), miss, {nm: v + 0.3 for nm, v in miss.items()}),
            ReplicateOutcome(2, dict(t), error="interval: singular"),
            ReplicateOutcome(3, None, error="not converged"),
        ]
        rep = summarize(design, outs)
        assert (rep.n_fitted, rep.n_failed, rep.n_interval_failed) == (3, 1, 1)
        for nm in M1.free_names:
            assert rep.cp[nm] == 50.0
            assert rep.al[nm] == pytest.approx(0.25, rel=1e-12)
            assert 0.0 <= rep.cp[nm] <= 100.0

    def test_reproducible_across_workers(self):
        design = StudyDesign(M1, {}, n=60, replicates=4, seed=7, mc_size=200)
        a = run_parameter_study(design, workers=1)
        b = run_parameter_study(design, workers=2)
        assert a.to_dict() == b.to_dict()
        assert a.raw_csv() == b.raw_csv()
        assert a.table_csv().splitlines()[0] == "metric,theta1,theta2,theta1_star,theta2_star"

    def test_error_shrinks_with_n(self):
        small = run_parameter_study(StudyDesign(M1, {}, n=100, replicates=30, ci_method="none", seed=1))
        large = run_parameter_study(StudyDesign(M1, {}, n=400, replicates=30, ci_method="none", seed=1))
        assert sum(large.mse.values()) < sum(small.mse.values())

    def test_design_validation_and_round_trip(self):
        with pytest.raises(ValueError):
            StudyDesign(M1, {}, replicates=0)
        with pytest.raises(ValueError):
            StudyDesign(M1, {}, ci_method="profile")
        d = StudyDesign.from_dict({"parent": "M14", "n": 50, "replicates": 3, "truth": {"k": 2.0}})
        assert d.family == M14 and d.truth["k"] == 2.0 and d.truth["theta1"] == 0.3
        assert StudyDesign.from_dict(d.to_dict()) == d


class TestRecoveryStudy:
    def test_parent_only_grid(self):
        rep = run_recovery_study(RecoveryDesign(M14, {}, sizes=(50,), replicates=2, grid="M14", fast=True))
        for c in CRITERIA:
            assert rep.proportion(50, c, "M14") == 1.0
            assert rep.winner(50, c) == "M14"

    def test_proportions_sum_to_one_and_reproducible(self):
        design = RecoveryDesign(M1, {}, sizes=(50, 80), replicates=3, grid="M1,M5,M19", fast=True, seed=2)
        a = run_recovery_study(design, workers=1)
        b = run_recovery_study(design, workers=2)
        assert a.to_dict() == b.to_dict()
        for n in design.sizes:
            for c in CRITERIA:
                props = [a.proportion(n, c, m) for m in ("M1", "M5", "M19")]
                assert all(0.0 <= p <= 1.0 for p in props)
                assert sum(props) == pytest.approx(1.0, abs=0)
                assert sum(a.counts[n][c].values()) == 3
        lines = a.proportions_csv().splitlines()
        assert lines[0] == "n,criterion,model,proportion"
        assert len(lines) == 1 + 2 * len(CRITERIA) * 3

    def test_design_validation(self):
        with pytest.raises(ValueError):
            RecoveryDesign(M14, {}, replicates=0)
        with pytest.raises(ValueError):
            RecoveryDesign(M14, {}, grid="30")
        d = RecoveryDesign.from_dict({"parent": "M14", "sizes": [50, 200], "replicates": 5})
        assert d.sizes == (50, 200) and math.isclose(d.truth["k"], 1.5)
