import numpy as np
import pytest

from songvec.corpus import build_vocabulary
from songvec.hpo import (
    Objective,
    SearchSpace,
    Study,
    TrialResult,
    combined_objective,
    run_study,
    rvrc,
    scale_ladder,
    suggest,
)
from songvec.metrics import Evaluator, MetricReport
from songvec.trainer import HyperParams


class TestRvrc:
    def test_identity_baseline(self):
        assert rvrc(927.0, 927.0) == 0.0

    def test_doubling(self):
        assert rvrc(10.0, 5.0) == 1.0

    def test_published_ratio(self):
        # 927 -> 2006 gives a 1.1639... relative improvement
        assert rvrc(2006.0, 927.0) == pytest.approx(2006.0 / 927.0 - 1.0, rel=1e-12)
        assert f"{rvrc(2006.0, 927.0):.5f}".startswith("1.1639")

    def test_nonpositive_baseline(self):
        with pytest.raises(ValueError):
            rvrc(1.0, 0.0)


class TestCombinedObjective:
    def test_alpha_one_is_hitrate(self):
        assert combined_objective(0.42, 3.0, 1.0) == 0.42

    def test_alpha_zero_is_rvrc(self):
        assert combined_objective(0.42, 3.0, 0.0) == 3.0

    def test_published_row(self):
        # hitrate 0.3772 with VRC 1495 over a 927 baseline at alpha 0.01
        rel = rvrc(1495.0, 927.0)
        assert rel == pytest.approx(0.6127, abs=5e-5)
        got = combined_objective(0.3772, rel, 0.01)
        assert got == pytest.approx(0.01 * 0.3772 + 0.99 * rel, rel=1e-12)

    def test_alpha_bounds(self):
        with pytest.raises(ValueError):
            combined_objective(0.5, 0.5, 1.5)


class TestObjective:
    def _report(self, **kw):
        return MetricReport(**kw)

    def test_hitrate_kind(self):
        assert Objective("hitrate").value(self._report(hitrate=0.3), None) == 0.3

    def test_vrc_kind_requires_metric(self):
        with pytest.raises(ValueError, match="vrc_genre"):
            Objective("vrc-genre").value(self._report(hitrate=0.3), None)

    def test_combined_needs_baseline(self):
        rep = self._report(hitrate=0.3, vrc_genre=100.0)
        with pytest.raises(ValueError, match="baseline"):
            Objective("combined-genre").value(rep, None)

    def test_combined_value(self):
        rep = self._report(hitrate=0.3, vrc_genre=150.0)
        base = self._report(hitrate=0.2, vrc_genre=100.0)
        got = Objective("combined-genre", alpha=0.1).value(rep, base)
        assert got == pytest.approx(0.1 * 0.3 + 0.9 * 0.5)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            Objective("recall")


class TestSearchSpace:
    def test_bounds_roundtrip(self):
        space = SearchSpace()
        rng = np.random.default_rng(0)
        for _ in range(50):
            params = space.from_unit(rng.random(space.ndim))
            assert 25 <= params["dim"] <= 200
            assert 1 <= params["window"] <= 40
            assert -1.0 <= params["ns_exponent"] <= 1.0
            assert 1 <= params["negatives"] <= 100
            assert 0.001 <= params["learning_rate"] <= 0.1

    def test_log_scale_learning_rate(self):
        space = SearchSpace()
        mid = space.from_unit(np.full(space.ndim, 0.5))
        assert mid["learning_rate"] == pytest.approx(np.sqrt(0.001 * 0.1), rel=1e-9)

    def test_contains(self):
        space = SearchSpace()
        assert space.contains(HyperParams())
        assert not space.contains(HyperParams(dim=500))


def _fake_trial(hp, value):
    return TrialResult(
        hp=hp, metrics=MetricReport(hitrate=max(value, 0.0)), objective_value=value, wall_clock=0.01
    )


class TestSuggest:
    def test_empty_study_proposes_default(self):
        study = Study(objective=Objective("hitrate"), seed=3)
        hp = suggest(study, HyperParams(seed=3))
        assert hp == HyperParams(seed=3)
        assert study.space.contains(hp)

    def test_random_phase_in_bounds(self):
        study = Study(objective=Objective("hitrate"), seed=3)
        study.trials.append(_fake_trial(HyperParams(), 0.1))
        for _ in range(9):
            hp = suggest(study)
            assert study.space.contains(hp)
            study.trials.append(_fake_trial(hp, 0.1))

    def test_no_repeat_after_identical_objectives(self):
        study = Study(objective=Objective("hitrate"), seed=5)
        seen = set()
        for _ in range(14):
            hp = suggest(study)
            key = (hp.dim, hp.window, hp.ns_exponent, hp.negatives, hp.learning_rate)
            assert key not in seen
            seen.add(key)
            assert study.space.contains(hp)
            study.trials.append(_fake_trial(hp, 0.1))

    def test_deterministic_given_state(self):
        a = Study(objective=Objective("hitrate"), seed=9)
        b = Study(objective=Objective("hitrate"), seed=9)
        for _ in range(12):
            ha, hb = suggest(a), suggest(b)
            assert ha == hb
            a.trials.append(_fake_trial(ha, 0.2))
            b.trials.append(_fake_trial(hb, 0.2))

    def test_toy_function_optimum(self):
        # 1-d objective on the ns_exponent coordinate, optimum at unit 0.3
        space = SearchSpace()
        study = Study(objective=Objective("hitrate"), seed=1)
        for _ in range(40):
            hp = suggest(study)
            x = float(space.to_unit(hp)[2])
            study.trials.append(_fake_trial(hp, -((x - 0.3) ** 2)))
        best_x = float(space.to_unit(study.best.hp)[2])
        assert abs(best_x - 0.3) < 0.05


class TestStudy:
    def test_best_excludes_truncated(self):
        study = Study(objective=Objective("hitrate"))
        study.trials.append(_fake_trial(HyperParams(), 0.1))
        good = _fake_trial(HyperParams(dim=50), 0.2)
        cut = _fake_trial(HyperParams(dim=60), 0.9)
        cut.budget_truncated = True
        study.trials.extend([good, cut])
        assert study.best is good

    def test_save_load_roundtrip(self, tmp_path):
        study = Study(objective=Objective("combined-genre", alpha=0.2), seed=4, budget=1.5)
        study.trials.append(_fake_trial(HyperParams(), 0.3))
        study.save(tmp_path / "study.json")
        back = Study.load(tmp_path / "study.json")
        assert back.objective == study.objective
        assert back.budget == 1.5
        assert back.trials[0].hp == HyperParams()
        assert back.best_index == 0

    def test_convergence_rule(self):
        study = Study(objective=Objective("hitrate"))
        # 11 init trials then a flat window -> converged
        for i in range(21):
            study.trials.append(_fake_trial(HyperParams(dim=25 + i), 0.5))
        assert study.converged
        study.trials.append(_fake_trial(HyperParams(dim=199), 0.6))
        assert not Study(
            objective=Objective("hitrate"), trials=study.trials[-21:]
        ).converged


@pytest.mark.slow
class TestRunStudy:
    def test_single_trial_is_default(self, block_corpus):
        ds, vocab = block_corpus
        hp = HyperParams(dim=8, epochs=1, seed=2)
        study = run_study(ds, vocab, Objective("hitrate"), max_trials=1, seed=2, base_hp=hp)
        assert len(study.trials) == 1
        assert study.trials[0].hp == hp
        assert study.budget is not None

    def test_best_at_least_default(self, block_corpus):
        ds, vocab = block_corpus
        hp = HyperParams(dim=8, epochs=1, seed=2)
        study = run_study(
            ds, vocab, Objective("hitrate"), max_trials=4, seed=2,
            base_hp=hp, time_budget_factor=1e6,
        )
        assert study.best.objective_value >= study.trials[0].objective_value

    def test_checkpoint_resume_matches_straight_run(self, block_corpus, tmp_path):
        ds, vocab = block_corpus
        hp = HyperParams(dim=8, epochs=1, seed=2)
        kw = dict(seed=2, base_hp=hp, time_budget_factor=1e6, workers=1)
        straight = run_study(ds, vocab, Objective("hitrate"), max_trials=5, **kw)
        partial = run_study(
            ds, vocab, Objective("hitrate"), max_trials=3,
            checkpoint_path=tmp_path / "ck.json", **kw,
        )
        resumed = run_study(
            ds, vocab, Objective("hitrate"), max_trials=5,
            resume=Study.load(tmp_path / "ck.json"), **kw,
        )
        assert [t.hp for t in resumed.trials] == [t.hp for t in straight.trials]
        assert [t.objective_value for t in resumed.trials] == pytest.approx(
            [t.objective_value for t in straight.trials]
        )


@pytest.mark.slow
class TestScaleLadder:
    def test_two_rates_monotone_time(self, block_corpus):
        ds, _ = block_corpus
        hp = HyperParams(dim=8, epochs=1, seed=2)
        rows = scale_ladder(
            ds, [0.1, 1.0], Objective("hitrate"), seed=2, max_trials=2,
            min_count=1, base_hp=hp, time_budget_factor=1e6,
        )
        assert [r.rate for r in rows] == [0.1, 1.0]
        assert rows[1].optimization_time > rows[0].optimization_time

    def test_full_scale_metrics_recomputable(self, block_corpus):
        from songvec.corpus import build_vocabulary
        from songvec.trainer import train

        ds, _ = block_corpus
        hp = HyperParams(dim=8, epochs=1, seed=2)
        rows = scale_ladder(
            ds, [1.0], Objective("hitrate"), seed=2, max_trials=1,
            min_count=1, base_hp=hp, time_budget_factor=1e6, workers=1,
        )
        vocab = build_vocabulary(ds, 1)
        space = train(ds, vocab, rows[0].best_hp, workers=1, mask_last=True)
        check = Evaluator(ds, vocab, seed=2).evaluate(space)
        assert check.hitrate == pytest.approx(rows[0].full_scale_metrics.hitrate)

    def test_bad_rates(self, block_corpus):
        ds, _ = block_corpus
        with pytest.raises(ValueError, match="ascending"):
            scale_ladder(ds, [0.5, 0.1], Objective("hitrate"))
