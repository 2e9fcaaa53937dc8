import pytest

from rqshot import benchmark as bm
from rqshot.allocation import HeuristicPolicy, UniformPolicy
from rqshot.driver import DriverConfig, EpisodeResult
from rqshot.instance import generate_instance


def fake_results(shots_and_sigma):
    return [
        EpisodeResult(steps=[], total_shots=s, e_out=1.0, e_opt=1.0, sigma=sig, approx_ratio=1.0)
        for s, sig in shots_and_sigma
    ]


def record_with(policy="heuristic", sr=1.0, median=1000.0, esp=None, uniform_sr=1.0,
                reduction=None, esp_ratio=None, instance_id="i0", category="cross_size", n=14):
    summary = bm.TrialSummary(
        n_trials=60, sr=sr, median_shots=median, mean_shots=median, p90_shots=median,
        median_success_shots=median, esp=esp, restart_cost=None if sr == 0 else median / sr,
    )
    return bm.EvaluationRecord(
        instance_id=instance_id, category=category, n=n, d=8, policy=policy, cap=1000,
        summary=summary, uniform_sr=uniform_sr, reduction=reduction, esp_ratio=esp_ratio,
    )


class TestTrialSummary:
    def test_reduction_fixture(self):
        # median 640 vs uniform 1000 -> reduction 0.36
        method = bm.TrialSummary.from_results(fake_results([(640, 1), (700, 1), (600, 1)]))
        uniform = bm.TrialSummary.from_results(fake_results([(1000, 1), (1000, 1), (1000, 1)]))
        assert 1 - method.median_shots / uniform.median_shots == pytest.approx(0.36)

    def test_esp_fixture(self):
        # median successful shots 1000 at SR 0.5 -> ESP 2000
        results = fake_results([(1000, 1), (1000, 0), (1000, 1), (1000, 0)])
        s = bm.TrialSummary.from_results(results)
        assert s.sr == 0.5
        assert s.esp == pytest.approx(2000.0)

    def test_esp_undefined_at_zero_sr(self):
        s = bm.TrialSummary.from_results(fake_results([(100, 0), (200, 0)]))
        assert s.esp is None
        assert s.median_success_shots is None
        assert s.restart_cost is None

    def test_restart_cost(self):
        s = bm.TrialSummary.from_results(fake_results([(100, 1), (300, 0)]))
        assert s.restart_cost == pytest.approx(200.0 / 0.5)

    def test_p90_ordering(self):
        shots = [(s, 1) for s in (100, 200, 300, 400, 500, 600, 700, 800, 900, 1000)]
        s = bm.TrialSummary.from_results(fake_results(shots))
        assert s.p90_shots >= s.median_shots >= 0
        assert min(x for x, _ in shots) <= s.mean_shots <= max(x for x, _ in shots)


class TestHardScreen:
    def test_threshold_inclusive(self):
        assert bm.is_hard(0.95)
        assert bm.is_hard(0.90)
        assert not bm.is_hard(0.9501)

    def test_easy_instance_classified_easy(self):
        inst = generate_instance(10, 4, seed=3)
        label, ratio = bm.hard_screen(inst, DriverConfig(), n_trials=20, cap=1024, master_seed=1)
        assert label == "easy"
        assert ratio > 0.95

    def test_deterministic(self):
        inst = generate_instance(10, 4, seed=3)
        a = bm.hard_screen(inst, DriverConfig(), n_trials=10, cap=256, master_seed=5)
        b = bm.hard_screen(inst, DriverConfig(), n_trials=10, cap=256, master_seed=5)
        assert a == b


class TestCalibration:
    def test_easy_instance_hits_grid_floor(self):
        inst = generate_instance(10, 4, seed=3)
        cal = bm.calibrate_cap(inst, DriverConfig(), n_cal=20, master_seed=2)
        assert cal.cap == 64
        assert not cal.budget_limited
        assert cal.sr_at_cap >= 0.95

    def test_budget_limited_flag(self):
        # force failure by demanding an impossible target
        inst = generate_instance(10, 4, seed=3)
        cal = bm.calibrate_cap(inst, DriverConfig(), n_cal=7, target=1.01, grid=(64, 128),
                               master_seed=2)
        assert cal.cap == 128
        assert cal.budget_limited

    def test_stage2_refines_within_bracket(self):
        # synthetic SR: succeed iff cap >= 300; expect 304 at resolution 16
        class FakeCal:
            def __init__(self):
                self.grid_calls = []

        probes = []

        def sr_at(cap):
            probes.append(cap)
            return 1.0 if cap >= 300 else 0.0

        # reuse the module's bracket logic through a tiny local re-run
        grid = (64, 128, 256, 512)
        found = None
        for i, cap in enumerate(grid):
            if sr_at(cap) >= 0.95:
                found = i
                break
        lo, hi = grid[found - 1], grid[found]
        while hi - lo > 16:
            mid = ((lo + hi) // 2) // 16 * 16
            if mid <= lo or mid >= hi:
                break
            if sr_at(mid) >= 0.95:
                hi = mid
            else:
                lo = mid
        assert hi == 304
        assert hi % 16 == 0

    def test_probes_recorded(self):
        inst = generate_instance(10, 4, seed=3)
        cal = bm.calibrate_cap(inst, DriverConfig(), n_cal=10, master_seed=2)
        assert cal.probes[0]["cap"] == 64
        assert all(set(p) == {"cap", "sr"} for p in cal.probes)


@pytest.fixture(scope="module")
def records():
    inst = generate_instance(10, 4, seed=3)
    recs, trials = bm.evaluate_methods(
        inst, {"uniform": UniformPolicy(), "heuristic": HeuristicPolicy()},
        cap=128, cfg=DriverConfig(), n_trials=20, master_seed=3,
    )
    return recs, trials


class TestEvaluateMethods:

    def test_uniform_self_comparison(self, records):
        recs, _ = records
        uni = next(r for r in recs if r.policy == "uniform")
        assert uni.reduction == pytest.approx(0.0)
        assert uni.esp_ratio == pytest.approx(1.0)

    def test_same_cap_for_all_policies(self, records):
        recs, _ = records
        assert len({r.cap for r in recs}) == 1

    def test_heuristic_spends_less(self, records):
        recs, _ = records
        heur = next(r for r in recs if r.policy == "heuristic")
        assert heur.summary.median_shots <= 128 * 2
        assert heur.reduction is not None and heur.reduction >= 0.0

    def test_trials_keyed_by_policy(self, records):
        _, trials = records
        assert set(trials) == {"uniform", "heuristic"}
        assert all(len(v) == 20 for v in trials.values())

    def test_parallel_jobs_match_serial(self):
        inst = generate_instance(10, 4, seed=3)
        serial = bm.run_trials(inst, UniformPolicy(), 64, 8, DriverConfig(), (9, "x"), jobs=1)
        parallel = bm.run_trials(inst, UniformPolicy(), 64, 8, DriverConfig(), (9, "x"), jobs=2)
        assert [r.total_shots for r in serial] == [r.total_shots for r in parallel]
        assert [r.e_out for r in serial] == [r.e_out for r in parallel]
        assert [r.sigma for r in serial] == [r.sigma for r in parallel]


class TestOperationalFilter:
    def test_threshold_inclusive(self):
        records = [
            record_with(instance_id="a", uniform_sr=0.89),
            record_with(instance_id="b", uniform_sr=0.90),
            record_with(instance_id="c", uniform_sr=1.0),
        ]
        kept, dropped = bm.operational_filter(records)
        assert [r.instance_id for r in kept] == ["b", "c"]
        assert [r.instance_id for r in dropped] == ["a"]

    def test_empty_input(self):
        assert bm.operational_filter([]) == ([], [])

    def test_filter_preserves_metric_values(self):
        rec = record_with(uniform_sr=0.95, reduction=0.25)
        kept, _ = bm.operational_filter([rec])
        assert kept[0].reduction == 0.25


class TestSrFloorCoverage:
    def test_all_perfect(self):
        pairs = [(1.0, 1.0)] * 5
        rows = bm.sr_floor_coverage(pairs, [0.95])
        assert rows[0] == {"tau": 0.95, "first": 5, "second": 5, "delta": 0}

    def test_zero_threshold_counts_everything(self):
        pairs = [(0.1, 0.2), (0.5, 0.4)]
        rows = bm.sr_floor_coverage(pairs, [0.0])
        assert rows[0]["first"] == rows[0]["second"] == 2

    def test_synthetic_22_pair_fixture(self):
        # constructed to land on 13/22 vs 5/22 at tau=0.95
        pairs = [(0.97, 0.96)] * 5 + [(0.96, 0.85)] * 8 + [(0.80, 0.70)] * 9
        rows = bm.sr_floor_coverage(pairs, [0.95])
        assert rows[0]["first"] == 13
        assert rows[0]["second"] == 5
        assert rows[0]["delta"] == 8


class TestAggregate:
    def test_single_pair_identity(self):
        rec = record_with(reduction=0.3, esp_ratio=0.7, sr=0.9)
        rows = bm.aggregate([rec], "policy")
        assert rows == [{
            "group": "heuristic", "pairs": 1, "mean_sr": 0.9,
            "mean_reduction": 0.3, "mean_esp_ratio": 0.7,
        }]

    def test_known_means(self):
        recs = [
            record_with(instance_id="a", reduction=0.2, esp_ratio=0.8, sr=1.0),
            record_with(instance_id="b", reduction=0.4, esp_ratio=0.6, sr=0.8),
        ]
        row = bm.aggregate(recs, "policy")[0]
        assert row["mean_reduction"] == pytest.approx(0.3)
        assert row["mean_esp_ratio"] == pytest.approx(0.7)
        assert row["mean_sr"] == pytest.approx(0.9)

    def test_undefined_esp_excluded_from_mean(self):
        recs = [
            record_with(instance_id="a", reduction=0.2, esp_ratio=0.8),
            record_with(instance_id="b", reduction=0.4, esp_ratio=None),
        ]
        row = bm.aggregate(recs, "policy")[0]
        assert row["mean_esp_ratio"] == pytest.approx(0.8)
        assert row["mean_reduction"] == pytest.approx(0.3)

    def test_per_size_grouping(self):
        recs = [record_with(instance_id="a", n=12), record_with(instance_id="b", n=14)]
        rows = bm.aggregate(recs, "size")
        assert [r["group"] for r in rows] == ["heuristic/12", "heuristic/14"]


class TestCsvRoundTrip:
    def test_records_csv(self, tmp_path):
        recs = [
            record_with(instance_id="a", reduction=0.3, esp_ratio=0.7, esp=100.0),
            record_with(instance_id="b", policy="uniform", reduction=0.0, esp_ratio=1.0),
        ]
        path = tmp_path / "records.csv"
        bm.write_records_csv(recs, path)
        loaded = bm.read_records_csv(path)
        assert [r.instance_id for r in loaded] == ["a", "b"]
        assert loaded[0].reduction == 0.3
        assert loaded[0].summary.esp == 100.0
        assert loaded[1].esp_ratio == 1.0
