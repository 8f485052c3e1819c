"""Acceptance suite.

Each test carries a ``criterion`` marker; the conftest hook folds the
outcomes into one PASS/FAIL line per criterion with the measured values.
Run alone with ``pytest tests/test_acceptance.py -s``.
"""
import math
import time
from types import SimpleNamespace

import numpy as np
import pytest

from trippurpose.calibration import run_phases, scaled_subsample
from trippurpose.cli import main
from trippurpose.core import N_ACTIVITIES, NON_MANDATORY, ActivityType, Staypoint, haversine
from trippurpose.metrics import build_report, hcr, jsd
from trippurpose.nonmandatory import ScoringParams, corrected_priors, score_staypoint
from trippurpose.nsga2 import non_dominated_sort
from trippurpose.params import ParamVector, detuned_params
from trippurpose.pipeline import Pipeline, infer_corpus
from trippurpose.robustness import NOISE_LEVELS_M, match_and_score, match_staypoints, perturb_pings, poi_experiment
from trippurpose.staypoints import dbscan_haversine, extract_staypoints
from trippurpose.synthetic import SyntheticConfig, default_reference, generate_synthetic, survey_reference
from trippurpose.tables import StaypointTable
from trippurpose.zones import EPS_POI_M, MIN_PTS_POI

from oracles import dbscan_oracle, join_oracle, rank_oracle

N_AGENTS = 5000
ANCHOR_RADIUS_M = 200.0
MATCH_TOLERANCE_S = 300
MONDAY = 1546819200


def _note(record_property, **kw):
    for k, v in kw.items():
        record_property(k, f"{v:.4g}" if isinstance(v, float) else v)


@pytest.fixture(scope="module")
def corpus():
    """5k agents over two weeks, a survey from an independent 5k-agent
    sample, extracted staypoints and one default inference run."""
    t0 = time.perf_counter()
    pings, pois, truth = generate_synthetic(SyntheticConfig(n_agents=N_AGENTS, n_days=14), seed=1)
    _, _, survey = generate_synthetic(SyntheticConfig(n_agents=N_AGENTS, n_days=14), seed=99, emit_pings=False)
    ref = survey_reference(survey)
    t_gen = time.perf_counter() - t0
    t0 = time.perf_counter()
    sp = extract_staypoints(pings)
    t_extract = time.perf_counter() - t0
    t0 = time.perf_counter()
    res = infer_corpus(sp, pois, ref)
    t_infer = time.perf_counter() - t0
    return SimpleNamespace(pings=pings, pois=pois, truth=truth, ref=ref, sp=sp, res=res,
                           t_gen=t_gen, t_extract=t_extract, t_infer=t_infer)


# ---------------------------------------------------------------------------
# 1. metric correctness

@pytest.mark.criterion(1, "metric correctness")
def test_metric_correctness(record_property):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    for _ in range(100):
        p = rng.dirichlet(np.ones(96))
        assert jsd(p, p) == 0.0
    assert jsd([1, 0], [0, 1]) == pytest.approx(1.0, abs=1e-9)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 97))
        p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        a, b = jsd(p, q), jsd(q, p)
        worst = max(worst, abs(a - b))
        assert 0.0 <= a <= 1.0
    assert worst <= 1e-12
    for _ in range(100):
        c = np.round(rng.random(int(rng.integers(1, 80))), 2)
        assert hcr(c, 0.5)[0] == sum(1 for x in c if x >= 0.5) / len(c)
    dt = time.perf_counter() - t0
    _note(record_property, symmetry_max_diff=worst, runtime_s=dt)
    assert dt < 1.0


# ---------------------------------------------------------------------------
# 2. oracle equivalences

@pytest.fixture(scope="module")
def oracle_clock():
    return {"total": 0.0}


def _world_pois(n, seed):
    _, pois, _ = generate_synthetic(SyntheticConfig(n_agents=0), seed=seed, emit_pings=False)
    rows = np.sort(np.random.default_rng(seed).choice(len(pois), n, replace=False))
    return pois.take(rows)


class TestOracleEquivalence:
    @pytest.mark.criterion(2, "oracle equivalences")
    @pytest.mark.parametrize("seed", range(3))
    def test_dbscan(self, seed, oracle_clock):
        pois = _world_pois(500, seed)
        t0 = time.perf_counter()
        for eps, min_pts in ((EPS_POI_M, MIN_PTS_POI), (250.0, 2)):
            got = dbscan_haversine(pois.lat, pois.lon, eps, min_pts)
            assert np.array_equal(got, dbscan_oracle(pois.lat, pois.lon, eps, min_pts))
        oracle_clock["total"] += time.perf_counter() - t0

    @pytest.mark.criterion(2, "oracle equivalences")
    def test_non_dominated_sort(self, oracle_clock):
        rng = np.random.default_rng(2)
        t0 = time.perf_counter()
        for _ in range(200):
            n, m = int(rng.integers(1, 51)), int(rng.integers(2, 4))
            F = rng.integers(0, 6, (n, m)).astype(float) if rng.random() < 0.5 else rng.random((n, m))
            assert np.array_equal(non_dominated_sort(F), rank_oracle(F))
        oracle_clock["total"] += time.perf_counter() - t0

    @pytest.mark.criterion(2, "oracle equivalences")
    def test_scoring(self, oracle_clock):
        rng = np.random.default_rng(3)
        ref = default_reference(-480)
        params = ScoringParams(epsilon=1e-3)
        tod, dur = corrected_priors(ref, params)
        t0 = time.perf_counter()
        for _ in range(100):
            start = MONDAY + int(rng.integers(0, 7 * 86400))
            d = int(rng.integers(300, 10 * 3600))
            p = rng.dirichlet(np.ones(15) * 0.5)
            s = Staypoint("u", 34.0, -118.0, start, start + d)
            label, conf, post = score_staypoint(s, p, ref, params)
            slot = ((start - 480 * 60) % 86400) // 900
            b = min(d // 900, 95)
            alpha = 0.3 if b < 4 else 0.7 if b < 8 else 1.0
            scores = [(p[3 + k] + 1e-3) * (tod[k, slot] + 1e-3) * math.pow(dur[k, b] + 1e-3, alpha) for k in range(12)]
            z = math.fsum(scores)
            assert np.allclose(post, [x / z for x in scores], rtol=1e-12, atol=0)
            assert label is NON_MANDATORY[int(np.argmax(scores))]
        oracle_clock["total"] += time.perf_counter() - t0

    @pytest.mark.criterion(2, "oracle equivalences")
    @pytest.mark.parametrize("tol", [0, MATCH_TOLERANCE_S])
    def test_join(self, tol, oracle_clock):
        rng = np.random.default_rng(4)
        n = 1000
        ids = [f"u{i}" for i in range(20)]
        agent = np.sort(rng.integers(0, 20, n))
        t0s = rng.integers(0, 10**6, n) // 60 * 60
        orig = StaypointTable.from_arrays(ids, agent, np.zeros(n), np.zeros(n), t0s, t0s + 600)
        keep = rng.random(n) < 0.9
        jit = rng.choice([0, 0, 60, 240, 400], (2, n))
        pert = StaypointTable.from_arrays(ids, agent[keep], np.zeros(keep.sum()), np.zeros(keep.sum()),
                                          (t0s + jit[0])[keep], (t0s + 600 + jit[1])[keep])
        t0 = time.perf_counter()
        assert np.array_equal(match_staypoints(orig, pert, tol), join_oracle(orig, pert, tol))
        oracle_clock["total"] += time.perf_counter() - t0

    @pytest.mark.criterion(2, "oracle equivalences")
    def test_total_runtime(self, oracle_clock, record_property):
        _note(record_property, runtime_s=oracle_clock["total"])
        assert oracle_clock["total"] < 30.0


# ---------------------------------------------------------------------------
# 3. synthetic ground-truth recovery

def _centroid_hits(sp, truth, code_of_agent, lat_ref, lon_ref):
    """Per agent: whether the staypoints labeled with the agent's anchor
    code have their centroid within the anchor radius of the planted site."""
    pos = {a: i for i, a in enumerate(truth.agent_ids)}
    hits = {}
    for j, aid in enumerate(sp.agent_ids):
        i = pos[aid]
        code = code_of_agent[i]
        if code == 0:
            continue
        rows = np.flatnonzero((sp.agent == j) & (sp.label == code))
        if rows.size == 0:
            hits[i] = False
            continue
        d = haversine(sp.lat[rows].mean(), sp.lon[rows].mean(), lat_ref[i], lon_ref[i])
        hits[i] = bool(d <= ANCHOR_RADIUS_M)
    return hits


@pytest.mark.criterion(3, "synthetic ground-truth recovery")
def test_ground_truth_recovery(corpus, record_property):
    sp, truth = corpus.res.staypoints, corpus.truth
    home = _centroid_hits(sp, truth, np.ones(len(truth.agent_ids), dtype=int), truth.home_lat, truth.home_lon)
    work = _centroid_hits(sp, truth, truth.mand_type.astype(int), truth.mand_lat, truth.mand_lon)
    # agents whose trace produced no staypoints at all count as misses
    n_home = len(truth.agent_ids)
    n_work = int((truth.mand_type > 0).sum())
    home_rate = sum(home.values()) / n_home
    work_rate = sum(work.values()) / n_work
    true = truth.label_staypoints(sp)
    scored = true > 0
    acc = float(np.mean(sp.label[scored] == true[scored]))
    runtime = corpus.t_gen + corpus.t_extract + corpus.t_infer
    _note(record_property, home=home_rate, work=work_rate, accuracy=acc, staypoints=len(sp), runtime_s=runtime)
    assert home_rate >= 0.95
    assert work_rate >= 0.85
    assert acc >= 0.60
    assert runtime < 600


# ---------------------------------------------------------------------------
# 4. calibration efficacy

@pytest.fixture(scope="module")
def calibration(corpus):
    t0 = time.perf_counter()
    res = run_phases(corpus.sp, corpus.pois, corpus.ref, start=detuned_params(), generations=(30, 30, 30),
                     pop_size=40, subsample=scaled_subsample(N_AGENTS), seed=0)
    return res, time.perf_counter() - t0


@pytest.mark.criterion(4, "calibration efficacy")
def test_phase1_improves_start(calibration, record_property):
    res, dt = calibration
    before, after = res.phases[0].report_before, res.phases[0].report_after
    rel = 1 - after["jsd_start"] / before["jsd_start"]
    _note(record_property, jsd_start_before=before["jsd_start"], jsd_start_after=after["jsd_start"],
          relative_gain=rel, jsd_freq_before=before["jsd_freq"], jsd_freq_after=after["jsd_freq"], runtime_s=dt)
    assert after["jsd_start"] <= 0.8 * before["jsd_start"]
    assert after["jsd_freq"] <= before["jsd_freq"]
    assert dt < 7200


@pytest.mark.criterion(4, "calibration efficacy")
def test_later_phases_no_regression(calibration, record_property):
    res, _ = calibration
    worst = 0.0
    for tr in res.phases[1:]:
        for k in ("jsd_freq", "jsd_start", "jsd_dur"):
            worst = max(worst, tr.report_after[k] - tr.report_before[k])
        for k in ("hcr_mandatory", "hcr_nonmandatory"):
            worst = max(worst, tr.report_before[k] - tr.report_after[k])
    _note(record_property, worst_regression=worst)
    assert worst <= 0.01


@pytest.mark.criterion(4, "calibration efficacy")
def test_phase3_labels_frozen(calibration, corpus, record_property):
    res, _ = calibration
    pipe = Pipeline(corpus.sp, corpus.pois, corpus.ref)
    lab2 = pipe.run(ParamVector(res.phases[1].params)).staypoints.label
    run3 = pipe.run(res.params)
    h2 = np.bincount(lab2, minlength=N_ACTIVITIES + 1)
    h3 = np.bincount(run3.staypoints.label, minlength=N_ACTIVITIES + 1)
    before, after = res.phases[2].report_before, res.phases[2].report_after
    _note(record_property, hcr_m=f"{before['hcr_mandatory']:.4f}->{after['hcr_mandatory']:.4f}",
          hcr_n=f"{before['hcr_nonmandatory']:.4f}->{after['hcr_nonmandatory']:.4f}")
    assert np.array_equal(h2, h3)
    assert np.array_equal(lab2, run3.staypoints.label)
    assert after["hcr_mandatory"] >= before["hcr_mandatory"]
    assert after["hcr_nonmandatory"] >= before["hcr_nonmandatory"]
    final = build_report(run3.staypoints, corpus.ref, run3.flagged)
    assert final.hcr_mandatory == pytest.approx(res.final_report.hcr_mandatory, abs=1e-12)


# ---------------------------------------------------------------------------
# 5. robustness

@pytest.fixture(scope="module")
def robustness(corpus):
    t0 = time.perf_counter()
    original = corpus.res.staypoints
    noise = []
    for k, sigma in enumerate(NOISE_LEVELS_M):
        noisy = perturb_pings(corpus.pings, sigma, seed=k)
        labeled = infer_corpus(extract_staypoints(noisy), corpus.pois, corpus.ref).staypoints
        del noisy
        rep = match_and_score(original, labeled, MATCH_TOLERANCE_S, "noise", sigma)
        exact = float(np.mean(match_staypoints(original, labeled, 0) >= 0))
        noise.append((rep, exact))
    poi = poi_experiment(corpus.sp, corpus.pois, corpus.ref, rates=(0.10,), seed=0, original=original)[0]
    return noise, poi, time.perf_counter() - t0


@pytest.mark.criterion(5, "robustness reproduction")
def test_noise_match_rate(robustness, record_property):
    noise, _, dt = robustness
    for rep, exact in noise:
        _note(record_property, **{f"match_{rep.level:g}m": rep.match_rate, f"exact_{rep.level:g}m": exact})
    _note(record_property, runtime_s=dt)
    assert all(rep.match_rate >= 0.99 for rep, _ in noise)
    assert dt < 1800


@pytest.mark.criterion(5, "robustness reproduction")
def test_confidence_strata(robustness, record_property):
    noise, poi, _ = robustness
    gaps = {rep.level: rep.gap for rep, _ in noise}
    for rep, _ in noise:
        _note(record_property, **{f"high_{rep.level:g}m": rep.stability_high, f"low_{rep.level:g}m": rep.stability_low})
    _note(record_property, gap5=gaps[5.0], gap20=gaps[20.0], gap_poi10=poi.gap)
    assert all(rep.stability_high > rep.stability_low for rep, _ in noise)
    assert gaps[20.0] > gaps[5.0]
    assert poi.gap > gaps[20.0]


@pytest.mark.criterion(5, "robustness reproduction")
def test_home_stability(robustness, record_property):
    noise, _, _ = robustness
    home = [rep.per_activity[int(ActivityType.HOME)] for rep, _ in noise]
    _note(record_property, home_min=min(home))
    assert min(home) >= 0.99


# ---------------------------------------------------------------------------
# 6. determinism

@pytest.mark.criterion(6, "determinism")
def test_full_chain_byte_identical(tmp_path, record_property):
    out = tmp_path / "run"
    steps = [
        ["synth", "--set", "synth.n_agents=150", "--set", "synth.survey_agents=500"],
        ["extract"],
        ["infer"],
        ["evaluate"],
    ]
    names = ("pings.csv", "staypoints.csv", "labeled_staypoints.csv", "report.json")
    snapshots = []
    for _ in range(2):
        for step in steps:
            assert main(step + ["-o", str(out), "--seed", "11"]) == 0
        snapshots.append({n: (out / n).read_bytes() for n in names})
    same = [n for n in names if snapshots[0][n] == snapshots[1][n]]
    _note(record_property, identical=",".join(same))
    assert same == list(names)
