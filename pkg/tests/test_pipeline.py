import numpy as np
import pytest

from trippurpose.core import ActivityType
from trippurpose.params import GENE_BY_NAME, GENES, PHASE_OBJECTIVES, ParamVector, detuned_params, phase_genes
from trippurpose.pipeline import Pipeline, infer_corpus


class TestParamVector:
    def test_defaults(self):
        p = ParamVector()
        assert p["sigma"] == 150 and p["search_radius"] == 500 and p.tau == (1.0, 0.6, 0.5)
        assert p["gamma_m"] == 1 and p["gamma_n"] == 1

    def test_clip_and_round(self):
        p = ParamVector(sigma=1e9, cutoff=3.6, eps_poi=-5)
        assert p["sigma"] == GENE_BY_NAME["sigma"].hi
        assert p["cutoff"] == 4.0
        assert p["eps_poi"] == GENE_BY_NAME["eps_poi"].lo

    def test_alpha_made_monotone(self):
        p = ParamVector(alpha_short=0.8, alpha_mid=0.4, alpha_long=0.5)
        assert (p["alpha_short"], p["alpha_mid"], p["alpha_long"]) == (0.8, 0.8, 0.8)

    def test_unknown_key(self):
        with pytest.raises(KeyError):
            ParamVector(bogus=1)

    def test_phases_partition_genes(self):
        names = [n for ph in (1, 2, 3) for n in phase_genes(ph)]
        assert sorted(names) == sorted(g.name for g in GENES)
        assert PHASE_OBJECTIVES[3] == ("hcr_mandatory", "hcr_nonmandatory")

    def test_hash_and_digest(self):
        a, b = ParamVector(sigma=200), ParamVector().replace(sigma=200)
        assert a == b and hash(a) == hash(b) and a.digest() == b.digest()
        assert a.digest() != ParamVector().digest()

    def test_array_round_trip(self):
        p = detuned_params()
        names = phase_genes(1)
        assert p.with_array(names, p.array(names)) == p


@pytest.fixture(scope="module")
def labeled(small_corpus):
    return infer_corpus(small_corpus.sp, small_corpus.pois, small_corpus.ref)


class TestInference:
    def test_every_staypoint_labeled(self, labeled, small_corpus):
        sp = labeled.staypoints
        assert len(sp) == len(small_corpus.sp)
        assert np.all(sp.label >= 1) and np.all((sp.confidence >= 0) & (sp.confidence <= 1))

    def test_recovers_anchors(self, labeled, small_corpus):
        truth = small_corpus.truth.label_staypoints(labeled.staypoints)
        lab = labeled.staypoints.label
        assert np.mean(lab[truth == 1] == 1) > 0.95
        assert np.mean(lab[truth == 2] == 2) > 0.85

    def test_one_home_per_agent(self, labeled):
        sp = labeled.staypoints
        for a, asg in enumerate(labeled.assignments):
            rows = np.flatnonzero(sp.agent == a)
            if asg.home is None:
                continue
            home_rows = rows[sp.label[rows] == ActivityType.HOME]
            assert np.unique(sp.confidence[home_rows]).size <= 1

    def test_workers_identical(self, small_corpus, labeled):
        par = infer_corpus(small_corpus.sp, small_corpus.pois, small_corpus.ref, workers=2, chunk_agents=9)
        assert np.array_equal(par.staypoints.label, labeled.staypoints.label)
        assert np.array_equal(par.staypoints.confidence, labeled.staypoints.confidence, equal_nan=True)
        assert par.theta_exist == labeled.theta_exist

    def test_cache_consistent(self, small_corpus):
        pipe = Pipeline(small_corpus.sp, small_corpus.pois, small_corpus.ref)
        a = pipe.run(ParamVector(sigma=300))
        pipe.run(ParamVector(delta=0.05))
        b = pipe.run(ParamVector(sigma=300))
        fresh = Pipeline(small_corpus.sp, small_corpus.pois, small_corpus.ref).run(ParamVector(sigma=300))
        assert np.array_equal(a.staypoints.label, b.staypoints.label)
        assert np.array_equal(a.staypoints.label, fresh.staypoints.label)
        assert np.array_equal(a.staypoints.confidence, fresh.staypoints.confidence)

    def test_confidence_transform_keeps_labels(self, labeled):
        t = labeled.with_confidence_transform(2.5, 3.0)
        assert np.array_equal(t.staypoints.label, labeled.staypoints.label)
        nm = labeled.nm_rows
        assert np.all(t.staypoints.confidence[nm] >= labeled.staypoints.confidence[nm] - 1e-12)

    def test_transform_matches_rerun(self, small_corpus):
        pipe = Pipeline(small_corpus.sp, small_corpus.pois, small_corpus.ref)
        p = ParamVector(gamma_m=1.7, gamma_n=2.2)
        direct = pipe.run(p)
        via = pipe.run(ParamVector()).with_confidence_transform(1.7, 2.2)
        assert np.allclose(direct.staypoints.confidence, via.staypoints.confidence, atol=1e-12)
