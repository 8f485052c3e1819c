"""Label a small synthetic city and compare against the planted truth.

    python demos/label_synthetic_city.py [n_agents]
"""
import sys

import numpy as np

from trippurpose.core import ActivityType
from trippurpose.metrics import build_report
from trippurpose.pipeline import infer_corpus
from trippurpose.staypoints import extract_staypoints
from trippurpose.synthetic import SyntheticConfig, generate_synthetic, survey_reference


def main(n_agents=300):
    pings, pois, truth = generate_synthetic(SyntheticConfig(n_agents=n_agents), seed=1)
    # the survey is an independent sample of the same population
    _, _, survey = generate_synthetic(SyntheticConfig(n_agents=2000), seed=2, emit_pings=False)
    ref = survey_reference(survey)
    print(f"{len(pings)} pings, {len(pois)} POIs")

    sp = extract_staypoints(pings)
    res = infer_corpus(sp, pois, ref)
    labeled = res.staypoints
    true = truth.label_staypoints(labeled)
    ok = true > 0
    print(f"{len(labeled)} staypoints, accuracy {np.mean(labeled.label[ok] == true[ok]):.3f}")

    print("\nper activity: recall / share of inferred labels")
    for a in ActivityType:
        sel = true == int(a)
        if sel.any():
            print(f"  {a.name:<20} {np.mean(labeled.label[sel] == int(a)):.3f}  {np.mean(labeled.label == int(a)):.3f}")

    rep = build_report(labeled, ref, res.flagged)
    print("\nagreement with the survey:")
    for k, v in rep.headline().items():
        print(f"  {k:<18} {v:.4f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 300)
