"""
Example data files
==================

Writes the small CSV files that the configs in ``configs/`` point at:

* ``campaign_A.csv``: 30 field rows from site A plus 30 simulated rows,
  in the tagged format (feature columns, ``target``, ``source``).
* ``query.csv``: 25 reflectance vectors to predict at.
* ``series.csv``: two outputs sharing one latent force, with a gap.

Everything is drawn from the generator settings in ``configs/samesite.yaml``
and ``configs/gapfill.yaml`` so the files can be rebuilt bit for bit.
"""

import os

import yaml

from physgp.harness import CampaignSpec, GapFillSpec, write_series_csv, write_tagged_csv
from physgp.harness.synthetic import BANDS

root = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "configs")
out = os.path.join(root, "data")
os.makedirs(out, exist_ok=True)

with open(os.path.join(root, "samesite.yaml")) as fh:
    campaign = CampaignSpec.from_dict(yaml.safe_load(fh)["campaign"])

data = campaign.campaign("A", n_real=30, n_sim=30, seed=7)
write_tagged_csv(os.path.join(out, "campaign_A.csv"), data, list(BANDS))

# query points: a separate draw from the same site
Xq, _ = campaign.real("A", 25, seed=8)
with open(os.path.join(out, "query.csv"), "w") as fh:
    fh.write(",".join(BANDS) + "\n")
    for row in Xq:
        fh.write(",".join(repr(float(v)) for v in row) + "\n")

with open(os.path.join(root, "gapfill.yaml")) as fh:
    gap = GapFillSpec.from_dict(yaml.safe_load(fh)["gapfill"])
series, mask = gap.draw(seed=3)
write_series_csv(os.path.join(out, "series.csv"), series.drop(gap.gap_output, mask))

print("wrote", sorted(os.listdir(out)))
print("field rows:", data.n_real, " simulated rows:", data.n - data.n_real)
print("series samples per output:", series.drop(gap.gap_output, mask).counts)
