# coding: utf-8

# # The whole pipeline on the bundled demo data
#
# The package ships a small synthetic panel: six fictional countries observed
# monthly from April 2009 to March 2014, with a leader history, protest
# event counts and capital coordinates. The bundled configuration builds
# spells and covariates, fits three thematic models on the training months,
# calibrates an ensemble on the calibration months, scores every partition
# and forecasts the next six months.
#
# The same run from a shell:
#
#     ilcforecast run --config src/ilcforecast/data/demo.yaml --out artifacts

# %%

import sys
import tempfile
from pathlib import Path

import pandas as pd

from ilcforecast import config, synthetic
from ilcforecast.pipeline import STAGE_NAMES, run, verify_manifest

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "artifacts"
cfg = config.load(synthetic.demo_config_path())
print("stages:", ", ".join(STAGE_NAMES))
run(cfg, out)
print("artifacts in", out)

# Every stage records hashes of its inputs and outputs, and the manifest
# lets a later reader check that nothing was edited.

# %%

print("manifest mismatches:", verify_manifest(out))

# ## What the stages wrote

# %%

print(pd.read_csv(out / "variance" / "variance_report.csv").round(3))

# %%

for name in ("protest", "contagion", "economy"):
    print(pd.read_csv(out / "fits" / f"{name}_coefficients.csv").round(3), "\n")

# %%

print(pd.read_csv(out / "ensemble" / "weights.csv"))

# %%

report = pd.read_csv(out / "evaluation" / "fit_report.csv")
cols = ["block", "partition", "model", "W", "auc", "tau", "accuracy", "recall", "precision"]
print(report.loc[report.block == "monthly", cols].round(3).to_string(index=False))

# ## Forecast

# %%

print((out / "forecast" / "report.txt").read_text())
