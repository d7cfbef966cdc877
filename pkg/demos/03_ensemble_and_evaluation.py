# coding: utf-8

# # Combining models and judging sparse forecasts
#
# Several thematic models each give a monthly probability. They are first
# recalibrated one at a time, then blended with weights estimated by EM on
# the Bernoulli mixture likelihood. Events are rare, so the fit statistics
# need some care.

# %%

import numpy as np
import pandas as pd

from ilcforecast import ebma, evaluation as ev

rng = np.random.default_rng(3)

# ## Three components
#
# One component tracks the true risk, one is a noisier copy and one is pure
# noise. Outcomes are rare, about 2% of months.

# %%

n = 6000
risk = np.clip(np.exp(rng.normal(-4.5, 1.0, n)), 0, 0.6)
y = (rng.random(n) < risk).astype(int)
raw = pd.DataFrame({
    "Signal": risk,
    "Noisy": np.clip(risk * np.exp(rng.normal(0, 0.8, n)), 1e-6, 0.99),
    "Noise": rng.uniform(0.0, 0.05, n),
})
print("event rate:", y.mean())

# %%

ens = ebma.fit_ensemble(raw, y)
print(ens.weight_table().round(3))
for name, cal in ens.calibrations.items():
    print(f"{name:>6}: a0 {cal.a0:7.3f}  a1 {cal.a1:6.3f}")

# The EM log-likelihood never decreases from one iteration to the next.

# %%

print("EM iterations:", ens.iterations, " monotone:", bool(np.all(np.diff(ens.history) >= 0)))

# ## Cut points and the accuracy trap
#
# Predicting "no event" everywhere is right about 98% of the time and useless.
# Cut points are chosen to maximise the F-score instead of accuracy.

# %%

p = ens.predict(raw)
zero = ev.metrics(ev.confusion(np.zeros(n), y, 0.0))
tau = ev.optimal_tau(p, y)
model = ev.metrics(ev.confusion(p, y, tau))
print(f"always zero: accuracy {zero['accuracy']:.3f} recall {zero['recall']:.3f}")
print(f"ensemble at tau={tau:.4f}: accuracy {model['accuracy']:.3f} "
      f"recall {model['recall']:.3f} precision {model['precision']:.3f}")

# The same arithmetic on published confusion counts reproduces the rates
# quoted for them.

# %%

print(ev.metrics(ev.ConfusionCounts(tn=25627, fp=77, fn=40, tp=4)))

# ## Ranking quality
#
# AUC is computed from ranks. A sweep over thresholds gives the ROC curve,
# and integrating it with trapezoids gives the same number.

# %%

curve, auc = ev.roc_auc(p, y)
print(f"rank AUC {auc:.6f}  trapezoid AUC {ev.auc_trapezoid(curve):.6f}")
sep = ev.separation_plot_data(p, y)
print(sep.tail())

# ## Near misses
#
# An alarm a few months before or after an event in the same country is not
# much of a false alarm. Revised precision counts such alarms as hits.

# %%

# lay the rows out as 50 countries observed for 120 consecutive months
step = np.arange(n) % 120
frame = pd.DataFrame({"country_id": 1 + np.arange(n) // 120, "year": 2001 + step // 12,
                      "month": 1 + step % 12, "p": p, "y": y})
print("precision:", round(model["precision"], 3),
      " within 6 months:", round(ev.fuzzy_precision(frame, tau, window=6), 3))

# ## Country-years
#
# Monthly probabilities combine to a yearly one as 1 - prod(1 - p).

# %%

print(ev.annualize(frame).head())
