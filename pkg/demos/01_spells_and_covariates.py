# coding: utf-8

# # Building duration data from a monthly panel
#
# A split-population duration model needs, for every country-month, how long
# the current spell has lasted and whether it ended in a failure that month.
# This script walks through that step and the covariate transforms that come
# after it, on small hand-made inputs.

# %%

import numpy as np
import pandas as pd

from ilcforecast import spatial
from ilcforecast.panel_store import (from_month_index, lag_covariate, log_transform,
                                     month_index)
from ilcforecast.spells import build_spells, cross_tabulate


def monthly_panel(cid, start, end):
    ym = [from_month_index(i) for i in range(month_index(*start), month_index(*end) + 1)]
    return pd.DataFrame({"country_id": cid, "year": [y for y, _ in ym],
                         "month": [m for _, m in ym]})


# ## Spells
#
# The panel starts in March 2001 but the leader history goes back further.
# Country 432 had a failure in mid 2002 and two back-to-back failures in
# spring 2012; the counter resets to 1 the month after each one.

# %%

panel = monthly_panel(432, (2001, 3), (2012, 8))
history = pd.DataFrame({"country_id": 432, "year": [2002, 2012, 2012], "month": [6, 3, 4],
                        "irr_exit": 1})
out, table = build_spells(history, panel, backfill_start=(1955, 1), return_spells=True)
print(out.loc[out.year == 2012, ["year", "month", "duration", "failure", "atrisk"]])

# %%

# one row per spell: where it starts and ends, and how it ended
print(table)

# A country with no failure at all counts from the backfill start. March 2001
# is month 555 when counting from January 1955.

# %%

quiet = build_spells(pd.DataFrame({"country_id": [7], "year": [1955], "month": [1],
                                   "irr_exit": [0]}),
                     monthly_panel(7, (2001, 3), (2001, 5)), (1955, 1))
print(quiet[["year", "month", "duration", "atrisk"]])

# ## Lags and logs
#
# Event counts are lagged one month so that a forecast only uses what was
# known beforehand. A lag that would reach across a gap in the panel is left
# missing instead of borrowing a stale value.

# %%

counts = monthly_panel(1, (2001, 1), (2001, 6)).assign(protests=[0, 3, 12, 0, 99, 4])
counts = lag_covariate(counts, "protests", 1)
counts = log_transform(counts, "protests.l1", base=10)
print(counts)

# ## Spatial lags
#
# Neighbours are the four nearest capitals by great-circle distance, each
# with weight 1/4. The spatial lag is the weighted mean of the neighbours'
# values in the same month.

# %%

centroids = {1: (0.0, 0.0), 2: (0.0, 1.0), 3: (0.0, 2.0), 4: (1.0, 0.5),
             5: (2.0, 2.0), 6: (10.0, 10.0)}
w = spatial.knn4_weights(centroids)
print(pd.DataFrame(w.weights, index=w.ids, columns=w.ids))

# %%

values = pd.concat([monthly_panel(c, (2001, 1), (2001, 1)) for c in centroids],
                   ignore_index=True)
values["x"] = [1.0, 2.0, 3.0, 4.0, 5.0, 60.0]
print(spatial.spatial_lag(values, "x", w)[["country_id", "x", "W.knn4.x"]])

# Similarity weights work the same way but come from Gower dissimilarity of
# country attributes rather than geography.

# %%

feats = pd.DataFrame({"polity": [-7, -6, 8, 9, 0], "xconst": [1, 2, 7, 7, 3]},
                     index=[1, 2, 3, 4, 5])
g = spatial.gower_weights(feats, "pol")
print(np.round(g.weights, 3))

# ## Entries and exits
#
# Irregular exits and entries mostly happen together, but not always.

# %%

flags = pd.DataFrame({"irr_exit": [0, 0, 1, 1, 0, 1], "irr_entry": [0, 1, 1, 1, 0, 0]})
print(cross_tabulate(flags, "irr_exit", "irr_entry"))
