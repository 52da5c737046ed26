# %% [markdown]
# # A small simulation study
#
# The shipped presets run 200 replications; here we use a handful so the
# script finishes in about a minute. The same thing is available as
# `farmhazard simulate --preset table1 --replications 10`.

# %%
from farmhazard.simulation import expand_configs, load_preset, run_experiment

cfgs = expand_configs(load_preset("table1"), {"replications": 10, "seed": 1,
                                               "methods": ["lasso", "farmhazard_l", "farmhazard_s"]})
cfg = next(c for c in cfgs if c.label == "beta1_p500")

# %%
report = run_experiment(cfg)
for row in report.rows:
    ci = row.sign_rate
    print(f"{row.method:13s} sign {ci.rate:.2f} [{ci.lower:.2f}, {ci.upper:.2f}]  "
          f"size {row.size_mean:.2f} +/- {row.size_2se:.2f}")
print("censoring rate:", round(report.mean_censor_rate, 3))

# %%
print(report.to_csv())
