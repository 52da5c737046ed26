# %% [markdown]
# # Factor decomposition and the number of factors

# %%
import numpy as np

from farmhazard.factors import decompose, decorrelation_report, estimate_num_factors_act
from farmhazard.simulation import gen_factor_design

rng = np.random.default_rng(3)
x, f, u, b = gen_factor_design(200, 400, 3, rng)

# %%
k_hat = estimate_num_factors_act(x)
print("ACT estimate of K:", k_hat)
print("on pure noise:", estimate_num_factors_act(rng.standard_normal((200, 400))))

# %% [markdown]
# The estimate only sees the correlation matrix, so rescaling columns
# changes nothing.

# %%
print("rescaled:", estimate_num_factors_act(x * rng.uniform(0.1, 10, size=400)))

# %%
dec = decompose(x, k_hat)
rep = decorrelation_report(dec)
for key, val in rep.items():
    print(f"{key:18s} {val:.3f}")
print("augmented design:", dec.augmented().shape)
