# coding: utf-8

# # First-order surrogates
#
# A surrogate g of f at an anchor kappa agrees with f at kappa, has the same
# gradient there, majorizes f, and the error h = g - f has an L-Lipschitz
# gradient. This demo builds the simplest one by hand, then certifies every
# family shipped with the package on random problems.

# In[1]:

import numpy as np

from miso.surrogates import LipschitzGradientSurrogate, certify_all, check_surrogate

rng = np.random.default_rng(0)


# A smooth convex function: an average of logistic losses.

# In[2]:

X = rng.standard_normal((50, 3))
y = np.sign(rng.standard_normal(50))


def f(theta):
    return float(np.mean(np.logaddexp(0.0, -y * (X @ theta))))


def grad(theta):
    s = -y / (1.0 + np.exp(y * (X @ theta)))
    return X.T @ s / len(y)


L_f = 0.25 * np.linalg.eigvalsh(X.T @ X / len(y)).max()
kappa = rng.standard_normal(3)
g = LipschitzGradientSurrogate(f(kappa), grad(kappa), kappa, L_f, convex=True)
print(g)


# The checker samples points around kappa and measures how far each
# property is from holding.

# In[3]:

rep = check_surrogate(f, g, kappa, g.L, n_samples=2000, rng=rng)
print("largest f - g:", rep.max_violation)
print("tightness gap:", rep.tightness_gap)
print("certified:", rep.ok)


# Minimizing the surrogate is one gradient step, and it never increases f.

# In[4]:

theta = g.minimize()
print("f(kappa) =", f(kappa), " f(argmin g) =", f(theta))


# Every family at once, the same check as `miso check-surrogates`.

# In[5]:

for family, reports in certify_all(n_problems=5, n_samples=500).items():
    print(f"{family:22s}", sum(r.ok for r in reports), "/", len(reports))
