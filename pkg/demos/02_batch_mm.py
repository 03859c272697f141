# coding: utf-8

# # Batch majorization-minimization
#
# Each iteration builds a surrogate of the whole objective at the current
# point and jumps to its minimizer. With the Lipschitz-gradient family this
# is gradient descent with step 1/L; with a convex penalty it is the
# proximal gradient method.

# In[1]:

import numpy as np

from miso import LinearModelProblem, LogisticL2Problem, PenaltyTerm, batch_mm, gen_data, normalize_rows


# l2-logistic regression on a small synthetic set. The trace records the
# objective and the relative duality gap after every iteration.

# In[2]:

data = normalize_rows(gen_data("dense_gaussian", T=500, p=10, seed=1))
prob = LogisticL2Problem(data, lam=1e-2)
theta, trace = batch_mm(prob, None, np.zeros(prob.p), iterations=200, record_every=20)
for r in trace:
    print(f"iter {r.iteration:4d}  objective {r.objective:.12f}  gap {r.duality_gap:.2e}")


# The objective never goes up: batch_mm raises InvariantError if it does.

# In[3]:

objs = [r.objective for r in trace]
print("monotone:", all(b <= a for a, b in zip(objs, objs[1:])))


# A lasso problem uses the proximal-gradient family, so iterates become
# exactly sparse.

# In[4]:

lin, truth = gen_data("dense_gaussian", T=300, p=30, label_model="linear_noise", support=4,
                      sigma=0.05, seed=2, return_truth=True)
lasso = LinearModelProblem(lin, "squared", 0.0, PenaltyTerm("l1", 0.05))
theta, trace = batch_mm(lasso, None, np.zeros(30), iterations=2000, tol=1e-10, record_every=0)
print("true support:     ", np.flatnonzero(truth))
print("recovered support:", np.flatnonzero(theta))
print("residual:", lasso.stationarity_residual(theta))


# The quadratic family uses a curvature matrix instead of a scalar L and
# solves least squares in a single step.

# In[5]:

ridge = LinearModelProblem(lin, "squared", 0.1)
theta, _ = batch_mm(ridge, "quadratic", np.zeros(30), iterations=1)
print("gradient norm after one step:", np.linalg.norm(ridge.smooth_gradient(theta)))
