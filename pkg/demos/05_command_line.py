# coding: utf-8

# # The command-line tool
#
# `miso` wraps the library: `gen-data` writes LIBSVM files, `solve` runs an
# experiment from flags or a JSON document and writes a CSV trace, `bench`
# runs a grid of schemes and seeds, and `check-surrogates` certifies every
# surrogate family. Here we call the same entry point from Python.

# In[1]:

import json
import os
import tempfile

from miso.cli import main, read_trace_csv

work = tempfile.mkdtemp()
data = os.path.join(work, "train.svm")
print(main(["gen-data", "--T", "400", "--p", "10", "--seed", "3", "--out", data]))
print(open(data).readline().strip())


# Solve l2-logistic regression with MISO1 and read the trace back.

# In[2]:

trace = os.path.join(work, "trace.csv")
code = main(["solve", "--data", data, "--lambda", "0.0025", "--scheme", "miso1", "--epochs", "20",
             "--trace", trace])
rows = read_trace_csv(open(trace))
print("exit", code, " final gap", rows[-1].duality_gap)


# The same experiment along a lambda path, described in JSON. The seed can
# also come from the MISO_SEED environment variable; a --seed flag wins.

# In[3]:

cfg = {"problem": "logistic_l2", "data": data, "lambda_path": [0.02, 0.01, 0.005],
       "solver": {"scheme": "miso1", "epochs": 10}, "output": os.path.join(work, "path.csv")}
with open(os.path.join(work, "exp.json"), "w") as fh:
    json.dump(cfg, fh)
print("exit", main(["solve", "--config", os.path.join(work, "exp.json")]))
print(open(cfg["output"]).read().splitlines()[-1])


# Bad input exits with 2; a diverging miso_mu run exits with 3.

# In[4]:

print("exit", main(["solve", "--data", data, "--lambda", "0.01", "--lambda-path", "0.1,0.2"]))
