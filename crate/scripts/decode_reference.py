"""Independent check of the cross-validated logistic decoder on the seeded
fixture used by the represent unit tests (scikit-learn, C = 1 / l2)."""
import sys
import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import f1_score, roc_auc_score

sys.argv = sys.argv[:1]
exec(open(__file__.replace("decode_reference.py", "rng_reference.py")).read().split("ids=[")[0])
import math

def f64(r): return (r.u() >> 11) * (1.0 / (1 << 53))
def normal(r):
    u1 = 1.0 - f64(r); u2 = f64(r)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

def decodable(n, positives, dim, seed):
    r = R(seed); X = []; y = []
    for i in range(n):
        row = [normal(r) for _ in range(dim)]
        row[0] = 1.0 if i < positives else 0.0
        X.append(row); y.append(i < positives)
    return np.array(X), y

def folds(labels, k, seed):
    r = der(seed, "folds")
    pos = [i for i, l in enumerate(labels) if l]; neg = [i for i, l in enumerate(labels) if not l]
    r.shuffle(pos); r.shuffle(neg)
    out = [0] * len(labels)
    for slot, i in enumerate(pos + neg): out[i] = slot % k
    return out

X, y = decodable(120, 30, 6, 5)
y = [(not v) if i % 7 == 0 else v for i, v in enumerate(y)]
y = np.array(y)
fo = np.array(folds(list(y), 10, 3))
f1s, aucs = [], []
for k in range(10):
    tr, te = fo != k, fo == k
    m = LogisticRegression(C=1.0, tol=1e-10, max_iter=10000).fit(X[tr], y[tr])
    p = m.predict_proba(X[te])[:, 1]
    f1s.append(f1_score(y[te], p >= 0.5)); aucs.append(roc_auc_score(y[te], p))
print("per_fold_f1", [round(v, 6) for v in f1s])
print("per_fold_auc", [round(v, 6) for v in aucs])
print("mean_f1", np.mean(f1s), "mean_auc", np.mean(aucs))
