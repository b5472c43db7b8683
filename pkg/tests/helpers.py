import numpy as np


def random_pd(rng, p, cond=20.0):
    """Random symmetric PD matrix with eigenvalues in [1, cond]."""
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    ev = np.exp(rng.uniform(0.0, np.log(cond), p))
    a = (q * ev) @ q.T
    return (a + a.T) / 2
