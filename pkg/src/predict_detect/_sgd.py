"""Compiled hinge-loss subgradient kernel shared by single models and ensembles."""
import numba
import numpy as np


@numba.njit(cache=True)
def hinge_sgd(X, y_pm, masks, order, lam, l1, W, b):
    """Train ``M`` linear models in place, one row of ``W``/``b`` each.

    ``order[m]`` is the sample visiting sequence of model ``m``; step ``t``
    (1-based) uses ``eta = 1 / (lam * t)`` and decays weights and bias by
    ``1 - eta * lam``. With ``l1`` set the weights (not the bias) are then
    soft-thresholded by ``eta * lam``. Only features with ``masks[m, j]``
    set are ever updated.
    """
    n_models, n_feat = W.shape
    n_steps = order.shape[1]
    for m in range(n_models):
        for t in range(n_steps):
            i = order[m, t]
            eta = 1.0 / (lam * (t + 1))
            score = b[m]
            for j in range(n_feat):
                score += W[m, j] * X[i, j]
            violated = y_pm[i] * score < 1.0
            decay = 1.0 - eta * lam
            shrink = eta * lam
            for j in range(n_feat):
                if not masks[m, j]:
                    continue
                w = W[m, j] * decay
                if violated:
                    w += eta * y_pm[i] * X[i, j]
                if l1:
                    if w > shrink:
                        w -= shrink
                    elif w < -shrink:
                        w += shrink
                    else:
                        w = 0.0
                W[m, j] = w
            b[m] *= decay
            if violated:
                b[m] += eta * y_pm[i]
    return W, b


def visiting_order(n_samples, n_models, epochs, rng):
    """Per-model concatenation of ``epochs`` independent shuffles."""
    base = np.tile(np.arange(n_samples), (n_models, 1))
    return np.hstack([rng.permuted(base, axis=1) for _ in range(epochs)])
