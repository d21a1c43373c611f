"""Brute-force reference computations, deliberately independent of the package."""
import itertools
import math

import numpy as np


def mixture_nll_linear(x, pi, mu, sigma):
    """-sum log sum_k pi_k N(x; mu_k, sigma^2), evaluated in linear space.

    x: C x H x W, pi: K x 1 x H x W, mu: K x C x H x W.
    """
    dens = np.exp(-0.5 * ((x[None] - mu) / sigma) ** 2) / math.sqrt(2 * math.pi * sigma**2)
    return float(-np.log((pi * dens).sum(axis=0)).sum())


def ari_pair_counting(gt, pred, exclude_background=False):
    """ARI from an explicit enumeration of all pixel pairs (Hubert-Arabie pair form)."""
    g = np.asarray(gt).ravel()
    p = np.asarray(pred).ravel()
    if exclude_background:
        keep = g != 0
        g, p = g[keep], p[keep]
    n11 = n10 = n01 = n00 = 0
    for i, j in itertools.combinations(range(g.size), 2):
        same_g = g[i] == g[j]
        same_p = p[i] == p[j]
        if same_g and same_p:
            n11 += 1
        elif same_g:
            n10 += 1
        elif same_p:
            n01 += 1
        else:
            n00 += 1
    denom = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11)
    if denom == 0:
        return 1.0
    return 2.0 * (n00 * n11 - n01 * n10) / denom


def msc_exhaustive(gt, pred):
    """Unweighted mean over foreground gt segments of the best IoU with any predicted segment."""
    g = np.asarray(gt)
    p = np.asarray(pred)
    scores = []
    for a in np.unique(g):
        if a == 0:
            continue
        ga = g == a
        best = 0.0
        for b in np.unique(p):
            pb = p == b
            best = max(best, np.logical_and(ga, pb).sum() / np.logical_or(ga, pb).sum())
        scores.append(best)
    return float(np.mean(scores))
