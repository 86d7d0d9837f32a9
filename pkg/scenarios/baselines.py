# This file is part of scenarios.
#
# Copyright (C) 2024 Martin Kampas <martin.kampas@ubedi.net>
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.
#
# This program is distributed in the hope that it will be useful, but
# WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the GNU
# General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.

import logging
import numpy as np

from . import Error
from .matrix import as_dense, clip_unit
from .optimize import Descent

logger = logging.getLogger(__name__)

EPS = 1e-12

ASSO_TAU = 0.6
ASSO_W_PLUS = 1.0
ASSO_W_MINUS = 2.0

BINARY_MF_LAMBDAS = (0.01, 0.1, 1.0, 10.0)
BINARY_MF_ITERS = 50
BINARY_MF_INIT_ITERS = 100

SVD_OVERSAMPLE = 8
SVD_POWER_ITERS = 4

NMF_CANDIDATES = 4
# A later candidate must beat the kept one by this relative margin
NMF_CANDIDATE_MARGIN = 1e-9

def _check_rank(a, k):
    if k < 1 or k > min(a.shape):
        raise Error('Rank {} out of range for a {}x{} matrix'.format(k, *a.shape))

def _check_binary(a):
    if not np.all((a == 0.0) | (a == 1.0)):
        raise Error('Matrix must be binary')

def nmf_objective(a, w, h):
    return float(np.sum((a - w @ h) ** 2))

def nmf_updates(a, w, h):
    """Yield successive multiplicative-update iterates (w, h).

    The encodings are updated first, so starting from a constant h the
    sequence is equivariant under column permutations of a.
    """
    while True:
        h = h * (w.T @ a) / (w.T @ w @ h + EPS)
        w = w * (a @ h.T) / (w @ (h @ h.T) + EPS)
        yield w, h

def nmf_start(a, k, seed):
    rng = np.random.default_rng(seed)
    w = rng.random((a.shape[0], k)) + 0.1
    h = np.ones((k, a.shape[1]))
    return w, h

def nmf(a, k, iters, seed):
    a = as_dense(a)
    if np.any(a < 0.0):
        raise Error('NMF needs a nonnegative matrix')
    _check_rank(a, k)

    w, h = nmf_start(a, k, seed)
    updates = nmf_updates(a, w, h)
    for _ in range(iters):
        w, h = next(updates)

    logger.debug('NMF k=%d after %d iterations: %g', k, iters, nmf_objective(a, w, h))
    return w, h

def best_nmf(a, k, iters, seed, candidates=NMF_CANDIDATES):
    """Lowest-objective NMF among `candidates` differently seeded runs.

    Candidate c of seed s is seeded with s * candidates + c, so distinct
    seeds never share a candidate.
    """
    a = as_dense(a)
    best = None
    for c in range(candidates):
        w, h = nmf(a, k, iters, seed * candidates + c)
        value = nmf_objective(a, w, h)
        if best is None or value < best[0] * (1.0 - NMF_CANDIDATE_MARGIN):
            best = (value, w, h)
    return best[1], best[2]

def greedy_bmf(a, k, tau=ASSO_TAU, w_plus=ASSO_W_PLUS, w_minus=ASSO_W_MINUS):
    """Greedy Boolean factorization from association-rule candidates.

    Candidate scenario i holds every object j with confidence
    |i and j| / |i| >= tau. Each round picks the candidate, together with
    its best usage row, that maximizes w_plus * (newly covered ones) -
    w_minus * (newly covered zeros).
    """
    a = as_dense(a)
    _check_binary(a)
    if not 0.0 < tau <= 1.0:
        raise Error('Association threshold must lie in (0,1]: {}'.format(tau))

    m, n = a.shape
    w = np.zeros((m, k))
    h = np.zeros((k, n))
    if k == 0:
        return w, h

    ones = a.astype(bool)
    counts = a.sum(axis=1)
    with np.errstate(divide='ignore', invalid='ignore'):
        confidence = np.where(counts[:, None] > 0, (a @ a.T) / counts[:, None], 0.0)
    candidates = (confidence >= tau).astype(np.float64)

    covered = np.zeros((m, n), dtype=bool)
    for l in range(k):
        positive = (ones & ~covered).astype(np.float64)
        negative = (~ones & ~covered).astype(np.float64)
        gains = w_plus * (candidates @ positive) - w_minus * (candidates @ negative)
        totals = np.where(gains > 0.0, gains, 0.0).sum(axis=1)

        best = int(np.argmax(totals)) if len(totals) else 0
        if not len(totals) or totals[best] <= 0.0:
            logger.warning('Only %d of %d scenarios improve the cover', l, k)
            break

        w[:, l] = candidates[best]
        h[l] = gains[best] > 0.0
        covered |= np.outer(w[:, l], h[l]).astype(bool)

    return w, h

def zhang_normalize(w, h):
    """Rescale so that matching columns of w and rows of h peak alike."""
    dw = np.maximum(w.max(axis=0), EPS)
    dh = np.maximum(h.max(axis=1), EPS)
    scale = np.sqrt(dh / dw)
    return w * scale, h / scale[:, None]

def _binary_penalty(x):
    return float(np.sum((x * (1.0 - x)) ** 2))

def _binary_penalty_gradient(x):
    return 2.0 * x * (1.0 - x) * (1.0 - 2.0 * x)

def binary_mf(a, k, lambda_schedule=BINARY_MF_LAMBDAS, seed=0, iters=BINARY_MF_ITERS,
        init=None, round_result=True, step_size=1e-2, backtrack_factor=0.5):
    a = as_dense(a)
    _check_binary(a)
    _check_rank(a, k)

    if init is None:
        w, h = zhang_normalize(*nmf(a, k, BINARY_MF_INIT_ITERS, seed))
    else:
        w, h = (as_dense(x).copy() for x in init)
    w = clip_unit(w)
    h = clip_unit(h)

    # The closures read the current w and h of this frame
    lam = 0.0

    def loss_w(x):
        return nmf_objective(a, x, h) + lam * (_binary_penalty(x) + _binary_penalty(h))

    def grad_w(x):
        return -2.0 * (a - x @ h) @ h.T + lam * _binary_penalty_gradient(x)

    def loss_h(x):
        return nmf_objective(a, w, x) + lam * (_binary_penalty(w) + _binary_penalty(x))

    def grad_h(x):
        return -2.0 * w.T @ (a - w @ x) + lam * _binary_penalty_gradient(x)

    descent_w = Descent(loss_w, grad_w, step_size, backtrack_factor, project=clip_unit)
    descent_h = Descent(loss_h, grad_h, step_size, backtrack_factor, project=clip_unit)

    for lam in lambda_schedule:
        for _ in range(iters):
            h, _ = descent_h.run(h, 1)
            w, _ = descent_w.run(w, 1)
        logger.debug('Binary MF lambda=%g: %g', lam, loss_w(w))

    if round_result:
        w = (w >= 0.5).astype(np.float64)
        h = (h >= 0.5).astype(np.float64)
    return w, h

def truncated_svd(a, k, power_iters=SVD_POWER_ITERS, seed=0, oversample=SVD_OVERSAMPLE):
    """Rank-k SVD by randomized subspace iteration.

    Returns (U, S, V) with the reconstruction U * diag(S) * V^T and S
    non-increasing.
    """
    a = as_dense(a)
    _check_rank(a, k)

    rng = np.random.default_rng(seed)
    width = min(k + oversample, min(a.shape))

    q, _ = np.linalg.qr(a @ rng.standard_normal((a.shape[1], width)))
    for _ in range(power_iters):
        z, _ = np.linalg.qr(a.T @ q)
        q, _ = np.linalg.qr(a @ z)

    ub, s, vt = np.linalg.svd(q.T @ a, full_matrices=False)
    return q @ ub[:, :k], s[:k], vt[:k].T

def trivial_baselines(a):
    a = as_dense(a)
    if a.size == 0:
        return 0.0, 0.0
    zeros_error = float(np.sum(a ** 2))
    mean_error = float(np.sum((a - a.mean()) ** 2))
    return zeros_error, mean_error
