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
import math
import numpy as np

from . import Error
from .baselines import best_nmf
from .matrix import (EncodingMatrix, ObjectSceneMatrix, as_dense, clip_unit, in_unit_box,
                     pseudo_boolean, pseudo_boolean_derivative)
from .optimize import Descent

logger = logging.getLogger(__name__)

NMF_INIT_ITERS = 100
RESEED_CANDIDATES = 5

class PbmfConfig:
    FIELDS = ('k', 'alpha1', 'alpha2', 'alpha3', 'use_weights', 'literal_weights',
              'max_outer_iters', 'inner_steps', 'step_size', 'backtrack_factor', 'tol', 'seed',
              'restarts')

    def __init__(self, k=25, alpha1=0.1, alpha2=0.01, alpha3=0.01, use_weights=True,
            literal_weights=False, max_outer_iters=300, inner_steps=10, step_size=1e-2,
            backtrack_factor=0.5, tol=1e-5, seed=0, restarts=1):
        if k < 1:
            raise Error('Scenario count must be at least 1')
        if min(alpha1, alpha2, alpha3) < 0:
            raise Error('Penalty weights must be nonnegative')
        if max_outer_iters < 1 or inner_steps < 1:
            raise Error('Iteration counts must be at least 1')
        if step_size <= 0:
            raise Error('Step size must be positive')
        if not 0 < backtrack_factor < 1:
            raise Error('Backtracking factor must lie in (0,1)')
        if tol < 0:
            raise Error('Tolerance must be nonnegative')
        if restarts < 1:
            raise Error('At least one restart is needed')

        self.k = int(k)
        self.alpha1 = float(alpha1)
        self.alpha2 = float(alpha2)
        self.alpha3 = float(alpha3)
        self.use_weights = bool(use_weights)
        self.literal_weights = bool(literal_weights)
        self.max_outer_iters = int(max_outer_iters)
        self.inner_steps = int(inner_steps)
        self.step_size = float(step_size)
        self.backtrack_factor = float(backtrack_factor)
        self.tol = float(tol)
        self.seed = int(seed)
        self.restarts = int(restarts)

    @classmethod
    def basic(cls, k, **kwargs):
        """Plain pseudo-Boolean factorization: uniform weights, no penalties."""
        return cls(k, alpha1=0.0, alpha2=0.0, alpha3=0.0, use_weights=False, **kwargs)

    def replace(self, **changes):
        values = self.to_dict()
        values.update(changes)
        return PbmfConfig(**values)

    def to_dict(self):
        return {name: getattr(self, name) for name in self.FIELDS}

    @classmethod
    def from_dict(cls, d):
        return cls(**{name: d[name] for name in cls.FIELDS if name in d})

class ScenarioModel:
    """Scenario dictionary W (objects x k) learned from an object-scene matrix."""

    def __init__(self, dictionary, object_names, config, object_weights=None):
        dictionary = as_dense(dictionary)
        object_names = list(object_names)
        if dictionary.shape != (len(object_names), config.k):
            raise Error('Dictionary shape {}x{} does not match {} objects and k={}'.format(
                *dictionary.shape, len(object_names), config.k))
        if not in_unit_box(dictionary):
            raise Error('Dictionary entries must lie in [0,1]')
        if object_weights is None:
            object_weights = np.ones(len(object_names))

        self.dictionary = dictionary
        self.object_names = object_names
        self.config = config
        self.object_weights = np.asarray(object_weights, dtype=np.float64)

    @property
    def k(self):
        return self.config.k

    def with_dictionary(self, dictionary):
        return ScenarioModel(dictionary, self.object_names, self.config, self.object_weights)

    def to_dict(self):
        return {
            'object_names': self.object_names,
            'k': self.k,
            'config': self.config.to_dict(),
            'dictionary': self.dictionary.ravel().tolist(),
            'object_weights': self.object_weights.tolist(),
        }

    @staticmethod
    def from_dict(d):
        try:
            config = PbmfConfig.from_dict(d['config'])
            if config.k != d['k']:
                raise Error('Scenario count disagrees with the stored configuration')
            dictionary = np.array(d['dictionary'], dtype=np.float64).reshape(
                len(d['object_names']), d['k'])
            return ScenarioModel(dictionary, d['object_names'], config, d.get('object_weights'))
        except (KeyError, TypeError, ValueError) as e:
            raise Error('Malformed scenario model: ' + str(e))

def scenario_members(model, threshold=0.5):
    """List (object, weight) pairs per scenario, strongest first."""
    members = []
    for j in range(model.k):
        column = model.dictionary[:, j]
        order = np.argsort(-column, kind='stable')
        members.append([(model.object_names[i], float(column[i]))
                        for i in order if column[i] > threshold])
    return members

def object_weights(a, literal=False):
    """Per-object weight 1 + ln(N / n_i) for present entries."""
    counts = a.object_counts()
    n = a.n_instances
    if literal:
        return np.full(a.n_objects, 1.0 + math.log(n / a.n_objects))
    for name, count in zip(a.object_names, counts):
        if count == 0:
            raise Error('Object never occurs: ' + name)
    return 1.0 + np.log(n / counts)

def weights_for(a, weights):
    a = as_dense(a)
    return np.maximum(a * np.asarray(weights)[:, None], 1.0)

def build_weight_matrix(a, literal=False):
    return weights_for(a.matrix, object_weights(a, literal))

def _check_dimensions(a, w, h, omega):
    if w.shape[1] != h.shape[0] or w.shape[0] != a.shape[0] or h.shape[1] != a.shape[1]:
        raise Error('Dimension mismatch: A {}x{}, W {}x{}, H {}x{}'.format(
            *a.shape, *w.shape, *h.shape))
    if omega is not None and omega.shape != a.shape:
        raise Error('Weight matrix does not match the data')

def orthogonality(w):
    gram = w.T @ w
    gram[np.diag_indices_from(gram)] = 0.0
    return float(np.sum(gram ** 2))

def pbmf_loss(a, w, h, omega, cfg):
    a = as_dense(a)
    w = as_dense(w)
    h = as_dense(h)
    if omega is not None:
        omega = as_dense(omega)
    _check_dimensions(a, w, h, omega)

    residual = a - pseudo_boolean(w @ h)
    if omega is not None:
        residual = omega * residual

    loss = float(np.sum(residual ** 2))
    if cfg.alpha1:
        loss += cfg.alpha1 * orthogonality(w)
    loss += cfg.alpha2 * float(np.sum(w)) + cfg.alpha3 * float(np.sum(h))
    return loss

def _weighted_residual(a, w, h, omega):
    x = w @ h
    r = (a - pseudo_boolean(x)) * pseudo_boolean_derivative(x)
    if omega is not None:
        r = omega ** 2 * r
    return r

def reconstruction_gradient_w(a, w, h, omega):
    a, w, h = as_dense(a), as_dense(w), as_dense(h)
    return -2.0 * _weighted_residual(a, w, h, omega) @ h.T

def reconstruction_gradient_h(a, w, h, omega):
    a, w, h = as_dense(a), as_dense(w), as_dense(h)
    return -2.0 * w.T @ _weighted_residual(a, w, h, omega)

def penalty_gradient_w(w, cfg):
    w = as_dense(w)
    gram = w.T @ w
    gram[np.diag_indices_from(gram)] = 0.0
    return 4.0 * cfg.alpha1 * (w @ gram) + cfg.alpha2

def pbmf_gradients(a, w, h, omega, cfg):
    a, w, h = as_dense(a), as_dense(w), as_dense(h)
    if omega is not None:
        omega = as_dense(omega)
    _check_dimensions(a, w, h, omega)

    r = _weighted_residual(a, w, h, omega)
    grad_w = -2.0 * r @ h.T + penalty_gradient_w(w, cfg)
    grad_h = -2.0 * w.T @ r + cfg.alpha3
    return grad_w, grad_h

def initialize_factors(a, cfg):
    """Best of several NMF runs, each column of W scaled to peak at 1."""
    m = as_dense(a)
    if not m.any():
        raise Error('Cannot factorize an all-zero object-scene matrix')
    if cfg.k > min(m.shape):
        raise Error('Scenario count {} exceeds matrix dimensions {}x{}'.format(cfg.k, *m.shape))

    w, h = best_nmf(m, cfg.k, NMF_INIT_ITERS, cfg.seed)
    scale = w.max(axis=0)
    scale[scale <= 0.0] = 1.0
    return clip_unit(w / scale), clip_unit(h * scale[:, None])

def _omega_for(a, cfg):
    if not cfg.use_weights:
        return None
    return build_weight_matrix(a, literal=cfg.literal_weights)

def _relative_change(previous, current):
    return (previous - current) / max(abs(previous), np.finfo(float).tiny)

def _reseed_collapsed(a, w, h, omega, cfg, current):
    collapsed = np.flatnonzero(w.max(axis=0) <= 0.0)
    for c in collapsed:
        residual = a - pseudo_boolean(w @ h)
        if omega is not None:
            residual = omega * residual
        worst = np.argsort(-np.sum(residual ** 2, axis=0), kind='stable')

        for j in worst[:RESEED_CANDIDATES]:
            w_new = w.copy()
            h_new = h.copy()
            w_new[:, c] = a[:, j]
            h_new[c, :] = 0.0
            h_new[c, j] = 1.0
            value = pbmf_loss(a, w_new, h_new, omega, cfg)
            if value <= current:
                logger.debug('Reseeded scenario %d from instance %d', c, j)
                w, h, current = w_new, h_new, value
                break
        else:
            logger.warning('Scenario %d collapsed and could not be reseeded', c)

    return w, h, current

def _factorize_once(a, omega, cfg):
    w, h = initialize_factors(a, cfg)

    # The closures read the current w and h of this frame
    def loss_h(x):
        return pbmf_loss(a, w, x, omega, cfg)

    def grad_h(x):
        return reconstruction_gradient_h(a, w, x, omega) + cfg.alpha3

    def loss_w(x):
        return pbmf_loss(a, x, h, omega, cfg)

    def grad_w(x):
        return reconstruction_gradient_w(a, x, h, omega) + penalty_gradient_w(x, cfg)

    descent_h = Descent(loss_h, grad_h, cfg.step_size, cfg.backtrack_factor, project=clip_unit)
    descent_w = Descent(loss_w, grad_w, cfg.step_size, cfg.backtrack_factor, project=clip_unit)

    current = pbmf_loss(a, w, h, omega, cfg)
    if not math.isfinite(current):
        raise Error('Non-finite loss at iteration 0')

    history = []
    previous = current
    for iteration in range(1, cfg.max_outer_iters + 1):
        h, current = descent_h.run(h, cfg.inner_steps, current)
        w, current = descent_w.run(w, cfg.inner_steps, current)
        assert in_unit_box(w) and in_unit_box(h)

        w, h, current = _reseed_collapsed(a, w, h, omega, cfg, current)
        if not math.isfinite(current):
            raise Error('Non-finite loss at iteration {}'.format(iteration))

        history.append(current)
        logger.debug('Iteration %d: loss %g', iteration, current)
        if _relative_change(previous, current) < cfg.tol:
            break
        previous = current

    return w, h, history

def factorize(a, cfg):
    """Learn a scenario dictionary and encodings by alternating projected descent.

    Returns (ScenarioModel, EncodingMatrix, loss history). With several
    restarts the run reaching the lowest final loss is kept.
    """
    if not isinstance(a, ObjectSceneMatrix):
        raise Error('Factorization needs an object-scene matrix')

    omega = _omega_for(a, cfg)
    weights = object_weights(a, cfg.literal_weights) if cfg.use_weights else None
    m = a.matrix

    best = None
    for restart in range(cfg.restarts):
        run_cfg = cfg.replace(seed=cfg.seed + restart)
        w, h, history = _factorize_once(m, omega, run_cfg)
        final = history[-1] if history else pbmf_loss(m, w, h, omega, cfg)
        logger.info('Factorization run %d/%d: loss %g after %d iterations',
                    restart + 1, cfg.restarts, final, len(history))
        if best is None or final < best[0]:
            best = (final, w, h, history)

    _, w, h, history = best
    model = ScenarioModel(w, a.object_names, cfg, weights)
    return model, EncodingMatrix(h, a.instance_ids), history

def initial_encoding(a, w):
    """Per-instance least-squares-like start, clipped into the box."""
    norms = np.maximum(np.sum(w ** 2, axis=0), np.finfo(float).eps)
    return clip_unit((w.T @ a) / norms[:, None])

def solve_encoding(a, w, omega, cfg, h=None):
    """Projected descent on H with W fixed. Returns (H, loss history)."""
    a = as_dense(a)
    w = as_dense(w)
    if h is None:
        h = initial_encoding(a, w)

    def loss_h(x):
        return pbmf_loss(a, w, x, omega, cfg)

    def grad_h(x):
        return reconstruction_gradient_h(a, w, x, omega) + cfg.alpha3

    descent = Descent(loss_h, grad_h, cfg.step_size, cfg.backtrack_factor, project=clip_unit)
    current = loss_h(h)
    if not math.isfinite(current):
        raise Error('Non-finite loss at iteration 0')

    history = []
    previous = current
    for iteration in range(1, cfg.max_outer_iters + 1):
        h, current = descent.run(h, cfg.inner_steps, current)
        assert in_unit_box(h)
        history.append(current)
        if _relative_change(previous, current) < cfg.tol or descent.stalled:
            break
        previous = current

    return h, history

def aligned_objects(a_new, model):
    if a_new.object_names == model.object_names:
        return a_new
    for name in a_new.object_names:
        if name not in model.object_names:
            raise Error('Object not known to the model: ' + name)
    for name in model.object_names:
        if name not in a_new.object_names:
            raise Error('Object missing from the data: ' + name)
    return a_new.reorder_objects(model.object_names)

def encoding_weights(a, model):
    if not model.config.use_weights:
        return None
    return weights_for(a.matrix, model.object_weights)

def encode(a_new, model):
    """Encode new instances against a fixed scenario dictionary."""
    a_new = aligned_objects(a_new, model)
    omega = encoding_weights(a_new, model)
    h, history = solve_encoding(a_new.matrix, model.dictionary, omega, model.config)
    logger.debug('Encoded %d instances, loss %g', a_new.n_instances,
                 history[-1] if history else float('nan'))
    return EncodingMatrix(h, a_new.instance_ids)
