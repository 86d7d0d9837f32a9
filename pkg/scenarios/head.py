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
from scipy.special import expit, log_softmax, softmax

from . import Error
from .classifier import SceneClassifier, one_hot
from .matrix import (EncodingMatrix, FeatureMatrix, ObjectSceneMatrix, as_dense, check_finite,
                     clip_unit, in_unit_box, pseudo_boolean)
from .optimize import Descent
from .pbmf import (aligned_objects, encoding_weights, orthogonality, penalty_gradient_w,
                   reconstruction_gradient_h, reconstruction_gradient_w, solve_encoding)

logger = logging.getLogger(__name__)

HEAD_MODES = ('pbmf', 'regress')
MAX_EPOCH_RETRIES = 10
EPOCH_BACKTRACK = 0.5
BIMODAL_MARGIN = 0.25
# expit rounds to exactly 0 or 1 beyond a pre-activation of about 37
SIGMOID_EPS = 1e-12

class ScenarioHead:
    """Affine map followed by a sigmoid, predicting encodings from features."""

    def __init__(self, weights, bias):
        weights = as_dense(weights)
        bias = np.asarray(bias, dtype=np.float64).ravel()
        if weights.shape[0] != len(bias):
            raise Error('Head weights have {} rows but bias has {} entries'.format(
                weights.shape[0], len(bias)))
        check_finite(weights, 'head weights')
        check_finite(bias, 'head bias')
        self.weights = weights
        self.bias = bias

    @property
    def k(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.weights.shape[1]

    @staticmethod
    def initial(k, dim, seed=0):
        rng = np.random.default_rng(seed)
        return ScenarioHead(0.01 * rng.standard_normal((k, dim)), np.zeros(k))

    def to_dict(self):
        return {
            'k': self.k,
            'dim': self.dim,
            'weights': self.weights.ravel().tolist(),
            'bias': self.bias.tolist(),
        }

    @staticmethod
    def from_dict(d):
        try:
            weights = np.array(d['weights'], dtype=np.float64).reshape(d['k'], d['dim'])
            return ScenarioHead(weights, d['bias'])
        except (KeyError, TypeError, ValueError) as e:
            raise Error('Malformed scenario head: ' + str(e))

class TrainSchedule:
    FIELDS = ('head_lr', 'dict_update_period', 'dict_lr', 'epochs', 'batch_size', 'lambda_ce',
              'seed', 'head_mode')

    def __init__(self, head_lr=0.5, dict_update_period=4, dict_lr=1e-2, epochs=30,
            batch_size=64, lambda_ce=1.0, seed=0, head_mode='pbmf'):
        if not dict_update_period >= 1:
            raise Error('Dictionary update period must be at least 1')
        if head_lr <= 0 or dict_lr <= 0:
            raise Error('Learning rates must be positive')
        if epochs < 0:
            raise Error('Epoch count must be nonnegative')
        if batch_size < 1:
            raise Error('Batch size must be at least 1')
        if lambda_ce < 0:
            raise Error('Cross-entropy weight must be nonnegative')
        if head_mode not in HEAD_MODES:
            raise Error('Unknown head mode: ' + str(head_mode))

        self.head_lr = float(head_lr)
        self.dict_update_period = (dict_update_period if math.isinf(dict_update_period)
                                   else int(dict_update_period))
        self.dict_lr = float(dict_lr)
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.lambda_ce = float(lambda_ce)
        self.seed = int(seed)
        self.head_mode = head_mode

    def replace(self, **changes):
        values = self.to_dict()
        values.update(changes)
        return TrainSchedule(**values)

    def to_dict(self):
        d = {name: getattr(self, name) for name in self.FIELDS}
        if math.isinf(self.dict_update_period):
            d['dict_update_period'] = 'inf'
        return d

    @classmethod
    def from_dict(cls, d):
        values = {name: d[name] for name in cls.FIELDS if name in d}
        if values.get('dict_update_period') == 'inf':
            values['dict_update_period'] = math.inf
        return cls(**values)

def _forward(weights, bias, x):
    return np.clip(expit(weights @ x + bias[:, None]), SIGMOID_EPS, 1.0 - SIGMOID_EPS)

def head_forward(head, x):
    if x.dim != head.dim:
        raise Error('Features of dimension {} for a head expecting {}'.format(x.dim, head.dim))
    return EncodingMatrix(_forward(head.weights, head.bias, x.matrix), x.instance_ids)

def _terms(u, c, x, a, mask, omega, w, cfg, target=None, v=None, b=None, y=None,
        lambda_ce=0.0):
    """Loss and parameter gradients over the given instances, W penalties excluded.

    Columns outside `mask` carry no annotation and contribute through the
    cross-entropy term only.
    """
    hh = _forward(u, c, x)
    grad_hh = np.zeros_like(hh)
    loss = 0.0

    if mask.any():
        ha = hh[:, mask]
        if target is not None:
            diff = ha - target[:, mask]
            loss += float(np.sum(diff ** 2))
            grad_hh[:, mask] = 2.0 * diff
        else:
            aa = a[:, mask]
            oa = omega[:, mask] if omega is not None else None
            residual = aa - pseudo_boolean(w @ ha)
            if oa is not None:
                residual = oa * residual
            loss += float(np.sum(residual ** 2)) + cfg.alpha3 * float(np.sum(ha))
            grad_hh[:, mask] = reconstruction_gradient_h(aa, w, ha, oa) + cfg.alpha3

    grads = {}
    if v is not None and lambda_ce > 0.0:
        logits = v @ hh + b[:, None]
        loss -= lambda_ce * float(np.sum(y * log_softmax(logits, axis=0)))
        d = lambda_ce * (softmax(logits, axis=0) - y)
        grad_hh += v.T @ d
        grads['v'] = d @ hh.T
        grads['b'] = d.sum(axis=1)

    grad_z = grad_hh * hh * (1.0 - hh)
    grads['u'] = grad_z @ x.T
    grads['c'] = grad_z.sum(axis=1)
    return loss, grads

def _dictionary_penalties(w, cfg):
    return cfg.alpha1 * orthogonality(w) + cfg.alpha2 * float(np.sum(w))

def _full_mask(a):
    return np.ones(a.shape[1], dtype=bool)

def head_loss(head, a, x, w, omega, cfg):
    """Reconstruction loss of the head's encodings, dictionary penalties included."""
    a, x, w = as_dense(a), as_dense(x), as_dense(w)
    loss, _ = _terms(head.weights, head.bias, x, a, _full_mask(a), omega, w, cfg)
    return loss + _dictionary_penalties(w, cfg)

def head_gradients(head, a, x, w, omega, cfg):
    a, x, w = as_dense(a), as_dense(x), as_dense(w)
    _, grads = _terms(head.weights, head.bias, x, a, _full_mask(a), omega, w, cfg)
    return grads['u'], grads['c']

def joint_loss(head, clf, a, x, labels, w, omega, cfg, lambda_ce):
    a, x, w = as_dense(a), as_dense(x), as_dense(w)
    y = one_hot(labels, clf.class_names)
    loss, _ = _terms(head.weights, head.bias, x, a, _full_mask(a), omega, w, cfg,
                     v=clf.weights, b=clf.bias, y=y, lambda_ce=lambda_ce)
    return loss + _dictionary_penalties(w, cfg)

def joint_gradients(head, clf, a, x, labels, w, omega, cfg, lambda_ce):
    """Gradients (head weights, head bias, classifier weights, classifier bias)."""
    a, x, w = as_dense(a), as_dense(x), as_dense(w)
    y = one_hot(labels, clf.class_names)
    _, grads = _terms(head.weights, head.bias, x, a, _full_mask(a), omega, w, cfg,
                      v=clf.weights, b=clf.bias, y=y, lambda_ce=lambda_ce)
    return (grads['u'], grads['c'], grads.get('v', np.zeros_like(clf.weights)),
            grads.get('b', np.zeros_like(clf.bias)))

def batched_dictionary_gradient(head, a, x, w, omega, cfg, batches):
    """W-gradient accumulated batch by batch from the head's encodings.

    Only one batch of encodings exists at a time. Summed over a partition
    of the instances this equals the full-batch gradient.
    """
    a, x, w = as_dense(a), as_dense(x), as_dense(w)
    return _batched_dictionary_gradient(head.weights, head.bias, x, a, _full_mask(a), omega, w,
                                        batches) + penalty_gradient_w(w, cfg)

def _batched_dictionary_gradient(u, c, x, a, mask, omega, w, batches):
    grad = np.zeros_like(w)
    for cols in batches:
        cols = cols[mask[cols]]
        if len(cols):
            hh = _forward(u, c, x[:, cols])
            grad += reconstruction_gradient_w(a[:, cols], w, hh,
                                              omega[:, cols] if omega is not None else None)
    return grad

class _Problem:
    """Everything one training phase optimizes over, laid out per feature column."""

    def __init__(self, a, x, model, labels=None, class_names=None, partial=False):
        if a.n_instances == 0:
            raise Error('No annotated instances to train on')
        if model.k == 0:
            raise Error('Model has no scenarios')
        a = aligned_objects(a, model)

        index = {instance_id: j for j, instance_id in enumerate(x.instance_ids)}
        if not partial and a.instance_ids != x.instance_ids:
            raise Error('Features and annotations are not aligned')
        missing = [i for i in a.instance_ids if i not in index]
        if missing:
            raise Error('No features for instance: ' + missing[0])

        columns = [index[i] for i in a.instance_ids]
        self.a = np.zeros((a.n_objects, x.n_instances))
        self.a[:, columns] = a.matrix
        self.mask = np.zeros(x.n_instances, dtype=bool)
        self.mask[columns] = True

        omega = encoding_weights(a, model)
        if omega is not None:
            self.omega = np.ones_like(self.a)
            self.omega[:, columns] = omega
        else:
            self.omega = None

        self.x = x.matrix
        self.cfg = model.config
        self.y = None
        if labels is not None:
            if len(labels) != x.n_instances:
                raise Error('{} labels for {} feature columns'.format(len(labels), x.n_instances))
            self.y = one_hot(labels, class_names)
        self.annotations = a

    @property
    def n(self):
        return self.x.shape[1]

    def batch(self, params, w, cols, target, lambda_ce):
        return _terms(params['u'], params['c'], self.x[:, cols], self.a[:, cols], self.mask[cols],
                      self.omega[:, cols] if self.omega is not None else None, w, self.cfg,
                      target=target[:, cols] if target is not None else None,
                      v=params.get('v'), b=params.get('b'),
                      y=self.y[:, cols] if self.y is not None else None, lambda_ce=lambda_ce)

    def loss(self, params, w, batches, target, lambda_ce):
        total = _dictionary_penalties(w, self.cfg)
        for cols in batches:
            value, _ = self.batch(params, w, cols, target, lambda_ce)
            total += value
        return total

def _train(problem, params, w, sched, lambda_ce, update_dictionary, target=None):
    rng = np.random.default_rng(sched.seed)
    cfg = problem.cfg
    lr = sched.head_lr

    def batches_of(order):
        return [order[i:i + sched.batch_size] for i in range(0, problem.n, sched.batch_size)]

    batches = batches_of(np.arange(problem.n))
    current = problem.loss(params, w, batches, target, lambda_ce)
    if not math.isfinite(current):
        raise Error('Non-finite loss before training')
    history = [current]

    dictionary_step = None
    if update_dictionary:
        def loss_w(candidate):
            return problem.loss(step_params, candidate, step_batches, target, lambda_ce)

        def grad_w(candidate):
            return _batched_dictionary_gradient(
                step_params['u'], step_params['c'], problem.x, problem.a, problem.mask,
                problem.omega, candidate, step_batches) + penalty_gradient_w(candidate, cfg)

        dictionary_step = Descent(loss_w, grad_w, sched.dict_lr, cfg.backtrack_factor,
                                  project=clip_unit)

    iteration = 0
    for epoch in range(1, sched.epochs + 1):
        batches = batches_of(rng.permutation(problem.n))
        for attempt in range(MAX_EPOCH_RETRIES):
            trial = dict(params)
            trial_w = w
            trial_iteration = iteration
            for cols in batches:
                _, grads = problem.batch(trial, trial_w, cols, target, lambda_ce)
                for name, grad in grads.items():
                    trial[name] = trial[name] - lr * grad / len(cols)
                trial_iteration += 1
                if dictionary_step is not None and trial_iteration % sched.dict_update_period == 0:
                    step_params, step_batches = trial, batches
                    trial_w, _ = dictionary_step.run(trial_w, 1)
                    assert in_unit_box(trial_w)

            value = problem.loss(trial, trial_w, batches, target, lambda_ce)
            if math.isfinite(value) and value <= current:
                params, w, iteration, current = trial, trial_w, trial_iteration, value
                break
            lr *= EPOCH_BACKTRACK
            logger.debug('Epoch %d attempt %d raised the loss, learning rate now %g',
                         epoch, attempt + 1, lr)
        else:
            logger.warning('Epoch %d could not reduce the loss, stopping', epoch)
            break

        history.append(current)
        logger.debug('Epoch %d: loss %g', epoch, current)

    return params, w, history

def train_head(a, x, model, sched):
    """Fit a head to the scenario model, refining the dictionary periodically.

    Returns (ScenarioHead, ScenarioModel, loss history).
    """
    if not isinstance(a, ObjectSceneMatrix) or not isinstance(x, FeatureMatrix):
        raise Error('Head training needs an object-scene matrix and features')
    problem = _Problem(a, x, model)

    target = None
    if sched.head_mode == 'regress':
        target, _ = solve_encoding(problem.a, model.dictionary, problem.omega, model.config)

    head = ScenarioHead.initial(model.k, x.dim, sched.seed)
    params = {'u': head.weights, 'c': head.bias}
    # Regression targets do not depend on W
    update_dictionary = sched.head_mode == 'pbmf' and not math.isinf(sched.dict_update_period)

    params, w, history = _train(problem, params, model.dictionary, sched, 0.0, update_dictionary,
                                target)
    logger.info('Scenario head trained for %d epochs, loss %g', len(history) - 1, history[-1])
    return ScenarioHead(params['u'], params['c']), model.with_dictionary(w), history

def joint_finetune(a, x, labels, model, head, clf, sched):
    """Refine head, classifier and dictionary together.

    `a` may annotate a subset of the feature columns. Every column needs a
    label. Returns (ScenarioHead, ScenarioModel, SceneClassifier, loss history).
    """
    if head.k != model.k or clf.k != model.k:
        raise Error('Head, classifier and model disagree on the scenario count')
    if head.dim != x.dim:
        raise Error('Features of dimension {} for a head expecting {}'.format(x.dim, head.dim))
    problem = _Problem(a, x, model, labels, clf.class_names, partial=True)

    params = {'u': head.weights, 'c': head.bias, 'v': clf.weights, 'b': clf.bias}
    update_dictionary = not math.isinf(sched.dict_update_period)
    params, w, history = _train(problem, params, model.dictionary, sched, sched.lambda_ce,
                                update_dictionary)
    logger.info('Joint finetuning ran %d epochs, loss %g', len(history) - 1, history[-1])
    return (ScenarioHead(params['u'], params['c']), model.with_dictionary(w),
            SceneClassifier(params['v'], params['b'], clf.class_names), history)

def encoding_bimodality(h, margin=BIMODAL_MARGIN):
    """Fraction of encoding entries within `margin` of 0 or 1."""
    h = as_dense(h)
    if h.size == 0:
        return 1.0
    return float(np.mean(np.minimum(h, 1.0 - h) <= margin))
