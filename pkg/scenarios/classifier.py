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
from scipy.special import log_softmax, softmax

from . import Error
from .matrix import as_dense, check_finite
from .optimize import Descent

logger = logging.getLogger(__name__)

DEFAULT_L2 = 1e-4
DEFAULT_ITERS = 500
DEFAULT_LR = 1.0
MEMBERSHIP_THRESHOLD = 0.2

class SceneClassifier:
    """Multinomial logistic regression over scenario encodings."""

    def __init__(self, weights, bias, class_names):
        weights = as_dense(weights)
        bias = np.asarray(bias, dtype=np.float64).ravel()
        class_names = list(class_names)
        if weights.shape[0] != len(class_names) or len(bias) != len(class_names):
            raise Error('Classifier parameters do not match {} classes'.format(len(class_names)))
        if len(set(class_names)) != len(class_names):
            raise Error('Class names must be unique')
        check_finite(weights, 'classifier weights')
        check_finite(bias, 'classifier bias')

        self.weights = weights
        self.bias = bias
        self.class_names = class_names

    @property
    def k(self):
        return self.weights.shape[1]

    def class_index(self, name):
        try:
            return self.class_names.index(name)
        except ValueError:
            raise Error('Unknown class: ' + str(name))

    def to_dict(self):
        return {
            'class_names': self.class_names,
            'k': self.k,
            'weights': self.weights.ravel().tolist(),
            'bias': self.bias.tolist(),
        }

    @staticmethod
    def from_dict(d):
        try:
            weights = np.array(d['weights'], dtype=np.float64).reshape(
                len(d['class_names']), d['k'])
            return SceneClassifier(weights, d['bias'], d['class_names'])
        except (KeyError, TypeError, ValueError) as e:
            raise Error('Malformed classifier: ' + str(e))

def one_hot(labels, class_names):
    index = {name: i for i, name in enumerate(class_names)}
    y = np.zeros((len(class_names), len(labels)))
    for j, label in enumerate(labels):
        try:
            y[index[label], j] = 1.0
        except KeyError:
            raise Error('Unknown class: ' + str(label))
    return y

def class_probabilities(weights, bias, h):
    return softmax(weights @ h + bias[:, None], axis=0)

def cross_entropy(weights, bias, h, y):
    """Summed cross-entropy of one-hot targets y."""
    return float(-np.sum(y * log_softmax(weights @ h + bias[:, None], axis=0)))

def classifier_loss(weights, bias, h, y, l2):
    n = max(h.shape[1], 1)
    return cross_entropy(weights, bias, h, y) / n + l2 * float(np.sum(weights ** 2))

def classifier_gradients(weights, bias, h, y, l2):
    n = max(h.shape[1], 1)
    d = (class_probabilities(weights, bias, h) - y) / n
    return d @ h.T + 2.0 * l2 * weights, d.sum(axis=1)

def fit(h, labels, l2=DEFAULT_L2, iters=DEFAULT_ITERS, lr=DEFAULT_LR, seed=0):
    h = as_dense(h)
    labels = list(labels)
    if len(labels) != h.shape[1]:
        raise Error('{} labels for {} encodings'.format(len(labels), h.shape[1]))
    class_names = sorted(set(labels))
    if len(class_names) < 2:
        raise Error('Classification needs at least two classes')

    y = one_hot(labels, class_names)
    k = h.shape[0]
    rng = np.random.default_rng(seed)
    theta = np.hstack([0.01 * rng.standard_normal((len(class_names), k)),
                       np.zeros((len(class_names), 1))])

    def loss(theta):
        return classifier_loss(theta[:, :k], theta[:, k], h, y, l2)

    def gradient(theta):
        g_weights, g_bias = classifier_gradients(theta[:, :k], theta[:, k], h, y, l2)
        return np.hstack([g_weights, g_bias[:, None]])

    theta, value = Descent(loss, gradient, lr, 0.5).run(theta, iters)
    logger.info('Classifier over %d classes trained, loss %g', len(class_names), value)
    return SceneClassifier(theta[:, :k], theta[:, k], class_names)

def _check_length(clf, h_col):
    h_col = np.asarray(h_col, dtype=np.float64).ravel()
    if len(h_col) != clf.k:
        raise Error('Encoding of length {} for a classifier over {} scenarios'.format(
            len(h_col), clf.k))
    return h_col

def predict(clf, h_col):
    h_col = _check_length(clf, h_col)
    probabilities = class_probabilities(clf.weights, clf.bias, h_col[:, None])[:, 0]
    # argmax takes the lowest index on ties
    return clf.class_names[int(np.argmax(probabilities))], probabilities

def predict_all(clf, h):
    h = as_dense(h)
    if h.shape[0] != clf.k:
        raise Error('Encodings of {} scenarios for a classifier over {}'.format(h.shape[0], clf.k))
    probabilities = class_probabilities(clf.weights, clf.bias, h)
    return [clf.class_names[i] for i in np.argmax(probabilities, axis=0)], probabilities

def influence(clf, class_name, scenario_index):
    row = clf.class_index(class_name)
    if not 0 <= scenario_index < clf.k:
        raise Error('Scenario index out of range: {}'.format(scenario_index))
    return float(clf.weights[row, scenario_index])

class ScenarioContribution:
    def __init__(self, scenario_index, encoding_coefficient, influence_score, member_objects):
        self.scenario_index = scenario_index
        self.encoding_coefficient = encoding_coefficient
        self.influence_score = influence_score
        self.member_objects = member_objects

    def to_dict(self):
        return {
            'scenario_index': self.scenario_index,
            'encoding_coefficient': self.encoding_coefficient,
            'influence_score': self.influence_score,
            'member_objects': [[name, weight] for name, weight in self.member_objects],
        }

class Explanation:
    def __init__(self, predicted_class, class_names, class_probabilities, top_scenarios):
        self.predicted_class = predicted_class
        self.class_names = class_names
        self.class_probabilities = class_probabilities
        self.top_scenarios = top_scenarios

    def to_dict(self):
        return {
            'predicted_class': self.predicted_class,
            'class_probabilities': dict(zip(self.class_names,
                                            map(float, self.class_probabilities))),
            'top_scenarios': [s.to_dict() for s in self.top_scenarios],
        }

def explain(clf, model, h_col, top_n=3, threshold=MEMBERSHIP_THRESHOLD):
    h_col = _check_length(clf, h_col)
    if model.k != clf.k:
        raise Error('Model and classifier disagree on the scenario count')

    predicted, probabilities = predict(clf, h_col)
    order = np.argsort(-h_col, kind='stable')[:max(0, min(top_n, clf.k))]

    top = []
    for j in order:
        column = model.dictionary[:, j]
        members = [(model.object_names[i], float(column[i]))
                   for i in np.argsort(-column, kind='stable') if column[i] > threshold]
        top.append(ScenarioContribution(int(j), float(h_col[j]),
                                        influence(clf, predicted, int(j)), members))

    return Explanation(predicted, clf.class_names, probabilities, top)

def render_explanation(explanation):
    probability = explanation.class_probabilities[
        explanation.class_names.index(explanation.predicted_class)]
    yield 'Predicted class: {} ({:.3f})\n'.format(explanation.predicted_class, probability)
    for s in explanation.top_scenarios:
        yield '  scenario {:<4d} encoding {:.3f}  influence {:+.3f}\n'.format(
            s.scenario_index, s.encoding_coefficient, s.influence_score)
        if s.member_objects:
            yield '      ' + ', '.join('{} {:.2f}'.format(name, weight)
                                       for name, weight in s.member_objects) + '\n'
