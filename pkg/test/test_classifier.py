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

import math
import numpy as np
import pytest

from scenarios import Error
from scenarios.classifier import (SceneClassifier, class_probabilities, classifier_gradients,
                                  classifier_loss, explain, fit, influence, one_hot, predict,
                                  predict_all, render_explanation)
from scenarios.pbmf import PbmfConfig, ScenarioModel
from . import utils

def separable(n_per_class=30, seed=0):
    """Each class switches on its own scenario."""
    rng = np.random.default_rng(seed)
    names = ['bath', 'kitchen', 'office']
    columns = []
    labels = []
    for c, name in enumerate(names):
        for _ in range(n_per_class):
            h = rng.uniform(0.0, 0.2, 3)
            h[c] = rng.uniform(0.8, 1.0)
            columns.append(h)
            labels.append(name)
    return np.array(columns).T, labels

def test_fit_separable():
    h, labels = separable()
    clf = fit(h, labels)
    predicted, _ = predict_all(clf, h)
    assert predicted == labels
    assert clf.class_names == ['bath', 'kitchen', 'office']

def test_strong_regularization_flattens_probabilities():
    h, labels = separable()
    clf = fit(h, labels, l2=1e6)
    _, probabilities = predict_all(clf, h)
    assert np.all(np.abs(probabilities - 1 / 3) < 0.01)

def test_fit_needs_two_classes():
    with pytest.raises(Error):
        fit(np.ones((2, 3)), ['bath'] * 3)
    with pytest.raises(Error):
        fit(np.ones((2, 3)), ['bath', 'office'])

def test_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    h = rng.random((4, 20))
    y = one_hot([['a', 'b', 'c'][i] for i in rng.integers(3, size=20)], ['a', 'b', 'c'])
    weights = rng.standard_normal((3, 4))
    bias = rng.standard_normal(3)
    grad_weights, grad_bias = classifier_gradients(weights, bias, h, y, 0.3)

    numeric_weights = utils.central_differences(
        lambda v: classifier_loss(v, bias, h, y, 0.3), weights)
    numeric_bias = utils.central_differences(
        lambda b: classifier_loss(weights, b, h, y, 0.3), bias)
    assert utils.relative_error(grad_weights, numeric_weights) < 1e-5
    assert utils.relative_error(grad_bias, numeric_bias) < 1e-5

def test_zero_weights_predict_first_class():
    clf = SceneClassifier(np.zeros((3, 2)), np.zeros(3), ['bath', 'kitchen', 'office'])
    name, probabilities = predict(clf, [0.3, 0.9])
    assert name == 'bath'
    assert np.allclose(probabilities, 1 / 3)

def test_bias_shift_invariance():
    rng = np.random.default_rng(5)
    weights = rng.standard_normal((3, 2))
    bias = rng.standard_normal(3)
    h = rng.random((2, 6))
    assert np.allclose(class_probabilities(weights, bias, h),
                       class_probabilities(weights, bias + 7.5, h), atol=1e-12)

def test_probabilities_match_scalar_oracle():
    weights = np.array([[1.0, -2.0], [0.5, 0.5], [-1.0, 3.0]])
    bias = np.array([0.1, 0.0, -0.2])
    h = np.array([0.4, 0.7])
    logits = [sum(weights[c, i] * h[i] for i in range(2)) + bias[c] for c in range(3)]
    total = sum(math.exp(z) for z in logits)
    expected = [math.exp(z) / total for z in logits]
    actual = class_probabilities(weights, bias, h[:, None])[:, 0]
    assert np.max(np.abs(actual - expected)) < 1e-12
    assert abs(actual.sum() - 1.0) < 1e-12

def test_predict_checks_length():
    clf = SceneClassifier(np.zeros((2, 3)), np.zeros(2), ['a', 'b'])
    with pytest.raises(Error):
        predict(clf, [0.1, 0.2])

def test_influence():
    clf = SceneClassifier(np.array([[0.5, -1.0], [2.0, 0.0]]), np.zeros(2), ['a', 'b'])
    assert influence(clf, 'a', 1) == -1.0
    assert influence(clf, 'b', 0) == 2.0
    with pytest.raises(Error):
        influence(clf, 'c', 0)
    with pytest.raises(Error):
        influence(clf, 'a', 2)

@pytest.fixture
def explained_model():
    dictionary = np.array([[0.9, 0.0, 0.1],
                           [0.7, 0.1, 0.0],
                           [0.0, 0.8, 0.3],
                           [0.1, 0.0, 0.6]])
    model = ScenarioModel(dictionary, ['towel', 'sink', 'oven', 'desk'], PbmfConfig(k=3))
    clf = SceneClassifier(np.array([[3.0, -1.0, 0.0], [-1.0, 3.0, 0.0], [0.0, 0.0, 3.0]]),
                          np.zeros(3), ['bath', 'kitchen', 'office'])
    return model, clf

def test_explain(explained_model):
    model, clf = explained_model
    explanation = explain(clf, model, [0.95, 0.1, 0.4], top_n=2)
    assert explanation.predicted_class == 'bath'
    assert [s.scenario_index for s in explanation.top_scenarios] == [0, 2]
    first = explanation.top_scenarios[0]
    assert first.influence_score == 3.0
    assert first.member_objects == [('towel', 0.9), ('sink', 0.7)]
    assert explanation.top_scenarios[1].member_objects == [('desk', 0.6), ('oven', 0.3)]

    d = explanation.to_dict()
    assert d['predicted_class'] == 'bath'
    assert abs(sum(d['class_probabilities'].values()) - 1.0) < 1e-12

def test_explain_all_scenarios(explained_model):
    model, clf = explained_model
    explanation = explain(clf, model, [0.1, 0.2, 0.3], top_n=10)
    assert [s.scenario_index for s in explanation.top_scenarios] == [2, 1, 0]

def test_render_explanation(explained_model):
    model, clf = explained_model
    lines = list(render_explanation(explain(clf, model, [0.95, 0.1, 0.4], top_n=1)))
    assert lines[0].startswith('Predicted class: bath (')
    assert 'scenario 0' in lines[1]
    assert lines[2].strip() == 'towel 0.90, sink 0.70'

def test_round_trip():
    clf = SceneClassifier(np.arange(6.0).reshape(3, 2), [1.0, 2.0, 3.0], ['a', 'b', 'c'])
    loaded = SceneClassifier.from_dict(clf.to_dict())
    assert loaded.class_names == clf.class_names
    assert np.array_equal(loaded.weights, clf.weights)
    with pytest.raises(Error):
        SceneClassifier.from_dict({'class_names': ['a']})
