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

from scenarios import Error, artifacts, dataset
from scenarios.classifier import SceneClassifier
from scenarios.head import ScenarioHead
from scenarios.matrix import FeatureMatrix, ObjectSceneMatrix
from scenarios.pbmf import PbmfConfig, ScenarioModel
from scenarios.retrieval import (ContentIndex, Query, build_index, compare, evaluate_ndcg,
                                 execute, generate_queries, matched_terms, random_ranking,
                                 relevance)
from . import utils

OBJECTS = ['cup', 'pan', 'pen']
CLASSES = ['bath', 'kitchen']

@pytest.fixture
def index():
    kitchen = np.array([0.9, 0.3, 0.6, 0.2])
    return ContentIndex(
        ['i0', 'i1', 'i2', 'i3'],
        ['kitchen', 'bath', 'kitchen', 'bath'],
        np.vstack([1.0 - kitchen, kitchen]),
        np.array([[0.9, 0.1, 0.6, 0.2],
                  [0.2, 0.8, 0.7, 0.4]]),
        np.array([[0.8, 0.1, 0.7, 0.6],
                  [0.9, 0.2, 0.1, 0.7],
                  [0.1, 0.9, 0.2, 0.3]]),
        OBJECTS, CLASSES)

def test_execute_mixed_query(index):
    q = Query(['kitchen'], (), ['cup'], ['pen'])
    ranked = execute(index, q)
    assert [i for i, _ in ranked] == ['i0', 'i2', 'i3', 'i1']
    assert [score for _, score in ranked] == [1.0, 1.0, 2 / 3, 0.0]

def test_execute_breaks_ties_by_id(index):
    ranked = execute(index, Query(required_scenarios=[1]))
    assert [i for i, _ in ranked] == ['i1', 'i2', 'i0', 'i3']

def test_classes_form_one_term(index):
    q = Query(classes=CLASSES)
    assert q.n_terms == 1
    ranked = execute(index, q)
    assert all(score == 1.0 for _, score in ranked)
    # Ordered by the best probability among the queried classes
    assert [i for i, _ in ranked] == ['i0', 'i3', 'i1', 'i2']

def test_execute_top_k(index):
    assert [i for i, _ in execute(index, Query(['kitchen']), top_k=2)] == ['i0', 'i2']

def test_query_errors(index):
    with pytest.raises(Error, match='empty query'):
        execute(index, Query())
    with pytest.raises(Error):
        execute(index, Query(['garage']))
    with pytest.raises(Error):
        execute(index, Query(required_scenarios=[2]))
    with pytest.raises(Error):
        execute(index, Query(required_objects=['sofa']))
    with pytest.raises(Error):
        Query(required_objects=['cup'], excluded_objects=['cup'])

def test_empty_index():
    empty = ContentIndex([], [], np.zeros((2, 0)), np.zeros((2, 0)), np.zeros((3, 0)), OBJECTS,
                         CLASSES)
    assert execute(empty, Query(['bath'])) == []
    assert len(empty) == 0

def test_build_index_object_scores():
    dictionary = np.array([[1.0, 0.0], [0.6, 0.7], [0.0, 0.2]])
    model = ScenarioModel(dictionary, OBJECTS, PbmfConfig(k=2))
    head = ScenarioHead(np.array([[2.0, 0.0], [0.0, -1.0]]), np.array([0.0, 0.5]))
    clf = SceneClassifier(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2), CLASSES)
    x = FeatureMatrix(np.array([[0.5, -1.0, 3.0], [1.0, 0.0, -2.0]]), ['a', 'b', 'c'])

    built = build_index(model, head, clf, x)
    for j in range(3):
        h = [1 / (1 + math.exp(-(2.0 * x.matrix[0, j]))),
             1 / (1 + math.exp(-(0.5 - x.matrix[1, j])))]
        for i in range(3):
            v = dictionary[i, 0] * h[0] + dictionary[i, 1] * h[1]
            assert abs(built.object_scores[i, j] - min(v, 1 + 0.01 * v)) < 1e-12
    assert built.instance_ids == ['a', 'b', 'c']

    subset = build_index(model, head, clf, x, ids=['c', 'a'])
    assert subset.instance_ids == ['c', 'a']
    assert np.array_equal(subset.encodings[:, 0], built.encodings[:, 2])

def naive_rank(index, q):
    scored = []
    for j, instance_id in enumerate(index.instance_ids):
        matched = 0
        if q.classes and index.predicted_classes[j] in q.classes:
            matched += 1
        for s in q.required_scenarios:
            if index.encodings[s, j] >= index.scenario_theta:
                matched += 1
        for name in q.required_objects:
            if index.object_scores[OBJECTS.index(name), j] >= index.object_theta:
                matched += 1
        for name in q.excluded_objects:
            if index.object_scores[OBJECTS.index(name), j] < index.object_theta:
                matched += 1
        probability = max((index.class_probabilities[CLASSES.index(c), j] for c in q.classes),
                          default=0.0)
        scored.append((-matched / q.n_terms, -probability, instance_id))
    return [(instance_id, -score) for score, _, instance_id in sorted(scored)]

def random_index(n, seed):
    rng = np.random.default_rng(seed)
    probabilities = rng.dirichlet(np.ones(2), n).T
    return ContentIndex(['x{:03d}'.format(j) for j in range(n)],
                        [CLASSES[i] for i in np.argmax(probabilities, axis=0)],
                        probabilities, rng.random((3, n)), rng.random((3, n)) * 1.2, OBJECTS,
                        CLASSES)

def random_query(rng):
    while True:
        objects = rng.permutation(OBJECTS)
        n_required, n_excluded = rng.integers(0, 2, size=2)
        q = Query([c for c in CLASSES if rng.random() < 0.4],
                  [s for s in range(3) if rng.random() < 0.3],
                  objects[:n_required], objects[n_required:n_required + n_excluded])
        if q.n_terms:
            return q

def test_execute_matches_naive_scan():
    idx = random_index(50, 0)
    rng = np.random.default_rng(1)
    for _ in range(100):
        q = random_query(rng)
        assert execute(idx, q) == naive_rank(idx, q)

def test_matched_terms_bounds():
    idx = random_index(20, 2)
    q = Query(['bath'], [0, 2], ['cup'], ['pan', 'pen'])
    matched = matched_terms(idx, q)
    assert np.all((matched >= 0) & (matched <= q.n_terms))

def test_relevance():
    q = Query(['kitchen'], (), ['cup', 'pan'], ['pen'])
    assert relevance(q, {'cup', 'pan'}, 'kitchen') == 1.0
    assert relevance(q, {'cup', 'pen'}, 'bath') == 0.25
    with pytest.raises(Error):
        relevance(Query(required_scenarios=[0]), set(), 'bath')
    assert relevance(Query(required_scenarios=[0]), set(), 'bath', np.array([0.7])) == 1.0

@pytest.fixture(scope='module')
def small_corpus():
    spec = dataset.SynthSpec(n_objects=20, n_scenarios=4, objects_per_scenario=5,
                             scenarios_per_instance=2, n_instances=200, flip_noise=0.05,
                             missing_object_rate=0.1, n_classes=2, seed=1)
    instances, truth = dataset.synth(spec)
    return utils.object_matrix(instances, truth.object_names), [i.scene_class for i in instances]

def test_generate_queries(small_corpus):
    a, labels = small_corpus
    queries = generate_queries(a, labels, 50, seed=3)
    assert len(queries) == 50
    assert queries == generate_queries(a, labels, 50, seed=3)
    for q in queries:
        assert q.n_terms == 4
        assert len(q.classes) == 1 and len(q.required_objects) == 2
        best = max(relevance(q, a.instance_objects(j), labels[j])
                   for j in range(a.n_instances))
        assert best == 1.0

def oracle_index(a, labels):
    """An index predicting the ground truth exactly."""
    class_names = sorted(set(labels))
    probabilities = np.array([[float(label == c) for label in labels] for c in class_names])
    return ContentIndex(a.instance_ids, labels, probabilities, np.zeros((1, a.n_instances)),
                        a.matrix, a.object_names, class_names)

def test_ndcg_of_exact_index(small_corpus):
    a, labels = small_corpus
    queries = generate_queries(a, labels, 100, seed=4)
    assert abs(evaluate_ndcg(oracle_index(a, labels), queries, a, labels) - 1.0) < 1e-12

def test_random_ranking_matches_expectation(small_corpus):
    a, labels = small_corpus
    idx = oracle_index(a, labels)
    queries = generate_queries(a, labels, 500, seed=5)

    discount = sum(1 / math.log2(i + 2) for i in range(5))
    expected = 0.0
    for q in queries:
        rel = [relevance(q, a.instance_objects(j), labels[j]) for j in range(a.n_instances)]
        ideal = sum(r / math.log2(i + 2) for i, r in enumerate(sorted(rel, reverse=True)[:5]))
        expected += np.mean(rel) * discount / ideal
    expected /= len(queries)

    actual = evaluate_ndcg(idx, queries, a, labels, rank=random_ranking(0))
    assert abs(actual - expected) < 0.02

def test_ndcg_needs_ground_truth(small_corpus):
    a, labels = small_corpus
    idx = oracle_index(a.select_instances([0, 1, 2]), labels[:3])
    with pytest.raises(Error):
        evaluate_ndcg(idx, [Query(['class0'])], a.select_instances([0, 1]), labels[:2])

def test_ndcg_on_trained_pipeline(retrieval_run):
    _, out_dir = retrieval_run
    report = utils.read_json(out_dir / 'report.json')['retrieval']
    assert report['queries'] == 500
    assert report['ndcg'] >= 0.9
    assert report['ndcg'] > report['random_ndcg']

def test_compare(index):
    assert compare(index, 'i0', 'i2') == {
        'shared_scenarios': [0],
        'only_a': [],
        'only_b': [1],
        'class_a': 'kitchen',
        'class_b': 'kitchen',
    }
    swapped = compare(index, 'i2', 'i0')
    assert swapped['only_a'] == [1] and swapped['only_b'] == []

    same = compare(index, 'i1', 'i1')
    assert same['shared_scenarios'] == [1]
    assert same['only_a'] == same['only_b'] == []
    with pytest.raises(Error):
        compare(index, 'i0', 'i9')

def test_index_file(index, tmp_path):
    path = tmp_path / 'index.jsonl'
    artifacts.write_jsonl(path, index.records())
    loaded = ContentIndex.from_records(artifacts.read_jsonl(path))
    q = Query(['kitchen'], (), ['cup'], ['pen'])
    assert execute(loaded, q) == execute(index, q)
    with pytest.raises(Error):
        ContentIndex.from_records([])

def test_query_dict():
    q = Query(['bath'], [1], ['cup'], ['pen'])
    assert Query.from_dict(q.to_dict()) == q
    assert q.to_dict()['classes'] == ['bath']
