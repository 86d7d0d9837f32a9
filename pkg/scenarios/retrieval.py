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
from .classifier import predict_all
from .head import head_forward
from .matrix import pseudo_boolean_product

logger = logging.getLogger(__name__)

SCENARIO_THETA = 0.5
OBJECT_THETA = 0.5
NDCG_DEPTH = 5
MAX_QUERY_RETRIES = 100
TOP_COOCCURRING = 5

class ContentIndex:
    """Per-instance predictions searchable by class, scenario and object terms."""

    def __init__(self, instance_ids, predicted_classes, class_probabilities, encodings,
            object_scores, object_names, class_names, scenario_theta=SCENARIO_THETA,
            object_theta=OBJECT_THETA):
        instance_ids = list(instance_ids)
        n = len(instance_ids)
        if len(set(instance_ids)) != n:
            raise Error('Instance ids must be unique within an index')
        encodings = np.asarray(encodings, dtype=np.float64)
        if encodings.ndim != 2 or encodings.shape[1] != n:
            raise Error('Index needs one encoding per instance')
        object_scores = np.asarray(object_scores, dtype=np.float64).reshape(len(object_names), n)
        class_probabilities = np.asarray(class_probabilities, dtype=np.float64).reshape(
            len(class_names), n)
        if len(predicted_classes) != n:
            raise Error('Index needs one predicted class per instance')
        if np.any(encodings < 0.0) or np.any(encodings > 1.0):
            raise Error('Indexed encodings must lie in [0,1]')
        if not np.all(np.isfinite(object_scores)):
            raise Error('Indexed object scores must be finite')

        self.instance_ids = instance_ids
        self.predicted_classes = list(predicted_classes)
        self.class_probabilities = class_probabilities
        self.encodings = encodings
        self.object_scores = object_scores
        self.object_names = list(object_names)
        self.class_names = list(class_names)
        self.scenario_theta = float(scenario_theta)
        self.object_theta = float(object_theta)
        self._positions = {instance_id: j for j, instance_id in enumerate(instance_ids)}

    def __len__(self):
        return len(self.instance_ids)

    @property
    def k(self):
        return self.encodings.shape[0]

    def position(self, instance_id):
        try:
            return self._positions[instance_id]
        except KeyError:
            raise Error('Instance not indexed: ' + str(instance_id))

    def object_row(self, name):
        try:
            return self.object_names.index(name)
        except ValueError:
            raise Error('Unknown object: ' + str(name))

    def class_row(self, name):
        try:
            return self.class_names.index(name)
        except ValueError:
            raise Error('Unknown class: ' + str(name))

    def records(self):
        """Yield the header record followed by one record per instance."""
        yield {
            'object_names': self.object_names,
            'class_names': self.class_names,
            'k': self.k,
            'scenario_theta': self.scenario_theta,
            'object_theta': self.object_theta,
        }
        for j, instance_id in enumerate(self.instance_ids):
            yield {
                'instance_id': instance_id,
                'predicted_class': self.predicted_classes[j],
                'class_probabilities': self.class_probabilities[:, j].tolist(),
                'encoding': self.encodings[:, j].tolist(),
                'object_scores': self.object_scores[:, j].tolist(),
            }

    @staticmethod
    def from_records(records):
        records = iter(records)
        try:
            header = next(records)
        except StopIteration:
            raise Error('Index file is empty')

        try:
            rows = list(records)
            k = header['k']
            n = len(rows)

            def columns(key, size):
                if not rows:
                    return np.zeros((size, 0))
                return np.array([row[key] for row in rows], dtype=np.float64).reshape(n, size).T

            return ContentIndex(
                [row['instance_id'] for row in rows],
                [row['predicted_class'] for row in rows],
                columns('class_probabilities', len(header['class_names'])),
                columns('encoding', k),
                columns('object_scores', len(header['object_names'])),
                header['object_names'], header['class_names'],
                header['scenario_theta'], header['object_theta'])
        except (KeyError, TypeError, ValueError) as e:
            raise Error('Malformed index record: ' + str(e))

def build_index(model, head, clf, x, ids=None, scenario_theta=SCENARIO_THETA,
        object_theta=OBJECT_THETA):
    if not model.k == head.k == clf.k:
        raise Error('Model, head and classifier disagree on the scenario count')
    if head.dim != x.dim:
        raise Error('Features of dimension {} for a head expecting {}'.format(x.dim, head.dim))
    if ids is not None:
        x = x.select_instances(ids)

    encodings = head_forward(head, x).matrix
    predicted, probabilities = predict_all(clf, encodings)
    object_scores = pseudo_boolean_product(model.dictionary, encodings)

    logger.info('Indexed %d instances', x.matrix.shape[1])
    return ContentIndex(x.instance_ids, predicted, probabilities, encodings, object_scores,
                        model.object_names, clf.class_names, scenario_theta, object_theta)

class Query:
    def __init__(self, classes=(), required_scenarios=(), required_objects=(),
            excluded_objects=()):
        self.classes = frozenset(classes)
        self.required_scenarios = frozenset(int(s) for s in required_scenarios)
        self.required_objects = frozenset(required_objects)
        self.excluded_objects = frozenset(excluded_objects)
        overlap = self.required_objects & self.excluded_objects
        if overlap:
            raise Error('Object both required and excluded: ' + sorted(overlap)[0])

    @property
    def n_terms(self):
        # All classes together form one OR-ed term
        return (bool(self.classes) + len(self.required_scenarios) + len(self.required_objects)
                + len(self.excluded_objects))

    def __eq__(self, other):
        return isinstance(other, Query) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return 'Query({})'.format(self.to_dict())

    def to_dict(self):
        return {
            'classes': sorted(self.classes),
            'required_scenarios': sorted(self.required_scenarios),
            'required_objects': sorted(self.required_objects),
            'excluded_objects': sorted(self.excluded_objects),
        }

    @staticmethod
    def from_dict(d):
        return Query(d.get('classes', ()), d.get('required_scenarios', ()),
                     d.get('required_objects', ()), d.get('excluded_objects', ()))

def _check_query(index, q):
    if q.n_terms == 0:
        raise Error('empty query')
    for name in q.classes:
        index.class_row(name)
    for s in q.required_scenarios:
        if not 0 <= s < index.k:
            raise Error('Scenario index out of range: {}'.format(s))

def matched_terms(index, q):
    """Number of satisfied query terms per indexed instance."""
    _check_query(index, q)
    matched = np.zeros(len(index), dtype=int)
    if q.classes:
        matched += np.array([c in q.classes for c in index.predicted_classes], dtype=int)
    for s in q.required_scenarios:
        matched += index.encodings[s] >= index.scenario_theta
    for name in q.required_objects:
        matched += index.object_scores[index.object_row(name)] >= index.object_theta
    for name in q.excluded_objects:
        matched += index.object_scores[index.object_row(name)] < index.object_theta
    return matched

def _class_probability(index, q):
    if not q.classes:
        return np.zeros(len(index))
    rows = [index.class_row(name) for name in sorted(q.classes)]
    return index.class_probabilities[rows].max(axis=0)

def execute(index, q, top_k=None):
    """Rank indexed instances by the fraction of satisfied query terms.

    Ties go to the higher probability of a queried class, then to the
    lower instance id.
    """
    scores = matched_terms(index, q) / q.n_terms
    probability = _class_probability(index, q)
    order = sorted(range(len(index)),
                   key=lambda j: (-scores[j], -probability[j], index.instance_ids[j]))
    if top_k is not None:
        order = order[:top_k]
    return [(index.instance_ids[j], float(scores[j])) for j in order]

def random_ranking(seed):
    """A control ranker ordering the corpus by a fresh random permutation per query."""
    rng = np.random.default_rng(seed)

    def rank(index, q, top_k):
        _check_query(index, q)
        order = rng.permutation(len(index))[:top_k]
        return [(index.instance_ids[j], 0.0) for j in order]

    return rank

def relevance(q, objects, scene_class, encoding=None, scenario_theta=SCENARIO_THETA):
    """Fraction of query terms a ground-truth instance satisfies."""
    if q.n_terms == 0:
        raise Error('empty query')
    matched = 0
    if q.classes:
        matched += scene_class in q.classes
    for s in q.required_scenarios:
        if encoding is None:
            raise Error('Scenario terms need an encoding to judge relevance')
        matched += encoding[s] >= scenario_theta
    matched += len(q.required_objects & objects)
    matched += len(q.excluded_objects - objects)
    return matched / q.n_terms

def _ground_truth(index, a_test, labels):
    if len(labels) != a_test.n_instances:
        raise Error('{} labels for {} annotated instances'.format(len(labels), a_test.n_instances))
    annotated = dict(zip(a_test.instance_ids, range(a_test.n_instances)))
    truth = []
    for instance_id in index.instance_ids:
        try:
            j = annotated[instance_id]
        except KeyError:
            raise Error('No ground truth for indexed instance: ' + str(instance_id))
        truth.append((a_test.instance_objects(j), labels[j]))
    return truth

def _dcg(gains):
    return sum(gain / math.log2(i + 2) for i, gain in enumerate(gains))

def evaluate_ndcg(index, queries, a_test, labels, k=NDCG_DEPTH, rank=execute):
    """Mean NDCG@k, normalized by the best ordering of the whole indexed corpus."""
    queries = list(queries)
    if not queries:
        return 0.0
    truth = _ground_truth(index, a_test, labels)

    total = 0.0
    for q in queries:
        rel = [relevance(q, objects, label, index.encodings[:, j], index.scenario_theta)
               for j, (objects, label) in enumerate(truth)]
        ideal = _dcg(sorted(rel, reverse=True)[:k])
        if ideal == 0.0:
            continue
        ranked = rank(index, q, k)
        total += _dcg([rel[index.position(instance_id)] for instance_id, _ in ranked]) / ideal

    return total / len(queries)

def generate_queries(a_test, labels, n, seed):
    """Sample queries of one class, two present objects and one excluded object.

    The excluded object is one of the objects most often seen together with
    the chosen pair, yet absent from some instance of the class holding the
    pair, so every query has a fully relevant instance.
    """
    rng = np.random.default_rng(seed)
    labels = list(labels)
    if len(labels) != a_test.n_instances:
        raise Error('{} labels for {} annotated instances'.format(len(labels), a_test.n_instances))
    m = a_test.matrix.astype(bool)
    label_array = np.array(labels, dtype=object)
    classes = sorted(set(labels))

    queries = []
    for i in range(n):
        for _ in range(MAX_QUERY_RETRIES):
            scene_class = classes[rng.integers(len(classes))]
            members = np.flatnonzero(label_array == scene_class)
            j = members[rng.integers(len(members))]
            present = np.flatnonzero(m[:, j])
            if len(present) < 2:
                continue
            o1, o2 = rng.choice(present, 2, replace=False)

            pair = m[o1] & m[o2]
            counts = m[:, pair].sum(axis=1)
            counts[[o1, o2]] = 0
            holders = m[:, pair & (label_array == scene_class)]
            candidates = [o for o in np.argsort(-counts, kind='stable')[:TOP_COOCCURRING]
                          if counts[o] > 0 and not holders[o].all()]
            if not candidates:
                continue

            excluded = candidates[rng.integers(len(candidates))]
            names = a_test.object_names
            queries.append(Query([scene_class], (), [names[o1], names[o2]], [names[excluded]]))
            break
        else:
            logger.warning('Could not generate query %d after %d attempts, skipping',
                           i, MAX_QUERY_RETRIES)

    return queries

def compare(index, id_a, id_b):
    a = index.encodings[:, index.position(id_a)] >= index.scenario_theta
    b = index.encodings[:, index.position(id_b)] >= index.scenario_theta
    return {
        'shared_scenarios': np.flatnonzero(a & b).tolist(),
        'only_a': np.flatnonzero(a & ~b).tolist(),
        'only_b': np.flatnonzero(b & ~a).tolist(),
        'class_a': index.predicted_classes[index.position(id_a)],
        'class_b': index.predicted_classes[index.position(id_b)],
    }
