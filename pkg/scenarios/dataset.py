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
import os
import numpy as np

from . import Error
from .artifacts import numbered_jsonl, save_json, write_jsonl
from .matrix import FeatureMatrix, ObjectSceneMatrix

logger = logging.getLogger(__name__)

DATASET_FILE = 'dataset.jsonl'
GROUND_TRUTH_FILE = 'ground_truth.json'

class AnnotatedInstance:
    """One scene: its class, its objects if annotated, optional features."""

    def __init__(self, id, scene_class, objects=None, features=None):
        self.id = id
        self.scene_class = scene_class
        self.objects = frozenset(objects) if objects is not None else None
        self.features = list(features) if features is not None else None

    @property
    def annotated(self):
        return self.objects is not None

    def to_dict(self):
        d = {'id': self.id, 'scene_class': self.scene_class}
        if self.objects is not None:
            d['objects'] = sorted(self.objects)
        if self.features is not None:
            d['features'] = self.features
        return d

    @staticmethod
    def from_dict(d):
        if not isinstance(d, dict):
            raise ValueError('record is not an object')
        if not isinstance(d.get('id'), str) or not d['id']:
            raise ValueError('missing instance id')
        if not isinstance(d.get('scene_class'), str):
            raise ValueError('missing scene class')
        objects = d.get('objects')
        if objects is not None and not (isinstance(objects, list)
                                        and all(isinstance(o, str) for o in objects)):
            raise ValueError('objects must be a list of names')
        features = d.get('features')
        if features is not None:
            if not isinstance(features, list):
                raise ValueError('features must be a list of numbers')
            features = [float(value) for value in features]
        return AnnotatedInstance(d['id'], d['scene_class'], objects, features)

class DatasetConfig:
    def __init__(self, min_object_frequency=0.01, split_seed=0, train_per_class=None,
            test_per_class=None, test_fraction=0.2):
        if not 0.0 < min_object_frequency < 1.0:
            raise Error('Minimum object frequency must lie in (0,1)')
        if not 0.0 <= test_fraction < 1.0:
            raise Error('Test fraction must lie in [0,1)')
        if (train_per_class is None) != (test_per_class is None):
            raise Error('Per-class counts need both the train and the test count')
        self.min_object_frequency = float(min_object_frequency)
        self.split_seed = int(split_seed)
        self.train_per_class = train_per_class
        self.test_per_class = test_per_class
        self.test_fraction = float(test_fraction)

class Split:
    """Instances of one split with their labels, annotations and features.

    `objects` covers only the annotated instances; `instance_ids`, `labels`
    and `features` cover all of them.
    """

    def __init__(self, instance_ids, labels, objects, features=None):
        self.instance_ids = list(instance_ids)
        self.labels = list(labels)
        self.objects = objects
        self.features = features

    def __len__(self):
        return len(self.instance_ids)

    def annotated_labels(self):
        by_id = dict(zip(self.instance_ids, self.labels))
        return [by_id[i] for i in self.objects.instance_ids]

    def feature_matrix(self):
        """Features, or the object indicators when no features were given."""
        if self.features is not None:
            return self.features
        if self.objects.n_instances != len(self.instance_ids):
            raise Error('Instances without object annotations need features')
        return FeatureMatrix(self.objects.matrix, self.objects.instance_ids)

def read_instances(path):
    seen = set()
    for lineno, record in numbered_jsonl(path):
        try:
            instance = AnnotatedInstance.from_dict(record)
        except (ValueError, TypeError) as e:
            raise Error('{}:{}: {}'.format(path, lineno, e))
        if instance.id in seen:
            raise Error('{}:{}: duplicate instance id {}'.format(path, lineno, instance.id))
        seen.add(instance.id)
        yield instance

def write_instances(path, instances):
    write_jsonl(path, (instance.to_dict() for instance in instances))

def stratified_split(labels, cfg):
    """Partition positions into (train, test) class by class, in input order."""
    rng = np.random.default_rng(cfg.split_seed)
    train, test = [], []
    for scene_class in sorted(set(labels)):
        members = [j for j, label in enumerate(labels) if label == scene_class]
        shuffled = [members[i] for i in rng.permutation(len(members))]
        if cfg.test_per_class is not None:
            if cfg.train_per_class + cfg.test_per_class > len(members):
                raise Error('Class {} has {} instances, {} + {} requested'.format(
                    scene_class, len(members), cfg.train_per_class, cfg.test_per_class))
            n_test, n_train = cfg.test_per_class, cfg.train_per_class
        else:
            n_test = int(round(cfg.test_fraction * len(members)))
            if cfg.test_fraction > 0.0 and len(members) > 1:
                n_test = min(max(n_test, 1), len(members) - 1)
            n_train = len(members) - n_test
        test.extend(shuffled[:n_test])
        train.extend(shuffled[n_test:n_test + n_train])
    return sorted(train), sorted(test)

def build_vocabulary(instances, min_object_frequency):
    annotated = [instance for instance in instances if instance.annotated]
    if not annotated:
        raise Error('No annotated training instances')
    counts = {}
    for instance in annotated:
        for name in instance.objects:
            counts[name] = counts.get(name, 0) + 1
    vocabulary = sorted(name for name, count in counts.items()
                        if count / len(annotated) >= min_object_frequency)
    dropped = len(counts) - len(vocabulary)
    if dropped:
        logger.info('Dropped %d objects below frequency %g', dropped, min_object_frequency)
    return vocabulary

def _object_matrix(instances, vocabulary, warn_unknown):
    rows = {name: i for i, name in enumerate(vocabulary)}
    annotated = [instance for instance in instances if instance.annotated]
    m = np.zeros((len(vocabulary), len(annotated)))
    unknown = set()
    for j, instance in enumerate(annotated):
        for name in instance.objects:
            if name in rows:
                m[rows[name], j] = 1.0
            else:
                unknown.add(name)
    if unknown and warn_unknown:
        logger.warning('Dropped %d objects unknown to the training vocabulary: %s',
                       len(unknown), ', '.join(sorted(unknown)))
    return ObjectSceneMatrix(m, vocabulary, [instance.id for instance in annotated])

def _feature_matrix(instances, external):
    ids = [instance.id for instance in instances]
    if external is not None:
        return external.select_instances(ids)
    with_features = [instance for instance in instances if instance.features is not None]
    if not with_features:
        return None
    if len(with_features) != len(instances):
        raise Error('Instance {} has no features'.format(
            next(i.id for i in instances if i.features is None)))
    dims = {len(instance.features) for instance in instances}
    if len(dims) != 1:
        raise Error('Feature vectors differ in length')
    return FeatureMatrix(np.array([instance.features for instance in instances]).T, ids)

def load_dataset(path, cfg, features_path=None):
    """Read a JSON-lines dataset and split it into (train, test) Splits."""
    instances = list(read_instances(path))
    if not instances:
        raise Error('Dataset is empty: ' + str(path))
    external = FeatureMatrix.read_csv(features_path) if features_path else None

    train_at, test_at = stratified_split([i.scene_class for i in instances], cfg)
    train = [instances[j] for j in train_at]
    test = [instances[j] for j in test_at]
    vocabulary = build_vocabulary(train, cfg.min_object_frequency)

    def split(part, warn_unknown):
        return Split([i.id for i in part], [i.scene_class for i in part],
                     _object_matrix(part, vocabulary, warn_unknown),
                     _feature_matrix(part, external))

    logger.info('Loaded %d training and %d test instances over %d objects',
                len(train), len(test), len(vocabulary))
    return split(train, False), split(test, True)

class SynthSpec:
    FIELDS = ('n_objects', 'n_scenarios', 'objects_per_scenario', 'scenarios_per_instance',
              'n_instances', 'flip_noise', 'missing_object_rate', 'n_classes', 'seed',
              'annotated_fraction')

    def __init__(self, n_objects=60, n_scenarios=10, objects_per_scenario=6,
            scenarios_per_instance=2, n_instances=2000, flip_noise=0.01,
            missing_object_rate=0.1, n_classes=2, seed=0, annotated_fraction=1.0):
        for name, p in (('flip_noise', flip_noise), ('missing_object_rate', missing_object_rate)):
            if not 0.0 <= p < 0.5:
                raise Error('{} must lie in [0, 0.5): {}'.format(name, p))
        if not 0.0 < annotated_fraction <= 1.0:
            raise Error('Annotated fraction must lie in (0,1]')
        if min(n_objects, n_scenarios, objects_per_scenario, n_classes) < 1:
            raise Error('Object, scenario and class counts must be positive')
        if n_instances < 0 or scenarios_per_instance < 1:
            raise Error('Instance counts must be positive')

        self.n_objects = int(n_objects)
        self.n_scenarios = int(n_scenarios)
        self.objects_per_scenario = int(objects_per_scenario)
        self.scenarios_per_instance = int(scenarios_per_instance)
        self.n_instances = int(n_instances)
        self.flip_noise = float(flip_noise)
        self.missing_object_rate = float(missing_object_rate)
        self.n_classes = int(n_classes)
        self.seed = int(seed)
        self.annotated_fraction = float(annotated_fraction)

    def replace(self, **changes):
        values = self.to_dict()
        values.update(changes)
        return SynthSpec(**values)

    def to_dict(self):
        return {name: getattr(self, name) for name in self.FIELDS}

class GroundTruth:
    """Planted dictionary, encodings and class-to-scenario map of a synthetic corpus."""

    def __init__(self, dictionary, encodings, class_scenarios, object_names, instance_ids):
        self.dictionary = dictionary
        self.encodings = encodings
        self.class_scenarios = class_scenarios
        self.object_names = object_names
        self.instance_ids = instance_ids

    def to_dict(self):
        return {
            'object_names': self.object_names,
            'instance_ids': self.instance_ids,
            'dictionary': self.dictionary.astype(int).tolist(),
            'encodings': self.encodings.astype(int).tolist(),
            'class_scenarios': self.class_scenarios,
        }

    @staticmethod
    def from_dict(d):
        try:
            return GroundTruth(np.array(d['dictionary'], dtype=np.float64).reshape(
                                   len(d['object_names']), -1),
                               np.array(d['encodings'], dtype=np.float64).reshape(
                                   -1, len(d['instance_ids'])),
                               d['class_scenarios'], d['object_names'], d['instance_ids'])
        except (KeyError, TypeError, ValueError) as e:
            raise Error('Malformed ground truth: ' + str(e))

def _names(prefix, count):
    width = len(str(max(count - 1, 0)))
    return ['{}{:0{}d}'.format(prefix, i, width) for i in range(count)]

def planted_supports(spec, rng):
    if spec.objects_per_scenario > spec.n_objects:
        raise Error('Scenarios of {} objects need at least as many objects, got {}'.format(
            spec.objects_per_scenario, spec.n_objects))
    permutation = rng.permutation(spec.n_objects)
    w = np.zeros((spec.n_objects, spec.n_scenarios))
    for s in range(spec.n_scenarios):
        start = s * spec.objects_per_scenario
        rows = permutation[np.arange(start, start + spec.objects_per_scenario) % spec.n_objects]
        w[rows, s] = 1.0
    if len({tuple(column) for column in w.T}) != spec.n_scenarios:
        raise Error('Cannot plant {} distinct scenarios of {} objects over {} objects'.format(
            spec.n_scenarios, spec.objects_per_scenario, spec.n_objects))
    return w

def synth(spec):
    """Generate a corpus from planted scenarios.

    Returns (instances, GroundTruth). Class c owns the scenarios s with
    s mod n_classes == c; every instance activates scenarios of its class
    only, so classes never share a scenario.
    """
    if spec.n_classes > spec.n_scenarios:
        raise Error('{} classes cannot own disjoint sets of {} scenarios'.format(
            spec.n_classes, spec.n_scenarios))
    owned = [list(range(c, spec.n_scenarios, spec.n_classes)) for c in range(spec.n_classes)]
    if spec.scenarios_per_instance > min(len(s) for s in owned):
        raise Error('Every class owns at most {} scenarios, {} requested per instance'.format(
            min(len(s) for s in owned), spec.scenarios_per_instance))
    if spec.scenarios_per_instance > 1:
        for c, scenarios in enumerate(owned):
            if len(scenarios) == spec.scenarios_per_instance:
                logger.warning('Scenarios %s of class %d always occur together', scenarios, c)

    rng = np.random.default_rng(spec.seed)
    w = planted_supports(spec, rng)
    object_names = _names('obj', spec.n_objects)
    class_names = _names('class', spec.n_classes)
    instance_ids = _names('scene', spec.n_instances)
    n_annotated = int(round(spec.annotated_fraction * spec.n_instances))

    h = np.zeros((spec.n_scenarios, spec.n_instances))
    instances = []
    for j in range(spec.n_instances):
        c = int(rng.integers(spec.n_classes))
        active = rng.choice(owned[c], spec.scenarios_per_instance, replace=False)
        h[active, j] = 1.0

        present = w[:, active].max(axis=1) > 0.0
        dropped = present & (rng.random(spec.n_objects) < spec.missing_object_rate)
        added = ~present & (rng.random(spec.n_objects) < spec.flip_noise)
        observed = (present & ~dropped) | added

        objects = [object_names[i] for i in np.flatnonzero(observed)]
        instances.append(AnnotatedInstance(instance_ids[j], class_names[c],
                                           objects if j < n_annotated else None,
                                           observed.astype(np.float64).tolist()))

    class_scenarios = {class_names[c]: owned[c] for c in range(spec.n_classes)}
    logger.info('Generated %d instances from %d planted scenarios', spec.n_instances,
                spec.n_scenarios)
    return instances, GroundTruth(w, h, class_scenarios, object_names, instance_ids)

def write_synth(out_dir, instances, truth):
    os.makedirs(out_dir, exist_ok=True)
    dataset_path = os.path.join(out_dir, DATASET_FILE)
    write_instances(dataset_path, instances)
    save_json(os.path.join(out_dir, GROUND_TRUTH_FILE), truth.to_dict())
    return dataset_path
