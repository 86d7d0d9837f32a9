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
import pytest

from scenarios import Error, artifacts, dataset
from scenarios.dataset import (AnnotatedInstance, DatasetConfig, GroundTruth, Split, SynthSpec,
                               build_vocabulary, load_dataset, read_instances, stratified_split,
                               synth, write_instances, write_synth)
from . import utils

def instances_with(counts, n):
    """n instances where object name occurs in the first counts[name] of them."""
    return [AnnotatedInstance('s{:03d}'.format(j), 'kitchen',
                              [name for name, count in counts.items() if j < count])
            for j in range(n)]

def test_vocabulary_threshold():
    instances = instances_with({'cup': 20, 'edge': 2, 'rare': 1}, 200)
    assert build_vocabulary(instances, 0.01) == ['cup', 'edge']

def test_vocabulary_ignores_unannotated():
    instances = instances_with({'cup': 1}, 2) + [AnnotatedInstance('x', 'bath')]
    assert build_vocabulary(instances, 0.5) == ['cup']
    with pytest.raises(Error):
        build_vocabulary([AnnotatedInstance('x', 'bath')], 0.01)

def test_vocabulary_matches_counting():
    rng = np.random.default_rng(0)
    names = ['o{}'.format(i) for i in range(30)]
    rates = rng.uniform(0.0, 0.05, len(names))
    instances = [AnnotatedInstance(str(j), 'c', [name for name, rate in zip(names, rates)
                                                if rng.random() < rate])
                 for j in range(300)]
    expected = sorted(name for name in names
                      if sum(name in i.objects for i in instances) / 300 >= 0.02)
    assert build_vocabulary(instances, 0.02) == expected

def test_stratified_split():
    labels = ['a'] * 50 + ['b'] * 30 + ['c'] * 20
    train, test = stratified_split(labels, DatasetConfig())
    assert not set(train) & set(test)
    assert sorted(train + test) == list(range(100))
    assert [sum(labels[j] == c for j in test) for c in 'abc'] == [10, 6, 4]
    assert (train, test) == stratified_split(labels, DatasetConfig())
    assert test != stratified_split(labels, DatasetConfig(split_seed=1))[1]

def test_stratified_split_per_class():
    labels = ['a'] * 10 + ['b'] * 8
    train, test = stratified_split(labels, DatasetConfig(train_per_class=5, test_per_class=3))
    assert len(train) == 10 and len(test) == 6
    with pytest.raises(Error):
        stratified_split(labels, DatasetConfig(train_per_class=6, test_per_class=3))
    with pytest.raises(Error):
        DatasetConfig(train_per_class=6)

def test_split_with_large_test_fraction():
    train, test = stratified_split(['a', 'a', 'b', 'b'], DatasetConfig(test_fraction=0.9))
    assert len(train) == len(test) == 2
    assert stratified_split(['a'], DatasetConfig(test_fraction=0.9)) == ([], [0])

def test_read_instances_reports_malformed_lines(tmp_path):
    path = tmp_path / 'data.jsonl'
    utils.write(path, '{"id": "s0", "scene_class": "bath"}\n{"id": "s1", \n')
    with pytest.raises(Error, match=':2:'):
        list(read_instances(path))

    utils.write(path, '{"id": "s0", "scene_class": "bath", "objects": "towel"}\n')
    with pytest.raises(Error, match='data.jsonl:1:'):
        list(read_instances(path))

    utils.write(path, '{"id": "s0", "scene_class": "bath"}\n\n\n{"scene_class": "x"}\n')
    with pytest.raises(Error, match=':4: .*instance id'):
        list(read_instances(path))

    utils.write(path, '{"id": "s0", "scene_class": "bath"}\n{"id": "s0", "scene_class": "a"}\n')
    with pytest.raises(Error, match=':2: duplicate'):
        list(read_instances(path))

def test_instance_records():
    instance = AnnotatedInstance('s0', 'bath', ['towel', 'sink'], [1, 0.5])
    assert instance.to_dict() == {'id': 's0', 'scene_class': 'bath', 'objects': ['sink', 'towel'],
                                  'features': [1, 0.5]}
    unannotated = AnnotatedInstance.from_dict({'id': 's1', 'scene_class': 'bath'})
    assert not unannotated.annotated
    with pytest.raises(ValueError):
        AnnotatedInstance.from_dict({'scene_class': 'bath'})
    with pytest.raises(ValueError):
        AnnotatedInstance.from_dict({'id': 's2', 'scene_class': 'bath', 'features': 'x'})

def test_load_dataset(tmp_path, caplog):
    instances = [AnnotatedInstance('s{}'.format(j), 'ab'[j % 2], ['cup'] if j % 3 else ['pan'])
                 for j in range(40)]
    instances.append(AnnotatedInstance('odd', 'a', ['cup', 'unicorn']))
    path = tmp_path / 'data.jsonl'
    write_instances(path, instances)

    with caplog.at_level(logging.WARNING):
        train, test = load_dataset(path, DatasetConfig(min_object_frequency=0.05,
                                                       test_fraction=0.25))
    assert not set(train.instance_ids) & set(test.instance_ids)
    assert len(train) + len(test) == 41
    assert test.objects.object_names == train.objects.object_names
    if 'odd' in test.instance_ids:
        assert 'unicorn' in caplog.text
    else:
        assert 'unicorn' not in train.objects.object_names

    x = train.feature_matrix()
    assert np.array_equal(x.matrix, train.objects.matrix)

def test_load_empty_dataset(tmp_path):
    path = tmp_path / 'data.jsonl'
    utils.write(path, '\n')
    with pytest.raises(Error):
        load_dataset(path, DatasetConfig())

def test_partially_annotated_dataset(tmp_path):
    instances, _ = synth(SynthSpec(n_instances=200, annotated_fraction=0.5, seed=2))
    path = tmp_path / 'data.jsonl'
    write_instances(path, instances)
    train, test = load_dataset(path, DatasetConfig())

    assert train.objects.n_instances < len(train)
    x = train.feature_matrix()
    assert x.instance_ids == train.instance_ids
    assert len(train.annotated_labels()) == train.objects.n_instances

    bare = Split(train.instance_ids, train.labels, train.objects)
    with pytest.raises(Error):
        bare.feature_matrix()

def test_synth_without_noise():
    spec = SynthSpec(n_instances=300, flip_noise=0.0, missing_object_rate=0.0, seed=4)
    instances, truth = synth(spec)
    a = utils.object_matrix(instances, truth.object_names)
    assert np.array_equal(a.matrix, (truth.dictionary @ truth.encodings > 0).astype(float))
    assert np.all(truth.encodings.sum(axis=0) == spec.scenarios_per_instance)
    assert np.all(truth.dictionary.sum(axis=0) == spec.objects_per_scenario)

    for j, instance in enumerate(instances):
        active = set(np.flatnonzero(truth.encodings[:, j]))
        assert active <= set(truth.class_scenarios[instance.scene_class])
        assert instance.features == a.matrix[:, j].tolist()

def test_synth_noise_rates():
    spec = SynthSpec(n_instances=1000, flip_noise=0.1, missing_object_rate=0.2, seed=5)
    instances, truth = synth(spec)
    a = utils.object_matrix(instances, truth.object_names).matrix.astype(bool)
    present = truth.dictionary @ truth.encodings > 0

    for observed, trials, p in ((a[~present], (~present).sum(), 0.1),
                                (~a[present], present.sum(), 0.2)):
        sigma = np.sqrt(trials * p * (1 - p))
        assert abs(observed.sum() - trials * p) < 5 * sigma

def test_synth_validation():
    with pytest.raises(Error):
        SynthSpec(flip_noise=0.5)
    with pytest.raises(Error):
        SynthSpec(annotated_fraction=0.0)
    with pytest.raises(Error):
        synth(SynthSpec(n_scenarios=4, n_classes=5))
    with pytest.raises(Error):
        synth(SynthSpec(n_objects=6, n_scenarios=2, objects_per_scenario=6, n_classes=1,
                        scenarios_per_instance=1))

def test_synth_warns_about_inseparable_scenarios(caplog):
    with caplog.at_level(logging.WARNING):
        synth(SynthSpec(n_instances=20, seed=1))
    assert 'always occur together' not in caplog.text

    with caplog.at_level(logging.WARNING):
        _, truth = synth(SynthSpec(n_scenarios=10, n_classes=5, n_instances=20, seed=1))
    assert 'always occur together' in caplog.text
    assert np.array_equal(truth.encodings[0], truth.encodings[5])

def test_synth_is_deterministic():
    spec = SynthSpec(n_instances=50, seed=8)
    first, _ = synth(spec)
    second, _ = synth(spec)
    assert [i.to_dict() for i in first] == [i.to_dict() for i in second]

def test_write_synth(tmp_path):
    instances, truth = synth(SynthSpec(n_instances=20, seed=9))
    path = write_synth(str(tmp_path / 'corpus'), instances, truth)
    assert [i.to_dict() for i in read_instances(path)] == [i.to_dict() for i in instances]
    loaded = GroundTruth.from_dict(artifacts.load_json(tmp_path / 'corpus' /
                                                       dataset.GROUND_TRUTH_FILE))
    assert np.array_equal(loaded.dictionary, truth.dictionary)
    assert loaded.class_scenarios == truth.class_scenarios
