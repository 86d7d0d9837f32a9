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

import os
import numpy as np
import pytest

import scenarios.scenarios
from scenarios import dataset
from scenarios.matrix import ObjectSceneMatrix
from scenarios.pbmf import PbmfConfig, factorize
from . import utils

@pytest.fixture(scope='session', autouse=True)
def cli_logging():
    """Leave log records to pytest, CliRunner streams are closed after each run."""
    scenarios.scenarios.cli.initialized = True

TOY = [[1, 1, 0],
       [1, 1, 1],
       [0, 1, 1]]

@pytest.fixture
def toy_matrix():
    return ObjectSceneMatrix(np.array(TOY, dtype=float), ['a', 'b', 'c'], ['s0', 's1', 's2'])

@pytest.fixture
def gradient_fixture():
    """Factors keeping every entry of WH at least 0.05 away from the kink."""
    rng = np.random.default_rng(7)
    a = (rng.random((6, 10)) < 0.4).astype(float)
    a[:, 0] = 1.0
    w = rng.uniform(0.05, 0.3, (6, 3))
    h = rng.uniform(0.05, 0.5, (3, 10))
    return ObjectSceneMatrix(a, ['o{}'.format(i) for i in range(6)],
                             ['s{}'.format(j) for j in range(10)]), w, h

@pytest.fixture(scope='session')
def planted():
    # Two classes of five scenarios, so every pair of scenarios can be told apart
    spec = dataset.SynthSpec(n_objects=60, n_scenarios=10, objects_per_scenario=6,
                             scenarios_per_instance=2, n_instances=2000, flip_noise=0.01,
                             missing_object_rate=0.1, n_classes=2, seed=0)
    instances, truth = dataset.synth(spec)
    return instances, truth, utils.object_matrix(instances, truth.object_names)

@pytest.fixture(scope='session')
def planted_factorization(planted):
    _, _, a = planted
    return factorize(a, PbmfConfig(k=10, restarts=3, seed=0))

def synth_corpus(tmp_path_factory, name, **spec):
    out_dir = tmp_path_factory.mktemp(name)
    instances, truth = dataset.synth(dataset.SynthSpec(**spec))
    dataset.write_synth(str(out_dir), instances, truth)
    return out_dir

@pytest.fixture(scope='session')
def classification_corpus(tmp_path_factory):
    return synth_corpus(tmp_path_factory, 'classification', n_objects=40, n_scenarios=10,
                        objects_per_scenario=4, scenarios_per_instance=1, n_instances=600,
                        flip_noise=0.01, missing_object_rate=0.1, n_classes=5, seed=3)

@pytest.fixture(scope='session')
def retrieval_corpus(tmp_path_factory):
    return synth_corpus(tmp_path_factory, 'retrieval', n_objects=45, n_scenarios=9,
                        objects_per_scenario=5, scenarios_per_instance=2, n_instances=600,
                        flip_noise=0.002, missing_object_rate=0.0, n_classes=3, seed=5)

@pytest.fixture(scope='session')
def sparse_corpus(tmp_path_factory):
    return synth_corpus(tmp_path_factory, 'sparse', n_objects=60, n_scenarios=20,
                        objects_per_scenario=3, scenarios_per_instance=1, n_instances=1500,
                        flip_noise=0.002, missing_object_rate=0.05, n_classes=5, seed=11)

def pipeline_config(corpus, k, **options):
    return utils.write_config(os.path.join(corpus, 'scenarios.conf'),
                              dataset__path=dataset.DATASET_FILE, pbmf__k=k,
                              head__epochs=60, **options)

@pytest.fixture(scope='session')
def classification_run(classification_corpus, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp('classification-run')
    config = pipeline_config(classification_corpus, 10, retrieval__n_queries=100)
    utils.run(['--config', config, 'pipeline', str(out_dir)])
    return out_dir

@pytest.fixture(scope='session')
def retrieval_run(retrieval_corpus, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp('retrieval-run')
    config = pipeline_config(retrieval_corpus, 9)
    utils.run(['--config', config, 'pipeline', str(out_dir)])
    return retrieval_corpus, out_dir

@pytest.fixture(scope='session')
def sparse_run(sparse_corpus, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp('sparse-run')
    config = pipeline_config(sparse_corpus, 20, retrieval__n_queries=50)
    utils.run(['--config', config, 'pipeline', str(out_dir)])
    return out_dir
