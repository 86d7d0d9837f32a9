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
import os

from . import Error
from .dataset import DatasetConfig, SynthSpec
from .head import TrainSchedule
from .pbmf import PbmfConfig

logger = logging.getLogger(__name__)

def _parse_bool(text):
    lowered = text.lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(text)

def _parse_period(text):
    if text.lower() in ('inf', 'never'):
        return math.inf
    return int(text)

PARSERS = {
    'int': int,
    'float': float,
    'bool': _parse_bool,
    'string': str,
    'period': _parse_period,
}

class Option:
    def __init__(self, name, type, default, help):
        assert type in PARSERS
        self.name = name
        self.type = type
        self.default = default
        self.help = help

    def parse(self, text):
        if text == '':
            return self.default
        try:
            return PARSERS[self.type](text)
        except ValueError:
            raise Error('Invalid value for {}: {}'.format(self.name, text))

CONFIG_OPTIONS = [
    Option('seed', 'int', 0, 'Seed shared by factorization, head and classifier training'),

    Option('pbmf.k', 'int', 25, 'Number of scenarios'),
    Option('pbmf.alpha1', 'float', 0.1, 'Weight of the orthogonality penalty'),
    Option('pbmf.alpha2', 'float', 0.01, 'Weight of the dictionary sparsity penalty'),
    Option('pbmf.alpha3', 'float', 0.01, 'Weight of the encoding sparsity penalty'),
    Option('pbmf.use_weights', 'bool', True, 'Weight rare present objects in the residual'),
    Option('pbmf.literal_weights', 'bool', False, 'Use the constant 1 + ln(N/n) object weight'),
    Option('pbmf.max_outer_iters', 'int', 300, 'Maximum alternating iterations'),
    Option('pbmf.inner_steps', 'int', 10, 'Projected gradient steps per factor and iteration'),
    Option('pbmf.step_size', 'float', 1e-2, 'Initial projected gradient step'),
    Option('pbmf.backtrack_factor', 'float', 0.5, 'Step shrink factor on loss increase'),
    Option('pbmf.tol', 'float', 1e-5, 'Relative loss change to stop at'),
    Option('pbmf.restarts', 'int', 1, 'Factorization runs, the best one is kept'),

    Option('head.lr', 'float', 0.5, 'Head learning rate'),
    Option('head.dict_update_period', 'period', 4, 'Iterations between dictionary updates, '
           'or "inf"'),
    Option('head.dict_lr', 'float', 1e-2, 'Initial dictionary step'),
    Option('head.epochs', 'int', 30, 'Training epochs per phase'),
    Option('head.batch_size', 'int', 64, 'Mini-batch size'),
    Option('head.lambda_ce', 'float', 1.0, 'Weight of the classification loss when finetuning'),
    Option('head.mode', 'string', 'pbmf', 'Head supervision, "pbmf" or "regress"'),

    Option('classifier.l2', 'float', 1e-4, 'L2 penalty of the classifier weights'),
    Option('classifier.iters', 'int', 500, 'Classifier gradient steps'),
    Option('classifier.lr', 'float', 1.0, 'Initial classifier step'),

    Option('retrieval.scenario_theta', 'float', 0.5, 'Encoding threshold of scenario terms'),
    Option('retrieval.object_theta', 'float', 0.5, 'Score threshold of object terms'),
    Option('retrieval.n_queries', 'int', 500, 'Generated queries for evaluation'),
    Option('retrieval.ndcg_depth', 'int', 5, 'Ranking depth of NDCG'),

    Option('dataset.path', 'string', '', 'JSON-lines dataset, relative to the configuration '
           'file'),
    Option('dataset.features', 'string', '', 'Optional feature CSV keyed by instance id'),
    Option('dataset.min_object_frequency', 'float', 0.01, 'Drop rarer training objects'),
    Option('dataset.split_seed', 'int', 0, 'Seed of the stratified split'),
    Option('dataset.train_per_class', 'int', None, 'Training instances per class'),
    Option('dataset.test_per_class', 'int', None, 'Test instances per class'),
    Option('dataset.test_fraction', 'float', 0.2, 'Test share per class without counts'),

    Option('synth.n_objects', 'int', 60, 'Objects of a synthetic corpus'),
    Option('synth.n_scenarios', 'int', 10, 'Planted scenarios'),
    Option('synth.objects_per_scenario', 'int', 6, 'Objects per planted scenario'),
    Option('synth.scenarios_per_instance', 'int', 2, 'Active scenarios per instance'),
    Option('synth.n_instances', 'int', 2000, 'Generated instances'),
    Option('synth.flip_noise', 'float', 0.01, 'Probability of a spurious object'),
    Option('synth.missing_object_rate', 'float', 0.1, 'Probability of a dropped object'),
    Option('synth.n_classes', 'int', 2, 'Scene classes'),
    Option('synth.annotated_fraction', 'float', 1.0, 'Share of instances with objects'),
]

OPTIONS_BY_NAME = {option.name: option for option in CONFIG_OPTIONS}

def _option(name):
    try:
        return OPTIONS_BY_NAME[name]
    except KeyError:
        raise Error('No such configuration option: ' + str(name))

class Config:
    """Flat NAME=VALUE settings backed by an optional file."""

    def __init__(self, path=None):
        self.path = path
        self._values = {}
        if path and os.path.exists(path):
            self._load(path)

    @property
    def base_dir(self):
        return os.path.dirname(os.path.abspath(self.path)) if self.path else os.getcwd()

    def _load(self, path):
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line or line.startswith('#'):
                    continue
                name, op, value = line.partition('=')
                if not op:
                    raise Error('{}:{}: expected NAME=VALUE'.format(path, lineno))
                name = name.strip()
                if name not in OPTIONS_BY_NAME:
                    raise Error('{}:{}: no such configuration option: {}'.format(
                        path, lineno, name))
                value = value.strip()
                OPTIONS_BY_NAME[name].parse(value)
                self._values[name] = value

    def save(self):
        assert self.path
        with open(self.path, 'w') as f:
            for option in CONFIG_OPTIONS:
                if option.name in self._values:
                    f.write('{}={}\n'.format(option.name, self._values[option.name]))

    def get_config(self, name=None):
        names = [_option(name).name] if name else [option.name for option in CONFIG_OPTIONS]
        for name in names:
            yield (name, self._values.get(name, str()))

    def get_config_value(self, name):
        return next(self.get_config(name))[1]

    def set_config(self, name, value):
        value = str(value)
        _option(name).parse(value)
        self._values[name] = value

    def clear_config(self, name):
        _option(name)
        self._values.pop(name, None)

    def override(self, overrides):
        """Apply values given on the command line, skipping unset ones."""
        for name, value in overrides.items():
            if value is not None:
                if isinstance(value, bool):
                    value = 'true' if value else 'false'
                self.set_config(name, value)
        return self

    def value(self, name):
        return _option(name).parse(self.get_config_value(name))

    def path_value(self, name):
        path = self.value(name)
        if not path:
            return None
        return os.path.join(self.base_dir, path)

def pbmf_config(config, k=None):
    return PbmfConfig(
        k=config.value('pbmf.k') if k is None else k,
        alpha1=config.value('pbmf.alpha1'),
        alpha2=config.value('pbmf.alpha2'),
        alpha3=config.value('pbmf.alpha3'),
        use_weights=config.value('pbmf.use_weights'),
        literal_weights=config.value('pbmf.literal_weights'),
        max_outer_iters=config.value('pbmf.max_outer_iters'),
        inner_steps=config.value('pbmf.inner_steps'),
        step_size=config.value('pbmf.step_size'),
        backtrack_factor=config.value('pbmf.backtrack_factor'),
        tol=config.value('pbmf.tol'),
        seed=config.value('seed'),
        restarts=config.value('pbmf.restarts'))

def train_schedule(config):
    return TrainSchedule(
        head_lr=config.value('head.lr'),
        dict_update_period=config.value('head.dict_update_period'),
        dict_lr=config.value('head.dict_lr'),
        epochs=config.value('head.epochs'),
        batch_size=config.value('head.batch_size'),
        lambda_ce=config.value('head.lambda_ce'),
        seed=config.value('seed'),
        head_mode=config.value('head.mode'))

def classifier_params(config):
    return {
        'l2': config.value('classifier.l2'),
        'iters': config.value('classifier.iters'),
        'lr': config.value('classifier.lr'),
        'seed': config.value('seed'),
    }

def retrieval_thresholds(config):
    return {
        'scenario_theta': config.value('retrieval.scenario_theta'),
        'object_theta': config.value('retrieval.object_theta'),
    }

def dataset_config(config):
    return DatasetConfig(
        min_object_frequency=config.value('dataset.min_object_frequency'),
        split_seed=config.value('dataset.split_seed'),
        train_per_class=config.value('dataset.train_per_class'),
        test_per_class=config.value('dataset.test_per_class'),
        test_fraction=config.value('dataset.test_fraction'))

def synth_spec(config):
    return SynthSpec(
        n_objects=config.value('synth.n_objects'),
        n_scenarios=config.value('synth.n_scenarios'),
        objects_per_scenario=config.value('synth.objects_per_scenario'),
        scenarios_per_instance=config.value('synth.scenarios_per_instance'),
        n_instances=config.value('synth.n_instances'),
        flip_noise=config.value('synth.flip_noise'),
        missing_object_rate=config.value('synth.missing_object_rate'),
        n_classes=config.value('synth.n_classes'),
        seed=config.value('seed'),
        annotated_fraction=config.value('synth.annotated_fraction'))
