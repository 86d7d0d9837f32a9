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

from click.testing import CliRunner
import contextlib
import json
import os
import numpy as np

import scenarios.scenarios
from scenarios.matrix import ObjectSceneMatrix

runner = CliRunner()

def run(args, *, expected_exit_code=0):
    result = runner.invoke(scenarios.scenarios.cli, args, catch_exceptions=False)

    if expected_exit_code == 0:
        assert result.exit_code == 0, "Command exited with non-zero exit code " \
            + f"{result.exit_code}. output: '''{result.output}'''"
    else:
        assert result.exit_code == expected_exit_code

    return result

def read(path):
    with open(path, 'r') as f:
        return f.read()

def read_json(path):
    with open(path, 'r') as f:
        return json.load(f)

def write(path, content):
    with open(path, 'w') as f:
        f.write(content)

def write_config(path, **options):
    write(path, ''.join('{}={}\n'.format(name.replace('__', '.'), value)
                        for name, value in options.items()))
    return str(path)

@contextlib.contextmanager
def temporary_chdir(path):
    old_cwd = os.getcwd()
    os.chdir(path)
    try:
        yield path
    finally:
        os.chdir(old_cwd)

def central_differences(f, x, step=1e-6):
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        plus = x.copy()
        minus = x.copy()
        plus[index] += step
        minus[index] -= step
        grad[index] = (f(plus) - f(minus)) / (2 * step)
    return grad

def relative_error(actual, expected):
    return np.linalg.norm(actual - expected) / max(np.linalg.norm(expected), 1e-300)

def object_matrix(instances, object_names):
    """Object-scene matrix over all annotated instances."""
    rows = {name: i for i, name in enumerate(object_names)}
    annotated = [instance for instance in instances if instance.annotated]
    m = np.zeros((len(object_names), len(annotated)))
    for j, instance in enumerate(annotated):
        for name in instance.objects:
            m[rows[name], j] = 1.0
    return ObjectSceneMatrix(m, object_names, [instance.id for instance in annotated])

def is_non_increasing(history):
    return all(b <= a for a, b in zip(history, history[1:]))
