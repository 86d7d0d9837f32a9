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

import csv
import logging
import numpy as np

from . import Error

logger = logging.getLogger(__name__)

PB_SLOPE = 0.01
# Above this point min(x, 1 + PB_SLOPE * x) switches to the shallow branch
PB_KINK = 1.0 / (1.0 - PB_SLOPE)

def _values(m):
    if isinstance(m, (ObjectSceneMatrix, EncodingMatrix, FeatureMatrix)):
        m = m.matrix
    return np.asarray(m, dtype=np.float64)

def as_dense(m):
    m = _values(m)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise Error('Not a matrix: {} dimensions'.format(m.ndim))
    return m

def check_finite(m, what='matrix'):
    if not np.all(np.isfinite(m)):
        raise Error('Non-finite entries in ' + what)

def matmul(a, b):
    a = as_dense(a)
    b = as_dense(b)
    if a.shape[1] != b.shape[0]:
        raise Error('Dimension mismatch: {}x{} times {}x{}'.format(*a.shape, *b.shape))
    return a @ b

def pseudo_boolean(x):
    return np.minimum(x, 1.0 + PB_SLOPE * x)

def pseudo_boolean_derivative(x):
    # Slope 1 up to and including the kink
    return np.where(x <= PB_KINK, 1.0, PB_SLOPE)

def pseudo_boolean_product(w, h):
    """Smooth surrogate of the Boolean product, min(WH, 1 + 0.01 WH)."""
    return pseudo_boolean(matmul(w, h))

def boolean_product(w, h):
    return np.minimum(matmul(w, h), 1.0)

def clip_unit(m):
    # Keeps the shape of vectors
    return np.clip(_values(m), 0.0, 1.0)

def in_unit_box(m):
    return bool(np.all((m >= 0.0) & (m <= 1.0)))

def _format_value(value):
    return repr(float(value))

def _read_labelled_csv(path):
    try:
        with open(path, newline='') as f:
            reader = csv.reader(f)
            try:
                header = next(reader)
            except StopIteration:
                raise Error('Empty file: ' + str(path))
            labels = []
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                labels.append(row[0])
                try:
                    rows.append([float(value) for value in row[1:]])
                except ValueError as e:
                    raise Error('{}:{}: {}'.format(path, lineno, e))
    except OSError as e:
        raise Error('Failed to read matrix: ' + str(e))

    if any(len(row) != len(header) - 1 for row in rows):
        raise Error('Row length does not match header in ' + str(path))

    m = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    check_finite(m, str(path))
    return header[1:], labels, m

def _write_labelled_csv(path, corner, column_labels, row_labels, m):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow([corner] + list(column_labels))
        for label, row in zip(row_labels, m):
            writer.writerow([label] + [_format_value(value) for value in row])

class ObjectSceneMatrix:
    """Binary objects x instances matrix with its name registries."""

    def __init__(self, matrix, object_names, instance_ids):
        matrix = as_dense(matrix)
        object_names = list(object_names)
        instance_ids = list(instance_ids)

        if matrix.size == 0:
            matrix = matrix.reshape(len(object_names), len(instance_ids))
        if matrix.shape != (len(object_names), len(instance_ids)):
            raise Error('Name lists ({} objects, {} instances) do not match a {}x{} matrix'.format(
                len(object_names), len(instance_ids), *matrix.shape))
        if not np.all((matrix == 0.0) | (matrix == 1.0)):
            raise Error('Object-scene matrix must be binary')
        if len(set(object_names)) != len(object_names):
            raise Error('Object names must be unique')

        self.matrix = matrix
        self.object_names = object_names
        self.instance_ids = instance_ids

    @property
    def n_objects(self):
        return self.matrix.shape[0]

    @property
    def n_instances(self):
        return self.matrix.shape[1]

    def object_index(self, name):
        try:
            return self.object_names.index(name)
        except ValueError:
            raise Error('Unknown object: ' + name)

    def object_counts(self):
        return self.matrix.sum(axis=1)

    def object_frequencies(self):
        if self.n_instances == 0:
            return np.zeros(self.n_objects)
        return self.object_counts() / self.n_instances

    def select_instances(self, columns):
        columns = np.asarray(columns, dtype=int)
        return ObjectSceneMatrix(self.matrix[:, columns], self.object_names,
                [self.instance_ids[c] for c in columns])

    def reorder_objects(self, names):
        names = list(names)
        missing = set(names).symmetric_difference(self.object_names)
        if missing:
            raise Error('Object mismatch: ' + sorted(missing)[0])
        rows = [self.object_names.index(name) for name in names]
        return ObjectSceneMatrix(self.matrix[rows, :], names, self.instance_ids)

    def instance_objects(self, column):
        return {self.object_names[i] for i in np.flatnonzero(self.matrix[:, column])}

    @staticmethod
    def read_csv(path):
        instance_ids, object_names, m = _read_labelled_csv(path)
        return ObjectSceneMatrix(m, object_names, instance_ids)

    def write_csv(self, path):
        _write_labelled_csv(path, 'object', self.instance_ids, self.object_names, self.matrix)

class EncodingMatrix:
    """Scenario encodings, k x instances, entries in [0,1]."""

    def __init__(self, matrix, instance_ids):
        matrix = as_dense(matrix)
        instance_ids = list(instance_ids)
        if matrix.size == 0 and not instance_ids:
            matrix = matrix.reshape(matrix.shape[0], 0)
        if matrix.shape[1] != len(instance_ids):
            raise Error('Encoding has {} columns but {} instance ids'.format(
                matrix.shape[1], len(instance_ids)))
        if not in_unit_box(matrix):
            raise Error('Encoding entries must lie in [0,1]')
        self.matrix = matrix
        self.instance_ids = instance_ids

    @property
    def k(self):
        return self.matrix.shape[0]

    def column(self, instance_id):
        try:
            return self.matrix[:, self.instance_ids.index(instance_id)]
        except ValueError:
            raise Error('Unknown instance: ' + instance_id)

    @staticmethod
    def read_csv(path):
        instance_ids, _, m = _read_labelled_csv(path)
        return EncodingMatrix(m, instance_ids)

    def write_csv(self, path):
        _write_labelled_csv(path, 'scenario', self.instance_ids, range(self.k), self.matrix)

class FeatureMatrix:
    """Per-instance feature vectors, feature_dim x instances."""

    def __init__(self, matrix, instance_ids):
        matrix = as_dense(matrix)
        instance_ids = list(instance_ids)
        if matrix.size == 0 and not instance_ids:
            matrix = matrix.reshape(matrix.shape[0], 0)
        if matrix.shape[1] != len(instance_ids):
            raise Error('Features have {} columns but {} instance ids'.format(
                matrix.shape[1], len(instance_ids)))
        check_finite(matrix, 'features')
        self.matrix = matrix
        self.instance_ids = instance_ids

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def n_instances(self):
        return self.matrix.shape[1]

    def select_instances(self, ids):
        positions = {instance_id: j for j, instance_id in enumerate(self.instance_ids)}
        try:
            columns = [positions[instance_id] for instance_id in ids]
        except KeyError as e:
            raise Error('No features for instance: ' + e.args[0])
        return FeatureMatrix(self.matrix[:, columns], list(ids))

    @staticmethod
    def read_csv(path):
        _, instance_ids, m = _read_labelled_csv(path)
        return FeatureMatrix(m.T, instance_ids)

    def write_csv(self, path):
        _write_labelled_csv(path, 'instance', range(self.dim), self.instance_ids, self.matrix.T)
