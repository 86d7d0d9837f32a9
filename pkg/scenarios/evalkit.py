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
from scipy.optimize import linear_sum_assignment

from . import Error
from .matrix import as_dense, boolean_product, matmul, pseudo_boolean_product

logger = logging.getLogger(__name__)

PRODUCT_KINDS = {
    'real': matmul,
    'pseudo_boolean': pseudo_boolean_product,
    'boolean': boolean_product,
}

def reconstruction_error(a, w, h, omega=None, product_kind='real'):
    try:
        product = PRODUCT_KINDS[product_kind]
    except KeyError:
        raise Error('Unknown product kind: ' + str(product_kind))

    a = as_dense(a)
    residual = a - product(w, h)
    if residual.shape != a.shape:
        raise Error('Dimension mismatch: {}x{} reconstructed as {}x{}'.format(
            *a.shape, *residual.shape))
    if omega is not None:
        omega = as_dense(omega)
        if omega.shape != a.shape:
            raise Error('Weight matrix does not match the data')
        residual = omega * residual
    return float(np.sum(residual ** 2))

def _ranking(scores):
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind='stable')

def average_precision(scores, labels):
    labels = np.asarray(labels, dtype=bool)
    n_positive = labels.sum()
    if n_positive == 0:
        raise Error('Average precision needs at least one positive label')
    if len(labels) != len(scores):
        raise Error('Scores and labels differ in length')

    hits = labels[_ranking(scores)]
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(np.sum(precision[hits]) / n_positive)

def precision_recall_curve(scores, labels):
    labels = np.asarray(labels, dtype=bool)
    n_positive = labels.sum()
    if n_positive == 0:
        raise Error('Precision-recall curve needs at least one positive label')

    hits = labels[_ranking(scores)]
    true_positives = np.cumsum(hits)
    recall = true_positives / n_positive
    precision = true_positives / np.arange(1, len(hits) + 1)
    return recall, precision

def per_object_average_precision(score_matrix, label_matrix):
    """Return ({row: AP}, [rows without positives])."""
    scores = as_dense(score_matrix)
    labels = as_dense(label_matrix)
    if scores.shape != labels.shape:
        raise Error('Score and label matrices are not aligned')

    precisions = {}
    skipped = []
    for i in range(labels.shape[0]):
        if not labels[i].any():
            skipped.append(i)
            continue
        precisions[i] = average_precision(scores[i], labels[i])
    return precisions, skipped

def macro_auprc(score_matrix, label_matrix):
    precisions, skipped = per_object_average_precision(score_matrix, label_matrix)
    if not precisions:
        raise Error('No object has a positive label')
    if skipped:
        logger.debug('Macro-AUPRC skips %d objects without positives', len(skipped))
    return float(np.mean(list(precisions.values())))

def random_scores(shape, seed):
    return np.random.default_rng(seed).random(shape)

def accuracy(predictions, labels):
    predictions = list(predictions)
    labels = list(labels)
    if not labels:
        raise Error('Accuracy of an empty prediction set')
    if len(predictions) != len(labels):
        raise Error('Predictions and labels differ in length')
    return sum(p == l for p, l in zip(predictions, labels)) / len(labels)

def jaccard(x, y):
    x = np.asarray(x, dtype=bool)
    y = np.asarray(y, dtype=bool)
    union = np.sum(x | y)
    if union == 0:
        return 1.0
    return float(np.sum(x & y) / union)

def match_scenarios(w, w_true, threshold=0.5):
    """Match thresholded columns of w to planted columns by Jaccard.

    Returns (mean Jaccard, [(planted column, learned column, Jaccard)]).
    """
    learned = as_dense(w) >= threshold
    planted = as_dense(w_true) >= 0.5
    similarity = np.array([[jaccard(planted[:, i], learned[:, j])
                            for j in range(learned.shape[1])]
                           for i in range(planted.shape[1])])
    rows, cols = linear_sum_assignment(-similarity)
    pairs = [(int(i), int(j), float(similarity[i, j])) for i, j in zip(rows, cols)]
    # Unmatched planted columns count as zero
    mean = sum(s for _, _, s in pairs) / planted.shape[1] if planted.shape[1] else 1.0
    return mean, pairs
