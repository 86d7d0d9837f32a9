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

from contextlib import contextmanager
import logging
import os

from . import Error
from . import artifacts
from . import classifier
from . import config as config_m
from . import dataset
from . import evalkit
from . import head as head_m
from . import retrieval
from .matrix import pseudo_boolean_product
from .pbmf import factorize

logger = logging.getLogger(__name__)

MODEL_FILE = 'model.json'
HEAD_FILE = 'head.json'
CLASSIFIER_FILE = 'classifier.json'
ENCODINGS_FILE = 'train_encodings.csv'
HISTORIES_FILE = 'histories.json'
PREDICTIONS_FILE = 'predictions.jsonl'
INDEX_FILE = 'index.jsonl'
QUERIES_FILE = 'queries.jsonl'
REPORT_FILE = 'report.json'

@contextmanager
def phase(name):
    logger.info('Running phase %s', name)
    try:
        yield
    except Error as e:
        raise Error('Phase {} failed: {}'.format(name, e))

def _load_ground_truth(dataset_path):
    path = os.path.join(os.path.dirname(dataset_path), dataset.GROUND_TRUTH_FILE)
    if not os.path.exists(path):
        return None
    return dataset.GroundTruth.from_dict(artifacts.load_json(path))

def _planted_match(model, truth):
    rows = {name: i for i, name in enumerate(truth.object_names)}
    try:
        planted = truth.dictionary[[rows[name] for name in model.object_names]]
    except KeyError as e:
        raise Error('Object missing from the ground truth: ' + e.args[0])
    mean, pairs = evalkit.match_scenarios(model.dictionary, planted)
    return {'mean_jaccard': mean, 'pairs': [list(pair) for pair in pairs]}

def run_pipeline(config, out_dir):
    """Train all phases on the configured dataset and evaluate them.

    Every artifact lands in out_dir; the returned report is also saved
    there as REPORT_FILE.
    """
    dataset_path = config.path_value('dataset.path')
    if not dataset_path:
        raise Error('No dataset configured (dataset.path)')
    os.makedirs(out_dir, exist_ok=True)

    def out(name):
        return os.path.join(out_dir, name)

    seed = config.value('seed')
    sched = config_m.train_schedule(config)
    report = {}
    histories = {}

    with phase('dataset'):
        train, test = dataset.load_dataset(dataset_path, config_m.dataset_config(config),
                                           config.path_value('dataset.features'))
        x_train = train.feature_matrix()
        x_test = test.feature_matrix()
        truth = _load_ground_truth(dataset_path)

    with phase('factorization'):
        model, h, histories['factorization'] = factorize(train.objects,
                                                         config_m.pbmf_config(config))
        h.write_csv(out(ENCODINGS_FILE))
        report['factorization'] = {
            'k': model.k,
            'objects': len(model.object_names),
            'iterations': len(histories['factorization']),
            'final_loss': histories['factorization'][-1],
        }
        if truth is not None:
            report['factorization']['planted'] = _planted_match(model, truth)

    with phase('scenario_head'):
        x_annotated = x_train.select_instances(train.objects.instance_ids)
        head, model, histories['scenario_head'] = head_m.train_head(
            train.objects, x_annotated, model, sched)
        report['scenario_head'] = {
            'epochs': len(histories['scenario_head']) - 1,
            'final_loss': histories['scenario_head'][-1],
            'bimodality': head_m.encoding_bimodality(head_m.head_forward(head, x_annotated)),
        }

    with phase('classification'):
        h_train = head_m.head_forward(head, x_train)
        clf = classifier.fit(h_train, train.labels, **config_m.classifier_params(config))
        before, _ = classifier.predict_all(clf, head_m.head_forward(head, x_test).matrix)

        head, model, clf, histories['joint'] = head_m.joint_finetune(
            train.objects, x_train, train.labels, model, head, clf, sched)
        predictions, _ = classifier.predict_all(clf, head_m.head_forward(head, x_test).matrix)

        artifacts.write_jsonl(out(PREDICTIONS_FILE), (
            {'instance_id': i, 'predicted_class': p, 'scene_class': l}
            for i, p, l in zip(test.instance_ids, predictions, test.labels)))
        report['classification'] = {
            'accuracy_before_finetune': evalkit.accuracy(before, test.labels),
            'accuracy': evalkit.accuracy(predictions, test.labels),
            'joint_epochs': len(histories['joint']) - 1,
            'joint_final_loss': histories['joint'][-1],
        }

    with phase('objects'):
        x_test_annotated = x_test.select_instances(test.objects.instance_ids)
        encodings = head_m.head_forward(head, x_test_annotated).matrix
        scores = pseudo_boolean_product(model.dictionary, encodings)
        labels = test.objects.matrix
        report['objects'] = {
            'macro_auprc': evalkit.macro_auprc(scores, labels),
            'random_macro_auprc': evalkit.macro_auprc(evalkit.random_scores(labels.shape, seed),
                                                      labels),
            'prevalence': float(labels.mean()) if labels.size else 0.0,
        }

    with phase('retrieval'):
        index = retrieval.build_index(model, head, clf, x_test, test.objects.instance_ids,
                                      **config_m.retrieval_thresholds(config))
        annotated_labels = test.annotated_labels()
        queries = retrieval.generate_queries(test.objects, annotated_labels,
                                             config.value('retrieval.n_queries'), seed)
        depth = config.value('retrieval.ndcg_depth')
        artifacts.write_jsonl(out(INDEX_FILE), index.records())
        artifacts.write_jsonl(out(QUERIES_FILE), (q.to_dict() for q in queries))
        report['retrieval'] = {
            'queries': len(queries),
            'ndcg': retrieval.evaluate_ndcg(index, queries, test.objects, annotated_labels,
                                            depth),
            'random_ndcg': retrieval.evaluate_ndcg(index, queries, test.objects,
                                                   annotated_labels, depth,
                                                   rank=retrieval.random_ranking(seed)),
            'depth': depth,
        }

    artifacts.save_object(out(MODEL_FILE), model)
    artifacts.save_object(out(HEAD_FILE), head)
    artifacts.save_object(out(CLASSIFIER_FILE), clf)
    artifacts.save_json(out(HISTORIES_FILE), histories)

    persisted = [out(name) for name in (MODEL_FILE, HEAD_FILE, CLASSIFIER_FILE, ENCODINGS_FILE,
                                        HISTORIES_FILE, PREDICTIONS_FILE, INDEX_FILE,
                                        QUERIES_FILE)]
    report['artifacts'] = artifacts.digests(persisted, out_dir)
    artifacts.save_json(out(REPORT_FILE), report)
    logger.info('Pipeline finished, accuracy %.3f, NDCG@%d %.3f',
                report['classification']['accuracy'], depth, report['retrieval']['ndcg'])
    return report
