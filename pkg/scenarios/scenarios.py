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

import click
import json
import logging
import os
import sys

from . import Error
from . import artifacts
from . import classifier
from . import config as config_m
from . import dataset
from . import evalkit
from . import head as head_m
from . import pipeline
from . import retrieval
from .config import Config, OPTIONS_BY_NAME
from .matrix import pseudo_boolean_product
from .pbmf import ScenarioModel, encode, factorize, scenario_members
from .study import ReconMethod, run_recon_study

logger = logging.getLogger(__name__)

def init_logging(debug=False):
    class BriefFormatter(logging.Formatter):
        def __init__(self, fmt):
            super().__init__(fmt)

        def format(self, record):
            if record.levelno == logging.INFO:
                return record.getMessage()
            return super().format(record)

    for name, level in logging.getLevelNamesMapping().items():
        logging.addLevelName(level, name.capitalize())

    if debug:
        level = logging.DEBUG
        formatter = logging.Formatter('%(asctime)s.%(msecs)03d %(levelname)7s [%(name)s] '
                                      '%(message)s',
                                      datefmt='%H:%M:%S')
    else:
        level = logging.INFO
        formatter = BriefFormatter('%(levelname)s: %(message)s')

    handler = logging.StreamHandler()
    handler.setLevel(level)
    handler.setFormatter(formatter)

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    root_logger.addHandler(handler)

class ErrorHandlingGroup(click.Group):
    def __call__(self, *args, **kwargs):
        try:
            super().__call__(*args, **kwargs)
        except Error as e:
            click.ClickException(e).show()
            sys.exit(1)

pass_config = click.make_pass_decorator(Config)

CLICK_TYPES = {
    'int': int,
    'float': float,
    'bool': bool,
    'string': str,
    'period': str,
}

PATH_OPTIONS = ('dataset.path', 'dataset.features')

def config_option(name, flag=None):
    """A command line flag overriding the configuration option `name`."""
    option = OPTIONS_BY_NAME[name]
    flag = flag or '--' + name.rsplit('.', 1)[-1].replace('_', '-')
    if option.type == 'bool':
        flag = '{}/--no-{}'.format(flag, flag[2:])

    def store(ctx, param, value):
        if value is None:
            return
        if name in PATH_OPTIONS:
            value = os.path.abspath(value)
        ctx.find_object(Config).override({name: value})

    return click.option(flag, default=None, expose_value=False, callback=store,
                        type=CLICK_TYPES[option.type], help=option.help)

def config_options(*specs):
    def decorator(f):
        for spec in reversed(specs):
            name, flag = spec if isinstance(spec, tuple) else (spec, None)
            f = config_option(name, flag)(f)
        return f
    return decorator

PBMF_OPTIONS = ('pbmf.k', 'pbmf.alpha1', 'pbmf.alpha2', 'pbmf.alpha3', 'pbmf.use_weights',
                'pbmf.literal_weights', 'pbmf.max_outer_iters', 'pbmf.inner_steps',
                'pbmf.step_size', 'pbmf.tol', 'pbmf.restarts')
HEAD_OPTIONS = (('head.lr', '--head-lr'), 'head.dict_update_period', 'head.dict_lr',
                'head.epochs', 'head.batch_size', 'head.lambda_ce', ('head.mode', '--head-mode'))
CLASSIFIER_OPTIONS = ('classifier.l2', ('classifier.iters', '--classifier-iters'),
                      ('classifier.lr', '--classifier-lr'))
DATASET_OPTIONS = (('dataset.path', '--dataset'), ('dataset.features', '--features'),
                   'dataset.min_object_frequency', 'dataset.split_seed',
                   'dataset.train_per_class', 'dataset.test_per_class', 'dataset.test_fraction')
RETRIEVAL_OPTIONS = ('retrieval.scenario_theta', 'retrieval.object_theta')
SYNTH_OPTIONS = ('synth.n_objects', 'synth.n_scenarios', 'synth.objects_per_scenario',
                 'synth.scenarios_per_instance', 'synth.n_instances', 'synth.flip_noise',
                 'synth.missing_object_rate', 'synth.n_classes', 'synth.annotated_fraction')

SPLIT_CHOICE = click.Choice(['train', 'test'])

def load_splits(config):
    path = config.path_value('dataset.path')
    if not path:
        raise click.UsageError('No dataset given, use --dataset or set dataset.path')
    return dataset.load_dataset(path, config_m.dataset_config(config),
                                config.path_value('dataset.features'))

def load_split(config, split):
    train, test = load_splits(config)
    return train if split == 'train' else test

def split_list(value, convert=str):
    if not value:
        return []
    try:
        return [convert(item.strip()) for item in value.split(',') if item.strip()]
    except ValueError:
        raise click.BadParameter('Not a comma separated list: ' + value)

def echo_json(data, out=None):
    if out:
        artifacts.save_json(out, data)
    else:
        click.echo(json.dumps(data, indent=2, sort_keys=True))

@click.group(cls=ErrorHandlingGroup)
@click.option('--debug', is_flag=True, help='Enable debugging output')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False),
              help='Read configuration options from this file')
@click.pass_context
def cli(ctx, debug, config_path):
    """scenarios - learn and use scenario dictionaries

    A scene is described by the set of objects present in it. Objects that
    frequently occur together form scenarios, e.g. a sink, a mirror and a
    towel. This tool learns a dictionary of such scenarios from object
    annotations by pseudo-Boolean matrix factorization and expresses every
    scene as a nearly binary combination of them (its encoding).


    TRAINING

    Training follows four phases, all run by the 'scenarios pipeline'
    command, or one at a time by the dedicated commands.  First the scenario
    dictionary is factorized out of the training annotations ('scenarios
    factorize').  Then a scenario head, an affine map followed by a sigmoid,
    learns to predict encodings from per-instance features while the
    dictionary is refined periodically ('scenarios train-head').  A scene
    classifier is fitted on the predicted encodings ('scenarios
    train-classifier') and finally head, classifier and dictionary are
    finetuned together ('scenarios joint-finetune').


    USING SCENARIOS

    A trained model explains its class predictions in terms of scenarios
    ('scenarios explain') and supports content retrieval: an index of
    predicted classes, encodings and object scores ('scenarios index') can be
    searched with queries combining classes, scenarios, required and excluded
    objects ('scenarios query') and two scenes can be compared by their
    scenarios ('scenarios compare').


    DATA

    Datasets are JSON-lines files, one scene per line, with the fields 'id',
    'scene_class', 'objects' (omitted for scenes lacking object annotations)
    and optionally 'features'.  Features can also be read from a CSV file
    keyed by instance id.  Use 'scenarios synth' to generate a synthetic
    corpus with planted scenarios.


    CONFIGURATION

    Options can be read from a file given with '--config'.  Command line
    flags override the file.  See 'scenarios config --help' for the list of
    options.
    """

    if not cli.initialized:
        init_logging(debug=debug)
        cli.initialized = True

    if config_path and not os.path.exists(config_path) and ctx.invoked_subcommand != 'config':
        raise Error('No such configuration file: ' + config_path)
    ctx.obj = Config(config_path)

# Logging is set up once per process
cli.initialized = False

@cli.command()
@click.argument('out_dir', type=click.Path(file_okay=False))
@config_options('seed', *SYNTH_OPTIONS)
@pass_config
def synth(config, out_dir):
    """Generate a synthetic corpus with planted scenarios.

    Writes 'dataset.jsonl' and 'ground_truth.json' under OUT_DIR. Class c
    owns the planted scenarios s with s mod n_classes = c.
    """
    instances, truth = dataset.synth(config_m.synth_spec(config))
    click.echo(dataset.write_synth(out_dir, instances, truth))

@cli.command('factorize')
@click.argument('out_dir', type=click.Path(file_okay=False))
@config_options('seed', *PBMF_OPTIONS, *DATASET_OPTIONS)
@pass_config
def factorize_(config, out_dir):
    """Learn a scenario dictionary from the training split.

    Writes the model, the training encodings and the loss history under
    OUT_DIR.
    """
    train, _ = load_splits(config)
    model, h, history = factorize(train.objects, config_m.pbmf_config(config))

    os.makedirs(out_dir, exist_ok=True)
    artifacts.save_object(os.path.join(out_dir, pipeline.MODEL_FILE), model)
    h.write_csv(os.path.join(out_dir, pipeline.ENCODINGS_FILE))
    artifacts.save_json(os.path.join(out_dir, pipeline.HISTORIES_FILE),
                        {'factorization': history})

    for j, members in enumerate(scenario_members(model)):
        click.echo('{}\t{}'.format(j, ' '.join(name for name, _ in members)))

@cli.command('recon-study')
@click.option('--ks', default='5,10,15,20,25', show_default=True,
              help='Comma separated scenario counts')
@click.option('--methods', default=','.join(ReconMethod.registered_type_names()),
              show_default=True, help='Comma separated reconstruction methods')
@click.option('--out', type=click.Path(dir_okay=False), help='Write rows as JSON here')
@config_options('seed', *PBMF_OPTIONS, *DATASET_OPTIONS)
@pass_config
def recon_study(config, ks, methods, out):
    """Compare reconstruction errors of factorization methods.

    Prints one row per method and scenario count with the plain and the
    rare-object weighted squared error.
    """
    train, _ = load_splits(config)
    rows = list(run_recon_study(train.objects, split_list(ks, int), split_list(methods),
                                config_m.pbmf_config(config)))
    if out:
        artifacts.save_json(out, [list(row) for row in rows])
    for method, k, error, weighted in rows:
        click.echo('{}\t{}\t{:.6g}\t{:.6g}'.format(method, k, error, weighted))

@cli.command('encode')
@click.argument('model_path', metavar='MODEL', type=click.Path(exists=True, dir_okay=False))
@click.argument('out', type=click.Path(dir_okay=False))
@click.option('--split', type=SPLIT_CHOICE, default='test', show_default=True)
@config_options(*DATASET_OPTIONS)
@pass_config
def encode_(config, model_path, out, split):
    """Encode annotated instances against a fixed dictionary into a CSV."""
    model = artifacts.load_object(model_path, ScenarioModel)
    encode(load_split(config, split).objects, model).write_csv(out)

@cli.command('train-head')
@click.argument('model_path', metavar='MODEL', type=click.Path(exists=True, dir_okay=False))
@click.argument('out_dir', type=click.Path(file_okay=False))
@config_options('seed', *HEAD_OPTIONS, *DATASET_OPTIONS)
@pass_config
def train_head(config, model_path, out_dir):
    """Train a scenario head, refining the dictionary.

    Writes the head and the refined model under OUT_DIR.
    """
    model = artifacts.load_object(model_path, ScenarioModel)
    train, _ = load_splits(config)
    x = train.feature_matrix().select_instances(train.objects.instance_ids)
    head, model, history = head_m.train_head(train.objects, x, model,
                                             config_m.train_schedule(config))

    os.makedirs(out_dir, exist_ok=True)
    artifacts.save_object(os.path.join(out_dir, pipeline.HEAD_FILE), head)
    artifacts.save_object(os.path.join(out_dir, pipeline.MODEL_FILE), model)
    artifacts.save_json(os.path.join(out_dir, pipeline.HISTORIES_FILE),
                        {'scenario_head': history})

@cli.command('train-classifier')
@click.argument('head_path', metavar='HEAD', type=click.Path(exists=True, dir_okay=False))
@click.argument('out', type=click.Path(dir_okay=False))
@config_options('seed', *CLASSIFIER_OPTIONS, *DATASET_OPTIONS)
@pass_config
def train_classifier(config, head_path, out):
    """Fit a scene classifier on the encodings predicted by a head."""
    head = artifacts.load_object(head_path, head_m.ScenarioHead)
    train, _ = load_splits(config)
    h = head_m.head_forward(head, train.feature_matrix())
    clf = classifier.fit(h, train.labels, **config_m.classifier_params(config))
    artifacts.save_object(out, clf)

@cli.command('joint-finetune')
@click.argument('model_path', metavar='MODEL', type=click.Path(exists=True, dir_okay=False))
@click.argument('head_path', metavar='HEAD', type=click.Path(exists=True, dir_okay=False))
@click.argument('classifier_path', metavar='CLASSIFIER',
                type=click.Path(exists=True, dir_okay=False))
@click.argument('out_dir', type=click.Path(file_okay=False))
@config_options('seed', *HEAD_OPTIONS, *DATASET_OPTIONS)
@pass_config
def joint_finetune(config, model_path, head_path, classifier_path, out_dir):
    """Finetune head, classifier and dictionary together."""
    model = artifacts.load_object(model_path, ScenarioModel)
    head = artifacts.load_object(head_path, head_m.ScenarioHead)
    clf = artifacts.load_object(classifier_path, classifier.SceneClassifier)
    train, _ = load_splits(config)
    head, model, clf, history = head_m.joint_finetune(
        train.objects, train.feature_matrix(), train.labels, model, head, clf,
        config_m.train_schedule(config))

    os.makedirs(out_dir, exist_ok=True)
    artifacts.save_object(os.path.join(out_dir, pipeline.MODEL_FILE), model)
    artifacts.save_object(os.path.join(out_dir, pipeline.HEAD_FILE), head)
    artifacts.save_object(os.path.join(out_dir, pipeline.CLASSIFIER_FILE), clf)
    artifacts.save_json(os.path.join(out_dir, pipeline.HISTORIES_FILE), {'joint': history})

@cli.command('pipeline')
@click.argument('out_dir', type=click.Path(file_okay=False))
@config_options('seed', *PBMF_OPTIONS, *HEAD_OPTIONS, *CLASSIFIER_OPTIONS, *DATASET_OPTIONS,
                *RETRIEVAL_OPTIONS, 'retrieval.n_queries', 'retrieval.ndcg_depth')
@pass_config
def pipeline_(config, out_dir):
    """Run all training phases, index the test split and evaluate.

    Artifacts and 'report.json' are written under OUT_DIR.
    """
    pipeline.run_pipeline(config, out_dir)

@cli.command()
@click.argument('model_path', metavar='MODEL', type=click.Path(exists=True, dir_okay=False))
@click.argument('head_path', metavar='HEAD', type=click.Path(exists=True, dir_okay=False))
@click.argument('classifier_path', metavar='CLASSIFIER',
                type=click.Path(exists=True, dir_okay=False))
@click.argument('instance_id')
@click.option('--top-n', default=3, show_default=True, help='Number of scenarios to show')
@click.option('--json', 'as_json', is_flag=True, help='Print the explanation as JSON')
@config_options(*DATASET_OPTIONS)
@pass_config
def explain(config, model_path, head_path, classifier_path, instance_id, top_n, as_json):
    """Explain the predicted class of one instance by its top scenarios."""
    model = artifacts.load_object(model_path, ScenarioModel)
    head = artifacts.load_object(head_path, head_m.ScenarioHead)
    clf = artifacts.load_object(classifier_path, classifier.SceneClassifier)

    for split in load_splits(config):
        x = split.feature_matrix()
        if instance_id in x.instance_ids:
            break
    else:
        raise Error('Unknown instance: ' + instance_id)

    h = head_m.head_forward(head, x.select_instances([instance_id]))
    explanation = classifier.explain(clf, model, h.matrix[:, 0], top_n)
    if as_json:
        echo_json(explanation.to_dict())
    else:
        for line in classifier.render_explanation(explanation):
            click.echo(line, nl=False)

@cli.command()
@click.argument('model_path', metavar='MODEL', type=click.Path(exists=True, dir_okay=False))
@click.argument('head_path', metavar='HEAD', type=click.Path(exists=True, dir_okay=False))
@click.argument('classifier_path', metavar='CLASSIFIER',
                type=click.Path(exists=True, dir_okay=False))
@click.argument('out', type=click.Path(dir_okay=False))
@click.option('--split', type=SPLIT_CHOICE, default='test', show_default=True)
@config_options(*RETRIEVAL_OPTIONS, *DATASET_OPTIONS)
@pass_config
def index(config, model_path, head_path, classifier_path, out, split):
    """Index the instances of a split for retrieval."""
    model = artifacts.load_object(model_path, ScenarioModel)
    head = artifacts.load_object(head_path, head_m.ScenarioHead)
    clf = artifacts.load_object(classifier_path, classifier.SceneClassifier)
    x = load_split(config, split).feature_matrix()
    content_index = retrieval.build_index(model, head, clf, x,
                                          **config_m.retrieval_thresholds(config))
    artifacts.write_jsonl(out, content_index.records())

def load_index(path):
    return retrieval.ContentIndex.from_records(artifacts.read_jsonl(path))

@cli.command()
@click.argument('index_path', metavar='INDEX', type=click.Path(exists=True, dir_okay=False))
@click.option('--class', 'classes', help='Comma separated scene classes, any may match')
@click.option('--has-scenario', 'scenarios', help='Comma separated required scenarios')
@click.option('--has-object', 'required', multiple=True,
              help='Required object, may be repeated or comma separated')
@click.option('--not-object', 'excluded', multiple=True,
              help='Excluded object, may be repeated or comma separated')
@click.option('--top-k', default=10, show_default=True, help='Number of results')
def query(index_path, classes, scenarios, required, excluded, top_k):
    """Search an index by class, scenario and object terms.

    Results are printed as instance id and the fraction of satisfied terms,
    best first.
    """
    q = retrieval.Query(split_list(classes), split_list(scenarios, int),
                        [name for value in required for name in split_list(value)],
                        [name for value in excluded for name in split_list(value)])
    for instance_id, score in retrieval.execute(load_index(index_path), q, top_k):
        click.echo('{}\t{:.4f}'.format(instance_id, score))

@cli.command()
@click.argument('index_path', metavar='INDEX', type=click.Path(exists=True, dir_okay=False))
@click.argument('id_a')
@click.argument('id_b')
def compare(index_path, id_a, id_b):
    """Show the scenarios two indexed instances share and where they differ."""
    result = retrieval.compare(load_index(index_path), id_a, id_b)

    def indices(values):
        return ' '.join(map(str, values))

    click.echo('class_a: {}'.format(result['class_a']))
    click.echo('class_b: {}'.format(result['class_b']))
    click.echo('shared: {}'.format(indices(result['shared_scenarios'])))
    click.echo('only_a: {}'.format(indices(result['only_a'])))
    click.echo('only_b: {}'.format(indices(result['only_b'])))

@cli.command('eval-objects')
@click.argument('model_path', metavar='MODEL', type=click.Path(exists=True, dir_okay=False))
@click.argument('head_path', metavar='HEAD', type=click.Path(exists=True, dir_okay=False))
@click.option('--split', type=SPLIT_CHOICE, default='test', show_default=True)
@click.option('--out', type=click.Path(dir_okay=False), help='Write the metrics here')
@config_options('seed', *DATASET_OPTIONS)
@pass_config
def eval_objects(config, model_path, head_path, split, out):
    """Measure how well predicted encodings recover the annotated objects."""
    model = artifacts.load_object(model_path, ScenarioModel)
    head = artifacts.load_object(head_path, head_m.ScenarioHead)
    part = load_split(config, split)
    x = part.feature_matrix().select_instances(part.objects.instance_ids)
    scores = pseudo_boolean_product(model.dictionary, head_m.head_forward(head, x).matrix)
    labels = part.objects.matrix
    echo_json({
        'macro_auprc': evalkit.macro_auprc(scores, labels),
        'random_macro_auprc': evalkit.macro_auprc(
            evalkit.random_scores(labels.shape, config.value('seed')), labels),
        'prevalence': float(labels.mean()),
    }, out)

@cli.command('eval-retrieval')
@click.argument('index_path', metavar='INDEX', type=click.Path(exists=True, dir_okay=False))
@click.option('--split', type=SPLIT_CHOICE, default='test', show_default=True)
@click.option('--out', type=click.Path(dir_okay=False), help='Write the metrics here')
@config_options('seed', 'retrieval.n_queries', 'retrieval.ndcg_depth', *DATASET_OPTIONS)
@pass_config
def eval_retrieval(config, index_path, split, out):
    """Evaluate an index on generated queries by NDCG."""
    content_index = load_index(index_path)
    part = load_split(config, split)
    labels = part.annotated_labels()
    seed = config.value('seed')
    depth = config.value('retrieval.ndcg_depth')
    queries = retrieval.generate_queries(part.objects, labels,
                                         config.value('retrieval.n_queries'), seed)
    echo_json({
        'queries': len(queries),
        'ndcg': retrieval.evaluate_ndcg(content_index, queries, part.objects, labels, depth),
        'random_ndcg': retrieval.evaluate_ndcg(content_index, queries, part.objects, labels,
                                               depth, rank=retrieval.random_ranking(seed)),
        'depth': depth,
    }, out)

@cli.command()
@click.argument('assignment', metavar='[NAME[=[VALUE]]]', required=False)
@pass_config
def config(config, assignment):
    """Show or set configuration options.

    Operates on the file given with '--config'. When invoked without
    argument, list all options with their values. When invoked with NAME
    only, show the particular option value.  When just the VALUE is
    omitted, clear the option value. Otherwise assign the VALUE.

    Options left unset take their defaults.  The list of configuration
    options follows:

    \b
    """
    if not config.path:
        raise click.UsageError('No configuration file given, use --config')
    if assignment == '' or assignment and assignment.startswith('='):
        raise click.UsageError('Got empty name')

    name = None
    op = None
    value = None
    if assignment:
        name, op, value = assignment.partition('=')

    if not name:
        for pair in config.get_config():
            click.echo('='.join(pair))
    elif not op:
        click.echo(config.get_config_value(name))
    else:
        if not value:
            config.clear_config(name)
        else:
            config.set_config(name, value)
        config.save()

config.help += '\n' + '\n'.join(
    '{} {}: {}'.format(option.name, option.type.upper(), option.help)
    for option in config_m.CONFIG_OPTIONS)
