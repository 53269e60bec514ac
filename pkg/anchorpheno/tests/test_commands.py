import json
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

from django.core.management import call_command, load_command_class
from django.core.management.base import CommandError
from django.test import TestCase

from anchorpheno.anchors import load_phenotype
from anchorpheno.classifiers import TransformerConfig, load_classifier
from anchorpheno.formats import read_metrics
from anchorpheno.gwas import load_sumstats
from anchorpheno.harness import ExperimentConfig
from anchorpheno.models import ExperimentRun

from .utils import tiny_experiment

TINY_TRANSFORMER = TransformerConfig(hidden_size=16, n_heads=2, intermediate_size=32, max_len=48, n_epochs=1)


class CommandTestCase(TestCase):

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.out_dir = Path(tmp.name)
        self.config_path = self.write_config()

    def write_config(self, name='config.json', **overrides):
        overrides.setdefault('transformer', TINY_TRANSFORMER)
        path = self.out_dir / name
        path.write_text(json.dumps(tiny_experiment(**overrides).to_dict()))
        return path

    def call(self, command, *args, config=None):
        stdout, stderr = StringIO(), StringIO()
        call_command(command, '--config', str(config or self.config_path), '--out-dir', str(self.out_dir),
                     *args, stdout=stdout, stderr=stderr)
        return [Path(line) for line in stdout.getvalue().splitlines()]

    def call_failing(self, command, *args):
        stderr = StringIO()
        with self.assertRaises(CommandError) as raised:
            call_command(command, '--config', str(self.config_path), '--out-dir', str(self.out_dir), *args,
                         stdout=StringIO(), stderr=stderr)
        self.assertEqual(raised.exception.returncode, 2)
        return json.loads(stderr.getvalue().strip().splitlines()[-1])


class SynthCommandTests(CommandTestCase):

    def test_writes_cohort_files_and_records_the_run(self):
        paths = self.call('synth')
        self.assertEqual({p.name for p in paths}, {'cohort.tsv', 'genotypes.tsv', 'genotypes.meta.tsv',
                                                   'truth.tsv', 'covariates.tsv', 'catalog.tsv'})
        self.assertTrue(all(p.exists() for p in paths))
        run = ExperimentRun.objects.get()
        self.assertEqual((run.command, run.status, run.seed), ('synth', ExperimentRun.STATUS_SUCCESS, 0))
        config = ExperimentConfig.from_file(self.config_path)
        self.assertEqual(run.config_hash, config.config_hash())

    def test_flags_override_the_config_file(self):
        self.call('synth', '--seed', '5', '--alpha', '0.01')
        run = ExperimentRun.objects.get()
        expected = ExperimentConfig.from_file(self.config_path).with_overrides(seed=5, alpha=0.01)
        self.assertEqual((run.seed, run.config_hash), (5, expected.config_hash()))

    def test_invalid_config_is_a_config_error(self):
        self.config_path.write_text(json.dumps({'repeats': 0}))
        payload = self.call_failing('synth')
        self.assertEqual((payload['status'], payload['kind']), ('error', 'config'))
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, ExperimentRun.STATUS_ERROR)
        self.assertEqual(run.seed, None)


class PhenotypeCommandTests(CommandTestCase):

    def setUp(self):
        super().setUp()
        self.call('synth')

    def test_train_score_gwas(self):
        checkpoint, metrics = self.call('train', '--model', 'anchor-lr')
        self.assertEqual(checkpoint.name, 'anchor-lr.pt')
        self.assertEqual(set(read_metrics(metrics)), {'val_auroc', 'val_auprc', 'test_auroc', 'test_auprc'})
        load_classifier(checkpoint)

        (phenotype_path,) = self.call('score', '--model', 'anchor-lr')
        phenotype = load_phenotype(phenotype_path)
        self.assertEqual(phenotype_path.name, 'phenotype_anchor-lr.tsv')
        self.assertTrue(((phenotype.scores >= 0.0) & (phenotype.scores <= 1.0)).all())

        sumstats, catalog_match = self.call('gwas', '--phenotype', str(phenotype_path))
        self.assertEqual(sumstats.name, 'sumstats_anchor-lr.tsv')
        self.assertEqual(len(load_sumstats(sumstats).results), 20)
        self.assertIn('proportion', read_metrics(catalog_match))
        self.assertEqual(list(ExperimentRun.objects.values_list('command', flat=True).order_by('id')),
                         ['synth', 'train', 'score', 'gwas'])

    def test_train_transformer(self):
        checkpoint, _ = self.call('train', '--model', 'anchorbert')
        self.assertEqual(load_classifier(checkpoint).config, TINY_TRANSFORMER)

    def test_threshold_needs_no_checkpoint(self):
        (path,) = self.call('score', '--model', 'threshold-2')
        self.assertLessEqual(set(load_phenotype(path).scores.tolist()), {0.0, 1.0})

    def test_classifier_without_checkpoint(self):
        payload = self.call_failing('score', '--model', 'anchorbert')
        self.assertEqual(payload['kind'], 'config')

    def test_train_rejects_non_classifiers(self):
        self.assertEqual(self.call_failing('train', '--model', 'pheprob')['kind'], 'config')

    def test_unknown_model(self):
        self.assertEqual(self.call_failing('score', '--model', 'bert')['kind'], 'config')

    def test_missing_phenotype_file(self):
        payload = self.call_failing('gwas', '--phenotype', str(self.out_dir / 'phenotype_missing.tsv'))
        self.assertEqual(payload['kind'], 'io')

    def test_phenotype_file_without_score_columns(self):
        bad = self.out_dir / 'phenotype_bad.tsv'
        bad.write_text('who\twhat\nP000001\t1\n')
        payload = self.call_failing('gwas', '--phenotype', str(bad))
        self.assertEqual(payload['kind'], 'format')
        self.assertIn('score', payload['error'])
        self.assertEqual(ExperimentRun.objects.latest('id').status, ExperimentRun.STATUS_ERROR)

    def test_unexpected_failure_is_reported_as_json(self):
        (path,) = self.call('score', '--model', 'threshold-1')
        with mock.patch('anchorpheno.management.commands.gwas.run_gwas', side_effect=RuntimeError('boom')):
            payload = self.call_failing('gwas', '--phenotype', str(path))
        self.assertEqual(payload, {'status': 'error', 'kind': 'internal', 'error': 'RuntimeError: boom'})
        run = ExperimentRun.objects.latest('id')
        self.assertEqual((run.command, run.status), ('gwas', ExperimentRun.STATUS_ERROR))


class ExperimentCommandTests(CommandTestCase):

    def test_pipeline(self):
        config = self.write_config('pipeline.json', models=('pheprob', 'threshold-1'))
        paths = self.call('pipeline', config=config)
        self.assertEqual([p.name for p in paths], [
            'phenotype_pheprob.tsv', 'sumstats_pheprob.tsv', 'phenotype_threshold-1.tsv',
            'sumstats_threshold-1.tsv', 'catalog.tsv', 'catalog_comparison.tsv',
        ])
        self.assertTrue(all(p.exists() for p in paths))

    def test_compare(self):
        config = self.write_config('compare.json', models=('anchor-lr',), repeats=1)
        paths = self.call('compare', config=config)
        self.assertEqual([p.name for p in paths], ['comparison_runs.tsv', 'comparison_summary.tsv'])

    def test_noise_sweep(self):
        config = self.write_config('sweep.json', models=('anchor-lr',), repeats=1)
        paths = self.call('noise_sweep', config=config)
        self.assertEqual([p.name for p in paths], ['noise_sweep_runs.tsv', 'noise_sweep_summary.tsv'])

    def test_noise_sweep_help_names_the_experiment(self):
        self.assertIn('noise-sweep', load_command_class('anchorpheno', 'noise_sweep').help)

    def test_ablation_with_too_few_survivors(self):
        self.config_path = self.write_config('ablate.json', models=('threshold-1',), repeats=1,
                                             joint_ablation_proportions=(1.0,))
        self.assertEqual(self.call_failing('ablate')['kind'], 'insufficient_samples')
