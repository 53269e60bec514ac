from ...harness import run_noise_sweep, write_tables
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = ('Hide a growing share of training positives and report validation AUPRC per model '
            '(the noise-sweep experiment; Django spells command names after their modules).')

    def run(self, config, out_dir, options):
        return write_tables(run_noise_sweep(config), out_dir, 'noise_sweep')
