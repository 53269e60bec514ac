from ...harness import run_classifier_comparison, write_tables
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Compare anchor classifiers: test AUROC and AUPRC, mean and standard deviation over repeats.'

    def run(self, config, out_dir, options):
        return write_tables(run_classifier_comparison(config), out_dir, 'comparison')
