from ...harness import run_ablation, write_tables
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Remove patients after phenotyping and report how many catalog associations survive.'

    def run(self, config, out_dir, options):
        return write_tables(run_ablation(config), out_dir, 'ablation')
