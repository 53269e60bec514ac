from ...harness import write_cohort_files
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Generate a synthetic cohort: records, genotypes, covariates, truth and catalog files.'

    def run(self, config, out_dir, options):
        return write_cohort_files(config, out_dir)
