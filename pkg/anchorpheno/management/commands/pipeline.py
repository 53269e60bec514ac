from ...harness import run_full_pipeline, write_tables
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Cohort to catalog: score every model, run association tests and match the truth catalog.'

    def run(self, config, out_dir, options):
        tables = run_full_pipeline(config, out_dir)
        paths = []
        for name in config.models:
            paths += [out_dir / f'phenotype_{name}.tsv', out_dir / f'sumstats_{name}.tsv']
        return paths + [out_dir / 'catalog.tsv', *write_tables(tables, out_dir, 'catalog_comparison')]
