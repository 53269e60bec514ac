from pathlib import Path

from ...anchors import load_phenotype
from ...cohort import load_covariates, load_genotypes
from ...formats import write_metrics
from ...gwas import load_catalog, match_catalog, run_gwas, save_sumstats
from ...harness import CATALOG_FILE, COVARIATE_FILE, GENOTYPE_FILE
from ..base import ExperimentCommand, cohort_dir


class Command(ExperimentCommand):
    help = 'Run per-variant association tests for one phenotype file and write summary statistics.'

    def add_command_arguments(self, parser):
        parser.add_argument('--phenotype', required=True, help='phenotype file written by the score command')
        parser.add_argument('--cohort-dir', help='directory written by synth (default: --out-dir)')

    def run(self, config, out_dir, options):
        source = cohort_dir(options, out_dir)
        phenotype_path = Path(options['phenotype'])
        stem = phenotype_path.stem.removeprefix('phenotype_')
        genotypes = load_genotypes(source / GENOTYPE_FILE)
        gwas = run_gwas(load_phenotype(phenotype_path), genotypes, load_covariates(source / COVARIATE_FILE),
                        config.alpha, config.n_pcs)
        paths = [save_sumstats(gwas, out_dir / f'sumstats_{stem}.tsv')]

        catalog_path = source / CATALOG_FILE
        if catalog_path.exists():
            catalog = load_catalog(catalog_path)
            match = match_catalog(gwas.significant, catalog, genotypes, config.r2_threshold)
            paths.append(write_metrics({
                'n_significant': match.n_significant,
                'n_significant_matched': match.n_significant_matched,
                'catalog_size': match.catalog_size,
                'matched_count': match.matched_count,
                'proportion': match.proportion,
            }, out_dir / f'catalog_match_{stem}.tsv'))
        return paths
