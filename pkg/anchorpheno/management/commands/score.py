from pathlib import Path

from ...anchors import save_phenotype
from ...classifiers import load_classifier
from ...exceptions import ExperimentConfigError
from ...harness import CLASSIFIER_MODELS, check_model_name, read_workbench, score_phenotype
from ..base import ExperimentCommand, add_cohort_arguments, cohort_dir


class Command(ExperimentCommand):
    help = 'Score a phenotype for every patient and write it as a phenotype file.'

    def add_command_arguments(self, parser):
        parser.add_argument('--model', required=True, help='anchorbert, anchor-lr, pheprob or threshold-<k>')
        parser.add_argument('--checkpoint', help='trained classifier (anchorbert and anchor-lr only)')
        add_cohort_arguments(parser)

    def run(self, config, out_dir, options):
        name = check_model_name(options['model'])
        bench = read_workbench(config, cohort_dir(options, out_dir))
        classifier = None
        if name in CLASSIFIER_MODELS:
            checkpoint = Path(options.get('checkpoint') or out_dir / f'{name}.pt')
            if not checkpoint.exists():
                raise ExperimentConfigError(
                    f"{name} needs a checkpoint from the train command ({checkpoint} not found)"
                )
            classifier = load_classifier(checkpoint)
        phenotype = score_phenotype(name, bench, classifier)
        return [save_phenotype(phenotype, out_dir / f'phenotype_{name}.tsv')]
