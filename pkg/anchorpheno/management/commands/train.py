from ...classifiers import predict, save_classifier
from ...exceptions import ExperimentConfigError
from ...formats import write_metrics
from ...harness import CLASSIFIER_MODELS, fit_classifier, read_workbench
from ...metrics import auroc, average_precision
from ..base import ExperimentCommand, add_cohort_arguments, cohort_dir


class Command(ExperimentCommand):
    help = 'Fit one anchor classifier on the training split and save a checkpoint.'

    def add_command_arguments(self, parser):
        parser.add_argument('--model', required=True, help='anchorbert or anchor-lr')
        parser.add_argument('--checkpoint', help='checkpoint path (default: <out-dir>/<model>.pt)')
        add_cohort_arguments(parser)

    def run(self, config, out_dir, options):
        name = options['model']
        if name not in CLASSIFIER_MODELS:
            raise ExperimentConfigError(
                f"train fits anchor classifiers only ({', '.join(CLASSIFIER_MODELS)}), got {name!r}"
            )
        bench = read_workbench(config, cohort_dir(options, out_dir))
        classifier = fit_classifier(name, bench, bench.labels.subset(bench.train), config.seed)
        checkpoint = save_classifier(classifier, options.get('checkpoint') or out_dir / f'{name}.pt', vocab=bench.vocab)

        metrics = {}
        for split, rows in (('val', bench.validation), ('test', bench.test)):
            scores = predict(classifier, bench.records_at(rows), bench.vocab)
            metrics[f'{split}_auroc'] = auroc(scores, bench.labels.s[rows])
            metrics[f'{split}_auprc'] = average_precision(scores, bench.labels.s[rows])
        return [checkpoint, write_metrics(metrics, out_dir / f'{name}_metrics.tsv')]
