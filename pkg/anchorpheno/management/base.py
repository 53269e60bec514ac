"""
Shared plumbing for the experiment management commands.

Settings from the environment are the base layer, the ``--config`` JSON file
overrides them and command-line flags override both. On failure a command
writes one JSON line ``{"status": "error", "kind": ..., "error": ...}`` to
stderr and exits with status 2.
"""

import json
import logging
from dataclasses import replace
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from ..exceptions import AnchorPhenoError
from ..harness import ExperimentConfig, read_config_data
from ..models import ExperimentRun

logger = logging.getLogger(__name__)

ERROR_RETURNCODE = 2


def _plain(text):
    return text


class ExperimentCommand(BaseCommand):
    #: ledger name; defaults to the command module name
    command_name = None

    def add_arguments(self, parser):
        parser.add_argument('--config', help='experiment configuration (JSON)')
        parser.add_argument('--seed', type=int, help='master seed')
        parser.add_argument('--out-dir', help='directory for every file the command writes')
        parser.add_argument('--alpha', type=float, help='significance threshold for association tests')
        parser.add_argument('--r2', type=float, help='LD R^2 threshold for catalog expansion')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def run(self, config, out_dir, options):
        """Do the work; returns the written paths."""
        raise NotImplementedError

    def load_config(self, options):
        base = {
            'seed': settings.ANCHORPHENO_SEED,
            'alpha': settings.ANCHORPHENO_ALPHA,
            'r2_threshold': settings.ANCHORPHENO_R2,
        }
        path = options.get('config')
        if path is None and Path(settings.ANCHORPHENO_CONFIG).exists():
            path = settings.ANCHORPHENO_CONFIG
        if path is not None:
            base.update(read_config_data(path))
            logger.info("Loaded experiment config %s", path)
        config = ExperimentConfig.from_dict(base).with_overrides(
            seed=options.get('seed'), alpha=options.get('alpha'), r2_threshold=options.get('r2'),
        )
        anchor = options.get('anchor')
        if anchor:
            config = replace(config, anchor=anchor)
        return config

    def handle(self, *args, **options):
        config = None
        out_dir = Path(options.get('out_dir') or settings.ANCHORPHENO_OUT_DIR)
        try:
            config = self.load_config(options)
            out_dir.mkdir(parents=True, exist_ok=True)
            logger.info("%s: seed %d, config %s, writing to %s",
                        self.name, config.seed, config.config_hash(), out_dir)
            paths = self.run(config, out_dir, options)
        except AnchorPhenoError as exc:
            self.fail(exc.as_dict(), config, out_dir)
        except OSError as exc:
            self.fail({'status': 'error', 'kind': 'io', 'error': str(exc)}, config, out_dir)
        except Exception as exc:
            logger.exception("%s failed", self.name)
            self.fail({'status': 'error', 'kind': 'internal', 'error': f"{type(exc).__name__}: {exc}"},
                      config, out_dir)

        self.record(config, out_dir, ExperimentRun.STATUS_SUCCESS)
        for path in paths:
            self.stdout.write(str(path))

    @property
    def name(self):
        return self.command_name or self.__module__.rsplit('.', 1)[-1]

    def fail(self, payload, config, out_dir):
        self.stderr.write(json.dumps(payload), style_func=_plain)
        self.record(config, out_dir, ExperimentRun.STATUS_ERROR, payload['error'])
        raise CommandError(payload['error'], returncode=ERROR_RETURNCODE)

    def record(self, config, out_dir, status, error=''):
        try:
            ExperimentRun.objects.create(
                command=self.name,
                seed=config.seed if config is not None else None,
                config_hash=config.config_hash() if config is not None else '',
                out_dir=str(out_dir),
                status=status,
                error=error,
            )
        except Exception as db_error:
            logger.warning("Could not record %s run: %s", self.name, db_error)
            # Continue even if save fails


def add_cohort_arguments(parser):
    parser.add_argument('--cohort-dir', help='directory written by synth (default: --out-dir)')
    parser.add_argument('--anchor', help='anchor codes, "|"-separated (default: the cohort anchor codes)')


def cohort_dir(options, out_dir):
    return Path(options.get('cohort_dir') or out_dir)
