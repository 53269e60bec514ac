import logging

from django.apps import AppConfig
from django.conf import settings

logger = logging.getLogger(__name__)


class AnchorphenoConfig(AppConfig):
    name = 'anchorpheno'
    default_auto_field = 'django.db.models.BigAutoField'

    def ready(self):
        import torch

        # one thread keeps training and scoring bit-for-bit reproducible
        torch.set_num_threads(settings.ANCHORPHENO_TORCH_THREADS)
        logger.debug("torch threads: %d", torch.get_num_threads())
