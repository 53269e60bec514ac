"""
Database models for the experiment run ledger
"""

from django.db import models


class ExperimentRun(models.Model):
    STATUS_SUCCESS = 'success'
    STATUS_ERROR = 'error'
    STATUS_CHOICES = [(STATUS_SUCCESS, 'success'), (STATUS_ERROR, 'error')]

    command = models.CharField(max_length=32)
    seed = models.IntegerField(null=True, blank=True)
    config_hash = models.CharField(max_length=12, blank=True)
    out_dir = models.CharField(max_length=512, blank=True)
    status = models.CharField(max_length=16, choices=STATUS_CHOICES)
    error = models.TextField(blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at', '-id']

    def __str__(self):
        return f"{self.command} ({self.status}) at {self.created_at}"

    def as_dict(self):
        return {
            'id': self.id,
            'command': self.command,
            'seed': self.seed,
            'config_hash': self.config_hash,
            'out_dir': self.out_dir,
            'status': self.status,
            'error': self.error,
            'created_at': self.created_at.isoformat() if self.created_at else None,
        }
