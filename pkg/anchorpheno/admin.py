"""
Admin configuration
"""

from django.contrib import admin
from .models import ExperimentRun

@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ['command', 'status', 'seed', 'config_hash', 'out_dir', 'created_at']
    list_filter = ['command', 'status', 'created_at']
    search_fields = ['config_hash', 'out_dir', 'error']
