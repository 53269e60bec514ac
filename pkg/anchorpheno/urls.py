"""
anchorpheno app URLs
"""

from django.urls import path
from . import views

app_name = 'anchorpheno'

urlpatterns = [
    path('api/health/', views.health_check, name='health_check'),
    path('api/runs/', views.runs, name='runs'),
]
