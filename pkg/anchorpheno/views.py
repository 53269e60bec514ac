from django.http import JsonResponse
from django.views.decorators.http import require_http_methods
from .models import ExperimentRun

MAX_RUNS = 200


@require_http_methods(["GET"])
def health_check(request):
    """API health check endpoint"""
    return JsonResponse({
        'status': 'healthy',
        'message': 'anchorpheno is running',
        'runs': ExperimentRun.objects.count(),
    })


@require_http_methods(["GET"])
def runs(request):
    """Most recent experiment runs, newest first; ``?limit=`` caps the list."""
    try:
        limit = int(request.GET.get('limit', 20))
    except ValueError:
        return JsonResponse({
            'error': 'limit must be an integer',
            'status': 'error'
        }, status=400)
    if limit < 1:
        return JsonResponse({
            'error': 'limit must be positive',
            'status': 'error'
        }, status=400)

    queryset = ExperimentRun.objects.all()
    command = request.GET.get('command')
    if command:
        queryset = queryset.filter(command=command)
    return JsonResponse({
        'runs': [run.as_dict() for run in queryset[:min(limit, MAX_RUNS)]],
        'status': 'success'
    })
