# metrics/__init__.py

from .registry import MetricRegistry
from .activity import group_activity_accuracy, register_activity_metrics, size_accuracy
from .detection import (
    group_identification_accuracy,
    identification_by_size,
    identification_per_class,
    register_detection_metrics,
    social_group_map,
)
from .ordering import order_change_ratio

# Create a global metric registry instance
registry = MetricRegistry()

register_activity_metrics(registry)
register_detection_metrics(registry)


def get_registry() -> MetricRegistry:
    """Get the metric registry"""
    return registry
