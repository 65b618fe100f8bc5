# metrics/registry.py

from typing import Any, Callable, Dict, List


class MetricRegistry:
    """
    A registry of evaluation metrics over a list of SceneResult.
    Lets the evaluation report be assembled by name.
    """

    def __init__(self):
        self.metrics: Dict[str, Callable[..., Any]] = {}
        self.descriptions: Dict[str, str] = {}

    def register(self, name: str, function: Callable[..., Any], description: str = None) -> None:
        """
        Register a metric function.

        Args:
            name: Report key of the metric
            function: Callable taking the scene results (and keyword options)
            description: What the metric measures
        """
        self.metrics[name] = function
        if description:
            self.descriptions[name] = description

    def get_metric(self, name: str) -> Callable[..., Any]:
        """
        Get a metric function by name.

        Raises:
            KeyError: If the metric doesn't exist
        """
        if name not in self.metrics:
            raise KeyError(f"Metric '{name}' not found in registry")
        return self.metrics[name]

    def execute(self, name: str, *args, **kwargs) -> Any:
        return self.get_metric(name)(*args, **kwargs)

    def names(self) -> List[str]:
        return list(self.metrics)

    def list_metrics(self) -> Dict[str, str]:
        """
        List all registered metrics.

        Returns:
            A dictionary of metric names and their descriptions
        """
        return {name: self.descriptions.get(name, "No description available") for name in self.metrics}

    def evaluate_all(self, results, **kwargs) -> Dict[str, Any]:
        """Run every registered metric on the same results, in registration order."""
        return {name: function(results, **kwargs) for name, function in self.metrics.items()}
