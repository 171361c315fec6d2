"""Low-complexity deep acoustic echo control: signal chain, models, training, evaluation."""

__version__ = "0.1.0"
