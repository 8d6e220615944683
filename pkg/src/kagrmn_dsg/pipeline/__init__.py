"""Data, configuration, training, evaluation and the command-line interface."""
