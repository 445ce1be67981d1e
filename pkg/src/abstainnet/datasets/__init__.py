"""Bundled example data.

synthetic_tabular.csv is produced by the package's own generator (see the
sidecar JSON for the exact parameters) and backs the cross-validation sweep
examples and tests.
"""

from importlib import resources
from pathlib import Path


def bundled_path(name: str = "synthetic_tabular.csv") -> Path:
    with resources.as_file(resources.files(__package__) / name) as p:
        return Path(p)
