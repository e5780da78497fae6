"""
Path utilities for bundled example configurations and run output folders.
"""

import os


def get_resource_path(relative_path):
    """
    Get the absolute path to a file shipped with the project.

    Args:
        relative_path (str): Path relative to root (e.g., "configs/eigen.ini")

    Returns:
        str: Absolute path to the resource file
    """
    # go up from src/ to the project root
    base_path = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    return os.path.join(base_path, relative_path)


def get_config_path(filename):
    return get_resource_path(os.path.join("configs", filename))


def get_output_path(output_path):
    """Absolute output folder, created if missing; relative paths resolve against the cwd."""
    path = os.path.abspath(os.path.expanduser(output_path))
    os.makedirs(path, exist_ok=True)
    return path
