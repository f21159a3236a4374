"""Dataset generation, file formats and benchmark reporting."""
