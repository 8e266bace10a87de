"""trapsift: filter empty camera-trap images.

Dataset labeling and splits, recall-targeted threshold calibration,
precision/TNR/PR-AUC reporting, edge latency benchmarking, and a deployable
keep/discard pipeline, all behind one CLI (``trapsift``).
"""

__version__ = "0.1.0"
