"""Abnormal gaze behavior detection: contrastive pretraining, gaze regression,
Kalman regularization and an MLP state classifier, on synthetic capture data."""

__version__ = "0.1.0"
