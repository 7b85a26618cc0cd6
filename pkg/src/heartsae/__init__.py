"""Multitask sparse-autoencoder classifiers and baselines for heart-disease risk prediction."""

__version__ = "0.1.0"
