"""Fairness-aware graph augmentation, contrastive node embedding and evaluation."""
