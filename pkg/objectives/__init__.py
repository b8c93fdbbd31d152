"""Contrastive pretraining objectives, augmentations and the training loop."""
