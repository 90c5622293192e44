"""Augmentation, optimizer and the few-shot training loop."""
