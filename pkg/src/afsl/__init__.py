"""Adversarial feature similarity learning on a desk-scale real/fake detection proxy."""
