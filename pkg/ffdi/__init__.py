"""
FFDI desk-scale package: frequency-domain feature disentanglement,
interaction and augmentation for domain generalization.
"""
