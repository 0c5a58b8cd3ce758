"""Online active test-time adaptation for semantic segmentation, desk scale.

A streamed test image is predicted, an annotator picks the most informative
pixels within a small budget, an oracle (simulated or human) labels them, and
the segmentation network takes exactly one gradient step before the next
frame arrives. Includes the synthetic scene/corruption benchmark, evaluation
metrics, an experiment CLI and an HTTP service for human-in-the-loop
labeling.
"""

__version__ = "0.1.0"
