"""Foreground segmentation from background feature density.

A coupling-flow density model (with a kNN kernel-density baseline) is fit
to background CNN feature vectors; foreground is segmented as regions of
low background likelihood, fusing calibrated evidence from several
encoder layers.
"""

__version__ = "0.1.0"
