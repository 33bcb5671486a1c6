"""Audio-visual emotion recognition with flow/frame pairwise fusion and
inter-modal cosine attention, on a small numpy autodiff engine."""

__version__ = "0.1.0"
