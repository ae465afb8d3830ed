"""matchfield: generalizable novel-view synthesis on synthetic scenes.

The package renders unseen viewpoints of a scene from a handful of posed
input images. Cross-view Transformer features are compared across view
pairs to produce a correspondence-driven geometry prior, which modulates
a small radiance-field decoder that is integrated by a differentiable
volume renderer. Everything runs on numpy through the reverse-mode
engine in :mod:`matchfield.autodiff`; no GPU framework is involved.
"""

__version__ = "0.1.0"
