"""Training-free disentangled color/style conditioning at desk scale.

The package splits into small numpy modules:

* :mod:`colorwise.imagecore`  image containers, PNG/PPM/PGM I/O, masking
* :mod:`colorwise.colorspace` sRGB <-> CIELAB, grayscale, L/AB merge
* :mod:`colorwise.clustering` k-means color clusters and proportion matching
* :mod:`colorwise.recolor`    whitening/recoloring and its mask-aware variant
* :mod:`colorwise.attention`  self-attention with timestep-gated KV injection
* :mod:`colorwise.diffusion`  deterministic DDIM, inversion, toy denoisers
* :mod:`colorwise.pipeline`   the two-branch jobs, palette metrics
* :mod:`colorwise.config`     flat key = value run configuration
* :mod:`colorwise.report`     matplotlib figures and CSV metrics
* :mod:`colorwise.cli`        the ``cw`` command
"""

__version__ = "0.1.0"
