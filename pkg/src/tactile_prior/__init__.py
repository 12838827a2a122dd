"""Visuo-tactile representation learning with a material prior, at desk scale.

Submodules: ``tensor`` (autodiff), ``brdf`` (renderer), ``synth`` (data),
``prior`` (material estimator), ``contrastive`` (pretraining), ``evaluation``
(metrics), ``pipeline`` and ``cli`` (orchestration).
"""

__version__ = "0.1.0"
