"""Optimal lockdown synthesis for an SIR epidemic under an ICU capacity limit.

Modules: ``dynamics`` (model and integration), ``zones`` (safe sets and the
grid viability oracle), ``synthesis`` (optimal control), ``pontryagin``
(costates and maximum-principle checks), ``oracle`` (transcription baseline and
random perturbations) and ``cli``.
"""

__version__ = "0.1.0"
