"""posterlab: a desk-scale, fully verifiable poster-design pipeline.

Modules:

- font: exact 8x8 bitmap glyph set used by every stage
- corpus: synthetic ground-truth poster generator + manifests
- filtering: template-match OCR and aesthetic scoring gates
- captioner: invertible dual captions (glyph-level and layout-level)
- pairs: editing-task pair construction (inpainting, restyle, ...)
- model: pixel-space multimodal diffusion transformer (rectified flow)
- curriculum: staged training loop with exact checkpoint resume
- sampler: arbitrary-aspect-ratio Euler sampling with guidance
- evalharness: prompt-following / subject / design / study metrics
- cli: stage orchestration with a hashed provenance ledger
"""

__version__ = "0.1.0"
