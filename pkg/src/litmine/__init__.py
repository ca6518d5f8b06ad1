"""Medical literature mining pipeline.

Subpackages cover the full workflow: model gateway, registry clients,
boolean query synthesis, eligibility screening, structured extraction,
instruction-corpus building, evaluation, and the review workbench.
"""

__version__ = "0.1.0"
