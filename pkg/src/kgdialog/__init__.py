"""Knowledge-grounded dialog response generation.

Subpackages cover the pipeline end to end: knowledge base parsing and graph
construction (``kb``), attribute/relation acquisition from dialog context
(``acquire``), the autodiff engine (``autodiff``), multi-level knowledge
composition (``composer``), latent-query semantic regularization
(``regularizer``), the knowledge-aware decoder (``decoder``), the assembled
model (``model``), synthetic corpora (``corpus``), evaluation metrics
(``metrics``), the training loop (``training``), and the command line
(``cli``).
"""

__version__ = "0.1.0"
