"""Sign-language translation over dynamic multi-modal frame/gloss graphs.

Modules, bottom up: ``tensor`` (reverse-mode autodiff on numpy), ``nn``
(layers), ``alignment`` and ``graph`` (pseudo-labels to graphs), ``encoder``
(graph fusion encoder), ``ctc`` and ``seq2seq`` (recognition and translation
heads), ``model``, ``metrics``, ``pipeline`` and ``cli``.
"""

__version__ = "0.1.0"
