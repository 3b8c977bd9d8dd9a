"""dlaudit: audit on-device deep-learning models shipped inside Android apps.

Pipeline: scan APKs for model files and loader code, reason about how the
app feeds and interprets each model, parse model metadata, build a validated
attack dataset, and measure adversarial robustness on the built-in minigraph
engine.
"""

__version__ = "0.1.0"
