"""Direct-from-image ECG disease classification: rectification, curriculum
training, ensembling and heatmap explanations, with a synthetic data source."""

CLASSES = ("MI", "STTC", "CD", "HYP", "AF")

__version__ = "0.1.0"
