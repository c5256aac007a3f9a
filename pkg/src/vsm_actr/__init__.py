"""VSM-ACTR: a production-system simulator for a two-section manufacturing
decision task, plus the pipeline that turns its decision traces into
machine-learning datasets and behavior-prediction evaluations.
"""

__version__ = "0.1.0"
