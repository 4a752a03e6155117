"""Attribution evaluation and fairness auditing for sequential cohort classifiers."""

__version__ = "0.1.0"
