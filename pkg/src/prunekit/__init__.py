"""Time-varying projected gradient descent pruning: schedules, magnitude
pruning, weight-recovery analytics, a sparse linear regression lab and a
tiny MLP trainer."""

__version__ = "0.1.0"
