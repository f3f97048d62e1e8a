"""Laser diagnostics and prognostics from current-sensor data.

Modules: ``degradation_sim`` (synthetic run-to-failure data), ``preprocess``
(smoothing, 100-step windows, correlation ranking), ``nn_core`` (numpy LSTM
with BPTT and Adam), ``models`` (fault detector, RUL regressors, piecewise
labels), ``evaluation`` (metrics and report CSVs) and ``cli``.
"""

__version__ = "0.1.0"
