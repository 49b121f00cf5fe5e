"""
# EnsembleGP library

Learning unknown, possibly non-stationary dynamical systems from noisy observation sequences with
a shared sparse GP warped by input-dependent normalizing flows, trained by an ensemble Kalman filter
aided variational bound. The library is used by the command line interface in `src/cli.py`.
"""
