"""SDEs driven by fractional Brownian motion and compound Poisson jumps.

Submodules: ``frac_calc`` (fractional integrals and Marchaud derivatives),
``fbm`` (covariance, the Volterra kernel and samplers), ``point_process``
(compound Poisson jumps), ``girsanov_weak`` (weighted weak solutions),
``strong_solver`` (pathwise Euler and the monotone mollifier scheme),
``density_krylov`` (transition densities and Krylov checks), ``reserve_app``
(ruin probabilities) and ``cli``.
"""

__version__ = "0.1.0"
