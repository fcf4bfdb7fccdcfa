"""Estimator-style front end to the motion estimation drivers."""
from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import ValidationError
from .metrics import gradient_entropy
from .react import ReactConfig, estimate
from .recon import Gridder, ReconConfig, reconstruct_sos
from .solver import DEFAULT_ROT_SCALE
from .validation import check_acquisition, check_mask, check_trajectory


class REACT(BaseEstimator):
    """Rigid motion estimation by accelerated coordinate descent.

    The constructor arguments mirror :class:`reactmc.react.ReactConfig`.
    ``fit`` estimates one rigid vector per beat of an acquisition,
    ``transform`` returns the motion-corrected root-sum-of-squares image and
    ``predict`` returns the estimated trajectory.

    Attributes
    ----------
    motion_ : MotionTrajectory
        Mean-centered estimate.
    report_ : RunReport
    n_segments_ : int

    Examples
    --------
    >>> est = REACT(n_iters=3).fit(acq, mask=mask)   # doctest: +SKIP
    >>> image = est.transform(acq)                     # doctest: +SKIP
    """

    def __init__(self, variant="nesterov", n_iters=3, group_schedule=(), n_ramp=3,
                 sweep_order=("LR", "AP"), sweep_step_mm=1.0, sweep_range_mm=None,
                 sweep_every_subproblem=True, range_mm=2.0, rot_range_deg=2.0, tol_mm=0.01,
                 rot_scale=DEFAULT_ROT_SCALE, max_evals=200, dofs=(0, 1), seed=0, recon=None):
        self.variant = variant
        self.n_iters = n_iters
        self.group_schedule = group_schedule
        self.n_ramp = n_ramp
        self.sweep_order = sweep_order
        self.sweep_step_mm = sweep_step_mm
        self.sweep_range_mm = sweep_range_mm
        self.sweep_every_subproblem = sweep_every_subproblem
        self.range_mm = range_mm
        self.rot_range_deg = rot_range_deg
        self.tol_mm = tol_mm
        self.rot_scale = rot_scale
        self.max_evals = max_evals
        self.dofs = dofs
        self.seed = seed
        self.recon = recon

    def _config(self, features="translations"):
        params = self.get_params()
        params["recon"] = self.recon if self.recon is not None else ReconConfig()
        return ReactConfig(features=features, **params).validate()

    def fit(self, acq, y=None, mask=None, X0=None, features="translations"):
        """Estimate the motion of every beat of ``acq``.

        Parameters
        ----------
        acq : Acquisition
        y : ignored
        mask : array_like of bool, optional
            Region where the gradient entropy is evaluated.
        X0 : MotionTrajectory or array_like, optional
            Start point; zero motion by default.
        features : {"translations"} or array_like
            Grouping features for the grouped variant.
        """
        acq = check_acquisition(acq)
        mask = check_mask(mask, acq.matrix)
        X0 = check_trajectory(X0, acq.n_segments)
        cfg = self._config(features)
        self._gridder = Gridder(acq, cfg.recon)
        self.motion_, self.report_ = estimate(acq, cfg, X0=X0, mask=mask, gridder=self._gridder)
        self.n_segments_ = acq.n_segments
        return self

    def _check_fitted(self, acq):
        if not hasattr(self, "motion_"):
            raise NotFittedError("call fit before using this estimator")
        acq = check_acquisition(acq)
        check_trajectory(self.motion_, acq.n_segments)
        return acq

    def predict(self, acq=None):
        """Estimated trajectory (``acq`` is only checked for a matching beat count)."""
        if acq is not None:
            self._check_fitted(acq)
        elif not hasattr(self, "motion_"):
            raise NotFittedError("call fit before using this estimator")
        return self.motion_.copy()

    def transform(self, acq):
        """Motion-corrected SoS reconstruction of ``acq``."""
        acq = self._check_fitted(acq)
        gr = getattr(self, "_gridder", None)
        try:
            gr = gr.bind(acq) if gr is not None else None
        except ValidationError:
            gr = None
        if gr is None:
            gr = Gridder(acq, self.recon or ReconConfig())
        return reconstruct_sos(acq, self.motion_, gridder=gr)

    def fit_transform(self, acq, y=None, **fit_params):
        return self.fit(acq, y, **fit_params).transform(acq)

    def score(self, acq, y=None, mask=None):
        """Negative gradient entropy of the corrected image (higher is sharper)."""
        img = self.transform(acq)
        return -gradient_entropy(img, check_mask(mask, acq.matrix))
