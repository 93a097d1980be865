"""scikit-learn style wrapper: fit on scattering data, predict the potential at points."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import ConfigError
from .rh_solver import TOL, RHSolver, work_grid_for
from .scattering_transform import ScatteringData


class DBarReconstructor(BaseEstimator):
    """Reconstruct v(x) from scattering data through the non-local RH problem.

    ``fit`` takes a :class:`ScatteringData` bundle; ``predict`` takes points as an
    ``(n, 2)`` real array or a length-n complex array and returns real v values
    (``imag`` of the solver output is kept in ``last_imag_``).  Each point is an
    independent solve of the differentiated joint system, so any point set works.
    """

    def __init__(self, n_radii: int | None = None, n_theta: int | None = None,
                 tol: float = TOL, cutoff: float | None = None):
        self.n_radii = n_radii
        self.n_theta = n_theta
        self.tol = tol
        self.cutoff = cutoff

    def fit(self, X: ScatteringData, y=None):
        if not isinstance(X, ScatteringData):
            raise ConfigError("fit expects a ScatteringData bundle")
        wg = work_grid_for(X, self.n_radii, self.n_theta)
        self.solver_ = RHSolver(X, wg, tol=self.tol, cutoff=self.cutoff)
        self.E_ = X.E.E
        return self

    def _points(self, X) -> np.ndarray:
        X = np.asarray(X)
        if np.iscomplexobj(X):
            return X.ravel()
        if X.ndim == 2 and X.shape[1] == 2:
            return X[:, 0] + 1j * X[:, 1]
        raise ConfigError("points must be complex or an (n, 2) array")

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "solver_"):
            raise NotFittedError("call fit with scattering data first")
        S = self.solver_
        out = np.empty(len(self._points(X)), complex)
        x0 = None
        for i, z in enumerate(self._points(X)):
            ws = S.solve(complex(z), x0=x0, derivatives=True)
            x0 = ws.grads.get("_x")
            out[i] = 2j * S.sqrtE * S.dz_mu_minus1(ws)
        self.last_imag_ = float(np.max(np.abs(out.imag), initial=0.0))
        return out.real

    def score(self, X, y) -> float:
        """Negative relative sup error of the prediction against true values ``y``."""
        y = np.asarray(y, float)
        err = np.max(np.abs(self.predict(X) - y))
        return -float(err / max(np.max(np.abs(y)), 1e-300))
