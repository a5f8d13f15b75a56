"""Concrete targets: Gaussian oracle, Bayesian logistic regression,
hyperboloid posterior and a multimodal toy density."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import expit, log_expit

from .core import MiniBatch, NoConvergence, Target, ThinningBound


class GaussianTarget(Target):
    """``N(mean, diag(var))`` with optional injected gradient noise.

    With ``noise_sd > 0`` every gradient query returns ``grad U + n`` where
    ``n`` is an isotropic ``N(0, noise_sd^2)`` vector conditioned on
    ``||n|| <= noise_radius``.  The truncation keeps the noise zero mean and
    gives the exact thinning bound ``[a + b t]_+ + noise_radius``.
    """

    def __init__(self, mean, var, noise_sd: float = 0.0, noise_radius: Optional[float] = None):
        self.mean = np.asarray(mean, dtype=float)
        self.var = np.asarray(var, dtype=float) * np.ones_like(self.mean)
        if np.any(self.var <= 0):
            raise ValueError("variances must be positive")
        self.prec = 1.0 / self.var
        self.dim = len(self.mean)
        self.n_data = 1
        self.noise_sd = float(noise_sd)
        if noise_radius is None:
            noise_radius = 5.0 * self.noise_sd * math.sqrt(self.dim)
        self.noise_radius = float(noise_radius) if self.noise_sd > 0 else 0.0

    def log_density(self, w):
        z = w - self.mean
        return float(-0.5 * z @ (self.prec * z))

    def prior_gradient(self, w):
        return self.prec * (w - self.mean)

    def point_gradients(self, w, idx):
        return np.zeros((len(idx), self.dim))

    def full_gradient(self, w):
        return self.prec * (w - self.mean)

    def draw_noise(self, rng) -> np.ndarray:
        if self.noise_sd == 0:
            return np.zeros(self.dim)
        while True:
            n = rng.normal(0.0, self.noise_sd, self.dim)
            if n @ n <= self.noise_radius**2:
                return n

    def draw_batch(self, n, rng):
        return MiniBatch(noise=self.draw_noise(rng), size=1)

    def directional_on_batch(self, w, v, batch, precond=None):
        u = v if precond is None else precond * v
        g = self.full_gradient(w)
        if batch.noise is not None:
            g = g + batch.noise
        return float(u @ g), self.noise_sd**2 * float(u @ u), batch

    def minibatch_gradient(self, batch, w):
        g = self.full_gradient(w)
        return g if batch.noise is None else g + batch.noise

    def bounce_coefficients(self, w, v):
        """``v . grad U(w + v t) = a + b t`` exactly."""
        return float(v @ (self.prec * (w - self.mean))), float(v @ (self.prec * v))

    def thinning_bound(self, w, v):
        a, b = self.bounce_coefficients(w, v)
        return ThinningBound(a, b, self.noise_radius * math.sqrt(float(v @ v)))

    def marginal_cdf(self, x, coord: int):
        from scipy.stats import norm

        return norm.cdf(x, loc=self.mean[coord], scale=math.sqrt(self.var[coord]))


class LogisticRegressionTarget(Target):
    """Bayesian logistic regression, ``y_i ~ Bern(sigmoid(w . x_i))``.

    The prior is ``N(0, prior_var I)``; ``prior_var = inf`` gives a flat prior.
    """

    def __init__(self, X, y, w_true=None, prior_var: float = 1e4):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != len(self.y):
            raise ValueError("X must be N x d with one label per row")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("labels must be 0 or 1")
        self.n_data, self.dim = self.X.shape
        self.w_true = None if w_true is None else np.asarray(w_true, dtype=float)
        self.prior_var = float(prior_var)
        self._prior_prec = 0.0 if math.isinf(self.prior_var) else 1.0 / self.prior_var
        self.max_abs_x = float(np.abs(self.X).max()) if self.X.size else 0.0

    def nll(self, w) -> float:
        """Negative log likelihood of the full data set (prior excluded)."""
        z = self.X @ w
        return float(-(self.y * log_expit(z) + (1 - self.y) * log_expit(-z)).sum())

    def nll_batch(self, W) -> np.ndarray:
        """NLL at each row of ``W``."""
        Z = np.atleast_2d(W) @ self.X.T
        return -(self.y * log_expit(Z) + (1 - self.y) * log_expit(-Z)).sum(axis=1)

    def log_density(self, w):
        return -self.nll(w) - 0.5 * self._prior_prec * float(w @ w)

    def prior_gradient(self, w):
        return self._prior_prec * w

    def point_gradients(self, w, idx):
        X = self.X[idx]
        r = expit(X @ w) - self.y[idx]
        return X * r[:, None]

    def point_directional(self, w, u, idx):
        X = self.X[idx]
        return (X @ u) * (expit(X @ w) - self.y[idx])

    def full_gradient(self, w):
        return self.X.T @ (expit(self.X @ w) - self.y) + self._prior_prec * w

    def hessian(self, w):
        p = expit(self.X @ w)
        H = (self.X * (p * (1 - p))[:, None]).T @ self.X
        return H + self._prior_prec * np.eye(self.dim)

    def lipschitz_bound(self) -> float:
        """``sqrt(d) N max|x_ij|``: dominates ``|v . grad U~|`` of the likelihood for any batch."""
        return math.sqrt(self.dim) * self.n_data * self.max_abs_x

    def thinning_bound(self, w, v):
        # prior part of v . grad U along w + v t is affine in t
        p = self._prior_prec
        return ThinningBound(p * float(v @ w), p * float(v @ v), self.lipschitz_bound())

    # -- persistence ---------------------------------------------------------

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"x_{j}" for j in range(self.dim)] + ["y"])
            for xi, yi in zip(self.X, self.y):
                wr.writerow([repr(float(v)) for v in xi] + [int(yi)])

    @classmethod
    def from_csv(cls, path, prior_var: float = 1e4) -> "LogisticRegressionTarget":
        with Path(path).open(newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if header[-1] != "y" or any(h != f"x_{j}" for j, h in enumerate(header[:-1])):
                raise ValueError(f"unexpected header {header}")
            rows = [r for r in rd if r]
        data = np.array(rows, dtype=float)
        return cls(data[:, :-1], data[:, -1], prior_var=prior_var)


def generate_logistic_data(d: int, N: int, rng: np.random.Generator, prior_var: float = 1e4,
                           wide_var: float = 6.0, w_true=None) -> LogisticRegressionTarget:
    """Synthetic data: ``w_true ~ U[-5, 5]^d``, ``x ~ N(0, diag(6, 1, ..., 1))``.

    Component 0 carries the variance ``wide_var``.
    """
    if d < 1 or N < 1:
        raise ValueError("need d >= 1 and N >= 1")
    if w_true is None:
        w_true = rng.uniform(-5.0, 5.0, d)
    sd = np.ones(d)
    sd[0] = math.sqrt(wide_var)
    X = rng.standard_normal((N, d)) * sd
    y = (rng.random(N) < expit(X @ w_true)).astype(float)
    return LogisticRegressionTarget(X, y, w_true=w_true, prior_var=prior_var)


def laplace_reference(target: LogisticRegressionTarget, tol: float = 1e-8, max_iter: int = 10_000,
                      w0=None):
    """MAP and exact Hessian of ``U`` at the MAP.

    Gradient descent with backtracking line search; the final iterations
    are Newton steps, which converge quadratically on this convex
    objective.  Returns ``(w_hat, H)``.
    """
    w = np.zeros(target.dim) if w0 is None else np.array(w0, dtype=float)

    def U(w):
        return target.potential(w)

    f = U(w)
    g = target.full_gradient(w)
    step = 1.0
    for it in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol:
            return w, target.hessian(w)
        # Newton direction when the Hessian is well conditioned, else steepest descent
        try:
            direction = -np.linalg.solve(target.hessian(w), g)
            if direction @ g >= 0:
                raise np.linalg.LinAlgError
            step = 1.0
        except np.linalg.LinAlgError:
            direction = -g
            step = min(step * 2.0, 1.0)
        while True:
            w_new = w + step * direction
            f_new = U(w_new)
            if f_new <= f + 1e-4 * step * float(direction @ g) or step < 1e-16:
                break
            step *= 0.5
        if step < 1e-16:
            break
        w, f = w_new, f_new
        g = target.full_gradient(w)
    if float(np.linalg.norm(g)) < 1e-6:
        return w, target.hessian(w)
    raise NoConvergence(f"MAP search stopped with |grad| = {np.linalg.norm(g):.3g}")


class HyperboloidTarget(Target):
    """``y_i ~ N(w0 w1, sigma^2)`` with a ridge ``(c/2)||w||^2``; a curved, non-log-concave 2-D posterior."""

    def __init__(self, y, sigma: float = 1.0, c: float = 1e-4):
        self.y = np.asarray(y, dtype=float)
        self.sigma = float(sigma)
        self.c = float(c)
        self.dim = 2
        self.n_data = len(self.y)

    @classmethod
    def generate(cls, N: int, rng, w_star=(0.0, 0.0), sigma: float = 1.0, c: float = 1e-4):
        y = rng.normal(w_star[0] * w_star[1], sigma, N)
        return cls(y, sigma, c)

    def point_log_lik(self, w, idx=None):
        y = self.y if idx is None else self.y[idx]
        return -((y - w[0] * w[1]) ** 2) / (2 * self.sigma**2)

    def log_likelihood(self, w) -> float:
        return float(self.point_log_lik(w).sum())

    def log_density(self, w):
        return self.log_likelihood(w) - 0.5 * self.c * float(w @ w)

    def prior_gradient(self, w):
        return self.c * np.asarray(w, dtype=float)

    def point_gradients(self, w, idx):
        r = (self.y[idx] - w[0] * w[1]) / self.sigma**2
        return -np.column_stack([r * w[1], r * w[0]])


class MultimodalTarget(Target):
    """Product over data of per-coordinate two-component mixtures with modes near +-1.

    ``log p(w) = sum_i sum_k log[exp(-(w_k - 1 - mu_{i,k})^2 / 2 s^2)
    + exp(-(w_k + 1 - mu_{i,D+k})^2 / 2 s^2)]``.
    """

    def __init__(self, offsets, sigma_l: float = 0.25):
        self.offsets = np.asarray(offsets, dtype=float)
        if self.offsets.ndim != 2 or self.offsets.shape[1] % 2:
            raise ValueError("offsets must be N x 2D")
        self.n_data = self.offsets.shape[0]
        self.dim = self.offsets.shape[1] // 2
        self.sigma_l = float(sigma_l)

    @classmethod
    def generate(cls, N: int, D: int, rng, sigma_l: float = 0.25, sigma_mu: float = 0.01):
        return cls(rng.normal(0.0, sigma_mu, (N, 2 * D)), sigma_l)

    def _components(self, w, idx=None):
        mu = self.offsets if idx is None else self.offsets[idx]
        D = self.dim
        s2 = self.sigma_l**2
        za = np.asarray(w)[None, :] - 1.0 - mu[:, :D]
        zb = np.asarray(w)[None, :] + 1.0 - mu[:, D:]
        return za, zb, s2

    def point_log_terms(self, w, idx=None) -> np.ndarray:
        """Per-point, per-coordinate ``L_i(w_k)``, shape ``(n, D)``."""
        za, zb, s2 = self._components(w, idx)
        return np.logaddexp(-za * za / (2 * s2), -zb * zb / (2 * s2))

    def log_density(self, w):
        return float(self.point_log_terms(w).sum())

    def prior_gradient(self, w):
        return np.zeros(self.dim)

    def point_gradients(self, w, idx):
        za, zb, s2 = self._components(w, idx)
        la, lb = -za * za / (2 * s2), -zb * zb / (2 * s2)
        # responsibility of the +1 component, computed stably
        ra = np.exp(la - np.logaddexp(la, lb))
        dlog = -(ra * za + (1.0 - ra) * zb) / s2
        return -dlog

    def coordinate_log_density(self, x, coord: int) -> np.ndarray:
        """Exact unnormalised log marginal of one coordinate on a grid ``x``.

        The target factorises over coordinates, so the marginal of ``w_k``
        is ``exp(sum_i L_i(w_k))``.
        """
        x = np.asarray(x, dtype=float).ravel()
        D = self.dim
        s2 = self.sigma_l**2
        mu_a = self.offsets[None, :, coord]
        mu_b = self.offsets[None, :, D + coord]
        out = np.empty(len(x))
        step = max(1, 2_000_000 // max(self.n_data, 1))
        for lo in range(0, len(x), step):
            xc = x[lo:lo + step, None]
            za = xc - 1.0 - mu_a
            zb = xc + 1.0 - mu_b
            out[lo:lo + step] = np.logaddexp(-za * za / (2 * s2), -zb * zb / (2 * s2)).sum(axis=1)
        return out

    def mode_mass(self, coord: int, half_width: float = 3.0, coarse: int = 12_001,
                  fine: int = 20_001, cutoff: float = 60.0) -> float:
        """Probability that ``w_coord > 0``, by quadrature of the exact marginal.

        A coarse grid locates where the log density is within ``cutoff`` of
        its maximum; each such region is then integrated on its own fine
        grid, split at zero.
        """
        xc = np.linspace(-half_width, half_width, coarse)
        lc = self.coordinate_log_density(xc, coord)
        keep = lc > lc.max() - cutoff
        h = xc[1] - xc[0]
        # contiguous runs of retained grid points, padded by one coarse cell
        edges = np.flatnonzero(np.diff(np.concatenate(([0], keep.astype(int), [0]))))
        pieces = []
        for lo, hi in zip(edges[::2], edges[1::2]):
            a, b = xc[lo] - h, xc[hi - 1] + h
            for a2, b2 in ((a, min(b, 0.0)), (max(a, 0.0), b)):
                if b2 > a2:
                    pieces.append((a2, b2))
        ref = lc.max()
        pos = neg = 0.0
        for a, b in pieces:
            x = np.linspace(a, b, fine)
            mass = trapezoid(np.exp(self.coordinate_log_density(x, coord) - ref), x)
            if a >= 0.0:
                pos += mass
            else:
                neg += mass
        return float(pos / (pos + neg))
