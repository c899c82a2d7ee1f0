"""Inverse beamforming with a denoiser prior (regularization by denoising).

Each transmit is solved separately: a sparse matrix maps a pixel image to RF
samples with a similar time of flight, and ADMM alternates a least-squares
image update (conjugate gradients) with a non-local-means-based prior step.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, cg

from .beamform import PixelGrid, pixel_delays
from .core import NumericalError, TransducerGeometry, TransmitScheme, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RedConfig:
    """Solver settings.

    Attributes:
        mu: prior weight (0 gives plain least squares).
        beta: ADMM penalty.
        eps: stop once the relative change of the image drops below this.
        h: NLM smoothing, relative to the image peak.
    """

    mu: float = 2000.0
    beta: float = 1000.0
    eps: float = 5e-4
    h: float = 0.8
    max_outer: int = 200
    patch: int = 5
    window: int = 11
    cg_tol: float = 1e-10
    cg_maxiter: int = 2000

    def __post_init__(self):
        if self.mu < 0:
            raise ValidationError("mu must be nonnegative")
        if not (self.beta > 0 and self.eps > 0 and self.h > 0):
            raise ValidationError("beta, eps and h must be positive")
        if self.patch % 2 == 0 or self.window % 2 == 0:
            raise ValidationError("NLM patch and window sizes must be odd")
        if self.max_outer < 1:
            raise ValidationError("max_outer must be at least 1")


@dataclass
class RedResult:
    image: np.ndarray
    objective: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def build_phi(grid: PixelGrid, geometry: TransducerGeometry, scheme: TransmitScheme, c: float,
              f_s: float | None = None, tx: int = 0, lens_delay: float = 0.0,
              peak_time: float | None = None) -> sparse.csr_matrix:
    """Sparse time-of-flight matrix for one transmit.

    Row ``ft * n_ch + ch`` and column ``iz * nx + ix`` hold
    ``|tau_ax - tau_pix| / t_max`` wherever the sample time `tau_ax` is within
    one sample period of the pixel's echo time; ``t_max = n_ft / f_s``.
    Entries with an exact match are stored as explicit zeros.
    """
    f_s = geometry.sampling_frequency if f_s is None else f_s
    n_ft, n_ch = scheme.n_fast_time, geometry.n_ch
    t_max = n_ft / f_s
    tau = pixel_delays(grid.positions(), geometry, scheme, c, tx, lens_delay, peak_time)  # (P, ch)
    pos = (tau - scheme.initial_time) * f_s
    base = np.floor(pos).astype(np.int64)
    rows, cols, vals = [], [], []
    pix = np.broadcast_to(np.arange(tau.shape[0])[:, None], tau.shape)
    chs = np.broadcast_to(np.arange(n_ch)[None, :], tau.shape)
    for k in (0, 1):
        ft = base + k
        du = np.abs(ft - pos)  # |tau_ax - tau_pix| in sample periods
        keep = (ft >= 0) & (ft < n_ft) & (du < 1.0)
        rows.append((ft * n_ch + chs)[keep])
        cols.append(pix[keep])
        vals.append(du[keep] / (f_s * t_max))
    coo = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n_ft * n_ch, grid.nx * grid.nz))
    return coo.tocsr()


def nlm_denoise(image, h: float, patch: int = 5, window: int = 11) -> np.ndarray:
    """Non-local means with weights ``exp(-d^2 / h^2)``.

    `d^2` is the mean squared difference between the patches around the two
    pixels. Borders are handled by reflection.
    """
    if not h > 0:
        raise ValidationError("h must be positive")
    img = np.asarray(image, dtype=float)
    pr, wr = patch // 2, window // 2
    pad = np.pad(img, pr + wr, mode="reflect")
    ny, nx = img.shape
    core = pad[wr: wr + ny + 2 * pr, wr: wr + nx + 2 * pr]
    num = np.zeros_like(img)
    den = np.zeros_like(img)
    for dy in range(-wr, wr + 1):
        for dx in range(-wr, wr + 1):
            shifted = pad[wr + dy: wr + dy + ny + 2 * pr, wr + dx: wr + dx + nx + 2 * pr]
            diff2 = (core - shifted) ** 2
            d2 = np.lib.stride_tricks.sliding_window_view(diff2, (patch, patch)).mean(axis=(-1, -2))
            w = np.exp(-d2 / h ** 2)
            num += w * shifted[pr: pr + ny, pr: pr + nx]
            den += w
    return num / den


def _denoise_scaled(x, shape, cfg: RedConfig):
    s = np.max(np.abs(x))
    if s == 0:
        return np.zeros_like(x)
    return s * nlm_denoise(x.reshape(shape) / s, cfg.h, cfg.patch, cfg.window).ravel()


def red_objective(x, y, phi, cfg: RedConfig, shape) -> float:
    r = y - phi @ x
    prior = 0.0 if cfg.mu == 0 else 0.5 * cfg.mu * float(x @ (x - _denoise_scaled(x, shape, cfg)))
    return float(r @ r) + prior


def red_solve(y, phi, config: RedConfig = RedConfig(), shape: tuple | None = None,
              track_objective: bool = True) -> RedResult:
    """ADMM for ``min ||y - phi x||^2 + mu/2 x^T (x - F(x))``.

    The prior step is one fixed-point iteration of
    ``mu (v - F(v)) + beta (v - x - u) = 0`` started at ``x + u``.

    Args:
        y: flattened RF of one transmit, ``(n_ft * n_ch,)``.
        phi: matrix from `build_phi`.
        config: solver settings.
        shape: image shape ``(nz, nx)`` for the denoiser; required when mu > 0.
        track_objective: record the objective after every outer iteration.

    Raises:
        NumericalError: conjugate gradients did not converge.
    """
    y = np.asarray(y, dtype=float).ravel()
    if phi.shape[0] != y.size:
        raise ValidationError("y and phi have inconsistent shapes")
    n = phi.shape[1]
    if config.mu > 0 and (shape is None or shape[0] * shape[1] != n):
        raise ValidationError("image shape required for the denoiser")
    log.info("red settings %s", asdict(config))
    cfg = config
    phit = phi.T.tocsr()
    A = LinearOperator((n, n), matvec=lambda v: 2 * (phit @ (phi @ v)) + cfg.beta * v, dtype=float)
    rhs0 = 2 * (phit @ y)
    x = np.zeros(n)
    v = np.zeros(n)
    u = np.zeros(n)
    res = RedResult(x)
    if track_objective:
        res.objective.append(red_objective(x, y, phi, cfg, shape))
    for it in range(1, cfg.max_outer + 1):
        x_prev = x
        x, info = cg(A, rhs0 + cfg.beta * (v - u), x0=x, rtol=cfg.cg_tol, atol=0.0, maxiter=cfg.cg_maxiter)
        if info != 0:
            raise NumericalError("conjugate gradients did not converge")
        if cfg.mu > 0:
            z = x + u
            v = (cfg.beta * z + cfg.mu * _denoise_scaled(z, shape, cfg)) / (cfg.mu + cfg.beta)
        else:
            v = x + u
        u = u + x - v
        if track_objective:
            res.objective.append(red_objective(x, y, phi, cfg, shape))
        change = np.linalg.norm(x - x_prev)
        ref = np.linalg.norm(x_prev)
        res.iterations = it
        if change == 0 or (ref > 0 and change / ref < cfg.eps):
            res.converged = True
            break
    res.image = x
    log.info("red finished after %d iterations (converged=%s)", res.iterations, res.converged)
    return res


def red_compound(solutions) -> np.ndarray:
    """Pixelwise mean of per-transmit images."""
    sols = [np.asarray(s, dtype=float) for s in solutions]
    if not sols:
        raise ValidationError("need at least one solution")
    return np.mean(sols, axis=0)
