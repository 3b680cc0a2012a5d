"""Snapshot generation and grid/image interpolation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import GridSpec, ProjectorContext, apply_pi, assemble_convection

log = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    pass


@dataclass
class SnapshotSet:
    """Columns of ``states`` are velocity states at ``times``."""

    states: np.ndarray
    times: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != self.times.size:
            raise ValueError("states must be n_v x T with one time per column")
        if self.times.size < 2:
            raise ValueError("need at least two snapshots")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.states.shape[0] != 2 * self.grid.n_nodes:
            raise ValueError("state length does not match grid")

    @property
    def n_snapshots(self):
        return self.times.size

    def subset(self, index):
        return SnapshotSet(self.states[:, index], self.times[index], self.grid)


@dataclass
class WakePreset:
    name: str
    grid: GridSpec
    reynolds: float
    dt: float
    t_discard: float
    t_window: float
    n_train: int
    n_eval: int
    image_shape: tuple
    probe: tuple  # (j, i) node of the wake probe


def _channel_grid(nx, ny, lx, ly, cylinders, u_max, fringe_width, fringe_strength):
    dx, dy = lx / nx, ly / ny
    X, Y = np.meshgrid(dx * np.arange(nx), dy * np.arange(ny))
    mask = np.zeros((ny, nx), dtype=bool)
    for xc, yc, diameter in cylinders:
        mask |= (X - xc) ** 2 + (Y - yc) ** 2 <= (0.5 * diameter) ** 2
    mask[0, :] = True  # channel wall (periodic wrap joins top and bottom)
    s = dy * np.arange(ny) / ly
    profile = u_max * 4.0 * s * (1.0 - s)
    return GridSpec(nx, ny, dx, dy, obstacle_mask=mask, inflow_profile=profile,
                    fringe_width=fringe_width, fringe_strength=fringe_strength)


def single_cylinder_preset(nx=64, ny=32):
    """Periodic vortex street behind one cylinder, Re = 40 on the cylinder diameter."""
    lx, ly, diameter = 16.0, 8.0, 1.5
    xc, yc = 4.0, 4.1
    grid = _channel_grid(nx, ny, lx, ly, [(xc, yc, diameter)], 1.5, nx // 8, 5.0)
    probe_x = xc + 3 * diameter
    probe = (int(round(yc / grid.dy)), int(round(probe_x / grid.dx)))
    return WakePreset("single", grid, 40.0, dt=0.025, t_discard=120.0, t_window=20.0,
                      n_train=400, n_eval=800, image_shape=(24, 32), probe=probe)


def double_cylinder_preset(nx=128, ny=48):
    """Two staggered cylinders, Re = 50; richer, less regular wake."""
    lx, ly, diameter = 32.0, 12.0, 1.5
    cyl = [(6.0, 4.6, diameter), (6.0, 7.4, diameter)]
    grid = _channel_grid(nx, ny, lx, ly, cyl, 1.5, nx // 8, 5.0)
    probe = (int(round(6.0 / grid.dy)), int(round((6.0 + 3 * diameter) / grid.dx)))
    return WakePreset("double", grid, 50.0, dt=0.025, t_discard=150.0, t_window=40.0,
                      n_train=800, n_eval=1600, image_shape=(24, 32), probe=probe)


class _ImplicitStepper:
    """Chorin projection step with implicit diffusion and explicit convection."""

    def __init__(self, ops, ctx):
        self.ops = ops
        self.ctx = ctx
        self._factors = {}

    def _factor(self, dt):
        if dt not in self._factors:
            mat = (sp.diags(self.ops.M) + dt * self.ops.A).tocsc()
            self._factors[dt] = spla.splu(mat)
        return self._factors[dt]

    def step(self, v, dt):
        ops = self.ops
        rhs = ops.M * v + dt * (ops.f - assemble_convection(ops, v) @ v)
        return apply_pi(self.ctx, self._factor(dt).solve(rhs))


def cfl_number(grid, v, dt):
    return float(np.max(np.abs(v))) * dt / min(grid.dx, grid.dy)


def simulate_wake(ops, t_end, dt, sample_every, t_start=0.0, v0=None, ctx=None,
                  cfl_limit=0.5, max_halvings=8):
    """Integrate from ``v0`` (zero by default) and sample every ``sample_every * dt``.

    Samples at times ``>= t_start`` are returned; earlier ones are the
    discarded startup phase.  The step is halved whenever the CFL number
    exceeds ``cfl_limit``; sample times stay on the original grid.
    """
    if not dt > 0 or not t_end > dt:
        raise ValueError("need dt > 0 and t_end > dt")
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    grid = ops.grid
    ctx = ctx or ProjectorContext(ops)
    stepper = _ImplicitStepper(ops, ctx)
    v = np.zeros(ops.n_v) if v0 is None else np.array(v0, dtype=float)

    n_samples = int(np.floor(t_end / (sample_every * dt) + 1e-9))
    halvings = 0
    states, times = [], []
    if t_start <= 0.0:
        states.append(v.copy())
        times.append(0.0)
    for k in range(1, n_samples + 1):
        remaining = sample_every << halvings
        while remaining:
            h = dt / (1 << halvings)
            if cfl_number(grid, v, h) > cfl_limit:
                if halvings == max_halvings:
                    raise IntegrationError(
                        f"CFL {cfl_number(grid, v, h):.3f} > {cfl_limit} at dt floor {h:.3e}")
                halvings += 1
                remaining *= 2
                log.info("CFL limit hit at t=%.4f, dt -> %.3e", times[-1] if times else 0.0,
                         dt / (1 << halvings))
                continue
            v = stepper.step(v, h)
            remaining -= 1
        t = k * sample_every * dt
        if not np.all(np.isfinite(v)):
            raise IntegrationError(f"non-finite state at t={t:.4f}")
        if t >= t_start - 1e-12:
            states.append(v.copy())
            times.append(t)
    return SnapshotSet(np.column_stack(states), np.array(times), grid)


def generate_preset(preset, ops, n_snapshots=None):
    """Run ``preset`` and return ``n_snapshots`` equidistant states on the window."""
    n_snapshots = n_snapshots or preset.n_eval
    dt_sample = preset.t_window / n_snapshots
    sample_every = max(1, int(round(dt_sample / preset.dt)))
    dt = dt_sample / sample_every
    t_end = preset.t_discard + preset.t_window
    data = simulate_wake(ops, t_end, dt, sample_every,
                         t_start=preset.t_discard + dt_sample - 1e-9)
    return data.subset(np.arange(data.n_snapshots - n_snapshots, data.n_snapshots))


def probe_trace(data, probe):
    """y-velocity at the probe node for every snapshot."""
    grid = data.grid
    j, i = probe
    return data.states[grid.n_nodes + j * grid.nx + i]


def dominant_peak_ratio(signal):
    """Ratio of the largest spectral peak to the second-largest local maximum (Hann window)."""
    x = np.asarray(signal, dtype=float)
    x = (x - x.mean()) * np.hanning(x.size)
    spec = np.abs(np.fft.rfft(x))[1:]
    peaks = [k for k in range(1, spec.size - 1) if spec[k] >= spec[k - 1] and spec[k] > spec[k + 1]]
    if len(peaks) < 2:
        return np.inf
    heights = np.sort(spec[peaks])[::-1]
    return float(heights[0] / heights[1])


def synthetic_wake(grid, modes, t_samples, seed=0):
    """Exactly divergence-free traveling waves built from a stream function.

    ``psi = sum_j a_j sin(kappa_j x - omega_j t) phi_j(y)``; velocities are
    ``(Ax Dy psi, -Ay Dx psi)`` with forward averages/differences, which the
    cell divergence annihilates identically.
    """
    if modes < 1:
        raise ValueError("modes must be >= 1")
    if t_samples < 2:
        raise ValueError("t_samples must be >= 2")
    rng = np.random.default_rng(seed)
    X, Y = grid.node_coordinates()
    lx, ly = grid.nx * grid.dx, grid.ny * grid.dy
    amp = rng.uniform(0.5, 1.0, modes) / np.arange(1, modes + 1)
    omega = 2 * np.pi * (np.arange(1, modes + 1) + rng.uniform(0.0, 0.3, modes))
    times = np.linspace(0.0, 1.0, t_samples, endpoint=False)

    def fwd_avg(a, axis):
        return 0.5 * (a + np.roll(a, -1, axis=axis))

    def fwd_diff(a, axis, h):
        return (np.roll(a, -1, axis=axis) - a) / h

    cols = []
    for t in times:
        psi = np.zeros((grid.ny, grid.nx))
        for m in range(modes):
            kappa = 2 * np.pi * (m + 1) / lx
            phi = np.sin(np.pi * (m + 1) * (Y - grid.origin[1]) / ly)
            psi += amp[m] * np.sin(kappa * (X - grid.origin[0]) - omega[m] * t) * phi
        u = fwd_avg(fwd_diff(psi, 0, grid.dy), 1)
        w = -fwd_avg(fwd_diff(psi, 1, grid.dx), 0)
        cols.append(np.concatenate([u.ravel(), w.ravel()]))
    return SnapshotSet(np.column_stack(cols), times, grid)


@dataclass
class InterpPair:
    """``I_c`` (state -> image) and ``I_p`` (image -> state), both bilinear."""

    I_c: sp.csr_matrix
    I_p: sp.csr_matrix
    h: int
    w: int

    @property
    def image_shape(self):
        return (2, self.h, self.w)


def _bilinear_rows(coords_y, coords_x, ny, nx):
    """Bilinear weights of points (fractional indices) on an ``ny x nx`` lattice."""
    j0 = np.clip(np.floor(coords_y).astype(int), 0, ny - 2)
    i0 = np.clip(np.floor(coords_x).astype(int), 0, nx - 2)
    ty = coords_y - j0
    tx = coords_x - i0
    idx = [j0 * nx + i0, j0 * nx + i0 + 1, (j0 + 1) * nx + i0, (j0 + 1) * nx + i0 + 1]
    wts = [(1 - ty) * (1 - tx), (1 - ty) * tx, ty * (1 - tx), ty * tx]
    return np.stack(idx, axis=1), np.stack(wts, axis=1)


def _assemble(idx, wts, zero_rows, n_cols):
    n_rows = idx.shape[0]
    wts = np.where(zero_rows[:, None], 0.0, wts)
    rows = np.repeat(np.arange(n_rows), idx.shape[1])
    mat = sp.csr_matrix((wts.ravel(), (rows, idx.ravel())), shape=(n_rows, n_cols))
    mat.sum_duplicates()
    mat.eliminate_zeros()
    mat.sort_indices()
    return mat


def build_interp(grid, h, w):
    """Bilinear resampling between the node grid and an ``h x w`` image on the same box."""
    if h < 2 or w < 2:
        raise ValueError("image needs h, w >= 2")
    n = grid.n_nodes
    mask = grid.obstacle_mask.ravel()

    # image pixel (a, b) sits at fractional node index (a (ny-1)/(h-1), b (nx-1)/(w-1))
    a, b = np.divmod(np.arange(h * w), w)
    idx, wts = _bilinear_rows(a * (grid.ny - 1) / (h - 1), b * (grid.nx - 1) / (w - 1),
                              grid.ny, grid.nx)
    wts = np.where(mask[idx], 0.0, wts)
    total = wts.sum(axis=1)
    empty = total <= 1e-14
    wts = wts / np.where(empty, 1.0, total)[:, None]
    Ic = _assemble(idx, wts, empty, n)

    j, i = np.divmod(np.arange(n), grid.nx)
    idx_p, wts_p = _bilinear_rows(j * (h - 1) / (grid.ny - 1), i * (w - 1) / (grid.nx - 1), h, w)
    Ip = _assemble(idx_p, wts_p, mask, h * w)

    return InterpPair(sp.block_diag([Ic, Ic], format="csr"),
                      sp.block_diag([Ip, Ip], format="csr"), h, w)


def to_image(pair, v):
    v = np.asarray(v, dtype=float)
    if v.shape[0] != pair.I_c.shape[1]:
        raise ValueError(f"state length {v.shape[0]} != {pair.I_c.shape[1]}")
    img = pair.I_c @ v
    return img.reshape((2, pair.h, pair.w) + v.shape[1:])


def from_image(pair, img):
    img = np.asarray(img, dtype=float)
    if img.shape[:3] != (2, pair.h, pair.w):
        raise ValueError(f"image shape {img.shape[:3]} != {(2, pair.h, pair.w)}")
    return pair.I_p @ img.reshape((2 * pair.h * pair.w,) + img.shape[3:])


def images_from_states(pair, states):
    """Batch of CNN inputs ``(T, 2, h, w)`` from an ``n_v x T`` snapshot matrix."""
    imgs = pair.I_c @ states
    return np.ascontiguousarray(imgs.T.reshape(-1, 2, pair.h, pair.w))
