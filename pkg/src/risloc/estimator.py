"""Near-field ML position and velocity estimation.

The estimator works on the simplified signal model y = alpha * h(p, v) + n,
where h_ell = w_ell^T a_ell(p, v) combines the known codebook/BS phases
(w) with the hypothesized RIS-UE phase response (a). The complex gain
alpha is eliminated by projecting the snapshot onto the orthogonal
complement of h, leaving the projection residual as the cost surface.

The pipeline has three steps: a 3D near-field grid search over azimuth,
elevation and range (optionally refined on a finer grid), an alternating
linearized least-squares refinement of position and velocity, and a final
6D gradient descent.

Grid-search steering matrices are cached per (grid, layout) pair, and the
batch API scores many snapshots against one cached matrix in a single
pass; this is what makes the Monte Carlo sweeps tractable.
"""

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from hashlib import sha1

import numpy as np

from .errors import OriginError, SingularSystemError, ZeroModelError
from .geometry import SphericalCoord, spherical_to_cartesian

# Grids larger than this (candidates x cells) are scored in single
# precision; small toy grids stay in double so brute-force comparisons
# are exact.
_SINGLE_PRECISION_THRESHOLD = 4_000_000

_CHUNK_ROWS = 16384

_CACHE_BYTES_LIMIT = 2_400_000_000


@dataclass(frozen=True)
class SteeringModel:
    """Precomputed quantities of the simplified signal model.

    ``w[m, ell] = gamma[m, ell] * exp(-j 2 pi ||p_BS - q_m|| / lambda)``
    absorbs everything known; the steering vector adds the hypothesized
    RIS-UE phases on top.
    """

    cell_centers: np.ndarray   # (M, 3) m
    w: np.ndarray              # (M, L) complex, unit modulus
    wavelength: float
    sample_time: float
    num_samples: int


def build_steering_model(layout, codebook, scenario):
    """Assemble the steering model from layout, codebook and scenario."""
    q = layout.cell_centers
    d_bs = np.linalg.norm(scenario.bs_position[None, :] - q, axis=1)
    phase = np.exp(-2j * np.pi * d_bs / scenario.wavelength)
    return SteeringModel(cell_centers=q,
                         w=codebook.gamma * phase[:, None],
                         wavelength=scenario.wavelength,
                         sample_time=scenario.sample_time,
                         num_samples=scenario.num_samples)


@dataclass(frozen=True)
class GridSpec:
    """Inclusive (start, stop, step) axes of the 3D search grid.

    Azimuth and elevation are in degrees, range in meters.
    """

    azimuth_deg: tuple = (-70.0, 70.0, 1.0)
    elevation_deg: tuple = (-70.0, 70.0, 1.0)
    range_m: tuple = (0.1, 3.9, 0.2)

    def __post_init__(self):
        for name, ax in (("azimuth", self.azimuth_deg),
                         ("elevation", self.elevation_deg),
                         ("range", self.range_m)):
            lo, hi, step = ax
            if not step > 0:
                raise ValueError(f"{name} step must be positive")
            if hi < lo:
                raise ValueError(f"{name} axis is empty")
        if self.range_m[0] <= 0:
            raise ValueError("range axis must be strictly positive")

    def axis_values(self):
        """The three axis arrays (azimuth deg, elevation deg, range m)."""
        return tuple(np.arange(lo, hi + 0.5 * step, step)
                     for lo, hi, step in (self.azimuth_deg,
                                          self.elevation_deg,
                                          self.range_m))

    @property
    def num_candidates(self):
        az, el, r = self.axis_values()
        return len(az) * len(el) * len(r)


def default_coarse_grid():
    """The reference coarse search grid (141 x 141 x 20 candidates)."""
    return GridSpec()


@dataclass
class StageRecord:
    stage: str
    p: np.ndarray
    v: np.ndarray
    cost: float
    iterations: int


@dataclass
class EstimateTrace:
    """Per-stage estimates of one pipeline run."""

    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def final(self):
        rec = self.records[-1]
        return rec.p, rec.v

    def record(self, stage, p, v, cost, iterations=0):
        self.records.append(StageRecord(stage=stage,
                                        p=np.asarray(p, dtype=float),
                                        v=np.asarray(v, dtype=float),
                                        cost=float(cost),
                                        iterations=int(iterations)))

    def stage_named(self, stage):
        for rec in self.records:
            if rec.stage == stage:
                return rec
        raise KeyError(stage)


# ---------------------------------------------------------------------------
# Core model evaluation


def steering_vector(model, p, v):
    """Model response h(p, v) of length L.

    The common range ||p|| is subtracted inside every per-cell exponent so
    the entries stay numerically tame in the near field.
    """
    h, _, _, _, _, _ = _steering_parts(model, p, v)
    return h


def _steering_parts(model, p, v):
    """Steering vector plus the geometric intermediates reused by the
    refinement stages: (h, wa, u, uhat, ell_t, r)."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    r = float(np.linalg.norm(p))
    if r == 0.0:
        raise OriginError("steering vector undefined at the array center")
    q = model.cell_centers
    ell_t = np.arange(model.num_samples) * model.sample_time
    pos = p[None, :] + ell_t[:, None] * v[None, :]
    diff = pos[:, None, :] - q[None, :, :]          # (L, M, 3)
    dist = np.linalg.norm(diff, axis=2)             # (L, M)
    a = np.exp(-2j * np.pi / model.wavelength * (dist - r))
    wa = model.w.T * a                              # (L, M)
    h = wa.sum(axis=1)
    u = diff / dist[:, :, None]
    return h, wa, u, p / r, ell_t, r


def ml_alpha(y, h):
    """Conditional ML estimate of the complex gain: h^H y / ||h||^2."""
    nh2 = np.vdot(h, h).real
    if nh2 == 0.0:
        raise ZeroModelError("model vector has zero norm")
    return np.vdot(h, y) / nh2


def projection_cost(y, h):
    """Energy of y orthogonal to h: ||y||^2 - |h^H y|^2 / ||h||^2."""
    nh2 = np.vdot(h, h).real
    if nh2 == 0.0:
        raise ZeroModelError("model vector has zero norm")
    cost = np.vdot(y, y).real - abs(np.vdot(h, y)) ** 2 / nh2
    return max(float(cost), 0.0)


# ---------------------------------------------------------------------------
# Grid search


class _GridData:
    """Candidate coordinates plus chunked steering-entry matrix."""

    def __init__(self, coords, positions, chunks, nbytes):
        self.coords = coords          # (N, 3) az rad, el rad, r m
        self.positions = positions    # (N, 3) m
        self.chunks = chunks          # list of (n_c, M) complex arrays
        self.nbytes = nbytes


_GRID_CACHE = OrderedDict()
_GRID_CACHE_LOCK = threading.Lock()


def _layout_key(q):
    return (q.shape[0], sha1(np.ascontiguousarray(q).tobytes()).hexdigest())


def clear_grid_cache():
    with _GRID_CACHE_LOCK:
        _GRID_CACHE.clear()


def _cache_put(key, data):
    _GRID_CACHE[key] = data
    total = sum(d.nbytes for d in _GRID_CACHE.values())
    while total > _CACHE_BYTES_LIMIT and len(_GRID_CACHE) > 1:
        _, evicted = _GRID_CACHE.popitem(last=False)
        total -= evicted.nbytes


def _grid_coords(grid):
    """Flattened candidate coordinates in row-major (az, el, r) order."""
    az_deg, el_deg, r_m = grid.axis_values()
    az = np.deg2rad(az_deg)
    el = np.deg2rad(el_deg)
    aa, ee, rr = np.meshgrid(az, el, r_m, indexing="ij")
    return np.column_stack([aa.ravel(), ee.ravel(), rr.ravel()])


def _coords_to_positions(coords):
    ce = np.cos(coords[:, 1])
    return coords[:, 2:3] * np.column_stack(
        [ce * np.cos(coords[:, 0]), ce * np.sin(coords[:, 0]),
         np.sin(coords[:, 1])])


def _phase_chunks(positions, ranges, q, wavelength, single):
    """Chunked matrices of exp(-j k (||p - q_m|| - ||p||)).

    ``d - r`` is evaluated as ``(||q||^2 - 2 p.q) / (d + r)`` to avoid
    cancellation, which also lets the distances come out of one GEMM.
    """
    k0 = 2.0 * np.pi / wavelength
    fdt = np.float32 if single else np.float64
    cdt = np.complex64 if single else np.complex128
    qf = q.astype(fdt)
    nq2 = (qf ** 2).sum(axis=1)
    pf = positions.astype(fdt)
    rf = ranges.astype(fdt)
    chunks = []
    for lo in range(0, len(pf), _CHUNK_ROWS):
        hi = min(lo + _CHUNK_ROWS, len(pf))
        delta = nq2[None, :] - 2.0 * (pf[lo:hi] @ qf.T)   # d^2 - r^2
        r_blk = rf[lo:hi, None]
        dist = np.sqrt(np.maximum(r_blk ** 2 + delta, 0.0))
        phase = (-k0 * delta / (dist + r_blk)).astype(fdt)
        blk = np.empty(phase.shape, dtype=cdt)
        np.cos(phase, out=blk.real)
        np.sin(phase, out=blk.imag)
        chunks.append(blk)
    return chunks


def _get_nf_grid_data(grid, model, cache=True):
    key = ("nf", grid, _layout_key(model.cell_centers),
           round(model.wavelength, 15))
    with _GRID_CACHE_LOCK:
        if cache and key in _GRID_CACHE:
            _GRID_CACHE.move_to_end(key)
            return _GRID_CACHE[key]
        coords = _grid_coords(grid)
        positions = _coords_to_positions(coords)
        single = coords.shape[0] * model.cell_centers.shape[0] \
            > _SINGLE_PRECISION_THRESHOLD
        chunks = _phase_chunks(positions, coords[:, 2],
                               model.cell_centers, model.wavelength, single)
        data = _GridData(coords, positions, chunks,
                         sum(c.nbytes for c in chunks))
        if cache:
            _cache_put(key, data)
        return data


def _get_ff_grid_data(grid, model):
    """Far-field steering entries exp(j k u(az, el)^T q_m) on the
    (azimuth, elevation) grid; range independent."""
    key = ("ff", grid.azimuth_deg, grid.elevation_deg,
           _layout_key(model.cell_centers), round(model.wavelength, 15))
    with _GRID_CACHE_LOCK:
        if key in _GRID_CACHE:
            _GRID_CACHE.move_to_end(key)
            return _GRID_CACHE[key]
        az_deg, el_deg, _ = grid.axis_values()
        az = np.deg2rad(az_deg)
        el = np.deg2rad(el_deg)
        aa, ee = np.meshgrid(az, el, indexing="ij")
        coords = np.column_stack([aa.ravel(), ee.ravel(),
                                  np.ones(aa.size)])
        dirs = _coords_to_positions(coords)          # unit vectors
        k0 = 2.0 * np.pi / model.wavelength
        single = coords.shape[0] * model.cell_centers.shape[0] \
            > _SINGLE_PRECISION_THRESHOLD
        fdt = np.float32 if single else np.float64
        cdt = np.complex64 if single else np.complex128
        phase = (k0 * (dirs @ model.cell_centers.T)).astype(fdt)
        chunks = []
        for lo in range(0, len(phase), _CHUNK_ROWS):
            blk = np.empty(phase[lo:lo + _CHUNK_ROWS].shape, dtype=cdt)
            np.cos(phase[lo:lo + _CHUNK_ROWS], out=blk.real)
            np.sin(phase[lo:lo + _CHUNK_ROWS], out=blk.imag)
            chunks.append(blk)
        data = _GridData(coords, dirs, chunks,
                         sum(c.nbytes for c in chunks))
        _cache_put(key, data)
        return data


def _search_grid_data(data, entries):
    """Score all (model, snapshots) entries against a cached grid.

    Parameters
    ----------
    data : _GridData
    entries : list of (SteeringModel, list of ndarray)
        Models must share layout geometry; each carries its own codebook.

    Returns
    -------
    list of list of int
        Winning global candidate index per snapshot, grouped per entry.
        Ties break to the lowest linear index.
    """
    cdt = data.chunks[0].dtype
    num_samples = entries[0][0].num_samples
    w_all = np.concatenate([m.w for m, _ in entries], axis=1).astype(cdt)
    y_conj = [[np.conj(y).astype(cdt) for y in ys] for _, ys in entries]
    best_val = [[-np.inf] * len(ys) for _, ys in entries]
    best_idx = [[0] * len(ys) for _, ys in entries]
    offset = 0
    for chunk in data.chunks:
        h_all = chunk @ w_all
        h3 = h_all.reshape(len(chunk), len(entries), num_samples)
        den = (h3.real ** 2 + h3.imag ** 2).sum(axis=2)
        np.maximum(den, np.finfo(den.dtype).tiny, out=den)
        for t in range(len(entries)):
            for j, yc in enumerate(y_conj[t]):
                num = h3[:, t, :] @ yc
                val = (num.real ** 2 + num.imag ** 2) / den[:, t]
                i = int(np.argmax(val))
                if val[i] > best_val[t][j]:
                    best_val[t][j] = val[i]
                    best_idx[t][j] = offset + i
        offset += len(chunk)
    return best_idx


def _finalize_candidates(data, entries, best_idx):
    """Exact double-precision cost at each winning candidate."""
    out = []
    for (model, ys), idxs in zip(entries, best_idx):
        row = []
        for y, i in zip(ys, idxs):
            az, el, r = data.coords[i]
            coord = SphericalCoord(azimuth=float(az), elevation=float(el),
                                   range_m=float(r))
            h = steering_vector(model, data.positions[i], np.zeros(3))
            row.append((coord, projection_cost(y, h)))
        out.append(row)
    return out


def nf_grid_search_batch(entries, grid, cache=True):
    """Near-field grid search for many snapshots sharing one geometry.

    ``entries`` is a list of ``(model, [y, ...])`` pairs; all models must
    have identical cell positions and wavelength. Returns, per entry, a
    list of ``(SphericalCoord, cost)`` results (v assumed zero).
    """
    ref = entries[0][0]
    for model, _ in entries[1:]:
        if model.cell_centers is not ref.cell_centers and \
                not np.array_equal(model.cell_centers, ref.cell_centers):
            raise ValueError("batched models must share cell geometry")
    data = _get_nf_grid_data(grid, ref, cache=cache)
    best_idx = _search_grid_data(data, entries)
    return _finalize_candidates(data, entries, best_idx)


def nf_grid_search(y, model, grid):
    """Exhaustive near-field search; returns (SphericalCoord, cost)."""
    return nf_grid_search_batch([(model, [y])], grid)[0][0]


def fine_grid_spec(coarse, az_halfwidth_deg=1.0, az_step_deg=0.1,
                   r_halfwidth=0.2, r_step=0.005):
    """Refined grid centered on a coarse estimate.

    Elevation is clipped to +/-90 deg and the range axis to positive
    values, so the fine grid near the search-space edge simply shrinks.
    """
    az0 = np.rad2deg(coarse.azimuth)
    el0 = np.rad2deg(coarse.elevation)
    r_lo = coarse.range_m - r_halfwidth
    if r_lo <= 0:
        r_lo = r_step
    return GridSpec(
        azimuth_deg=(az0 - az_halfwidth_deg, az0 + az_halfwidth_deg,
                     az_step_deg),
        elevation_deg=(max(-90.0, el0 - az_halfwidth_deg),
                       min(90.0, el0 + az_halfwidth_deg), az_step_deg),
        range_m=(r_lo, coarse.range_m + r_halfwidth, r_step))


def nf_fine_grid_search(y, model, coarse):
    """Fine near-field search centered on the coarse estimate."""
    grid = fine_grid_spec(coarse)
    data = _get_nf_grid_data(grid, model, cache=False)
    best_idx = _search_grid_data(data, [(model, [y])])
    return _finalize_candidates(data, [(model, [y])], best_idx)[0][0]


def ff_grid_search(y, model, grid):
    """Far-field two-stage search: 2D (az, el) grid, then a range line
    search with the near-field model.

    The far-field steering phase is range independent, and the projection
    cost ignores any common scale, so no nominal range enters stage one.
    """
    data = _get_ff_grid_data(grid, model)
    idx = _search_grid_data(data, [(model, [y])])[0][0]
    az, el = data.coords[idx, 0], data.coords[idx, 1]
    _, _, r_axis = grid.axis_values()
    best = None
    for r in r_axis:
        coord = SphericalCoord(azimuth=float(az), elevation=float(el),
                               range_m=float(r))
        h = steering_vector(model, spherical_to_cartesian(coord),
                            np.zeros(3))
        cost = projection_cost(y, h)
        if best is None or cost < best[1]:
            best = (coord, cost)
    return best


# ---------------------------------------------------------------------------
# Closed-form style refinement (alternating linearized least squares)


def _solve_displacement(jac, resid):
    """Real-valued least squares for a complex linear system.

    Raises SingularSystemError when the system is rank deficient beyond
    tolerance.
    """
    a = np.vstack([jac.real, jac.imag])
    b = np.concatenate([resid.real, resid.imag])
    sol, _, rank, sv = np.linalg.lstsq(a, b, rcond=None)
    if rank < jac.shape[1] or sv[-1] <= 1e-10 * sv[0]:
        raise SingularSystemError(
            f"displacement system rank {rank} of {jac.shape[1]}")
    return sol


def cf_refine(y, model, p, v, cost_tol=1e-6):
    """One alternating position/velocity refinement round.

    The per-cell phase response is linearized in the displacement around
    the current estimate (first-order exponent expansion followed by the
    small-angle approximation), giving a linear least-squares problem for
    the position offset and then for the velocity offset. Sub-updates
    that would increase the projection cost are rejected.

    Returns ``(p, v, converged)``.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    k0 = 2.0 * np.pi / model.wavelength

    h0, wa, u, uhat, ell_t, _ = _steering_parts(model, p, v)
    cost0 = projection_cost(y, h0)

    # Position displacement: dh/dp = -j k sum_m w a (u_m - uhat).
    s_vec = np.einsum("lm,lmj->lj", wa, u)
    jac_p = -1j * k0 * (s_vec - wa.sum(axis=1)[:, None] * uhat[None, :])
    alpha = ml_alpha(y, h0)
    delta_p = _solve_displacement(alpha * jac_p, y - alpha * h0)
    cand = p + delta_p
    cost_p = projection_cost(y, steering_vector(model, cand, v)) \
        if np.linalg.norm(cand) > 0 else np.inf
    if cost_p < cost0:
        p, cost_mid = cand, cost_p
        h1, wa, u, uhat, ell_t, _ = _steering_parts(model, p, v)
    else:
        h1, cost_mid = h0, cost0

    # Velocity displacement: dh/dv = -j k ell T sum_m w a u_m.
    s_vec = np.einsum("lm,lmj->lj", wa, u)
    jac_v = -1j * k0 * ell_t[:, None] * s_vec
    alpha = ml_alpha(y, h1)
    delta_v = _solve_displacement(alpha * jac_v, y - alpha * h1)
    cand_v = v + delta_v
    cost_v = projection_cost(y, steering_vector(model, p, cand_v))
    if cost_v < cost_mid:
        v, cost_end = cand_v, cost_v
    else:
        cost_end = cost_mid

    converged = (cost0 - cost_end) < cost_tol * max(cost0,
                                                    np.finfo(float).tiny)
    return p, v, converged


def refine_loop(y, model, p, v, max_iter=50):
    """Iterate cf_refine until convergence or the iteration cap.

    Returns ``(p, v, iterations)``.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    iterations = 0
    for _ in range(max_iter):
        p, v, converged = cf_refine(y, model, p, v)
        iterations += 1
        if converged:
            break
    return p, v, iterations


# ---------------------------------------------------------------------------
# 6D gradient descent


@dataclass(frozen=True)
class GdOptions:
    max_iter: int = 500
    cost_tol: float = 1e-9
    grad_tol: float = 1e-9
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    init_step: float = 1e-4     # first-move length in scaled coordinates
    velocity_scale: float | None = None  # default: half snapshot duration


def cost_and_grad(y, model, p, v):
    """Projection cost and its analytic gradient w.r.t. (p, v)."""
    h, wa, u, uhat, ell_t, _ = _steering_parts(model, p, v)
    k0 = 2.0 * np.pi / model.wavelength
    s_vec = np.einsum("lm,lmj->lj", wa, u)
    dh_dp = -1j * k0 * (s_vec - wa.sum(axis=1)[:, None] * uhat[None, :])
    dh_dv = -1j * k0 * ell_t[:, None] * s_vec
    dh = np.hstack([dh_dp, dh_dv])                   # (L, 6)

    c = np.vdot(h, y)
    den = np.vdot(h, h).real
    if den == 0.0:
        raise ZeroModelError("model vector has zero norm")
    cost = np.vdot(y, y).real - abs(c) ** 2 / den
    dc = dh.conj().T @ y
    dden = 2.0 * np.real(dh.conj().T @ h)
    grad = -(2.0 * np.real(np.conj(c) * dc) * den
             - abs(c) ** 2 * dden) / den ** 2
    return max(float(cost), 0.0), grad


def gradient_descent_6d(y, model, p, v, options=None):
    """Minimize the projection cost over (p, v) by gradient descent with
    Armijo backtracking.

    Velocity coordinates are pre-scaled by half the snapshot duration so
    position and velocity curvatures are comparable. The final cost never
    exceeds the starting cost; the worst case returns the start point.

    Returns ``(p, v, cost, iterations)``.
    """
    opts = options or GdOptions()
    v_scale = opts.velocity_scale
    if v_scale is None:
        v_scale = 0.5 * model.num_samples * model.sample_time
    scale = np.array([1.0, 1.0, 1.0, v_scale, v_scale, v_scale])

    z = np.concatenate([np.asarray(p, float),
                        np.asarray(v, float) * v_scale])
    cost, grad = cost_and_grad(y, model, z[:3], z[3:] / v_scale)
    g_z = grad / scale
    cost_scale = max(np.vdot(y, y).real, np.finfo(float).tiny)
    step = opts.init_step / max(np.linalg.norm(g_z), np.finfo(float).tiny)

    iterations = 0
    while iterations < opts.max_iter:
        g_norm2 = float(g_z @ g_z)
        if np.sqrt(g_norm2) <= opts.grad_tol * cost_scale:
            break
        accepted = False
        t = step
        for _ in range(60):
            z_new = z - t * g_z
            if np.linalg.norm(z_new[:3]) == 0.0:
                t *= opts.backtrack
                continue
            c_new = projection_cost(
                y, steering_vector(model, z_new[:3], z_new[3:] / v_scale))
            if c_new <= cost - opts.armijo_c * t * g_norm2:
                accepted = True
                break
            t *= opts.backtrack
        if not accepted:
            break
        rel_dec = (cost - c_new) / max(cost, np.finfo(float).tiny)
        z, cost = z_new, c_new
        iterations += 1
        step = 2.0 * t
        if rel_dec < opts.cost_tol:
            break
        _, grad = cost_and_grad(y, model, z[:3], z[3:] / v_scale)
        g_z = grad / scale

    return z[:3], z[3:] / v_scale, cost, iterations


# ---------------------------------------------------------------------------
# Full pipeline


@dataclass(frozen=True)
class EstimatorConfig:
    """Stage selection and parameters for one pipeline run."""

    gs_variant: str = "nf"        # "nf" | "ff" | "nf-fine"
    grid: GridSpec = field(default_factory=default_coarse_grid)
    with_cf: bool = True
    with_6d: bool = True
    max_refine_iter: int = 50
    gd: GdOptions = field(default_factory=GdOptions)

    def __post_init__(self):
        if self.gs_variant not in ("nf", "ff", "nf-fine"):
            raise ValueError(f"unknown GS variant {self.gs_variant!r}")


def estimate(y, model, config, coarse_result=None):
    """Run the selected pipeline stages and record every estimate.

    ``coarse_result`` optionally injects a precomputed coarse grid-search
    result (as returned by the batch API) so sweeps can share that work;
    the recorded trace is identical to an uninjected run.

    A stage that fails records its input estimate and the pipeline
    continues; failures are listed on the returned trace.
    """
    trace = EstimateTrace()
    v_zero = np.zeros(3)

    if coarse_result is None:
        if config.gs_variant == "ff":
            coarse_result = ff_grid_search(y, model, config.grid)
        else:
            coarse_result = nf_grid_search(y, model, config.grid)
    coord, cost = coarse_result
    p_hat = spherical_to_cartesian(coord)
    trace.record("GS", p_hat, v_zero, cost)

    if config.gs_variant == "nf-fine":
        f_coord, f_cost = nf_fine_grid_search(y, model, coord)
        if f_cost <= cost:
            coord, cost = f_coord, f_cost
            p_hat = spherical_to_cartesian(coord)
        trace.record("GS-fine", p_hat, v_zero, cost)

    p_cur, v_cur, cost_cur = p_hat, v_zero, cost

    if config.with_cf:
        try:
            p_ref, v_ref, iters = refine_loop(y, model, p_cur, v_cur,
                                              config.max_refine_iter)
            cost_ref = projection_cost(y, steering_vector(model, p_ref,
                                                          v_ref))
            if cost_ref <= cost_cur:
                p_cur, v_cur, cost_cur = p_ref, v_ref, cost_ref
            trace.record("CF", p_cur, v_cur, cost_cur, iters)
        except (SingularSystemError, ZeroModelError) as exc:
            trace.failures.append(("CF", exc))
            trace.record("CF", p_cur, v_cur, cost_cur)

    if config.with_6d:
        try:
            p_gd, v_gd, cost_gd, iters = gradient_descent_6d(
                y, model, p_cur, v_cur, config.gd)
            if cost_gd <= cost_cur:
                p_cur, v_cur, cost_cur = p_gd, v_gd, cost_gd
            trace.record("6D", p_cur, v_cur, cost_cur, iters)
        except (SingularSystemError, ZeroModelError) as exc:
            trace.failures.append(("6D", exc))
            trace.record("6D", p_cur, v_cur, cost_cur)

    return trace
