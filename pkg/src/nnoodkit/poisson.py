"""Discrete Poisson editing: guidance fields and a conjugate-gradient solve
of the masked Laplace system with Dirichlet data from the destination."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from .errors import SolverError
from .image import NdImage
from .patches import PatchSpec

GUIDANCE_MODES = ("source", "mixed", "interpolated")

TOLERANCE = 1e-6
# converge well past the declared tolerance so downstream comparisons are
# not dominated by solver noise
_TARGET_FACTOR = 1e-3


@dataclass(frozen=True)
class GuidanceField:
    """Per-axis target gradients over the patch box, channel-first.

    Component ``a`` stores forward differences along spatial axis ``a``;
    the trailing slice along that axis is a padding slot and never read.
    """

    components: tuple
    mode: str
    alpha: float | None = None

    def __post_init__(self):
        if self.mode not in GUIDANCE_MODES:
            raise ValueError(f"unknown guidance mode {self.mode!r}")
        if self.mode == "interpolated":
            if self.alpha is None or not (0.0 <= self.alpha <= 1.0):
                raise ValueError("interpolated guidance requires alpha in [0, 1]")
        shapes = {c.shape for c in self.components}
        if len(shapes) != 1:
            raise ValueError("guidance components have mismatched shapes")


@dataclass(frozen=True)
class PoissonSolution:
    """Solved values over the patch box plus the achieved relative residual."""

    values: np.ndarray
    residual_norm: float


def _forward_diffs(data: np.ndarray) -> list[np.ndarray]:
    rank = data.ndim - 1
    comps = []
    for axis in range(rank):
        g = np.zeros_like(data)
        head = [slice(None)] * data.ndim
        tail = [slice(None)] * data.ndim
        head[axis + 1] = slice(0, -1)
        tail[axis + 1] = slice(1, None)
        g[tuple(head)] = data[tuple(tail)] - data[tuple(head)]
        comps.append(g)
    return comps


def build_guidance(src_patch: NdImage, dest_patch: NdImage, mode: str, alpha: float | None = None) -> GuidanceField:
    """Forward-difference guidance from source and destination content.

    source: gradient of the source patch.  mixed: per pixel and axis the
    larger-magnitude gradient, ties going to the source.  interpolated:
    convex combination weighted by alpha.
    """
    if src_patch.data.shape != dest_patch.data.shape:
        raise ValueError(
            f"source {src_patch.data.shape} and destination {dest_patch.data.shape} differ"
        )
    g_src = _forward_diffs(src_patch.data.astype(np.float64))
    if mode == "source":
        comps = g_src
    else:
        g_dst = _forward_diffs(dest_patch.data.astype(np.float64))
        if mode == "mixed":
            comps = [
                np.where(np.abs(s) >= np.abs(d), s, d) for s, d in zip(g_src, g_dst)
            ]
        else:
            if alpha is None or not (0.0 <= alpha <= 1.0):
                raise ValueError("interpolated guidance requires alpha in [0, 1]")
            comps = [(1.0 - alpha) * d + alpha * s for s, d in zip(g_src, g_dst)]
    return GuidanceField(components=tuple(comps), mode=mode, alpha=alpha)


def interior_split(spec: PatchSpec, image_shape) -> tuple[np.ndarray, np.ndarray]:
    """Split the footprint into solver unknowns and the pinned boundary ring.

    A footprint pixel is interior when every face neighbour that exists in
    the image also belongs to the footprint; neighbours beyond the image
    border are dropped from the stencil rather than blocking interiority.
    """
    fp = spec.footprint
    rank = fp.ndim
    interior = fp.copy()
    for axis in range(rank):
        extent = spec.extent[axis]
        origin = spec.origin[axis]
        for sign in (1, -1):
            ok = np.zeros_like(fp)
            src = [slice(None)] * rank
            dst = [slice(None)] * rank
            if sign == 1:
                dst[axis] = slice(0, extent - 1)
                src[axis] = slice(1, extent)
                edge_ok = origin + extent == image_shape[axis]
                edge = extent - 1
            else:
                dst[axis] = slice(1, extent)
                src[axis] = slice(0, extent - 1)
                edge_ok = origin == 0
                edge = 0
            if extent > 1:
                ok[tuple(dst)] = fp[tuple(src)]
            sl_edge = [slice(None)] * rank
            sl_edge[axis] = edge
            ok[tuple(sl_edge)] = edge_ok
            interior &= ok
    return interior, fp & ~interior


def _divergence(components, interior: np.ndarray) -> np.ndarray:
    """Backward-difference divergence of the guidance at interior pixels.

    Face terms crossing the image border vanish; for interior unknowns all
    remaining faces carry stored forward differences.
    """
    shape = interior.shape
    rank = len(shape)
    div = np.zeros(components[0].shape, dtype=np.float64)
    for axis in range(rank):
        g = components[axis]
        plus = g.copy()
        last = [slice(None)] * g.ndim
        last[axis + 1] = shape[axis] - 1
        plus[tuple(last)] = 0.0
        minus = np.zeros_like(g)
        head = [slice(None)] * g.ndim
        tail = [slice(None)] * g.ndim
        head[axis + 1] = slice(0, -1)
        tail[axis + 1] = slice(1, None)
        minus[tuple(tail)] = g[tuple(head)]
        div += plus - minus
    return div


def _pcg(A, b: np.ndarray, target: float, cap: int) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients, infinity-norm stop rule."""
    n = b.shape[0]
    inv_diag = 1.0 / A.diagonal()
    x = np.zeros(n, dtype=np.float64)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for _ in range(cap):
        if np.abs(r).max() <= target:
            break
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            break
        step = rz / pAp
        x += step * p
        r -= step * Ap
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x


def solve_poisson(dest: NdImage, spec: PatchSpec, g: GuidanceField) -> PoissonSolution:
    """Solve the guided Laplace system on the footprint interior.

    The footprint's outer ring is pinned to the destination; the returned
    box holds solved values on the interior, destination values elsewhere.
    Raises SolverError when the relative residual stays above tolerance.
    """
    spec.check_inside(dest.spatial_shape)
    if g.components[0].shape != (dest.channels,) + spec.extent:
        raise ValueError(
            f"guidance shape {g.components[0].shape} does not match "
            f"(channels, *extent) = {(dest.channels,) + spec.extent}"
        )
    interior, layer = interior_split(spec, dest.spatial_shape)
    region = (slice(None),) + spec.slices()
    box = dest.data[region].astype(np.float64)
    values = box.copy()
    n = int(interior.sum())
    if n == 0:
        return PoissonSolution(values=values, residual_norm=0.0)
    if not layer.any():
        raise ValueError("footprint spans the whole image: no Dirichlet boundary")

    extent = spec.extent
    rank = len(extent)
    strides = np.array(
        [int(np.prod(extent[a + 1 :], dtype=np.int64)) for a in range(rank)], dtype=np.int64
    )
    flat_interior = interior.ravel()
    unknown_flat = np.flatnonzero(flat_interior)
    unknown_id = -np.ones(flat_interior.shape[0], dtype=np.int64)
    unknown_id[unknown_flat] = np.arange(n)

    deg = np.zeros(n, dtype=np.float64)
    rows = []
    cols = []
    dirichlet_src = []  # (row index, neighbour flat index) pairs
    local = np.stack(np.unravel_index(unknown_flat, extent))
    for axis in range(rank):
        for sign in (1, -1):
            if sign == 1:
                exists = local[axis] < extent[axis] - 1
            else:
                exists = local[axis] > 0
            nb = unknown_flat[exists] + sign * strides[axis]
            deg[exists] += 1.0
            nb_id = unknown_id[nb]
            inner = nb_id >= 0
            rows.append(np.flatnonzero(exists)[inner])
            cols.append(nb_id[inner])
            dirichlet_src.append((np.flatnonzero(exists)[~inner], nb[~inner]))

    row_idx = np.concatenate(rows)
    col_idx = np.concatenate(cols)
    data = np.concatenate(
        [
            deg,
            -np.ones(row_idx.shape[0], dtype=np.float64),
        ]
    )
    all_rows = np.concatenate([np.arange(n), row_idx])
    all_cols = np.concatenate([np.arange(n), col_idx])
    A = sparse.csr_matrix((data, (all_rows, all_cols)), shape=(n, n))
    cap = 10 * n

    residual = 0.0
    for c in range(dest.channels):
        boundary = np.zeros(n, dtype=np.float64)
        box_flat = box[c].ravel()
        for rws, nbs in dirichlet_src:
            np.add.at(boundary, rws, box_flat[nbs])
        div = _divergence([comp[c : c + 1] for comp in g.components], interior)[0]
        div_vec = div.ravel()[unknown_flat]
        b = boundary - div_vec
        denom = max(1.0, float(np.abs(div_vec).max()))
        x = _pcg(A, b, target=denom * TOLERANCE * _TARGET_FACTOR, cap=cap)
        rel = float(np.abs(b - A @ x).max()) / denom
        if rel > TOLERANCE:
            raise SolverError(
                f"poisson solve stalled at relative residual {rel:.3e}", residual=rel
            )
        residual = max(residual, rel)
        chan = values[c].ravel()
        chan[unknown_flat] = x
        values[c] = chan.reshape(extent)
    return PoissonSolution(values=values, residual_norm=residual)


def seamless_clone(dest: NdImage, src_patch: NdImage, spec: PatchSpec, mode: str, alpha: float | None = None) -> NdImage:
    """Clone source content into the destination footprint via a Poisson solve.

    Pixels outside the footprint are bit-identical to the destination.
    """
    spec.check_inside(dest.spatial_shape)
    if src_patch.spatial_shape != spec.extent:
        raise ValueError(
            f"source patch shape {src_patch.spatial_shape} != spec extent {spec.extent}"
        )
    if src_patch.channels != dest.channels:
        raise ValueError("channel count mismatch")
    region = (slice(None),) + spec.slices()
    dest_box = NdImage(dest.data[region].copy())
    guidance = build_guidance(src_patch, dest_box, mode, alpha)
    solution = solve_poisson(dest, spec, guidance)
    out = dest.data.copy()
    window = out[region]
    window[:, spec.footprint] = solution.values[:, spec.footprint].astype(np.float32)
    return NdImage(out)
