"""Galerkin PMCHWT solver on the RWG basis.

Assembles the block system of Appendix-D form

    Z = [ zeta- T- + zeta+ T+      K- + K+          ]
        [ -(K- + K+)               T-/zeta- + T+/zeta+ ]

with tested operator entries (test and source functions both RWG, real)

    T_ij = ik  Int g f_i.f_j - (i/k) Int g (div f_i)(div f_j)
    K_ij = Int (ik - 1/R) g  f_i . (f_j x Rhat),   Rhat = (r - r')/R

and right-hand sides V = [<f_i, E_inc>; <f_i, H_inc>] (tested tangential
incident fields).  Exterior operators couple all bodies; interior operators
are block-diagonal per body.  Self and shared-vertex pairs use 1/R
singularity extraction (T, analytic static integrals) or adaptive source
subdivision (K); the coincident-triangle K principal value is excluded, its
residues cancelling in the K- + K+ sum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from scipy.linalg import lu_factor, lu_solve
from scipy.linalg import lapack as _lapack

from .emcore import DipoleSource, DrudeMaterial, MediumParams, dipole_fields
from .mesh import RwgBasis, TriangleMesh

logger = logging.getLogger(__name__)

#: relative residual bound enforced on every solve
RESIDUAL_TOL = 1e-8
#: reciprocal condition estimate below which Z is reported as singular
RCOND_MIN = 1e-14


class BemError(Exception):
    """Assembly or solve failure."""


class SourceInsideBodyError(BemError):
    """An impressed dipole lies inside a dielectric body."""


# ---------------------------------------------------------------------------
# Triangle quadrature rules (barycentric points, weights summing to 1)
# ---------------------------------------------------------------------------

_Q1 = (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]))

_Q3 = (
    np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
    np.array([1 / 3, 1 / 3, 1 / 3]),
)

_A7 = 0.4701420641051151
_B7 = 0.1012865073234563
_Q7 = (
    np.array(
        [
            [1 / 3, 1 / 3, 1 / 3],
            [1 - 2 * _A7, _A7, _A7], [_A7, 1 - 2 * _A7, _A7], [_A7, _A7, 1 - 2 * _A7],
            [1 - 2 * _B7, _B7, _B7], [_B7, 1 - 2 * _B7, _B7], [_B7, _B7, 1 - 2 * _B7],
        ]
    ),
    np.array([0.225, 0.1323941527885062, 0.1323941527885062, 0.1323941527885062,
              0.1259391805448271, 0.1259391805448271, 0.1259391805448271]),
)


def duffy_rule(n: int):
    """Collapsed Gauss product rule on the triangle (n*n points)."""
    x, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    pts, wts = [], []
    for iu in range(n):
        for iv in range(n):
            lam1 = u[iu]
            lam2 = u[iv] * (1 - u[iu])
            pts.append([1 - lam1 - lam2, lam1, lam2])
            wts.append(2.0 * wu[iu] * wu[iv] * (1 - u[iu]))
    return np.array(pts), np.array(wts)


def triangle_rule(rule="q7"):
    """Return (barycentric points, weights) for a named rule."""
    if isinstance(rule, tuple) and rule[0] == "duffy":
        return duffy_rule(int(rule[1]))
    try:
        return {"q1": _Q1, "q3": _Q3, "q7": _Q7}[rule]
    except KeyError:
        raise BemError(f"unknown quadrature rule {rule!r}") from None


# ---------------------------------------------------------------------------
# Geometry tables consumed by the jitted kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssemblyTables:
    """Flat arrays describing mesh, quadrature, and basis for the kernels."""

    tv: np.ndarray          # (F, 3, 3) triangle corner coordinates
    tarea: np.ndarray       # (F,)
    tbody: np.ndarray       # (F,)
    tvidx: np.ndarray       # (F, 3) vertex indices
    qp: np.ndarray          # (F, Q, 3) quadrature points
    qw: np.ndarray          # (F, Q) weights including area
    tri_bas: np.ndarray     # (F, 3) basis index or -1
    tri_sign: np.ndarray    # (F, 3)
    tri_opp: np.ndarray     # (F, 3, 3)
    bas_tri: np.ndarray     # (Ne, 2)
    bas_len: np.ndarray     # (Ne,)
    sing_pairs: np.ndarray  # (n_pairs, 2) shared-vertex pairs with tau <= tau'
    rule_bary: np.ndarray   # (Q, 3) barycentric rule points
    rule_w: np.ndarray      # (Q,) rule weights


def build_tables(basis: RwgBasis, rule="q7") -> AssemblyTables:
    mesh = basis.mesh
    v0, v1, v2 = mesh.corners()
    tv = np.stack([v0, v1, v2], axis=1)
    bary, bw = triangle_rule(rule)
    qp = np.einsum("qb,fbx->fqx", bary, tv)
    qw = mesh.areas()[:, None] * bw[None, :]

    tvidx_sorted = np.sort(mesh.triangles, axis=1)
    nf = mesh.n_triangles
    vert_tris: dict = {}
    for f in range(nf):
        for v in mesh.triangles[f]:
            vert_tris.setdefault(int(v), []).append(f)
    pairs = set()
    for f in range(nf):
        for v in mesh.triangles[f]:
            for g in vert_tris[int(v)]:
                if f <= g:
                    pairs.add((f, g))
    sing = np.array(sorted(pairs), dtype=np.int64)

    return AssemblyTables(
        tv=tv,
        tarea=mesh.areas(),
        tbody=mesh.body_id.astype(np.int64),
        tvidx=tvidx_sorted.astype(np.int64),
        qp=qp,
        qw=qw,
        tri_bas=basis.tri_basis,
        tri_sign=basis.tri_basis_sign,
        tri_opp=basis.tri_basis_opp,
        bas_tri=np.stack([basis.tri_plus, basis.tri_minus], axis=1),
        bas_len=basis.length,
        sing_pairs=sing,
        rule_bary=np.ascontiguousarray(bary),
        rule_w=np.ascontiguousarray(bw),
    )


@njit(cache=True, inline="always")
def _shares_vertex(tvidx, a, b):
    for i in range(3):
        va = tvidx[a, i]
        for j in range(3):
            if va == tvidx[b, j]:
                return True
    return False


@njit(cache=True, inline="always")
def _local_slot(tri_bas, tau, p):
    for s in range(3):
        if tri_bas[tau, s] == p:
            return s
    return -1


@njit(parallel=True, cache=True)
def _assemble_regular(tv, tarea, tbody, tvidx, qp, qw, tri_bas, tri_sign, tri_opp,
                      bas_tri, bas_len, k, same_body_only, want_t, want_k):
    ne = bas_tri.shape[0]
    nf = tv.shape[0]
    nq = qp.shape[1]
    tmat = np.zeros((ne, ne), np.complex128)
    kmat = np.zeros((ne, ne), np.complex128)
    ik = 1j * k
    inv_k = 1.0 / k

    for p in prange(ne):
        lp = bas_len[p]
        for side in range(2):
            tau = bas_tri[p, side]
            slot = _local_slot(tri_bas, tau, p)
            sgn_i = tri_sign[tau, slot]
            opp_i = tri_opp[tau, slot]
            ci = sgn_i * lp / (2.0 * tarea[tau])
            divi = sgn_i * lp / tarea[tau]
            body_i = tbody[tau]

            for taup in range(nf):
                if same_body_only and tbody[taup] != body_i:
                    continue
                if _shares_vertex(tvidx, tau, taup):
                    continue

                acc_a0 = 0.0 + 0.0j
                acc_a1 = 0.0 + 0.0j
                acc_a2 = 0.0 + 0.0j
                acc_b = 0.0 + 0.0j
                acc_k0 = 0.0 + 0.0j
                acc_k1 = 0.0 + 0.0j
                acc_k2 = 0.0 + 0.0j
                for qa in range(nq):
                    rx = qp[tau, qa, 0]
                    ry = qp[tau, qa, 1]
                    rz = qp[tau, qa, 2]
                    fix = ci * (rx - opp_i[0])
                    fiy = ci * (ry - opp_i[1])
                    fiz = ci * (rz - opp_i[2])
                    wa = qw[tau, qa]
                    for qb in range(nq):
                        sx = qp[taup, qb, 0]
                        sy = qp[taup, qb, 1]
                        sz = qp[taup, qb, 2]
                        dx = rx - sx
                        dy = ry - sy
                        dz = rz - sz
                        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
                        w = wa * qw[taup, qb]
                        green = w * np.exp(ik * dist) / (4.0 * np.pi * dist)
                        if want_t:
                            acc_b += green
                            acc_a0 += green * (fix * (sx - tri_opp[taup, 0, 0])
                                               + fiy * (sy - tri_opp[taup, 0, 1])
                                               + fiz * (sz - tri_opp[taup, 0, 2]))
                            acc_a1 += green * (fix * (sx - tri_opp[taup, 1, 0])
                                               + fiy * (sy - tri_opp[taup, 1, 1])
                                               + fiz * (sz - tri_opp[taup, 1, 2]))
                            acc_a2 += green * (fix * (sx - tri_opp[taup, 2, 0])
                                               + fiy * (sy - tri_opp[taup, 2, 1])
                                               + fiz * (sz - tri_opp[taup, 2, 2]))
                        if want_k:
                            gk = green * (ik - 1.0 / dist) / dist
                            # f_i . ((r'-opp) x R): only the r' x R part varies
                            # with the slot through opp, so expand:
                            # (f_i x (r'-opp)) . R = (f_i x r') . R - (f_i x opp) . R
                            cxx = fiy * sz - fiz * sy
                            cyy = fiz * sx - fix * sz
                            czz = fix * sy - fiy * sx
                            base = gk * (cxx * dx + cyy * dy + czz * dz)
                            acc_k0 += base - gk * ((fiy * tri_opp[taup, 0, 2] - fiz * tri_opp[taup, 0, 1]) * dx
                                                   + (fiz * tri_opp[taup, 0, 0] - fix * tri_opp[taup, 0, 2]) * dy
                                                   + (fix * tri_opp[taup, 0, 1] - fiy * tri_opp[taup, 0, 0]) * dz)
                            acc_k1 += base - gk * ((fiy * tri_opp[taup, 1, 2] - fiz * tri_opp[taup, 1, 1]) * dx
                                                   + (fiz * tri_opp[taup, 1, 0] - fix * tri_opp[taup, 1, 2]) * dy
                                                   + (fix * tri_opp[taup, 1, 1] - fiy * tri_opp[taup, 1, 0]) * dz)
                            acc_k2 += base - gk * ((fiy * tri_opp[taup, 2, 2] - fiz * tri_opp[taup, 2, 1]) * dx
                                                   + (fiz * tri_opp[taup, 2, 0] - fix * tri_opp[taup, 2, 2]) * dy
                                                   + (fix * tri_opp[taup, 2, 1] - fiy * tri_opp[taup, 2, 0]) * dz)

                for s in range(3):
                    q_glob = tri_bas[taup, s]
                    if q_glob < 0:
                        continue
                    lq = bas_len[q_glob]
                    cj = tri_sign[taup, s] * lq / (2.0 * tarea[taup])
                    divj = tri_sign[taup, s] * lq / tarea[taup]
                    if want_t:
                        acc_a = acc_a0 if s == 0 else (acc_a1 if s == 1 else acc_a2)
                        tmat[p, q_glob] += (ik * cj * acc_a
                                            - 1j * inv_k * divi * divj * acc_b)
                    if want_k:
                        acc_k = acc_k0 if s == 0 else (acc_k1 if s == 1 else acc_k2)
                        kmat[p, q_glob] += cj * acc_k
    return tmat, kmat


@njit(cache=True)
def _static_potentials(tri, r):
    """Analytic Int 1/R dS' and Int (r'-rho)/R dS' over one triangle."""
    e1 = tri[1] - tri[0]
    e2 = tri[2] - tri[0]
    nx = e1[1] * e2[2] - e1[2] * e2[1]
    ny = e1[2] * e2[0] - e1[0] * e2[2]
    nz = e1[0] * e2[1] - e1[1] * e2[0]
    nn = np.sqrt(nx * nx + ny * ny + nz * nz)
    nhx, nhy, nhz = nx / nn, ny / nn, nz / nn
    d = ((r[0] - tri[0, 0]) * nhx + (r[1] - tri[0, 1]) * nhy + (r[2] - tri[0, 2]) * nhz)
    rhox = r[0] - d * nhx
    rhoy = r[1] - d * nhy
    rhoz = r[2] - d * nhz
    absd = abs(d)

    i0 = 0.0
    ivx = 0.0
    ivy = 0.0
    ivz = 0.0
    for e in range(3):
        a = tri[e]
        b = tri[(e + 1) % 3]
        tx, ty, tz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
        lt = np.sqrt(tx * tx + ty * ty + tz * tz)
        lx, ly, lz = tx / lt, ty / lt, tz / lt
        # outward in-plane normal u = l x n
        ux = ly * nhz - lz * nhy
        uy = lz * nhx - lx * nhz
        uz = lx * nhy - ly * nhx
        sm = (a[0] - rhox) * lx + (a[1] - rhoy) * ly + (a[2] - rhoz) * lz
        sp = (b[0] - rhox) * lx + (b[1] - rhoy) * ly + (b[2] - rhoz) * lz
        t0 = (a[0] - rhox) * ux + (a[1] - rhoy) * uy + (a[2] - rhoz) * uz
        rm = np.sqrt((r[0] - a[0]) ** 2 + (r[1] - a[1]) ** 2 + (r[2] - a[2]) ** 2)
        rp = np.sqrt((r[0] - b[0]) ** 2 + (r[1] - b[1]) ** 2 + (r[2] - b[2]) ** 2)
        r02 = t0 * t0 + d * d

        if sm >= 0.0 and sp >= 0.0:
            f2 = np.log((rp + sp) / (rm + sm))
        elif sm < 0.0 and sp < 0.0:
            f2 = np.log((rm - sm) / (rp - sp))
        else:
            f2 = np.log((rp + sp) * (rm - sm) / r02)

        if t0 == 0.0:
            beta = 0.0
        else:
            beta = (np.arctan(t0 * sp / (r02 + absd * rp))
                    - np.arctan(t0 * sm / (r02 + absd * rm)))

        i0 += t0 * f2 - absd * beta
        half = 0.5 * (r02 * f2 + sp * rp - sm * rm)
        ivx += ux * half
        ivy += uy * half
        ivz += uz * half
    return i0, ivx, ivy, ivz, rhox, rhoy, rhoz


@njit(cache=True)
def _tri_split4(tri, out):
    m01 = 0.5 * (tri[0] + tri[1])
    m12 = 0.5 * (tri[1] + tri[2])
    m20 = 0.5 * (tri[2] + tri[0])
    out[0, 0] = tri[0]; out[0, 1] = m01; out[0, 2] = m20
    out[1, 0] = tri[1]; out[1, 1] = m12; out[1, 2] = m01
    out[2, 0] = tri[2]; out[2, 1] = m20; out[2, 2] = m12
    out[3, 0] = m01; out[3, 1] = m12; out[3, 2] = m20


@njit(cache=True)
def _k_inner_adaptive(tri, r, k, cj, opp, bary, bw, max_depth, far_factor):
    """Int over tri of (ik-1/R) g f_j x Rhat dS', by adaptive 4-way splits.

    Returns the complex 3-vector V(r) with V = Int (ik-1/R) g (f_j(r') x Rhat).
    """
    ik = 1j * k
    nq = bary.shape[0]
    # explicit stack of subtriangles
    max_stack = 4 * (max_depth + 2)
    stack = np.empty((max_stack, 3, 3))
    depth = np.empty(max_stack, np.int64)
    stack[0] = tri
    depth[0] = 0
    top = 1
    children = np.empty((4, 3, 3))
    vx = 0.0 + 0.0j
    vy = 0.0 + 0.0j
    vz = 0.0 + 0.0j
    while top > 0:
        top -= 1
        cur = stack[top].copy()
        dep = depth[top]
        cx = (cur[0, 0] + cur[1, 0] + cur[2, 0]) / 3.0
        cy = (cur[0, 1] + cur[1, 1] + cur[2, 1]) / 3.0
        cz = (cur[0, 2] + cur[1, 2] + cur[2, 2]) / 3.0
        size2 = 0.0
        for e in range(3):
            a = cur[e]
            b = cur[(e + 1) % 3]
            s2 = ((b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2 + (b[2] - a[2]) ** 2)
            if s2 > size2:
                size2 = s2
        dist2 = (r[0] - cx) ** 2 + (r[1] - cy) ** 2 + (r[2] - cz) ** 2
        if dep < max_depth and dist2 < far_factor * size2:
            _tri_split4(cur, children)
            for c in range(4):
                stack[top] = children[c]
                depth[top] = dep + 1
                top += 1
            continue
        e1 = cur[1] - cur[0]
        e2 = cur[2] - cur[0]
        crx = e1[1] * e2[2] - e1[2] * e2[1]
        cry = e1[2] * e2[0] - e1[0] * e2[2]
        crz = e1[0] * e2[1] - e1[1] * e2[0]
        area = 0.5 * np.sqrt(crx * crx + cry * cry + crz * crz)
        for q in range(nq):
            px = bary[q, 0] * cur[0, 0] + bary[q, 1] * cur[1, 0] + bary[q, 2] * cur[2, 0]
            py = bary[q, 0] * cur[0, 1] + bary[q, 1] * cur[1, 1] + bary[q, 2] * cur[2, 1]
            pz = bary[q, 0] * cur[0, 2] + bary[q, 1] * cur[1, 2] + bary[q, 2] * cur[2, 2]
            dx = r[0] - px
            dy = r[1] - py
            dz = r[2] - pz
            dist = np.sqrt(dx * dx + dy * dy + dz * dz)
            green = np.exp(ik * dist) / (4.0 * np.pi * dist)
            coef = (ik - 1.0 / dist) * green / dist
            w = bw[q] * area
            fjx = cj * (px - opp[0])
            fjy = cj * (py - opp[1])
            fjz = cj * (pz - opp[2])
            # f_j x R  (R = r - r')
            vx += w * coef * (fjy * dz - fjz * dy)
            vy += w * coef * (fjz * dx - fjx * dz)
            vz += w * coef * (fjx * dy - fjy * dx)
    return vx, vy, vz


@njit(parallel=True, cache=True)
def _assemble_singular(tv, tarea, tbody, qp, qw, tri_bas, tri_sign, tri_opp,
                       bas_len, sing_pairs, k, same_body_only, want_t, want_k,
                       leaf_bary, leaf_w, max_depth, far_factor):
    """3x3 local T and K blocks for every shared-vertex triangle pair."""
    npair = sing_pairs.shape[0]
    nq = qp.shape[1]
    t_blk = np.zeros((npair, 3, 3), np.complex128)
    k_blk = np.zeros((npair, 3, 3), np.complex128)
    ik = 1j * k
    inv_k = 1.0 / k

    for ip in prange(npair):
        tau = sing_pairs[ip, 0]
        taup = sing_pairs[ip, 1]
        if same_body_only and tbody[tau] != tbody[taup]:
            continue
        coincident = tau == taup
        tri_src = tv[taup]
        area_src = tarea[taup]

        for s in range(3):
            q_glob = tri_bas[taup, s]
            if q_glob < 0:
                continue
            lq = bas_len[q_glob]
            cj = tri_sign[taup, s] * lq / (2.0 * area_src)
            divj = tri_sign[taup, s] * lq / area_src
            opp_j = tri_opp[taup, s]
            # first moment of f_j over source triangle: cj * area * (centroid - opp)
            gcx = (tri_src[0, 0] + tri_src[1, 0] + tri_src[2, 0]) / 3.0
            gcy = (tri_src[0, 1] + tri_src[1, 1] + tri_src[2, 1]) / 3.0
            gcz = (tri_src[0, 2] + tri_src[1, 2] + tri_src[2, 2]) / 3.0
            fjm_x = cj * area_src * (gcx - opp_j[0])
            fjm_y = cj * area_src * (gcy - opp_j[1])
            fjm_z = cj * area_src * (gcz - opp_j[2])

            for t in range(3):
                p_glob = tri_bas[tau, t]
                if p_glob < 0:
                    continue
                lp = bas_len[p_glob]
                ci = tri_sign[tau, t] * lp / (2.0 * tarea[tau])
                divi = tri_sign[tau, t] * lp / tarea[tau]
                opp_i = tri_opp[tau, t]

                acc_a = 0.0 + 0.0j   # Int Int g f_i.f_j
                acc_b = 0.0 + 0.0j   # Int Int g div_i div_j / (div_i div_j)
                acc_k = 0.0 + 0.0j
                fim_x = 0.0
                fim_y = 0.0
                fim_z = 0.0
                for qa in range(nq):
                    rx = qp[tau, qa, 0]
                    ry = qp[tau, qa, 1]
                    rz = qp[tau, qa, 2]
                    wa = qw[tau, qa]
                    fix = ci * (rx - opp_i[0])
                    fiy = ci * (ry - opp_i[1])
                    fiz = ci * (rz - opp_i[2])
                    fim_x += wa * fix
                    fim_y += wa * fiy
                    fim_z += wa * fiz

                    if want_t:
                        robs = np.empty(3)
                        robs[0] = rx
                        robs[1] = ry
                        robs[2] = rz
                        i0, ivx, ivy, ivz, rhox, rhoy, rhoz = _static_potentials(tri_src, robs)
                        # static part: Int f_j/R = cj*(Ivec + (rho-opp) I0)
                        sfx = cj * (ivx + (rhox - opp_j[0]) * i0)
                        sfy = cj * (ivy + (rhoy - opp_j[1]) * i0)
                        sfz = cj * (ivz + (rhoz - opp_j[2]) * i0)
                        acc_a += wa * (fix * sfx + fiy * sfy + fiz * sfz) / (4.0 * np.pi)
                        acc_b += wa * divj * i0 / (4.0 * np.pi)
                        # smooth remainder (exp(ikR)-1-ikR)/(4 pi R) by quadrature
                        for qb in range(nq):
                            dx = rx - qp[taup, qb, 0]
                            dy = ry - qp[taup, qb, 1]
                            dz = rz - qp[taup, qb, 2]
                            dist = np.sqrt(dx * dx + dy * dy + dz * dz)
                            w = wa * qw[taup, qb]
                            if dist < 1e-14:
                                rem = 0.0 + 0.0j
                            else:
                                rem = (np.exp(ik * dist) - 1.0 - ik * dist) / (4.0 * np.pi * dist)
                            fjx = cj * (qp[taup, qb, 0] - opp_j[0])
                            fjy = cj * (qp[taup, qb, 1] - opp_j[1])
                            fjz = cj * (qp[taup, qb, 2] - opp_j[2])
                            acc_a += w * rem * (fix * fjx + fiy * fjy + fiz * fjz)
                            acc_b += w * rem * divj

                    if want_k and not coincident:
                        robs = np.empty(3)
                        robs[0] = rx
                        robs[1] = ry
                        robs[2] = rz
                        vx, vy, vz = _k_inner_adaptive(tri_src, robs, k, cj, opp_j,
                                                       leaf_bary, leaf_w, max_depth,
                                                       far_factor)
                        acc_k += wa * (fix * vx + fiy * vy + fiz * vz)

                if want_t:
                    # constant-term of the 2-term extraction: (ik/4pi) (Int f_i).(Int f_j)
                    const_a = (ik / (4.0 * np.pi)) * (fim_x * fjm_x + fim_y * fjm_y + fim_z * fjm_z)
                    area_i = tarea[tau]
                    const_b = (ik / (4.0 * np.pi)) * divj * area_i * area_src
                    t_blk[ip, t, s] = (ik * (acc_a + const_a)
                                       - 1j * inv_k * divi * (acc_b + const_b))
                if want_k and not coincident:
                    k_blk[ip, t, s] = acc_k
    return t_blk, k_blk


def assemble_operators(tables: AssemblyTables, k: complex, same_body_only: bool,
                       want_t: bool = True, want_k: bool = True,
                       k_subdiv_depth: int = 4, k_far_factor: float = 9.0):
    """Assemble Galerkin T and K matrices for wavenumber k.

    Exterior calls use same_body_only=False (all surfaces couple); interior
    calls use same_body_only=True (block-diagonal per body).
    """
    if k == 0:
        raise BemError("assembly requires k != 0")
    tmat, kmat = _assemble_regular(
        tables.tv, tables.tarea, tables.tbody, tables.tvidx, tables.qp, tables.qw,
        tables.tri_bas, tables.tri_sign, tables.tri_opp, tables.bas_tri,
        tables.bas_len, complex(k), same_body_only, want_t, want_k)

    leaf_bary, leaf_w = _Q7
    t_blk, k_blk = _assemble_singular(
        tables.tv, tables.tarea, tables.tbody, tables.qp, tables.qw,
        tables.tri_bas, tables.tri_sign, tables.tri_opp, tables.bas_len,
        tables.sing_pairs, complex(k), same_body_only, want_t, want_k,
        leaf_bary, leaf_w, k_subdiv_depth, k_far_factor)

    # Scatter singular blocks.  Both tested operators are exactly symmetric
    # (the pair kernel is invariant under exchanging test and source), so the
    # mirrored pair reuses the transposed block; diagonal pairs are
    # symmetrized before scattering.
    tri_bas = tables.tri_bas
    for ip, (tau, taup) in enumerate(tables.sing_pairs):
        coincident = tau == taup
        for t in range(3):
            p = tri_bas[tau, t]
            if p < 0:
                continue
            for s in range(3):
                q = tri_bas[taup, s]
                if q < 0:
                    continue
                if want_t:
                    val = t_blk[ip, t, s]
                    if coincident:
                        tmat[p, q] += 0.5 * (val + t_blk[ip, s, t])
                    else:
                        tmat[p, q] += val
                        tmat[q, p] += val
                if want_k:
                    val = k_blk[ip, t, s]
                    if coincident:
                        kmat[p, q] += 0.5 * (val + k_blk[ip, s, t])
                    else:
                        kmat[p, q] += val
                        kmat[q, p] += val

    if want_t and not np.all(np.isfinite(tmat)):
        raise BemError("non-finite entries in assembled T matrix")
    if want_k and not np.all(np.isfinite(kmat)):
        raise BemError("non-finite entries in assembled K matrix")
    out = []
    out.append(tmat if want_t else None)
    out.append(kmat if want_k else None)
    return tuple(out)


def assemble_T(basis: RwgBasis, k: complex, rule="q7") -> np.ndarray:
    """Galerkin matrix of the T (EFIE) operator at wavenumber k."""
    tables = build_tables(basis, rule)
    t, _ = assemble_operators(tables, k, same_body_only=False, want_t=True, want_k=False)
    return t


def assemble_K(basis: RwgBasis, k: complex, rule="q7") -> np.ndarray:
    """Galerkin matrix of the principal-value K (MFIE) operator."""
    tables = build_tables(basis, rule)
    _, kmat = assemble_operators(tables, k, same_body_only=False, want_t=False, want_k=True)
    return kmat


# ---------------------------------------------------------------------------
# PMCHWT system
# ---------------------------------------------------------------------------

@dataclass
class PmchwtSystem:
    """Dense PMCHWT block system at one frequency, with reusable LU."""

    omega: float
    basis: RwgBasis
    exterior: MediumParams
    interior: MediumParams
    z: np.ndarray
    _lu: tuple | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.z.shape[0]

    def factor(self):
        if self._lu is None:
            anorm = np.linalg.norm(self.z, 1)
            lu, piv = lu_factor(self.z)
            rcond, info = _lapack.zgecon(lu, anorm)
            if info != 0 or not np.isfinite(rcond) or rcond < RCOND_MIN:
                raise BemError(
                    f"PMCHWT matrix ill-conditioned at omega={self.omega:g} "
                    f"(rcond estimate {rcond:.2e})")
            logger.debug("factorized Z (n=%d, rcond=%.2e)", self.size, rcond)
            self._lu = (lu, piv)
        return self._lu


@dataclass(frozen=True)
class SurfaceSolution:
    """Equivalent-current coefficients for one impressed excitation."""

    omega: float
    alpha: np.ndarray   # electric current coefficients (Ne,)
    beta: np.ndarray    # magnetic current coefficients (Ne,)
    source: int         # index of the excitation in the solve batch
    residual: float


def assemble_pmchwt(basis: RwgBasis, omega: float, material: DrudeMaterial | None,
                    tables: AssemblyTables | None = None,
                    interior: MediumParams | None = None) -> PmchwtSystem:
    """Assemble the 2Ne x 2Ne PMCHWT system at omega for one shared material.

    `interior` overrides the Drude medium (used by the zero-contrast and
    permittivity-limit checks).
    """
    if tables is None:
        tables = build_tables(basis)
    ext = MediumParams.vacuum(omega)
    itr = interior if interior is not None else MediumParams.interior(material, omega)
    t_ext, k_ext = assemble_operators(tables, ext.k, same_body_only=False)
    t_int, k_int = assemble_operators(tables, itr.k, same_body_only=True)

    ne = basis.size
    ksum = k_ext + k_int
    z = np.empty((2 * ne, 2 * ne), np.complex128)
    z[:ne, :ne] = ext.zeta * t_ext + itr.zeta * t_int
    z[:ne, ne:] = ksum
    z[ne:, :ne] = -ksum
    z[ne:, ne:] = t_ext / ext.zeta + t_int / itr.zeta
    if not np.all(np.isfinite(z)):
        raise BemError(f"non-finite PMCHWT matrix at omega={omega:g}")
    return PmchwtSystem(omega=omega, basis=basis, exterior=ext, interior=itr, z=z)


# ---------------------------------------------------------------------------
# Right-hand sides
# ---------------------------------------------------------------------------

def _tested_fields(basis: RwgBasis, e_field: np.ndarray, h_field: np.ndarray,
                   tables: AssemblyTables) -> np.ndarray:
    """Project (E, H) sampled on the quadrature grid onto the RWG basis."""
    ne = basis.size
    qp, qw = tables.qp, tables.qw
    tri_bas, tri_sign, tri_opp = tables.tri_bas, tables.tri_sign, tables.tri_opp
    areas = tables.tarea
    v = np.zeros(2 * ne, np.complex128)
    for s in range(3):
        idx = tri_bas[:, s]
        ok = idx >= 0
        coef = np.zeros(len(idx))
        coef[ok] = tri_sign[ok, s] * basis.length[idx[ok]] / (2 * areas[ok])
        fvals = coef[:, None, None] * (qp - tri_opp[:, s][:, None, :])
        we = np.einsum("fq,fqx,fqx->f", qw, fvals, e_field)
        wh = np.einsum("fq,fqx,fqx->f", qw, fvals, h_field)
        np.add.at(v[:ne], idx[ok], we[ok])
        np.add.at(v[ne:], idx[ok], wh[ok])
    return v


def winding_number(mesh: TriangleMesh, point) -> float:
    """Total signed solid angle of the surface seen from `point`."""
    r = np.asarray(point, dtype=np.float64)
    a, b, c = (x - r for x in mesh.corners())
    la = np.linalg.norm(a, axis=1)
    lb = np.linalg.norm(b, axis=1)
    lc = np.linalg.norm(c, axis=1)
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = (la * lb * lc + np.einsum("ij,ij->i", a, b) * lc
           + np.einsum("ij,ij->i", b, c) * la + np.einsum("ij,ij->i", c, a) * lb)
    return float(np.sum(2.0 * np.arctan2(num, den)))


def point_inside(mesh: TriangleMesh, point) -> bool:
    """Winding-number containment test, threshold 2 pi."""
    return abs(winding_number(mesh, point)) > 2 * np.pi


def dipole_rhs(basis: RwgBasis, src: DipoleSource, omega: float,
               tables: AssemblyTables | None = None) -> np.ndarray:
    """Tested incident dipole fields V = [<f_i, E_inc>; <f_i, H_inc>]."""
    if point_inside(basis.mesh, src.position):
        raise SourceInsideBodyError(
            f"dipole at {np.asarray(src.position).tolist()} lies inside a body")
    if tables is None:
        tables = build_tables(basis)
    med = MediumParams.vacuum(omega)
    pts = tables.qp.reshape(-1, 3)
    e, h = dipole_fields(src, med, omega, pts)
    shape = tables.qp.shape
    return _tested_fields(basis, e.reshape(shape), h.reshape(shape), tables)


def plane_wave_rhs(basis: RwgBasis, direction, polarization, omega: float,
                   tables: AssemblyTables | None = None) -> np.ndarray:
    """Tested unit plane wave E = pol exp(i k n.r), H = (n x pol) E / zeta0."""
    if tables is None:
        tables = build_tables(basis)
    n = np.asarray(direction, dtype=np.float64)
    n = n / np.linalg.norm(n)
    pol = np.asarray(polarization, dtype=np.float64)
    if abs(n @ pol) > 1e-12:
        raise BemError("plane-wave polarization must be orthogonal to direction")
    pts = tables.qp
    phase = np.exp(1j * omega * (pts @ n))
    e = phase[..., None] * pol
    h = phase[..., None] * np.cross(n, pol)
    return _tested_fields(basis, e, h, tables)


def factor_and_solve(system: PmchwtSystem, rhs_set) -> list[SurfaceSolution]:
    """Solve all right-hand sides with a single LU factorization.

    Enforces the residual contract ||Z j - v|| / ||v|| < 1e-8 per solve.
    """
    lu = system.factor()
    ne = system.basis.size
    solutions = []
    for idx, rhs in enumerate(rhs_set):
        rhs = np.asarray(rhs, dtype=np.complex128)
        if rhs.shape != (2 * ne,):
            raise BemError(f"rhs {idx} has shape {rhs.shape}, expected {(2 * ne,)}")
        x = lu_solve(lu, rhs)
        resid = np.linalg.norm(system.z @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if resid > RESIDUAL_TOL:
            raise BemError(
                f"solve residual {resid:.2e} exceeds {RESIDUAL_TOL:g} "
                f"at omega={system.omega:g} (rhs {idx})")
        solutions.append(SurfaceSolution(
            omega=system.omega, alpha=x[:ne].copy(), beta=x[ne:].copy(),
            source=idx, residual=float(resid)))
    return solutions


def rwg_gram(basis: RwgBasis, tables: AssemblyTables | None = None) -> np.ndarray:
    """Gram matrix G_ij = Int f_i . f_j dS (exact at the 7-point rule)."""
    if tables is None:
        tables = build_tables(basis)
    ne = basis.size
    g = np.zeros((ne, ne))
    qp, qw = tables.qp, tables.qw
    tri_bas, tri_sign, tri_opp = tables.tri_bas, tables.tri_sign, tables.tri_opp
    for f in range(basis.mesh.n_triangles):
        for s in range(3):
            p = tri_bas[f, s]
            if p < 0:
                continue
            cp = tri_sign[f, s] * basis.length[p] / (2 * tables.tarea[f])
            fp = cp * (qp[f] - tri_opp[f, s])
            for t in range(3):
                q = tri_bas[f, t]
                if q < 0:
                    continue
                cq = tri_sign[f, t] * basis.length[q] / (2 * tables.tarea[f])
                fq = cq * (qp[f] - tri_opp[f, t])
                g[p, q] += np.einsum("q,qx,qx->", qw[f], fp, fq)
    return g
