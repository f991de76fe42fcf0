"""Robust geometric sign predicates for tetrahedral meshing.

``orient3d`` and ``insphere`` decide orientation and circumsphere membership
exactly: a cheap floating-point evaluation with a forward error bound handles
the overwhelming majority of calls, and ambiguous cases fall back to exact
rational arithmetic (floats convert to ``Fraction`` without loss).

Cospherical ties are resolved by symbolic perturbation keyed to the global
vertex index: conceptually every lifted point ``(x, |x|^2)`` is lowered by an
infinitesimal that shrinks with increasing index.  Because the perturbation is
attached to point identity, all predicate outcomes are mutually consistent and
the triangulation built from them is deterministic under input reordering.

Sign conventions (locked by the test suite):
  * ``orient3d(a,b,c,d) > 0``  for the canonical tetrahedron
    (0,0,0),(1,0,0),(0,1,0),(0,0,1), i.e. ``det[b-a, c-a, d-a] > 0``.
  * ``insphere(a,b,c,d,e) > 0`` iff ``e`` lies strictly inside the
    circumsphere of a *positively oriented* (a,b,c,d).
"""

from __future__ import annotations

from fractions import Fraction

# Shewchuk-style static filter bounds for double precision.
_EPS = 2.0 ** -53
_O3D_BOUND = (7.0 + 56.0 * _EPS) * _EPS
# Constant for the insphere filter, with a safety factor of 2 because our
# evaluation order differs slightly from the published expression graph.
_ISP_BOUND = 2.0 * (16.0 + 224.0 * _EPS) * _EPS


def _orient3d_float(a, b, c, d):
    """(det, permanent) of det[b-a, c-a, d-a] in plain doubles."""
    bax = b[0] - a[0]
    bay = b[1] - a[1]
    baz = b[2] - a[2]
    cax = c[0] - a[0]
    cay = c[1] - a[1]
    caz = c[2] - a[2]
    dax = d[0] - a[0]
    day = d[1] - a[1]
    daz = d[2] - a[2]

    caydaz = cay * daz
    cazday = caz * day
    cazdax = caz * dax
    caxdaz = cax * daz
    caxday = cax * day
    caydax = cay * dax

    det = (
        bax * (caydaz - cazday)
        + bay * (cazdax - caxdaz)
        + baz * (caxday - caydax)
    )
    permanent = (
        abs(bax) * (abs(caydaz) + abs(cazday))
        + abs(bay) * (abs(cazdax) + abs(caxdaz))
        + abs(baz) * (abs(caxday) + abs(caydax))
    )
    return det, permanent


def _orient3d_exact(a, b, c, d):
    F = Fraction
    bax = F(b[0]) - F(a[0])
    bay = F(b[1]) - F(a[1])
    baz = F(b[2]) - F(a[2])
    cax = F(c[0]) - F(a[0])
    cay = F(c[1]) - F(a[1])
    caz = F(c[2]) - F(a[2])
    dax = F(d[0]) - F(a[0])
    day = F(d[1]) - F(a[1])
    daz = F(d[2]) - F(a[2])
    det = (
        bax * (cay * daz - caz * day)
        + bay * (caz * dax - cax * daz)
        + baz * (cax * day - cay * dax)
    )
    if det > 0:
        return 1
    if det < 0:
        return -1
    return 0


def orient3d(a, b, c, d):
    """Sign of the signed volume of tetrahedron (a, b, c, d).

    Returns +1, 0 or -1; the decision is exact.
    """
    det, permanent = _orient3d_float(a, b, c, d)
    errbound = _O3D_BOUND * permanent
    if det > errbound:
        return 1
    if det < -errbound:
        return -1
    return _orient3d_exact(a, b, c, d)


def _insphere_float(a, b, c, d, e):
    """(det, permanent) for the insphere determinant relative to e."""
    aex = a[0] - e[0]
    aey = a[1] - e[1]
    aez = a[2] - e[2]
    bex = b[0] - e[0]
    bey = b[1] - e[1]
    bez = b[2] - e[2]
    cex = c[0] - e[0]
    cey = c[1] - e[1]
    cez = c[2] - e[2]
    dex = d[0] - e[0]
    dey = d[1] - e[1]
    dez = d[2] - e[2]

    ab = aex * bey - bex * aey
    bc = bex * cey - cex * bey
    cd = cex * dey - dex * cey
    da = dex * aey - aex * dey
    ac = aex * cey - cex * aey
    bd = bex * dey - dex * bey

    abc = aez * bc - bez * ac + cez * ab
    bcd = bez * cd - cez * bd + dez * bc
    cda = cez * da + dez * ac + aez * cd
    dab = dez * ab + aez * bd + bez * da

    alift = aex * aex + aey * aey + aez * aez
    blift = bex * bex + bey * bey + bez * bez
    clift = cex * cex + cey * cey + cez * cez
    dlift = dex * dex + dey * dey + dez * dez

    det = (dlift * abc - clift * dab) + (blift * cda - alift * bcd)

    ab_a = abs(aex * bey) + abs(bex * aey)
    bc_a = abs(bex * cey) + abs(cex * bey)
    cd_a = abs(cex * dey) + abs(dex * cey)
    da_a = abs(dex * aey) + abs(aex * dey)
    ac_a = abs(aex * cey) + abs(cex * aey)
    bd_a = abs(bex * dey) + abs(dex * bey)
    abc_a = abs(aez) * bc_a + abs(bez) * ac_a + abs(cez) * ab_a
    bcd_a = abs(bez) * cd_a + abs(cez) * bd_a + abs(dez) * bc_a
    cda_a = abs(cez) * da_a + abs(dez) * ac_a + abs(aez) * cd_a
    dab_a = abs(dez) * ab_a + abs(aez) * bd_a + abs(bez) * da_a
    permanent = dlift * abc_a + clift * dab_a + blift * cda_a + alift * bcd_a
    return det, permanent


def _insphere_exact(a, b, c, d, e):
    """Exact oriented insphere sign for float inputs."""
    F = Fraction
    return _insphere_exact_generic(
        (F(a[0]), F(a[1]), F(a[2])),
        (F(b[0]), F(b[1]), F(b[2])),
        (F(c[0]), F(c[1]), F(c[2])),
        (F(d[0]), F(d[1]), F(d[2])),
        (F(e[0]), F(e[1]), F(e[2])),
    )


# The float evaluation computes (dlift*abc - clift*dab) + (blift*cda - alift*bcd),
# which is the *negation* of the oriented convention (inside positive); the
# exact Laplace expansion yields the oriented sign directly.


def insphere(a, b, c, d, e):
    """Sign test for e against the circumsphere of positively oriented (a,b,c,d).

    Returns +1 if e is strictly inside, -1 if strictly outside, 0 if the five
    points are exactly cospherical.  The decision is exact.
    """
    det, permanent = _insphere_float(a, b, c, d, e)
    errbound = _ISP_BOUND * permanent
    if det > errbound:
        return -1
    if det < -errbound:
        return 1
    return _insphere_exact(a, b, c, d, e)


# Cofactor table for the symbolic perturbation of the insphere test.  With the
# lifted value of point at argument slot k lowered by an infinitesimal, the
# perturbed sign is the sign of the cofactor of that slot's lift entry; slots
# are tried in increasing global-index order and the first nonzero cofactor
# wins.  Each cofactor reduces to an orient3d of the remaining four points.
_COFACTOR_ORDER = (
    (0, (1, 2, 3, 4), 1),
    (1, (0, 2, 3, 4), -1),
    (2, (0, 1, 3, 4), 1),
    (3, (0, 1, 2, 4), -1),
    (4, (0, 1, 2, 3), 1),
)


def insphere_sos(a, b, c, d, e, ia, ib, ic, id_, ie):
    """Insphere test with symbolic-perturbation tie-breaking.

    ``ia .. ie`` are the global vertex indices of the five points.  Never
    returns 0: exactly cospherical configurations are resolved by the
    index-keyed perturbation, consistently across all calls.
    """
    s = insphere(a, b, c, d, e)
    if s != 0:
        return s
    pts = (a, b, c, d, e)
    idx = (ia, ib, ic, id_, ie)
    for slot in sorted(range(5), key=lambda k: idx[k]):
        _, others, sign = _COFACTOR_ORDER[slot]
        o = orient3d(pts[others[0]], pts[others[1]], pts[others[2]], pts[others[3]])
        if o != 0:
            return sign * o
    # Unreachable for a positively oriented (a,b,c,d): the e-slot cofactor is
    # orient3d(a,b,c,d) != 0.
    raise ArithmeticError("degenerate insphere configuration")


def _orient3d_exact_fr(a, b, c, d):
    """Exact orient3d where inputs may already be Fractions."""
    bax, bay, baz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    cax, cay, caz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    dax, day, daz = d[0] - a[0], d[1] - a[1], d[2] - a[2]
    det = (
        bax * (cay * daz - caz * day)
        + bay * (caz * dax - cax * daz)
        + baz * (cax * day - cay * dax)
    )
    if det > 0:
        return 1
    if det < 0:
        return -1
    return 0


def _insphere_exact_generic(a, b, c, d, e):
    """Oriented insphere sign on generic (Fraction-valued) coordinates."""
    rows = []
    ex, ey, ez = e
    for p in (a, b, c, d):
        px, py, pz = p[0] - ex, p[1] - ey, p[2] - ez
        rows.append((px, py, pz, px * px + py * py + pz * pz))

    def det3(r0, r1, r2):
        return (
            r0[0] * (r1[1] * r2[2] - r1[2] * r2[1])
            - r0[1] * (r1[0] * r2[2] - r1[2] * r2[0])
            + r0[2] * (r1[0] * r2[1] - r1[1] * r2[0])
        )

    r0, r1, r2, r3 = rows
    det = (
        r0[3] * det3(r1, r2, r3)
        - r1[3] * det3(r0, r2, r3)
        + r2[3] * det3(r0, r1, r3)
        - r3[3] * det3(r0, r1, r2)
    )
    if det > 0:
        return 1
    if det < 0:
        return -1
    return 0


def incircle_on_facet_sos(a, b, c, p, ia, ib, ic, ip):
    """Circumcircle membership for coplanar points, with tie-breaking.

    ``a, b, c, p`` must be exactly coplanar; returns +1 if ``p`` lies strictly
    inside the circumcircle of triangle ``(a, b, c)`` within their common
    plane, -1 outside, with exactly cocircular cases resolved by the same
    index-keyed perturbation as ``insphere_sos``.

    Works by lifting the triangle off its plane: any sphere through a, b, c
    and an off-plane point cuts the plane exactly in the triangle's
    circumcircle.  The auxiliary point is built in exact arithmetic and takes
    no part in the perturbation.
    """
    F = Fraction
    fa = (F(a[0]), F(a[1]), F(a[2]))
    fb = (F(b[0]), F(b[1]), F(b[2]))
    fc = (F(c[0]), F(c[1]), F(c[2]))
    fp = (F(p[0]), F(p[1]), F(p[2]))
    ux, uy, uz = fb[0] - fa[0], fb[1] - fa[1], fb[2] - fa[2]
    vx, vy, vz = fc[0] - fa[0], fc[1] - fa[1], fc[2] - fa[2]
    nx, ny, nz = uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx
    if nx == 0 and ny == 0 and nz == 0:
        raise ArithmeticError("degenerate facet in incircle test")
    q = (fa[0] + nx, fa[1] + ny, fa[2] + nz)
    # (a, b, c, q) is positively oriented: det[b-a, c-a, n] = |n|^2 > 0.
    s = _insphere_exact_generic(fa, fb, fc, q, fp)
    if s != 0:
        return s
    # Cocircular: perturb by index; q (slot 3) is unperturbed and skipped.
    pts = (fa, fb, fc, q, fp)
    idx = {0: ia, 1: ib, 2: ic, 4: ip}
    for slot in sorted(idx, key=lambda k: idx[k]):
        _, others, sign = _COFACTOR_ORDER[slot]
        o = _orient3d_exact_fr(pts[others[0]], pts[others[1]], pts[others[2]], pts[others[3]])
        if o != 0:
            return sign * o
    raise ArithmeticError("degenerate incircle configuration")
