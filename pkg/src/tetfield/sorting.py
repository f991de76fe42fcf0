"""Front-to-back visibility ordering of tets via circumsphere power.

For rays sharing one origin ``o``, sorting tets by the power
``P(T) = |center(T) - o|^2 - radius(T)^2`` of their circumspheres yields a
correct front-to-back order along every such ray: the shared face of two
adjacent tets lies on the radical plane of their circumspheres, so the
nearer-tet relation can only flip when the origin crosses that plane.  The
order depends on the origin only, which also covers fisheye projections.
"""

from __future__ import annotations

import numpy as np


def power_key(circumcenter, circumradius_sq, origin):
    """Power of ``origin`` with respect to one circumsphere."""
    d = np.asarray(circumcenter, dtype=np.float64) - np.asarray(origin, dtype=np.float64)
    return float(d @ d) - float(circumradius_sq)


def power_keys(mesh, origin):
    """Vectorized power of ``origin`` against every tet circumsphere."""
    d = mesh.circumcenters - np.asarray(origin, dtype=np.float64)
    return np.einsum("tc,tc->t", d, d) - mesh.circumradius_sq


def float_keys_to_uint64(keys):
    """Map float64 keys to uint64 preserving order, for radix sorting.

    Negative zero is canonicalized to positive zero so equal-comparing keys
    map to equal integers (stability then matches a stable comparison sort).
    NaN keys are rejected.
    """
    keys = np.ascontiguousarray(keys, dtype=np.float64)
    if np.isnan(keys).any():
        raise ValueError("NaN sort key")
    keys = np.where(keys == 0.0, 0.0, keys)  # -0.0 -> +0.0
    bits = keys.view(np.uint64)
    sign = bits >> np.uint64(63)
    flipped = np.where(
        sign.astype(bool),
        ~bits,
        bits | np.uint64(0x8000000000000000),
    )
    return flipped


def sort_keys(keys):
    """Stable ascending permutation of float keys.

    Keys are mapped to order-preserving uint64 and sorted by an LSD radix
    sort over 8-bit digits (numpy's stable integer sort); ties keep input
    order, so equal powers break by tet index.
    """
    u = float_keys_to_uint64(keys)
    return np.argsort(u, kind="stable")


def visibility_order(mesh, origin):
    """Permutation of tets front-to-back for rays from ``origin``."""
    return sort_keys(power_keys(mesh, origin))
