"""Max-min fair rates over linear resource constraints (progressive filling)."""

from __future__ import annotations

import numpy as np


def max_min_fair(coef, capacity, caps, weights=None, tol: float = 1e-12) -> np.ndarray:
    """Rates ``x`` with ``coef.T @ x <= capacity`` and ``x <= caps``, max-min fair.

    ``coef`` is (flows, constraints) in units per Mbps.  All unfrozen flows grow
    at speed ``weights`` until a constraint saturates or they reach their cap;
    flows touching a saturated constraint then freeze.  Every flow must be
    bounded by a finite cap or a constraint.
    """
    coef = np.asarray(coef, dtype=float)
    nf = coef.shape[0]
    if nf == 0:
        return np.zeros(0)
    coef = coef.reshape(nf, -1)
    caps = np.broadcast_to(np.asarray(caps, dtype=float), (nf,)).copy()
    cap_k = np.broadcast_to(np.asarray(capacity, dtype=float), (coef.shape[1],))
    w = np.ones(nf) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    x = np.zeros(nf)
    cap_tol = np.where(np.isfinite(caps), tol * np.maximum(1.0, caps), 0.0)
    active = caps > 0
    touches = coef > 0
    while active.any():
        speed = np.where(active, w, 0.0)
        load = speed @ coef
        room = cap_k - x @ coef
        binding = load > 0
        t_keys = np.min(np.maximum(room[binding], 0.0) / load[binding]) if binding.any() else np.inf
        t_caps = np.min((caps[active] - x[active]) / w[active])
        t = min(t_keys, t_caps)
        if not np.isfinite(t):
            raise ValueError("unbounded flow: no finite cap and no constraint")
        x = x + speed * t
        room = cap_k - x @ coef
        full = binding & (room <= tol * np.maximum(1.0, np.abs(cap_k)))
        frozen = (x >= caps - cap_tol) | touches[:, full].any(axis=1)
        x = np.where(active & (x > caps), caps, x)
        active &= ~frozen
    return x


def is_max_min_fair(coef, capacity, caps, x, tol: float = 1e-7) -> bool:
    """Check the definition directly: each flow is capped or crosses a saturated
    constraint on which no other flow has a strictly larger rate."""
    coef = np.asarray(coef, dtype=float).reshape(len(x), -1)
    x = np.asarray(x, dtype=float)
    caps = np.broadcast_to(np.asarray(caps, dtype=float), x.shape)
    cap_k = np.broadcast_to(np.asarray(capacity, dtype=float), (coef.shape[1],))
    used = x @ coef
    if np.any(used > cap_k + tol) or np.any(x > caps + tol) or np.any(x < -tol):
        return False
    saturated = used >= cap_k - tol
    for f in range(len(x)):
        if x[f] >= caps[f] - tol:
            continue
        ok = False
        for k in np.flatnonzero(saturated & (coef[f] > 0)):
            users = coef[:, k] > 0
            if x[users].max() <= x[f] + tol:
                ok = True
                break
        if not ok:
            return False
    return True


def per_device_fair(coef, capacity, caps) -> np.ndarray:
    """Rates when every constraint splits its budget on its own, with no backpressure.

    Each constraint gives its flows equal Mbps (capped at what they offer) until
    its budget is spent; a flow then gets the smallest share it meets.  Capacity
    that one constraint hands to a flow bottlenecked elsewhere is wasted, which
    is what uncontrolled senders do to a shared channel.
    """
    coef = np.asarray(coef, dtype=float)
    nf = coef.shape[0]
    if nf == 0:
        return np.zeros(0)
    coef = coef.reshape(nf, -1)
    caps = np.broadcast_to(np.asarray(caps, dtype=float), (nf,)).astype(float)
    cap_k = np.broadcast_to(np.asarray(capacity, dtype=float), (coef.shape[1],))
    x = caps.copy()
    for k in range(coef.shape[1]):
        users = np.flatnonzero(coef[:, k] > 0)
        if len(users) == 0:
            continue
        share = _single_fill(coef[users, k], cap_k[k], caps[users])
        x[users] = np.minimum(x[users], share)
    return x


def _single_fill(c, budget, caps) -> np.ndarray:
    """Max-min split of one budget: ``sum(c * x) <= budget``, ``x <= caps``."""
    order = np.argsort(caps, kind="stable")
    c, caps_sorted = c[order], caps[order]
    out = np.empty(len(c))
    left, weight = float(budget), float(c.sum())
    for i in range(len(c)):
        level = left / weight if weight > 0 else np.inf
        if caps_sorted[i] <= level:
            out[i] = caps_sorted[i]
            left -= c[i] * caps_sorted[i]
            weight -= c[i]
        else:
            out[i:] = level
            break
    res = np.empty(len(c))
    res[order] = out
    return res
