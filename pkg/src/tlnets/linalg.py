"""Thin SVD of short-and-wide matrices by one-sided (Hestenes) Jacobi.

Matrices are oriented ``(k, n)`` with ``k <= n``; the factorisation is
``x = U @ diag(S) @ V`` with ``U`` of shape ``(k, k)`` and ``V`` of shape
``(k, n)`` having orthonormal rows. Leading axes are a batch and are
processed together.
"""
from typing import NamedTuple

import numpy as np

__all__ = ["SvdFactors", "ConvergenceError", "svd_factors"]

MAX_SWEEPS = 60
_TOL = 1e-15


class ConvergenceError(ArithmeticError):
    """Raised when the Jacobi sweeps hit the iteration cap."""

    def __init__(self, residual, sweeps):
        super().__init__(
            f"Jacobi SVD did not converge after {sweeps} sweeps "
            f"(max off-diagonal cosine {residual:.3e})"
        )
        self.residual = residual
        self.sweeps = sweeps


class SvdFactors(NamedTuple):
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


def _complete_rows(v, s):
    # rows with s == 0 carry no direction; fill them with an orthonormal completion
    k, n = v.shape
    keep = [i for i in range(k) if s[i] > 0]
    basis = [v[i] for i in keep]
    for i in range(k):
        if s[i] > 0:
            continue
        for j in range(n):
            cand = np.zeros(n)
            cand[j] = 1.0
            for b in basis:
                cand -= (b @ cand) * b
            for b in basis:
                cand -= (b @ cand) * b
            norm = np.linalg.norm(cand)
            if norm > 1e-8:
                v[i] = cand / norm
                basis.append(v[i])
                break
    return v


def _round_robin(k):
    """Brent-Luk style schedule: every pair once per sweep, disjoint within a round."""
    players = list(range(k + (k % 2)))
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < k and b < k]
        if pairs:
            rounds.append((np.array([a for a, _ in pairs]), np.array([b for _, b in pairs])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def svd_factors(x, max_sweeps=MAX_SWEEPS):
    """Deterministic thin SVD with a fixed sign convention.

    Singular values come out nonincreasing. In every column of ``U`` the
    entry of largest magnitude is made nonnegative (lowest row wins ties) and
    the matching row of ``V`` is flipped with it.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim < 2:
        raise ValueError(f"svd expects a matrix, got shape {x.shape}")
    k, n = x.shape[-2:]
    if k > n:
        raise ValueError(
            f"svd expects k <= n, got a ({k}, {n}) matrix; transpose it to (features, time) first"
        )
    lead = x.shape[:-2]
    w = x.reshape((-1, k, n)).copy()
    b = w.shape[0]
    q = np.broadcast_to(np.eye(k), (b, k, k)).copy()

    rounds = _round_robin(k)
    residual = 0.0
    for _ in range(max_sweeps):
        residual = 0.0
        for p, r in rounds:
            wp = w[:, p, :]
            wr = w[:, r, :]
            alpha = np.einsum("bpi,bpi->bp", wp, wp)
            beta = np.einsum("bpi,bpi->bp", wr, wr)
            gamma = np.einsum("bpi,bpi->bp", wp, wr)
            denom = np.sqrt(alpha * beta)
            active = np.abs(gamma) > _TOL * denom
            if not active.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                cosine = np.where(denom > 0, np.abs(gamma) / denom, 0.0)
            residual = max(residual, float(cosine.max()))
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            sn = c * t
            c = np.where(active, c, 1.0)[..., None]
            sn = np.where(active, sn, 0.0)[..., None]
            w[:, p, :] = c * wp - sn * wr
            w[:, r, :] = sn * wp + c * wr
            qp = q[:, p, :]
            qr = q[:, r, :]
            q[:, p, :] = c * qp - sn * qr
            q[:, r, :] = sn * qp + c * qr
        if residual <= _TOL * 10:
            break
    else:
        if residual > 1e-10:
            raise ConvergenceError(residual, max_sweeps)

    sv = np.linalg.norm(w, axis=-1)
    order = np.argsort(-sv, axis=-1, kind="stable")
    sv = np.take_along_axis(sv, order, axis=-1)
    w = np.take_along_axis(w, order[:, :, None], axis=1)
    u = np.transpose(q, (0, 2, 1))
    u = np.take_along_axis(u, order[:, None, :], axis=2)

    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(sv[:, :, None] > 0, w / sv[:, :, None], 0.0)
    for i in np.flatnonzero((sv == 0).any(axis=1)):
        v[i] = _complete_rows(v[i], sv[i])

    # argmax returns the first maximum, which is the lowest-row tie break
    pivot = np.argmax(np.abs(u), axis=1)
    signs = np.where(np.take_along_axis(u, pivot[:, None, :], axis=1)[:, 0, :] < 0, -1.0, 1.0)
    u = u * signs[:, None, :]
    v = v * signs[:, :, None]

    return SvdFactors(
        u.reshape(lead + (k, k)), sv.reshape(lead + (k,)), v.reshape(lead + (k, n))
    )
