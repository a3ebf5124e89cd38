"""Imaginary-time evolution of a matrix product state on a diagonal QUBO Hamiltonian.

Because ``H = x^T Q x`` is diagonal in the computational basis, ``exp(-tau H)``
is an exact product of commuting single-site factors ``exp(-tau Q_ii x_i)``
and pair factors ``exp(-2 tau Q_ij x_i x_j)``.  All pair factors that share
their first site ``i`` form one controlled-product operator of bond dimension
2 (branch on ``x_i``, diagonal factors on the partners), applied as an
operator chain from ``i`` to its farthest partner.  Each chain is followed by
an SVD compression of the touched bonds back to ``bond_dim``.
"""

import time

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .._validation import check_random_state
from ..exceptions import ConfigError, MpsUnderflowError
from .base import BaseSolver, SolutionSet, rank_candidates

_SVD_CUTOFF = 1e-13


class Mps:
    """Open-boundary MPS over binary sites; tensors are ``(left, 2, right)``."""

    def __init__(self, tensors, bond_dim=None):
        self.tensors = [np.asarray(a, dtype=float) for a in tensors]
        self.bond_dim = bond_dim
        self.discarded_weight = 0.0

    @classmethod
    def uniform(cls, n, bond_dim=None):
        site = np.full((1, 2, 1), 1.0 / np.sqrt(2.0))
        return cls([site.copy() for _ in range(n)], bond_dim)

    def __len__(self):
        return len(self.tensors)

    def bond_dimensions(self):
        return [a.shape[2] for a in self.tensors[:-1]]

    def norm(self):
        env = np.ones((1, 1))
        for a in self.tensors:
            env = np.einsum("ab,axc,bxd->cd", env, a, a, optimize=True)
        return float(np.sqrt(max(env[0, 0], 0.0)))

    def to_dense(self):
        """Full amplitude vector, first site most significant (small chains only)."""
        if len(self) > 22:
            raise ConfigError("to_dense is limited to 22 sites")
        psi = np.ones((1, 1))
        for a in self.tensors:
            psi = np.einsum("pl,lxr->pxr", psi, a).reshape(-1, a.shape[2])
        return psi[:, 0]

    # -- canonical-form moves ----------------------------------------------

    def move_right(self, k):
        a = self.tensors[k]
        dl, _, dr = a.shape
        q, r = np.linalg.qr(a.reshape(dl * 2, dr))
        self.tensors[k] = q.reshape(dl, 2, q.shape[1])
        self.tensors[k + 1] = np.tensordot(r, self.tensors[k + 1], axes=(1, 0))

    def move_left(self, k):
        a = self.tensors[k]
        dl, _, dr = a.shape
        q, r = np.linalg.qr(a.reshape(dl, 2 * dr).T)
        self.tensors[k] = q.T.reshape(q.shape[1], 2, dr)
        self.tensors[k - 1] = np.tensordot(self.tensors[k - 1], r.T, axes=(2, 0))

    def truncate_left(self, k, bond_dim):
        """SVD site ``k`` against its left bond, keep ``bond_dim`` values, push ``U S`` left."""
        a = self.tensors[k]
        dl, _, dr = a.shape
        try:
            u, s, vh = np.linalg.svd(a.reshape(dl, 2 * dr), full_matrices=False)
        except np.linalg.LinAlgError:
            raise MpsUnderflowError("SVD failed; use smaller tau steps") from None
        total = float(s @ s)
        if total == 0.0 or not np.isfinite(total):
            raise MpsUnderflowError(
                "MPS norm vanished during imaginary-time evolution; shrink the tau steps"
            )
        keep = int(np.count_nonzero(s > _SVD_CUTOFF * s[0]))
        if bond_dim is not None:
            keep = min(keep, bond_dim)
        keep = max(keep, 1)
        self.discarded_weight += float(s[keep:] @ s[keep:]) / total
        self.tensors[k] = vh[:keep].reshape(keep, 2, dr)
        self.tensors[k - 1] = np.tensordot(self.tensors[k - 1], u[:, :keep] * s[:keep], axes=(2, 0))

    def normalize_site(self, k):
        nrm = float(np.linalg.norm(self.tensors[k]))
        if nrm == 0.0 or not np.isfinite(nrm):
            raise MpsUnderflowError(
                "MPS norm vanished during imaginary-time evolution; shrink the tau steps"
            )
        self.tensors[k] = self.tensors[k] / nrm
        return nrm

    def right_canonicalize(self):
        for k in range(len(self) - 1, 0, -1):
            self.move_left(k)
        self.normalize_site(0)

    # -- readout (expects right-canonical form with unit norm) -------------

    def argmax_decode(self):
        """Sequential conditional argmax of the Born distribution."""
        env = np.ones(1)
        out = np.zeros(len(self), dtype=np.uint8)
        for k, a in enumerate(self.tensors):
            v = np.tensordot(env, a, axes=(0, 0))
            p = np.einsum("xr,xr->x", v, v)
            x = int(np.argmax(p))
            out[k] = x
            env = v[x] / np.sqrt(p[x]) if p[x] > 0 else v[x]
        return out

    def sample(self, count, rng):
        """``count`` independent draws from the Born distribution."""
        env = np.ones((count, 1))
        out = np.zeros((count, len(self)), dtype=np.uint8)
        for k, a in enumerate(self.tensors):
            v = np.einsum("sl,lxr->sxr", env, a)
            p = np.einsum("sxr,sxr->sx", v, v)
            tot = p.sum(axis=1)
            tot[tot == 0] = 1.0
            x = (rng.random(count) * tot > p[:, 0]).astype(np.uint8)
            out[:, k] = x
            chosen = v[np.arange(count), x]
            nrm = np.sqrt(p[np.arange(count), x])
            nrm[nrm == 0] = 1.0
            env = chosen / nrm[:, None]
        return out


def site_ordering(Q, method="rcm"):
    """Chain position of each variable: ``natural`` or reverse Cuthill-McKee bandwidth reduction."""
    n = Q.shape[0]
    if method == "natural":
        return np.arange(n)
    if method == "rcm":
        graph = sparse.csr_matrix((np.abs(Q) > 0).astype(np.int8))
        return np.asarray(reverse_cuthill_mckee(graph, symmetric_mode=True), dtype=int)
    raise ConfigError(f"unknown site ordering {method!r}")


def default_tau_schedule(q, rng, samples=1000):
    """10 steps of ``0.05/s`` then 10 of ``0.5/s``, ``s`` the energy spread of random strings."""
    X = rng.integers(0, 2, size=(samples, q.n_variables))
    spread = float(np.std(q.energy(X), ddof=1)) if q.n_variables else 0.0
    if not spread > 0:
        spread = max(float(np.abs(q.Q).max()), 1.0)
    return [0.05 / spread] * 10 + [0.5 / spread] * 10


def _row_operators(Q, tau):
    """Per site ``i``: branch weights at ``i`` and partner factors on later sites.

    Returns a list of ``(g, partners)`` where ``g[x]`` scales site ``i`` for
    ``x_i = x`` and ``partners`` is ``[(j, f_j)]`` with ``f_j`` the ``x_j``
    diagonal applied on the ``x_i = 1`` branch.  All entries are at most 1;
    the dropped constants only rescale the state.
    """
    n = Q.shape[0]
    rows = []
    for i in range(n):
        js = np.nonzero(Q[i, i + 1 :])[0] + i + 1
        expo = -2.0 * tau * Q[i, js]  # log of the pair factor on x_i = x_j = 1
        pos = expo > 0
        log_w = np.array([-expo[pos].sum(), -tau * Q[i, i]])
        g = np.exp(log_w - log_w.max())
        partners = []
        for j, e, p in zip(js, expo, pos):
            f = np.array([np.exp(-e), 1.0]) if p else np.array([1.0, np.exp(e)])
            partners.append((int(j), f))
        rows.append((g, partners))
    return rows


def _apply_row(mps, i, g, partners, bond_dim):
    """Apply one controlled-product chain rooted at site ``i`` and recompress."""
    A = mps.tensors
    if not partners:
        A[i] = A[i] * g[None, :, None]
        return
    jmax = partners[-1][0]
    fac = dict(partners)
    a = A[i] * g[None, :, None]
    dl, _, dr = a.shape
    b = np.zeros((dl, 2, 2, dr))
    b[:, 0, 0, :] = a[:, 0, :]
    b[:, 1, 1, :] = a[:, 1, :]
    A[i] = b.reshape(dl, 2, 2 * dr)
    for j in range(i + 1, jmax + 1):
        a = A[j]
        dl, _, dr = a.shape
        f = fac.get(j)
        a1 = a if f is None else a * f[None, :, None]
        if j < jmax:
            b = np.zeros((2, dl, 2, 2, dr))
            b[0, :, :, 0, :] = a
            b[1, :, :, 1, :] = a1
            A[j] = b.reshape(2 * dl, 2, 2 * dr)
        else:
            A[j] = np.concatenate([a, a1], axis=0)
    for k in range(i, jmax):
        mps.move_right(k)
    for k in range(jmax, i, -1):
        mps.truncate_left(k, bond_dim)


def solve_mps(
    q,
    bond_dim=16,
    tau_schedule=None,
    sweeps=1,
    samples=256,
    seed=0,
    ordering="rcm",
    callback=None,
):
    """Imaginary-time evolution from the uniform superposition, then readout.

    Every entry of ``tau_schedule`` is applied ``sweeps`` times; one sweep
    applies ``exp(-tau H)`` completely.  Afterwards the MPS is decoded by
    sequential conditional argmax and by ``samples`` Born-rule draws, and all
    candidates are re-scored exactly.  ``callback(sweep, mps)`` runs after
    every sweep; a truthy return value stops the evolution.
    """
    start = time.perf_counter()
    if bond_dim is None or bond_dim < 1:
        raise ConfigError("bond_dim must be >= 1")
    rng = check_random_state(seed)
    n = q.n_variables
    order = site_ordering(q.Q, ordering)
    Qp = q.Q[np.ix_(order, order)]
    if tau_schedule is None:
        tau_schedule = default_tau_schedule(q, rng)
    tau_schedule = [float(t) for t in tau_schedule]
    if any(t < 0 for t in tau_schedule):
        raise ConfigError("tau values must be non-negative")

    mps = Mps.uniform(n, bond_dim)
    norms, discarded = [], []
    sweep = 0
    stopped = False
    for tau in tau_schedule:
        rows = _row_operators(Qp, tau)
        for _ in range(sweeps):
            try:
                for i, (g, partners) in enumerate(rows):
                    _apply_row(mps, i, g, partners, bond_dim)
                    mps.normalize_site(i)
                    if i < n - 1:
                        mps.move_right(i)
                mps.right_canonicalize()
            except MpsUnderflowError as exc:
                raise MpsUnderflowError(
                    f"{exc} (tau={tau:.3g}, sweep {sweep + 1})"
                ) from None
            sweep += 1
            norms.append(mps.norm())
            discarded.append(mps.discarded_weight)
            if callback is not None and callback(sweep, mps):
                stopped = True
                break
        if stopped:
            break

    cands = [mps.argmax_decode()]
    if samples:
        cands.append(mps.sample(samples, rng))
    chain_bits = np.vstack(cands)
    bits = np.empty_like(chain_bits)
    bits[:, order] = chain_bits
    argmax_bits = "".join(map(str, bits[0]))
    entries = rank_candidates(bits, q.energy(bits))
    return SolutionSet(
        entries,
        "mps",
        seed,
        time.perf_counter() - start,
        sweep,
        {
            "bond_dim": bond_dim,
            "tau_schedule": tau_schedule,
            "sweeps_per_tau": sweeps,
            "samples": samples,
            "ordering": ordering,
            "norm_history": norms,
            "discarded_weight": discarded,
            "max_bond": max(mps.bond_dimensions(), default=1),
            "argmax_bits": argmax_bits,
            "stopped_early": stopped,
        },
    )


class MpsSolver(BaseSolver):
    """Estimator wrapper around :func:`solve_mps`."""

    def __init__(self, bond_dim=16, tau_schedule=None, sweeps=1, samples=256, seed=0,
                 ordering="rcm"):
        self.bond_dim = bond_dim
        self.tau_schedule = tau_schedule
        self.sweeps = sweeps
        self.samples = samples
        self.seed = seed
        self.ordering = ordering

    def solve(self, instance):
        return solve_mps(instance, self.bond_dim, self.tau_schedule, self.sweeps,
                         self.samples, self.seed, self.ordering)
