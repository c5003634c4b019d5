"""Observable dictionaries used to lift state (or delay-vector) data.

A dictionary maps an input vector ``w`` of length ``n_in`` to ``z`` of length
``p``. For state-space lifting ``w`` is the state; for input/output models it
is a delay vector built by :func:`delay_embed`.

Dictionaries are immutable and serialize to plain JSON-able dicts
(``kind``, ``params``, ``seed``, ...), never to closures.
"""

from __future__ import annotations

import itertools
from typing import NamedTuple

import numpy as np

from .errors import InvalidInput, NoGradient


class Dictionary:
    kind = "base"
    has_gradient = False

    def __init__(self, n_in: int, p: int, state_indices=None, seed=None):
        self.n_in = int(n_in)
        self.p = int(p)
        self.state_indices = None if state_indices is None else tuple(int(i) for i in state_indices)
        self.seed = seed

    @property
    def include_state(self) -> bool:
        return self.state_indices is not None

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] != self.n_in:
            raise InvalidInput(f"{self.kind} dictionary expects {self.n_in} rows, got shape {X.shape}")
        return X

    def batch(self, X) -> np.ndarray:
        return self._batch(self._check(X))

    def __call__(self, x) -> np.ndarray:
        return self.batch(np.asarray(x, dtype=float).reshape(self.n_in, 1))[:, 0]

    def grad(self, x) -> np.ndarray:
        """Jacobian dz/dw at a single point, shape ``(p, n_in)``."""
        raise NoGradient(f"{self.kind} dictionary has no analytic gradient")

    def recovery_matrix(self) -> np.ndarray | None:
        """Selector C with ``C @ z`` returning the included state, or None."""
        if self.state_indices is None:
            return None
        C = np.zeros((len(self.state_indices), self.p))
        for row, idx in enumerate(self.state_indices):
            C[row, idx] = 1.0
        return C

    def state_recovery(self, z) -> np.ndarray:
        if self.state_indices is None:
            raise InvalidInput("dictionary does not include the state; fit a recovery matrix instead")
        z = np.asarray(z)
        return z[list(self.state_indices)]

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _batch(self, X):
        raise NotImplementedError


class IdentityDictionary(Dictionary):
    kind = "identity"
    has_gradient = True

    def __init__(self, n: int):
        super().__init__(n, n, tuple(range(n)))

    def _batch(self, X):
        return X.copy()

    def grad(self, x):
        return np.eye(self.n_in)

    def to_dict(self):
        return {"kind": self.kind, "params": {"n": self.n_in}, "seed": None, "include_state": True}


def monomial_exponents(n: int, max_degree: int, min_degree: int = 1) -> list[tuple[int, ...]]:
    """Exponent tuples in graded lexicographic order (x1 > x2 > ... within a degree)."""
    out = []
    for d in range(min_degree, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), d):
            e = [0] * n
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return out


class MonomialDictionary(Dictionary):
    kind = "monomial"
    has_gradient = True

    def __init__(
        self,
        n: int,
        max_degree: int | None = None,
        include_state: bool = True,
        include_constant: bool = False,
        exponents=None,
    ):
        self.custom = exponents is not None
        if self.custom:
            exps = [tuple(int(k) for k in e) for e in exponents]
            if not exps or any(len(e) != n or min(e) < 0 for e in exps):
                raise InvalidInput(f"exponents must be nonnegative tuples of length {n}")
            if len(set(exps)) != len(exps):
                raise InvalidInput("repeated exponent tuple")
            max_degree = max(sum(e) for e in exps)
            units = [tuple(int(i == j) for i in range(n)) for j in range(n)]
            include_state = all(u in exps for u in units)
            include_constant = tuple([0] * n) in exps
            state_idx = tuple(exps.index(u) for u in units) if include_state else None
        else:
            if max_degree is None or max_degree < 1:
                raise InvalidInput("max_degree must be >= 1")
            exps = monomial_exponents(n, max_degree, 1 if include_state else 2)
            if include_constant:
                exps = [tuple([0] * n)] + exps
            if not exps:
                raise InvalidInput("monomial dictionary would be empty")
            state_idx = None
            if include_state:
                offset = 1 if include_constant else 0
                state_idx = tuple(range(offset, offset + n))
        self.degree = int(max_degree)
        self.include_constant = bool(include_constant)
        self.exponents = np.array(exps, dtype=int).reshape(len(exps), n)
        super().__init__(n, len(exps), state_idx)

    def _batch(self, X):
        out = np.ones((self.p, X.shape[1]))
        for row, e in enumerate(self.exponents):
            for i, k in enumerate(e):
                if k:
                    out[row] *= X[i] ** k
        return out

    def grad(self, x):
        x = np.asarray(x, dtype=float).reshape(self.n_in)
        G = np.zeros((self.p, self.n_in))
        for row, e in enumerate(self.exponents):
            for j in range(self.n_in):
                if e[j] == 0:
                    continue
                val = float(e[j])
                for i, k in enumerate(e):
                    power = k - 1 if i == j else k
                    if power:
                        val *= x[i] ** power
                G[row, j] = val
        return G

    def names(self, symbols=None) -> list[str]:
        symbols = symbols or [f"x{i + 1}" for i in range(self.n_in)]
        out = []
        for e in self.exponents:
            parts = [s if k == 1 else f"{s}^{k}" for s, k in zip(symbols, e) if k]
            out.append("*".join(parts) or "1")
        return out

    def to_dict(self):
        params = {"n": self.n_in, "include_constant": self.include_constant}
        if self.custom:
            params["exponents"] = self.exponents.tolist()
        return {
            "kind": self.kind,
            "params": params,
            "degree": self.degree,
            "seed": None,
            "include_state": self.include_state,
        }


class DelayDictionary(Dictionary):
    """Identity on a delay vector ``[y_k, (y,u)_{k-1}, ..., (y,u)_{k-m}]``.

    The current output ``y_k`` occupies the first ``n_y`` slots, so it is
    recoverable by selection.
    """

    kind = "delay"
    has_gradient = True

    def __init__(self, m: int, n_y: int = 1, n_u: int = 1):
        if m < 0:
            raise InvalidInput("delay count m must be >= 0")
        self.m, self.n_y, self.n_u = int(m), int(n_y), int(n_u)
        d = delay_vector_length(m, n_y, n_u)
        super().__init__(d, d, tuple(range(n_y)))

    def _batch(self, X):
        return X.copy()

    def grad(self, x):
        return np.eye(self.n_in)

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": {"n_y": self.n_y, "n_u": self.n_u},
            "m": self.m,
            "seed": None,
            "include_state": True,
        }


def thin_plate(s: np.ndarray) -> np.ndarray:
    """s^2 log s with the removable singularity at 0 filled by 0."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = s[pos] ** 2 * np.log(s[pos])
    return out


class TpsDictionary(Dictionary):
    """Base observables followed by thin-plate-spline features of them."""

    kind = "tps"

    def __init__(self, base: Dictionary, centers, seed=None, domain=None):
        centers = np.asarray(centers, dtype=float)
        if centers.ndim != 2 or centers.shape[0] != base.p:
            raise InvalidInput(f"centers must have shape ({base.p}, n_centers)")
        self.base = base
        self.centers = centers
        self.domain = None if domain is None else np.asarray(domain, dtype=float)
        super().__init__(base.n_in, base.p + centers.shape[1], base.state_indices, seed)

    @property
    def has_gradient(self):
        return self.base.has_gradient

    @property
    def n_centers(self) -> int:
        return self.centers.shape[1]

    def _features(self, B):
        s2 = np.zeros((self.n_centers, B.shape[1]))
        for i in range(B.shape[0]):
            s2 += (B[i][None, :] - self.centers[i][:, None]) ** 2
        return thin_plate(np.sqrt(s2))

    def _batch(self, X):
        B = self.base._batch(X)
        return np.vstack([B, self._features(B)])

    def grad(self, x):
        Jb = self.base.grad(x)
        b = self.base(x)
        diff = b[:, None] - self.centers  # (pb, nc)
        s = np.sqrt(np.sum(diff**2, axis=0))
        coef = np.zeros_like(s)
        pos = s > 0
        # d/db (s^2 ln s) = (2 ln s + 1) (b - c)
        coef[pos] = 2.0 * np.log(s[pos]) + 1.0
        Jxi = (coef[:, None] * diff.T) @ Jb
        return np.vstack([Jb, Jxi])

    def to_dict(self):
        d = {
            "kind": self.kind,
            "params": {"base": self.base.to_dict(), "n_centers": self.n_centers},
            "seed": self.seed,
            "centers": self.centers.T.tolist(),
            "include_state": self.include_state,
        }
        if self.domain is not None:
            d["params"]["domain"] = self.domain.tolist()
        return d


def monomial_dictionary(
    n: int, max_degree: int | None = None, include_state: bool = True, include_constant: bool = False, exponents=None
) -> MonomialDictionary:
    """Graded-lex monomials of degree 1..max_degree, or exactly the listed ``exponents``."""
    return MonomialDictionary(n, max_degree, include_state, include_constant, exponents)


def tps_rbf_dictionary(base, n_centers: int, domain, seed=None) -> TpsDictionary:
    """Append ``n_centers`` thin-plate features with centers uniform in ``domain``.

    ``base`` is a Dictionary or an int ``n`` (identity on R^n). ``domain`` is a
    ``(base.p, 2)`` box in the base-observable space.
    """
    if isinstance(base, (int, np.integer)):
        base = IdentityDictionary(int(base))
    if n_centers < 1:
        raise InvalidInput("n_centers must be >= 1")
    box = np.asarray(domain, dtype=float)
    if box.shape == (2,):
        box = np.tile(box, (base.p, 1))
    if box.shape != (base.p, 2):
        raise InvalidInput(f"domain must have shape ({base.p}, 2), got {box.shape}")
    widths = box[:, 1] - box[:, 0]
    if np.any(widths <= 0):
        raise InvalidInput("degenerate center box (zero volume)")
    rng = np.random.default_rng(seed)
    centers = box[:, :1] + widths[:, None] * rng.random((base.p, n_centers))
    return TpsDictionary(base, centers, seed, box)


def dictionary_from_dict(d: dict) -> Dictionary:
    kind = d.get("kind")
    params = d.get("params", {})
    if kind == "identity":
        return IdentityDictionary(params["n"])
    if kind == "monomial":
        if params.get("exponents") is not None:
            return MonomialDictionary(params["n"], exponents=params["exponents"])
        return MonomialDictionary(
            params["n"], d["degree"], d.get("include_state", True), params.get("include_constant", False)
        )
    if kind == "delay":
        return DelayDictionary(d["m"], params.get("n_y", 1), params.get("n_u", 1))
    if kind == "tps":
        base = dictionary_from_dict(params["base"])
        centers = np.asarray(d["centers"], dtype=float).T.reshape(base.p, -1)
        return TpsDictionary(base, centers, d.get("seed"), params.get("domain"))
    raise InvalidInput(f"unknown dictionary kind {kind!r}")


def evaluate_dictionary_batch(dictionary: Dictionary, X) -> np.ndarray:
    """Apply ``dictionary`` to every column of ``X``; returns ``(p, m)``."""
    return dictionary.batch(X)


# --------------------------------------------------------------------------
# delay coordinates
# --------------------------------------------------------------------------


def delay_vector_length(m: int, n_y: int = 1, n_u: int = 1) -> int:
    return n_y + m * (n_y + n_u)


class DelayEmbedding(NamedTuple):
    Z: np.ndarray  # all delay columns, k = m..T-1
    X: np.ndarray  # columns k = m..T-2
    Xp: np.ndarray  # columns k = m+1..T-1
    U: np.ndarray  # inputs u_k for k = m..T-2
    k: np.ndarray  # sample index of each column of Z


def delay_embed(y, u=None, m: int = 1) -> DelayEmbedding:
    """Causal delay vectors ``[y_k, (y,u)_{k-1}, ..., (y,u)_{k-m}]`` for k >= m.

    ``y`` is ``(n_y, T)`` or a length-T series; ``u`` is ``(n_u, T-1)`` (a
    length-T input is truncated) or None for autonomous data.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[None, :]
    T = y.shape[1]
    if m < 0 or m >= T:
        raise InvalidInput(f"need series length > m (T={T}, m={m})")
    if u is None:
        u = np.zeros((0, max(T - 1, 0)))
    else:
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            u = u[None, :]
        if u.shape[1] < T - 1:
            raise InvalidInput(f"input series too short: {u.shape[1]} < {T - 1}")
        u = u[:, : T - 1]
    n_y, n_u = y.shape[0], u.shape[0]
    ks = np.arange(m, T)
    blocks = [y[:, ks]]
    for j in range(1, m + 1):
        blocks.append(y[:, ks - j])
        if n_u:
            blocks.append(u[:, ks - j])
    Z = np.vstack(blocks)
    U = u[:, m : T - 1] if n_u else np.zeros((0, T - 1 - m))
    return DelayEmbedding(Z, Z[:, :-1], Z[:, 1:], U, ks)


def shift_delay_vector(w: np.ndarray, y_new, u_applied, m: int, n_y: int = 1, n_u: int = 1) -> np.ndarray:
    """Advance a delay vector by one sample given the new output and the input applied."""
    w = np.asarray(w, dtype=float)
    y_new = np.atleast_1d(np.asarray(y_new, dtype=float))
    u_applied = np.atleast_1d(np.asarray(u_applied, dtype=float))
    if m == 0:
        return y_new.copy()
    block = n_y + n_u
    head = np.concatenate([w[:n_y], u_applied[:n_u]])
    older = w[n_y : n_y + (m - 1) * block]
    return np.concatenate([y_new, head, older])
