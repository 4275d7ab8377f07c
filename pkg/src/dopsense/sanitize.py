"""Phase sanitization by sparse decomposition over a delay dictionary.

Raw CFR packets carry hardware phase terms that wreck slow-time coherence.
Each packet is decomposed onto a grid of candidate path delays

    T[k, p] = exp(-j 2 pi k tau_p / T_sym)

by l1-regularized least squares; the decomposition is then re-referenced
to the strongest recovered path p* (the dominant static reflector):

    X[k, p]    = T[k, p] r_p
    Xbar[k, p] = conj(X[k, p*]) X[k, p]
    Hhat_k     = sum_p Xbar[k, p]

Every phase term that is common to all paths (CFO, PLL offsets, the pi
ambiguity) cancels exactly in the conjugated product, and the linear-in-k
timing terms fold into a common delay shift of the recovered grid, leaving
only path geometry relative to p*.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import lasso
from .errors import DegenerateCfrError
from .ofdm import OfdmConfig
from .validation import check_complex_matrix, check_complex_vector

try:  # BaseEstimator only supplies get_params/set_params plumbing
    from sklearn.base import BaseEstimator, TransformerMixin
except ImportError:  # pragma: no cover
    BaseEstimator = object

    class TransformerMixin:
        def fit_transform(self, X, y=None, **kw):
            return self.fit(X, y, **kw).transform(X)


__all__ = [
    "DelayDictionary",
    "build_delay_dictionary",
    "PathDecomposition",
    "SanitizedCfr",
    "normalize_amplitude",
    "solve_p1",
    "decompose_and_reference",
    "sanitize_packet",
    "sanitize_stream",
    "PhaseSanitizer",
]


class DelayDictionary:
    """Grid of delay atoms over all sub-channels, with cached solver state."""

    def __init__(self, ofdm, n_atoms=100, max_delay=None):
        if n_atoms < 2:
            raise ValueError("n_atoms must be >= 2")
        if max_delay is None:
            max_delay = ofdm.symbol_time / 4.0
        if not 0.0 < max_delay <= ofdm.symbol_time:
            raise ValueError(
                "dictionary aliasing: max_delay must lie in (0, symbol_time]"
            )
        self.ofdm = ofdm
        self.n_atoms = int(n_atoms)
        self.max_delay = float(max_delay)
        self.grid = np.arange(n_atoms) * (max_delay / n_atoms)
        k = ofdm.all_subchannels()
        self.matrix = np.exp(
            -2j * np.pi * np.outer(k, self.grid) / ofdm.symbol_time
        )
        self._workspaces = {}

    @property
    def delay_step(self):
        return self.max_delay / self.n_atoms

    def row_indices(self, subchannels):
        k = np.asarray(subchannels, dtype=np.int64)
        return k + self.ofdm.n_subchannels // 2

    def rows(self, subchannels):
        """Dictionary restricted to the given sub-channel indices."""
        return self.matrix[self.row_indices(subchannels)]

    def workspace(self, subchannels):
        """Embedded design matrix and Gram data for a sub-channel subset."""
        k = np.asarray(subchannels, dtype=np.int64)
        key = k.tobytes()
        ws = self._workspaces.get(key)
        if ws is None:
            # a grid thinned by a typical index gap g barely tells tau from
            # tau + T/g; warn when that ambiguity falls inside the atom grid
            if k.size > 1:
                gap = float(np.median(np.diff(k)))
                if gap > 1 and self.ofdm.symbol_time / gap < self.max_delay:
                    warnings.warn(
                        f"sub-channel gap {gap:g} aliases delays beyond "
                        f"{self.ofdm.symbol_time / gap:.3g} s inside the atom grid",
                        RuntimeWarning,
                        stacklevel=3,
                    )
            A = lasso.embed_matrix(self.rows(k))
            G = A.T @ A
            L = 2.0 * float(np.linalg.eigvalsh(G)[-1])
            ws = (A, (G, L))
            self._workspaces[key] = ws
        return ws


def build_delay_dictionary(ofdm, n_atoms=100, max_delay=None):
    return DelayDictionary(ofdm, n_atoms=n_atoms, max_delay=max_delay)


@dataclass(frozen=True)
class PathDecomposition:
    """Sparse delay-domain representation of one packet.

    r               : complex atom coefficients on the delay grid
    reference_index : index of the strongest atom (lowest index on ties)
    residual_norm   : ||h - T r||_2 for the stored r
    lasso_objective : residual_norm^2 + lambda * split-l1(r) for the stored r
    kkt_residual    : optimality certificate of the raw solve
    iterations      : solver iterations spent
    """

    r: np.ndarray
    reference_index: int
    residual_norm: float
    lasso_objective: float
    kkt_residual: float = None
    iterations: int = None


@dataclass(frozen=True)
class SanitizedCfr:
    """Re-referenced CFR over an explicit sub-channel set.

    From sanitize_packet / sanitize_stream the values carry the physical
    scale of conj(X_{p*}) X; from decompose_and_reference alone they stay in
    the (normalized) units of the decomposition coefficients.
    """

    values: np.ndarray
    subchannels: np.ndarray
    reference_index: int
    packet_index: int = None
    antenna_index: int = None


def normalize_amplitude(values):
    """Scale so the mean modulus over the given entries is one.

    Returns (normalized, mean_amplitude). Raises DegenerateCfrError when the
    packet carries no energy.
    """
    arr = check_complex_vector(values)
    mean_amp = float(np.mean(np.abs(arr)))
    if not np.isfinite(mean_amp) or mean_amp <= 0.0:
        raise DegenerateCfrError("degenerate CFR: zero mean amplitude")
    return arr / mean_amp, mean_amp


def _decomposition_from_x(x_ext, A, b_ext, lam, kkt, iterations):
    r = lasso.unembed_vector(x_ext)
    residual = A @ x_ext - b_ext
    rss = float(residual @ residual)
    objective = rss + lam * float(np.abs(x_ext).sum())
    reference = int(np.argmax(np.abs(r)))
    return PathDecomposition(
        r=r,
        reference_index=reference,
        residual_norm=float(np.sqrt(rss)),
        lasso_objective=objective,
        kkt_residual=kkt,
        iterations=iterations,
    )


def solve_p1(values, dictionary, lam=0.1, subchannels=None, tol=1e-6, max_iter=10000):
    """Sparse delay decomposition of one packet's CFR values.

    values must align with `subchannels` (default: the configured used set).
    The returned decomposition is the raw minimizer; its kkt_residual is
    certified <= tol.
    """
    if subchannels is None:
        subchannels = dictionary.ofdm.used_subchannels
    h = check_complex_vector(values)
    if h.size != np.asarray(subchannels).size:
        raise ValueError("values and subchannels disagree in length")
    A, gram = dictionary.workspace(subchannels)
    b = lasso.embed_vector(h)
    result = lasso.solve(A, b, lam, tol=tol, max_iter=max_iter, gram=gram)
    return _decomposition_from_x(
        result.x, A, b, lam, result.kkt_residual, result.iterations
    )


def _dust_threshold(dec, A, b_ext, lam, rel_tol=1e-4):
    """Zero sub-dust atoms and recompute the bookkeeping fields."""
    x = np.concatenate([dec.r.real, dec.r.imag])
    peak = np.max(np.abs(dec.r))
    if peak == 0.0:
        return dec
    keep = np.abs(dec.r) >= rel_tol * peak
    x = x * np.concatenate([keep, keep])
    return _decomposition_from_x(x, A, b_ext, lam, dec.kkt_residual, dec.iterations)


def reconstruction_span(ofdm):
    """Contiguous sub-channel range covered by the measured set."""
    used = ofdm.used_subchannels
    return np.arange(used[0], used[-1] + 1)


def decompose_and_reference(dec, dictionary, subchannels=None):
    """Rebuild the CFR from a decomposition, conjugate-referenced to p*.

    The p* summand comes out as |r_{p*}|^2 >= 0, pinning the phase origin.
    """
    if subchannels is None:
        subchannels = reconstruction_span(dictionary.ofdm)
    subchannels = np.asarray(subchannels, dtype=np.int64)
    if not np.any(dec.r):
        raise DegenerateCfrError("empty decomposition: every atom is zero")
    rows = dictionary.rows(subchannels)
    atoms = rows * dec.r[None, :]
    referenced = np.conj(atoms[:, dec.reference_index])[:, None] * atoms
    return SanitizedCfr(
        values=referenced.sum(axis=1),
        subchannels=subchannels,
        reference_index=dec.reference_index,
    )


def sanitize_packet(
    packet,
    dictionary,
    lam=0.1,
    subchannels=None,
    output_subchannels=None,
    tol=1e-6,
    max_iter=10000,
    dust_tol=1e-4,
):
    """Full sanitization of one CfrPacket: normalize, decompose, re-reference.

    The returned values carry the physical scale of conj(X_{p*}) X, so the
    solver-side amplitude normalization is undone (quadratically, since the
    re-referenced product is bilinear in the packet) before returning.
    """
    if subchannels is None:
        subchannels = dictionary.ofdm.used_subchannels
    normalized, mean_amp = normalize_amplitude(packet.values)
    A, gram = dictionary.workspace(subchannels)
    b = lasso.embed_vector(normalized)
    result = lasso.solve(A, b, lam, tol=tol, max_iter=max_iter, gram=gram)
    dec = _decomposition_from_x(
        result.x, A, b, lam, result.kkt_residual, result.iterations
    )
    dec = _dust_threshold(dec, A, b, lam, rel_tol=dust_tol)
    sanitized = decompose_and_reference(dec, dictionary, output_subchannels)
    return replace(
        sanitized,
        values=sanitized.values * mean_amp**2,
        packet_index=packet.packet_index,
        antenna_index=packet.antenna_index,
    )


def sanitize_stream(
    packets,
    dictionary,
    lam=0.1,
    subchannels=None,
    output_subchannels=None,
    tol=1e-6,
    max_iter=10000,
    dust_tol=1e-4,
):
    """Sanitize many packets with one batched solve; order is preserved.

    Output scale matches sanitize_packet: each packet's solver-side
    normalization is undone quadratically on the re-referenced product.
    """
    packets = list(packets)
    if not packets:
        return []
    if subchannels is None:
        subchannels = dictionary.ofdm.used_subchannels
    if output_subchannels is None:
        output_subchannels = reconstruction_span(dictionary.ofdm)
    A, gram = dictionary.workspace(subchannels)
    B = np.empty((A.shape[0], len(packets)))
    scales = np.empty(len(packets))
    for j, packet in enumerate(packets):
        normalized, mean_amp = normalize_amplitude(packet.values)
        B[:, j] = lasso.embed_vector(normalized)
        scales[j] = mean_amp
    results = lasso.solve_batch(A, B, lam, tol=tol, max_iter=max_iter, gram=gram)
    out = []
    for j, (packet, result) in enumerate(zip(packets, results)):
        dec = _decomposition_from_x(
            result.x, A, B[:, j], lam, result.kkt_residual, result.iterations
        )
        dec = _dust_threshold(dec, A, B[:, j], lam, rel_tol=dust_tol)
        sanitized = decompose_and_reference(dec, dictionary, output_subchannels)
        out.append(
            replace(
                sanitized,
                values=sanitized.values * scales[j] ** 2,
                packet_index=packet.packet_index,
                antenna_index=packet.antenna_index,
            )
        )
    return out


class PhaseSanitizer(TransformerMixin, BaseEstimator):
    """Array-in/array-out sanitizer for stacks of CFR packets.

    transform() takes a complex matrix (n_packets, n_used) aligned with
    `subchannels` (default: the 802.11ac used set of `ofdm`) and returns the
    re-referenced CFR over the reconstruction span, one row per packet.
    """

    def __init__(
        self,
        ofdm=None,
        n_atoms=100,
        max_delay=None,
        lam=0.1,
        tol=1e-6,
        max_iter=10000,
        dust_tol=1e-4,
        subchannels=None,
        output_subchannels=None,
    ):
        self.ofdm = ofdm
        self.n_atoms = n_atoms
        self.max_delay = max_delay
        self.lam = lam
        self.tol = tol
        self.max_iter = max_iter
        self.dust_tol = dust_tol
        self.subchannels = subchannels
        self.output_subchannels = output_subchannels

    def fit(self, X=None, y=None):
        ofdm = self.ofdm if self.ofdm is not None else OfdmConfig()
        self.dictionary_ = build_delay_dictionary(
            ofdm, n_atoms=self.n_atoms, max_delay=self.max_delay
        )
        self.subchannels_ = (
            ofdm.used_subchannels
            if self.subchannels is None
            else np.asarray(self.subchannels, dtype=np.int64)
        )
        self.output_subchannels_ = (
            reconstruction_span(ofdm)
            if self.output_subchannels is None
            else np.asarray(self.output_subchannels, dtype=np.int64)
        )
        return self

    def transform(self, X):
        if not hasattr(self, "dictionary_"):
            raise RuntimeError("PhaseSanitizer must be fitted before transform")
        X = check_complex_matrix(X, "X")
        if X.shape[1] != self.subchannels_.size:
            raise ValueError(
                f"X has {X.shape[1]} columns, expected {self.subchannels_.size}"
            )
        A, gram = self.dictionary_.workspace(self.subchannels_)
        B = np.empty((A.shape[0], X.shape[0]))
        scales = np.empty(X.shape[0])
        for j in range(X.shape[0]):
            normalized, mean_amp = normalize_amplitude(X[j])
            B[:, j] = lasso.embed_vector(normalized)
            scales[j] = mean_amp
        results = lasso.solve_batch(
            A, B, self.lam, tol=self.tol, max_iter=self.max_iter, gram=gram
        )
        out = np.empty((X.shape[0], self.output_subchannels_.size), dtype=np.complex128)
        for j, result in enumerate(results):
            dec = _decomposition_from_x(
                result.x, A, B[:, j], self.lam, result.kkt_residual, result.iterations
            )
            dec = _dust_threshold(dec, A, B[:, j], self.lam, rel_tol=self.dust_tol)
            out[j] = (
                decompose_and_reference(
                    dec, self.dictionary_, self.output_subchannels_
                ).values
                * scales[j] ** 2
            )
        return out
