"""Periodic Fourier grid, transforms, differentiation and dealiased products.

Coefficients are stored in numpy FFT order (k = 0, 1, ..., N/2-1, -N/2,
..., -1) and coefficient ``k`` multiplies the plane wave ``exp(i k_hat x)``
with ``k_hat = pi k / L`` on nodes ``x_j = -L + j h``.  The forward
transform divides by N, so ``c[0]`` is the mean of the field.
"""

from __future__ import annotations

import numpy as np
from scipy import fft as sfft


class Grid:
    """Uniform periodic grid on [-L, L) with N nodes.

    The instance keeps no mutable workspace; it can be shared freely.
    """

    def __init__(self, L: float, N: int):
        if not (isinstance(N, (int, np.integer)) and N >= 8 and N % 2 == 0):
            raise ValueError(f"N must be an even integer >= 8, got {N!r}")
        if not L > 0:
            raise ValueError(f"L must be positive, got {L}")
        self.L = float(L)
        self.N = int(N)
        self.h = 2 * self.L / self.N
        self.x = -self.L + self.h * np.arange(self.N)
        self.k = np.fft.fftfreq(self.N, 1.0 / self.N).astype(int)
        self.kh = np.pi * self.k / self.L
        # exp(i k_hat L) for the shift from x_0 = 0 to x_0 = -L
        self._phase = np.where(self.k % 2 == 0, 1.0, -1.0)
        self.nyquist = self.N // 2
        # odd derivatives drop the unpaired Nyquist mode
        self.ik = 1j * self.kh
        self.ik[self.nyquist] = 0.0
        self._half = self.N // 2  # number of retained half-spectrum modes

    def __repr__(self):
        return f"Grid(L={self.L!r}, N={self.N})"

    def __eq__(self, other):
        return isinstance(other, Grid) and other.L == self.L and other.N == self.N

    def __hash__(self):
        return hash((self.L, self.N))

    # transforms -----------------------------------------------------------

    def _check(self, arr):
        if arr.shape[-1] != self.N:
            raise ValueError(f"expected length {self.N}, got {arr.shape[-1]}")

    def to_spectral(self, values):
        values = np.asarray(values)
        self._check(values)
        return np.fft.fft(values) * (self._phase / self.N)

    def from_spectral(self, coeffs):
        coeffs = np.asarray(coeffs)
        self._check(coeffs)
        return np.fft.ifft(coeffs * (self._phase * self.N)).real

    def diff(self, coeffs, m=1):
        if m < 1:
            raise ValueError("derivative order must be >= 1")
        if m % 2:
            return coeffs * self.ik**m
        return coeffs * (-(self.kh**2)) ** (m // 2)

    def diff_values(self, values, m=1):
        return self.from_spectral(self.diff(self.to_spectral(values), m))

    # products -------------------------------------------------------------

    def _padded_values(self, coeffs):
        # half spectrum, Nyquist dropped, zero-padded to 2N points
        M = 2 * self.N
        half = np.zeros(M // 2 + 1, dtype=complex)
        half[: self._half] = coeffs[: self._half] * self._phase[: self._half]
        return sfft.irfft(half, n=M) * M

    def _truncate(self, prod_values):
        M = 2 * self.N
        ph = sfft.rfft(prod_values)[: self._half] * (self._phase[: self._half] / M)
        out = np.zeros(self.N, dtype=complex)
        out[: self._half] = ph
        out[self.N - self._half + 1:] = np.conj(ph[1:][::-1])
        return out

    def dealiased_product(self, f, g):
        """Galerkin projection of the product of two fields, in modes.

        Inputs and output are coefficient arrays of real fields.  The
        product is formed on a 2N-point grid, which represents every
        product mode with |k| <= N - 2 exactly; the result is truncated to
        |k| <= N/2 - 1 (the Nyquist coefficient is returned as zero).
        """
        fv = self._padded_values(f)
        gv = fv if g is f else self._padded_values(g)
        return self._truncate(fv * gv)

    def dealiased_pair(self, f, g):
        """(P(f g), P(g g)) sharing the padded transform of g."""
        fv = self._padded_values(f)
        gv = self._padded_values(g)
        return self._truncate(fv * gv), self._truncate(gv * gv)

    def project(self, coeffs):
        """Zero the Nyquist coefficient and enforce conjugate symmetry."""
        out = np.array(coeffs, dtype=complex)
        out[self.nyquist] = 0.0
        pos = out[1: self.nyquist]
        neg = out[self.nyquist + 1:][::-1]
        avg = 0.5 * (pos + np.conj(neg))
        out[1: self.nyquist] = avg
        out[self.nyquist + 1:] = np.conj(avg)[::-1]
        out[0] = out[0].real
        return out

    # norms ----------------------------------------------------------------

    def l2(self, values):
        """Discrete L2 norm sqrt(h sum |f|^2)."""
        return float(np.sqrt(self.h * np.sum(np.abs(values) ** 2)))

    def l2_spectral(self, coeffs):
        """Same norm evaluated from coefficients (Parseval)."""
        return float(np.sqrt(2 * self.L * np.sum(np.abs(coeffs) ** 2)))

    def inner(self, f, g):
        return float(self.h * np.sum(f * g))


def conj_symmetry_defect(grid: Grid, coeffs):
    """max |c(-k) - conj(c(k))| over paired modes, plus |Im c(0)|."""
    n = grid.nyquist
    pos = coeffs[1:n]
    neg = coeffs[n + 1:][::-1]
    return float(max(np.max(np.abs(neg - np.conj(pos)), initial=0.0), abs(coeffs[0].imag)))


def convolve_truncated(grid: Grid, f, g):
    """Reference O(N^2) coefficient convolution truncated to |k| < N/2.

    Both operands are restricted to |k| <= N/2 - 1 first.  Used as a test
    oracle for :meth:`Grid.dealiased_product`.
    """
    N = grid.N
    lim = N // 2 - 1
    ks = range(-lim, lim + 1)
    fd = {k: f[k % N] for k in ks}
    gd = {k: g[k % N] for k in ks}
    out = np.zeros(N, dtype=complex)
    for k in ks:
        acc = 0j
        for p in ks:
            q = k - p
            if -lim <= q <= lim:
                acc += fd[p] * gd[q]
        out[k % N] = acc
    return out
