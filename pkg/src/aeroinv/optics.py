"""Refractive indices, effective-medium mixing, and Mie extinction kernels.

The extinction kernel is k(r, l) = pi * r^2 * Q_ext with radii and
wavelengths in micrometers.  Q_ext comes from the classical Mie series for a
homogeneous sphere in a non-absorbing medium; the medium index enters through
its real part only, which is immaterial for air.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DegenerateMix, NonConvergent, OutOfBand

__all__ = [
    "IndexTable",
    "MixedMaterial",
    "load_index_table",
    "get_material",
    "interpolate_index",
    "lorentz_lorenz_mix",
    "mie_qext",
    "kernel_value",
    "make_kernel",
    "make_mixed_kernel",
]

# Extra downward-recurrence orders above the series truncation point.
_LOGDERIV_MARGIN = 15


def _validate_index(m: complex) -> complex:
    m = complex(m)
    if not (m.real > 0.0) or m.imag < 0.0:
        raise ValueError(f"refractive index {m} must have Re > 0 and Im >= 0")
    return m


@dataclass(frozen=True)
class IndexTable:
    """Complex refractive index sampled on an ascending wavelength grid (um)."""

    wavelengths: np.ndarray
    indices: np.ndarray
    material_name: str = ""

    def __post_init__(self):
        w = np.asarray(self.wavelengths, dtype=float)
        m = np.asarray(self.indices, dtype=complex)
        if w.ndim != 1 or w.size != m.size:
            raise ValueError("wavelengths and indices must be 1-D of equal length")
        if w.size < 2 or np.any(np.diff(w) <= 0.0):
            raise ValueError("wavelengths must be strictly increasing, length >= 2")
        if np.any(m.real <= 0.0) or np.any(m.imag < 0.0):
            raise ValueError("indices must have Re > 0 and Im >= 0")
        w.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "wavelengths", w)
        object.__setattr__(self, "indices", m)

    def __call__(self, l: float) -> complex:
        return interpolate_index(self, l)


@dataclass(frozen=True)
class MixedMaterial:
    """Two-component mixture with volume fraction ``fraction_a`` of component a."""

    component_a: IndexTable
    component_b: IndexTable
    fraction_a: float

    def __post_init__(self):
        if not 0.0 <= self.fraction_a <= 1.0:
            raise ValueError("fraction_a must lie in [0, 1]")

    def __call__(self, l: float) -> complex:
        return lorentz_lorenz_mix(
            interpolate_index(self.component_a, l),
            interpolate_index(self.component_b, l),
            self.fraction_a,
        )


def load_index_table(path, material_name: str | None = None) -> IndexTable:
    """Read a ``wavelength_um,real,imag`` text table (header line permitted)."""
    path = Path(path)
    wavelengths, values = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip():
                continue
            try:
                l = float(row[0])
            except ValueError:
                continue  # header
            wavelengths.append(l)
            values.append(complex(float(row[1]), float(row[2])))
    return IndexTable(
        np.array(wavelengths), np.array(values), material_name or path.stem
    )


_MATERIAL_ALIASES = {
    "h2o": "h2o",
    "water": "h2o",
    "csi": "csi",
    "air": "air",
}


def get_material(name: str) -> IndexTable:
    """Resolve a material name to its index table.

    Files in ``$AEROSOL_DATA_DIR`` (named ``<name>.csv``, lowercase) take
    precedence over the tables shipped with the package.
    """
    key = _MATERIAL_ALIASES.get(name.strip().lower(), name.strip().lower())
    data_dir = os.environ.get("AEROSOL_DATA_DIR")
    if data_dir:
        candidate = Path(data_dir) / f"{key}.csv"
        if candidate.is_file():
            return load_index_table(candidate, material_name=name)
    ref = resources.files("aeroinv.data").joinpath(f"{key}.csv")
    if not ref.is_file():
        raise FileNotFoundError(f"no refractive-index table for material {name!r}")
    with resources.as_file(ref) as path:
        return load_index_table(path, material_name=name)


def interpolate_index(table: IndexTable, l: float) -> complex:
    """Piecewise-linear interpolation of real and imaginary parts at l (um)."""
    w = table.wavelengths
    if l < w[0] or l > w[-1]:
        raise OutOfBand(
            f"wavelength {l} um outside table range [{w[0]}, {w[-1]}] "
            f"for {table.material_name!r}"
        )
    re = np.interp(l, w, table.indices.real)
    im = np.interp(l, w, table.indices.imag)
    return complex(re, im)


def lorentz_lorenz_mix(m1: complex, m2: complex, f1: float) -> complex:
    """Effective refractive index of a two-component mixture.

    Solves (m^2 - 1)/(m^2 + 2) = f1*L(m1) + (1 - f1)*L(m2) for m, taking the
    root with positive real part and nonnegative imaginary part.
    """
    if not 0.0 <= f1 <= 1.0:
        raise ValueError("f1 must lie in [0, 1]")
    m1 = _validate_index(m1)
    m2 = _validate_index(m2)
    if f1 == 1.0:
        return m1
    if f1 == 0.0:
        return m2
    lhs = f1 * (m1**2 - 1.0) / (m1**2 + 2.0) + (1.0 - f1) * (m2**2 - 1.0) / (m2**2 + 2.0)
    denom = 1.0 - lhs
    if abs(denom) < 1e-14:
        raise DegenerateMix("mixing relation right-hand side equals 1")
    msq = (1.0 + 2.0 * lhs) / denom
    m = complex(np.sqrt(complex(msq)))
    if m.real < 0.0:
        m = -m
    if m.imag < 0.0:
        # physically passive components cannot produce gain; clip rounding noise
        m = complex(m.real, 0.0)
    return m


def _qext_series(m: complex, x: np.ndarray) -> np.ndarray:
    """Mie extinction efficiencies for relative index m at size parameters x.

    Vectorized over x.  The logarithmic derivative of psi(m*x) is generated by
    downward recurrence from ``max(n_trunc) + _LOGDERIV_MARGIN``; psi and chi
    run upward.  Columns past their own truncation order are frozen so the
    rapidly growing chi recurrence cannot overflow.
    """
    x = np.asarray(x, dtype=float)
    n_trunc = np.ceil(x + 4.0 * np.cbrt(x) + 2.0).astype(int)
    n_max = int(n_trunc.max())
    mx = m * x

    d = np.zeros((n_max, x.size), dtype=complex)
    dn = np.zeros(x.size, dtype=complex)
    for n in range(n_max + _LOGDERIV_MARGIN, 1, -1):  # step computes D_{n-1}
        rn = n / mx
        dn = rn - 1.0 / (dn + rn)
        if n - 1 <= n_max:
            d[n - 2] = dn  # d[k] holds D_{k+1}

    psi_prev = np.cos(x)  # psi_0 seed pair
    psi = np.sin(x)
    chi_prev = -np.sin(x)
    chi = np.cos(x)
    qext = np.zeros(x.size)
    for n in range(1, n_max + 1):
        fac = (2.0 * n - 1.0) / x
        psi_new = fac * psi - psi_prev
        chi_new = fac * chi - chi_prev
        active = n <= n_trunc
        psi_prev = np.where(active, psi, psi_prev)
        chi_prev = np.where(active, chi, chi_prev)
        psi = np.where(active, psi_new, psi)
        chi = np.where(active, chi_new, chi)

        dn = d[n - 1]
        xi = psi - 1j * chi
        xi_prev = psi_prev - 1j * chi_prev
        ta = dn / m + n / x
        tb = dn * m + n / x
        a_n = (ta * psi - psi_prev) / (ta * xi - xi_prev)
        b_n = (tb * psi - psi_prev) / (tb * xi - xi_prev)
        term = (2.0 * n + 1.0) * (a_n.real + b_n.real)
        qext += np.where(active, term, 0.0)

    qext *= 2.0 / x**2
    if not np.all(np.isfinite(qext)):
        raise NonConvergent("Mie series recurrences produced non-finite values")
    return np.maximum(qext, 0.0)


def mie_qext(m_med: complex, m_part: complex, r, l: float):
    """Extinction efficiency Q_ext for spheres of radius r (um) at wavelength l.

    Uses size parameter x = 2*pi*Re(m_med)*r/l and relative index
    m = m_part/m_med.  Accepts a scalar or array of radii.
    """
    m_med = _validate_index(m_med)
    m_part = _validate_index(m_part)
    r_arr = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r_arr <= 0.0) or l <= 0.0:
        raise ValueError("radius and wavelength must be positive")
    x = 2.0 * np.pi * m_med.real * r_arr / l
    q = _qext_series(m_part / m_med, x)
    return q if np.ndim(r) else float(q[0])


def kernel_value(m_med: complex, m_part: complex, r, l: float):
    """Extinction kernel k(r, l) = pi * r^2 * Q_ext, in um^2."""
    r_arr = np.asarray(r, dtype=float)
    return np.pi * r_arr**2 * mie_qext(m_med, m_part, r, l)


def make_kernel(particle: IndexTable, medium: IndexTable):
    """Bind material tables into a kernel closure ``k(r, l)``."""

    def kernel(r, l: float):
        return kernel_value(
            interpolate_index(medium, l), interpolate_index(particle, l), r, l
        )

    return kernel


def make_mixed_kernel(
    component_a: IndexTable,
    component_b: IndexTable,
    medium: IndexTable,
    fraction_a: float,
):
    """Kernel closure for a two-component particle mixture."""
    mix = MixedMaterial(component_a, component_b, fraction_a)

    def kernel(r, l: float):
        return kernel_value(interpolate_index(medium, l), mix(l), r, l)

    return kernel
