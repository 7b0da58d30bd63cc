"""Compiled inner loops: banded symbol evaluation and the orbit integrator.

Everything here works on plain arrays so that numba can compile it.  The
Hamiltonian is passed in LAPACK-style band storage,
``bands[d, k] = H[k, k + d - bw]``, together with the half log-binomials
``lnbh[k] = 0.5 * log C(2j, k)`` and the ladder coefficients
``lad[k] = sqrt((k + 1) (2j - k))`` of the dimensionless raising operator.
"""

import numpy as np
import numba
from numba import njit, prange
from scipy.integrate._ivp import dop853_coefficients as _dop

# the parallel loops are reduction free, so any layer gives identical results;
# the portable one avoids warnings about old TBB installs
numba.config.THREADING_LAYER = "workqueue"

# coherent-state components below exp(-LOG_CUT) of the peak are dropped
LOG_CUT = 42.0

_NS = _dop.N_STAGES
RK_A = np.ascontiguousarray(_dop.A[:_NS, :_NS])
RK_B = np.ascontiguousarray(_dop.B)
RK_C = np.ascontiguousarray(_dop.C[:_NS])
RK_E3 = np.ascontiguousarray(_dop.E3)
RK_E5 = np.ascontiguousarray(_dop.E5)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0

# integrate_orbit status codes
OK = 0
FIXED_POINT = 1
NO_RETURN = 2
STEP_UNDERFLOW = 3


@njit(cache=True)
def coherent_window(x, y, j2, lnbh, psi):
    """Fill ``psi`` with the normalized coherent state at z = x + iy.

    Only the window ``[k0, k1]`` of non-negligible components is written;
    the caller must treat everything outside it as zero.
    """
    dim = j2 + 1
    u = x * x + y * y
    if u == 0.0:
        psi[0] = 1.0
        return 0, 0
    lr = 0.5 * np.log(u)
    shift = 0.5 * j2 * np.log1p(u)
    # the log-magnitude is concave in k; climb from the continuum estimate
    kmax = int(j2 * u / (1.0 + u) + 0.5)
    if kmax > j2:
        kmax = j2
    while kmax < j2 and lnbh[kmax + 1] + lr > lnbh[kmax]:
        kmax += 1
    while kmax > 0 and lnbh[kmax - 1] - lr > lnbh[kmax]:
        kmax -= 1
    lmax = lnbh[kmax] + kmax * lr
    k0 = kmax
    while k0 > 0 and lnbh[k0 - 1] + (k0 - 1) * lr > lmax - LOG_CUT:
        k0 -= 1
    k1 = kmax
    while k1 < dim - 1 and lnbh[k1 + 1] + (k1 + 1) * lr > lmax - LOG_CUT:
        k1 += 1
    phi = np.arctan2(y, x)
    mag = np.exp(lmax - shift)
    psi[kmax] = complex(mag * np.cos(kmax * phi), mag * np.sin(kmax * phi))
    # psi[k+1] / psi[k] = z sqrt((2j - k) / (k + 1))
    z = complex(x, y)
    zinv = 1.0 / z
    for k in range(kmax, k1):
        psi[k + 1] = psi[k] * z * np.sqrt((j2 - k) / (k + 1.0))
    for k in range(kmax, k0, -1):
        psi[k - 1] = psi[k] * zinv * np.sqrt(k / (j2 - k + 1.0))
    return k0, k1


@njit(cache=True)
def _band_apply(bands, bw, v, a, b, out):
    """out = H v for v supported on [a, b]; returns the support of out."""
    dim = bands.shape[1]
    lo = max(a - bw, 0)
    hi = min(b + bw, dim - 1)
    for k in range(lo, hi + 1):
        acc = 0.0j
        for d in range(2 * bw + 1):
            col = k + d - bw
            if col >= a and col <= b:
                acc += bands[d, k] * v[col]
        out[k] = acc
    return lo, hi


@njit(cache=True)
def _raise(lad, v, a, b, out):
    """out = J+ v (dimensionless) for v supported on [a, b]."""
    dim = lad.shape[0] + 1
    hi = min(b + 1, dim - 1)
    for k in range(a, hi):
        out[k + 1] = lad[k] * v[k]
    return a + 1, hi


@njit(cache=True)
def _dot(u, ua, ub, v, va, vb):
    """<u|v> over the overlap of the two supports."""
    lo = max(ua, va)
    hi = min(ub, vb)
    acc = 0.0j
    for k in range(lo, hi + 1):
        acc += u[k].conjugate() * v[k]
    return acc


@njit(cache=True)
def symbol_eval(x, y, j2, bands, bw, lnbh, lad, want_zbzb):
    """Classical symbol and its exact derivatives at the real point z = x + iy.

    Returns ``(H, dH/dz, dH/dzbar, d2H/dz dzbar, d2H/dzbar^2, A)``.  The
    second z̄-derivative is only computed when ``want_zbzb`` is set.
    """
    dim = j2 + 1
    j = 0.5 * j2
    psi = np.zeros(dim, dtype=np.complex128)
    hpsi = np.zeros(dim, dtype=np.complex128)
    jp = np.zeros(dim, dtype=np.complex128)
    hjp = np.zeros(dim, dtype=np.complex128)

    k0, k1 = coherent_window(x, y, j2, lnbh, psi)
    h0, h1 = _band_apply(bands, bw, psi, k0, k1, hpsi)
    p0, p1 = _raise(lad, psi, k0, k1, jp)
    q0, q1 = _band_apply(bands, bw, jp, p0, p1, hjp)

    # dividing by the windowed norm keeps the derivative formulas (which
    # mix linear and quadratic terms in |psi|^2) free of normalization error
    inv = 1.0 / _dot(psi, k0, k1, psi, k0, k1).real
    energy = _dot(psi, k0, k1, hpsi, h0, h1).real * inv
    ejp = _dot(psi, k0, k1, jp, p0, p1) * inv           # <J+>
    ejm = ejp.conjugate()                               # <J->
    e_hjp = _dot(hpsi, h0, h1, jp, p0, p1) * inv        # <H J+>
    e_jmh = _dot(jp, p0, p1, hpsi, h0, h1) * inv        # <J- H>
    e_jmhjp = _dot(jp, p0, p1, hjp, q0, q1) * inv       # <J- H J+>
    e_jmjp = _dot(jp, p0, p1, jp, p0, p1).real * inv    # <J- J+>

    dz = e_hjp - energy * ejp
    dzb = e_jmh - energy * ejm
    dzdzb = (e_jmhjp - e_hjp * ejm - dzb * ejp
             - energy * e_jmjp + energy * ejp * ejm)

    dzbzb = 0.0j
    if want_zbzb:
        jp2 = np.zeros(dim, dtype=np.complex128)
        r0, r1 = _raise(lad, jp, p0, p1, jp2)
        e_jm2h = _dot(jp2, r0, r1, hpsi, h0, h1) * inv  # <J-^2 H>
        e_jm2 = _dot(jp2, r0, r1, psi, k0, k1) * inv     # <J-^2>
        dzbzb = (e_jm2h - e_jmh * ejm - dzb * ejm
                 - energy * (e_jm2 - ejm * ejm))

    z = complex(x, y)
    u = x * x + y * y
    sk = ((1.0 + u) ** 2 / (4.0 * j) * dzdzb
          + (1.0 + u) / (4.0 * j) * (z * dz + z.conjugate() * dzb))
    return energy, dz, dzb, dzdzb, dzbzb, sk.real


@njit(cache=True)
def velocity(x, y, dzb, j2, hbar):
    """dz/dt = dH/dzbar / (i hbar g) with g = 2j / (1 + |z|^2)^2."""
    u = x * x + y * y
    return -1j * (1.0 + u) ** 2 / (hbar * j2) * dzb


@njit(cache=True)
def _rhs(yv, out, j2, hbar, bands, bw, lnbh, lad):
    x = yv[0]
    y = yv[1]
    _, _, dzb, _, _, sk = symbol_eval(x, y, j2, bands, bw, lnbh, lad, False)
    zdot = velocity(x, y, dzb, j2, hbar)
    u = x * x + y * y
    out[0] = zdot.real
    out[1] = zdot.imag
    # i hbar j (zbar zdot - c.c.) / (1 + |z|^2)
    out[2] = -hbar * j2 * (x * zdot.imag - y * zdot.real) / (1.0 + u)
    out[3] = sk


@njit(cache=True)
def _dop_step(y, f, h, K, ynew, fnew, scale_atol, rtol,
              j2, hbar, bands, bw, lnbh, lad):
    """One DOP853 step of size h from (y, f); returns the scaled error norm."""
    n = y.shape[0]
    tmp = np.empty(n)
    for i in range(n):
        K[0, i] = f[i]
    for s in range(1, _NS):
        for i in range(n):
            acc = 0.0
            for r in range(s):
                acc += RK_A[s, r] * K[r, i]
            tmp[i] = y[i] + h * acc
        _rhs(tmp, K[s], j2, hbar, bands, bw, lnbh, lad)
    for i in range(n):
        acc = 0.0
        for r in range(_NS):
            acc += RK_B[r] * K[r, i]
        ynew[i] = y[i] + h * acc
    _rhs(ynew, fnew, j2, hbar, bands, bw, lnbh, lad)
    for i in range(n):
        K[_NS, i] = fnew[i]
    err5 = 0.0
    err3 = 0.0
    for i in range(n):
        sc = scale_atol[i] + rtol * max(abs(y[i]), abs(ynew[i]))
        e5 = 0.0
        e3 = 0.0
        for r in range(_NS + 1):
            e5 += RK_E5[r] * K[r, i]
            e3 += RK_E3[r] * K[r, i]
        err5 += (e5 / sc) ** 2
        err3 += (e3 / sc) ** 2
    if err5 == 0.0 and err3 == 0.0:
        return 0.0
    return abs(h) * err5 / np.sqrt((err5 + 0.01 * err3) * n)


@njit(cache=True)
def _section(x, y, x0, y0, vx, vy):
    return (x - x0) * vx + (y - y0) * vy


@njit(cache=True)
def integrate_orbit(x0, y0, j2, hbar, bands, bw, lnbh, lad,
                    rtol, t_max, max_steps, v_min):
    """Integrate from z0 until the first return through the transverse section.

    The state is (Re z, Im z, action, SK integral).  The section is the line
    through z0 normal to the initial velocity; a return is a crossing from
    behind to in front of it that lands next to z0.  The crossing time is
    refined by re-stepping from the last accepted point.

    Returns ``(status, period, action, sk_integral, samples, n_steps)`` with
    samples rows ``(t, x, y, action, sk)``.
    """
    n = 4
    yv = np.zeros(n)
    yv[0] = x0
    yv[1] = y0
    f = np.zeros(n)
    _rhs(yv, f, j2, hbar, bands, bw, lnbh, lad)
    speed = np.hypot(f[0], f[1])
    cap = 256
    samples = np.zeros((cap, 5))
    samples[0, 1] = x0
    samples[0, 2] = y0
    if speed < v_min:
        return FIXED_POINT, 0.0, 0.0, 0.0, samples[:1], 0
    vx = f[0] / speed
    vy = f[1] / speed

    r0 = np.hypot(x0, y0)
    scale_atol = np.empty(n)
    scale_atol[0] = rtol * max(r0, 1e-3)
    scale_atol[1] = scale_atol[0]
    scale_atol[2] = rtol * hbar
    scale_atol[3] = rtol * hbar

    K = np.zeros((_NS + 1, n))
    ynew = np.zeros(n)
    fnew = np.zeros(n)
    yref = np.zeros(n)
    fref = np.zeros(n)
    Kref = np.zeros((_NS + 1, n))

    h = 1e-2 * max(r0, 1e-2) * (1.0 + r0 * r0) / speed
    t = 0.0
    count = 1
    maxdist = 0.0
    s_prev = 0.0
    steps = 0
    factor = 1.0
    tau = 0.0
    exponent = -1.0 / 8.0
    while steps < max_steps:
        if t >= t_max:
            return NO_RETURN, t, yv[2], yv[3], samples[:count], steps
        rejected = False
        while True:
            if h < 1e-14 * max(t, 1e-300):
                return STEP_UNDERFLOW, t, yv[2], yv[3], samples[:count], steps
            err = _dop_step(yv, f, h, K, ynew, fnew, scale_atol, rtol,
                            j2, hbar, bands, bw, lnbh, lad)
            if err < 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * err ** exponent)
                if rejected:
                    factor = min(1.0, factor)
                break
            h *= max(MIN_FACTOR, SAFETY * err ** exponent)
            rejected = True
        steps += 1
        s_new = _section(ynew[0], ynew[1], x0, y0, vx, vy)
        dist = np.hypot(ynew[0] - x0, ynew[1] - y0)
        closed = False
        if s_prev < 0.0 and s_new >= 0.0:
            # regula falsi (Illinois) on the step length
            lo = 0.0
            hi = h
            flo = s_prev
            fhi = s_new
            side = 0
            tau = h
            for _ in range(100):
                tau = hi - fhi * (hi - lo) / (fhi - flo)
                _dop_step(yv, f, tau, Kref, yref, fref, scale_atol, rtol,
                          j2, hbar, bands, bw, lnbh, lad)
                fm = _section(yref[0], yref[1], x0, y0, vx, vy)
                if fm >= 0.0:
                    hi = tau
                    fhi = fm
                    if side == 1:
                        flo *= 0.5
                    side = 1
                else:
                    lo = tau
                    flo = fm
                    if side == -1:
                        fhi *= 0.5
                    side = -1
                if hi - lo <= 1e-13 * (t + tau) or fm == 0.0:
                    break
            if np.hypot(yref[0] - x0, yref[1] - y0) <= 1e-3 * maxdist:
                closed = True
        if closed:
            if count + 1 > cap:
                grown = np.zeros((cap * 2, 5))
                grown[:cap] = samples
                samples = grown
                cap *= 2
            samples[count, 0] = t + tau
            for i in range(n):
                samples[count, i + 1] = yref[i]
            count += 1
            return OK, t + tau, yref[2], yref[3], samples[:count], steps
        t += h
        for i in range(n):
            yv[i] = ynew[i]
            f[i] = fnew[i]
        if count >= cap:
            grown = np.zeros((cap * 2, 5))
            grown[:cap] = samples
            samples = grown
            cap *= 2
        samples[count, 0] = t
        for i in range(n):
            samples[count, i + 1] = yv[i]
        count += 1
        if dist > maxdist:
            maxdist = dist
        s_prev = s_new
        h *= factor
    return NO_RETURN, t, yv[2], yv[3], samples[:count], steps


@njit(cache=True, parallel=True)
def symbol_grid(xs, ys, j2, hbar, bands, bw, lnbh, lad):
    """Energy, SK term and |dz/dt| at many points (independent per point)."""
    npts = xs.shape[0]
    energy = np.empty(npts)
    sk = np.empty(npts)
    speed = np.empty(npts)
    for i in prange(npts):
        e, _, dzb, _, _, a = symbol_eval(xs[i], ys[i], j2, bands, bw,
                                         lnbh, lad, False)
        energy[i] = e
        sk[i] = a
        speed[i] = abs(velocity(xs[i], ys[i], dzb, j2, hbar))
    return energy, sk, speed


@njit(cache=True)
def energies_at(xs, ys, j2, bands, bw, lnbh, lad):
    """Symbol values at many points, evaluated serially."""
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = symbol_eval(xs[i], ys[i], j2, bands, bw, lnbh, lad, False)[0]
    return out


@njit(cache=True, parallel=True)
def husimi_terms(xs, ys, j2, hbar, bands_s, bands_n, bw, lnbh, lad):
    """Per-point ingredients of the semiclassical Husimi function.

    Points with |z| > 1 are evaluated in the north chart zeta = 1/z; the SK
    term is then converted back to the south chart via
    A = A' + hbar d(arg zeta)/dt.  Returns (E, A, speed_factor, width) with
    speed_factor = (1 + |z|^2) / |dz/dt| and width = 2 hbar^2 g |dz/dt|^2,
    both chart invariant.
    """
    npts = xs.shape[0]
    energy = np.empty(npts)
    sk = np.empty(npts)
    factor = np.empty(npts)
    width = np.empty(npts)
    for i in prange(npts):
        x = xs[i]
        y = ys[i]
        u = x * x + y * y
        if u <= 1.0:
            e, _, dzb, _, _, a = symbol_eval(x, y, j2, bands_s, bw, lnbh, lad, False)
            v = velocity(x, y, dzb, j2, hbar)
            speed = abs(v)
            energy[i] = e
            sk[i] = a
            factor[i] = (1.0 + u) / speed if speed > 0 else np.inf
            width[i] = 2.0 * hbar * hbar * 2.0 * (0.5 * j2) * speed * speed / (1.0 + u) ** 2
        else:
            zx = x / u
            zy = -y / u
            uz = zx * zx + zy * zy
            e, _, dzb, _, _, a = symbol_eval(zx, zy, j2, bands_n, bw, lnbh, lad, False)
            v = velocity(zx, zy, dzb, j2, hbar)
            speed = abs(v)
            zeta = complex(zx, zy)
            energy[i] = e
            sk[i] = a + hbar * (v / zeta).imag
            factor[i] = (1.0 + uz) / speed if speed > 0 else np.inf
            width[i] = 2.0 * hbar * hbar * 2.0 * (0.5 * j2) * speed * speed / (1.0 + uz) ** 2
    return energy, sk, factor, width


HUSIMI_CUT = 75.0


@njit(cache=True, parallel=True)
def husimi_logs(xs, ys, la, ph, j2):
    """log(|<z|psi>|^2 / (1 + |z|^2)^(2j)) for a state with components
    c_k = exp(la_k - lnbh_k) ph_k, where la_k = 0.5 log C(2j, k) + log|c_k|.

    Terms more than HUSIMI_CUT below the largest one are skipped.
    """
    npts = xs.shape[0]
    dim = j2 + 1
    out = np.empty(npts)
    for i in prange(npts):
        x = xs[i]
        y = ys[i]
        u = x * x + y * y
        if u == 0.0:
            out[i] = 2.0 * la[0] if la[0] > -np.inf else -np.inf
            continue
        lr = 0.5 * np.log(u)
        best = -np.inf
        for k in range(dim):
            t = la[k] + k * lr
            if t > best:
                best = t
        if best == -np.inf:
            out[i] = -np.inf
            continue
        r = np.sqrt(u)
        step = complex(x / r, -y / r)   # e^{-i phi}
        rot = 1.0 + 0.0j
        acc = 0.0j
        for k in range(dim):
            t = la[k] + k * lr - best
            if t > -HUSIMI_CUT:
                acc += np.exp(t) * rot * ph[k]
            rot *= step
            if k % 32 == 31:
                rot /= abs(rot)
        mag = abs(acc)
        if mag == 0.0:
            out[i] = -np.inf
        else:
            out[i] = 2.0 * (best + np.log(mag)) - j2 * np.log1p(u)
    return out
