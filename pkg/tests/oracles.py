"""Independent reference implementations shared by the test modules.

Nothing here imports the package's numerics: each oracle is a separate
transcription (quadrature, extended precision, naive loops, literal payoff
tables) that the package results are checked against.
"""

import math

import mpmath
import numpy as np

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(96)


def gauss_legendre(f, a: float, b: float, pieces: int = 8) -> float:
    """Composite Gauss-Legendre rule on [a, b]."""
    edges = np.linspace(a, b, pieces + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
        total += half * float(np.dot(_GL_WEIGHTS, f(mid + half * _GL_NODES)))
    return total


def quadrature_price(kind: str, s0: float, k: float, r: float, t: float, sigma: float) -> float:
    """Discounted expected payoff under the lognormal law, integrated in the
    standard-normal variable with the kink as an interval endpoint."""
    sd = sigma * math.sqrt(t)
    drift = (r - 0.5 * sigma**2) * t
    kink = (math.log(k / s0) - drift) / sd
    zmax = max(sd, 0.0) + 14.0
    zmin = -14.0
    phi = lambda z: np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    st = lambda z: s0 * np.exp(drift + sd * z)
    disc = math.exp(-r * t)
    if kind == "call":
        lo = min(max(kink, zmin), zmax)
        return disc * gauss_legendre(lambda z: (st(z) - k) * phi(z), lo, zmax, 16)
    hi = max(min(kink, zmax), zmin)
    return disc * gauss_legendre(lambda z: (k - st(z)) * phi(z), zmin, hi, 16)


def mp_d1_d2(s0, k, r, t, sigma, dps: int = 40):
    with mpmath.workdps(dps):
        s0, k, r, t, sigma = map(mpmath.mpf, (s0, k, r, t, sigma))
        d1 = (mpmath.log(s0 / k) + (r + sigma**2 / 2) * t) / (sigma * mpmath.sqrt(t))
        return float(d1), float(d1 - sigma * mpmath.sqrt(t))


def mp_call(s0, k, r, t, sigma, dps: int = 40) -> float:
    with mpmath.workdps(dps):
        s0, k, r, t, sigma = map(mpmath.mpf, (s0, k, r, t, sigma))
        d1 = (mpmath.log(s0 / k) + (r + sigma**2 / 2) * t) / (sigma * mpmath.sqrt(t))
        d2 = d1 - sigma * mpmath.sqrt(t)
        return float(s0 * mpmath.ncdf(d1) - k * mpmath.exp(-r * t) * mpmath.ncdf(d2))


# literal transcriptions of the spread payoff tables (long direction)

def calendar_table(k, c1, c2, ct2, st):
    if st <= k:
        return c1 + ct2 - c2
    return c1 - (st - k) + ct2 - c2


def butterfly_table(k1, k2, k3, c1, c2, c3, st):
    if st <= k1:
        return 2 * c2 - c1 - c3
    if st <= k2:
        return st - k1 + 2 * c2 - c1 - c3
    if st <= k3:
        return k3 - st + 2 * c2 - c1 - c3
    return 2 * c2 - c1 - c3


def loop_losses(pred, target):
    """MSE, MAE and QLIKE by explicit double loop over days and points."""
    t_days, m_pts = len(pred), len(pred[0])
    se = ae = ql = 0.0
    for i in range(t_days):
        for j in range(m_pts):
            p, y = float(pred[i][j]), float(target[i][j])
            se += (y - p) ** 2
            ae += abs(y - p)
            ql += math.log(p) + y / p
    n = t_days * m_pts
    return se / n, ae / n, ql / n


def pav(values, weights=None):
    """Pool-adjacent-violators for a nondecreasing fit."""
    w = [1.0] * len(values) if weights is None else list(weights)
    blocks = [[float(v), wi, 1] for v, wi in zip(values, w)]
    out = []
    for b in blocks:
        out.append(b)
        while len(out) > 1 and out[-2][0] > out[-1][0]:
            v2, w2, n2 = out.pop()
            v1, w1, n1 = out.pop()
            out.append([(v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, n1 + n2])
    fit = []
    for v, _, n in out:
        fit.extend([v] * n)
    return np.array(fit)


# straight-line transcriptions of the recurrent and attention equations

def _sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm_step_reference(p, x, h_prev, c_prev):
    """Per-gate peephole LSTM written out term by term (single sample)."""
    i = _sig(p.W_ix @ x + p.W_ih @ h_prev + p.W_ic * c_prev + p.b_i)
    f = _sig(p.W_fx @ x + p.W_fh @ h_prev + p.W_fc * c_prev + p.b_f)
    o = _sig(p.W_ox @ x + p.W_oh @ h_prev + p.W_oc * c_prev + p.b_o)
    g = np.tanh(p.W_gx @ x + p.W_gh @ h_prev + p.b_g)
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def attention_reference(h_seq, s_prev, attn):
    e = []
    for h in h_seq:
        e.append(float(attn.lam @ np.tanh(attn.W_ah @ h + attn.W_as @ s_prev + attn.b_a)))
    ex = [math.exp(v) for v in e]
    z = sum(ex)
    alpha = [v / z for v in ex]
    ctx = sum(a * h for a, h in zip(alpha, h_seq))
    return ctx, np.array(alpha)


def gradient_check(model, x, rng_factory, h: float = 1e-5, coords=None):
    """Max relative error of analytic vs central-difference gradients of an
    MSE loss.  Dropout masks stay fixed by re-seeding before every forward.

    ``coords`` optionally restricts the check to {name: [index, ...]}.
    """
    from ivforecast.network import mse_loss

    y0, _ = model.forward(x, "train", rng_factory())
    target = y0 + 0.1 * np.random.default_rng(7).standard_normal(y0.shape)

    def loss():
        y, _ = model.forward(x, "train", rng_factory())
        return mse_loss(y, target)[0]

    y, tape = model.forward(x, "train", rng_factory())
    grads = model.backward(tape, mse_loss(y, target)[1])
    worst = 0.0
    for name, p in model.params.items():
        idxs = coords[name] if coords is not None else list(np.ndindex(p.shape))
        for idx in idxs:
            old = p[idx]
            p[idx] = old + h
            lp = loss()
            p[idx] = old - h
            lm = loss()
            p[idx] = old
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(grads[name][idx] - fd) / (abs(fd) + 1e-8))
    return worst


def perturbed_model(kind, seed, hidden, keep_prob=0.7):
    """Glorot init plus N(0, 0.1) noise so peepholes and attention are non-trivial."""
    from ivforecast.network import build_model

    m = build_model(kind, seed=seed, hidden=hidden, keep_prob=keep_prob)
    rng = np.random.default_rng(seed)
    for v in m.params.values():
        v += rng.normal(0.0, 0.1, v.shape)
    return m


# no-arbitrage checks on a (5, 9) total-variance grid, written against the
# chord definition of convexity rather than the package's constraint rows

def calendar_ok(w, tol=1e-12):
    return bool(np.all(np.diff(w, axis=0) >= -tol))


def convex_ok(w, tol=1e-12):
    x = np.log(np.array([0.80, 0.90, 0.95, 0.975, 1.00, 1.025, 1.05, 1.10, 1.20]))
    for row in w:
        for j in range(1, len(x) - 1):
            lam = (x[j + 1] - x[j]) / (x[j + 1] - x[j - 1])
            chord = lam * row[j - 1] + (1 - lam) * row[j + 1]
            if row[j] > chord + tol:
                return False
    return True


# access auditing

from ivforecast.surface import SurfaceSeries  # noqa: E402


class AuditedSeries(SurfaceSeries):
    """Series that logs every vol read as (start, stop, limit, purpose)."""

    def __init__(self, dates, vols):
        super().__init__(dates, vols)
        self.log = []

    @classmethod
    def wrap(cls, series):
        return cls(series.dates, series.window(0, len(series)))

    def _read(self, start, stop, limit=None, purpose="data"):
        self.log.append((start, stop, limit, purpose))
        return super()._read(start, stop, limit, purpose)

    def data_reads(self):
        return [r for r in self.log if r[3] != "score"]

    def score_reads(self):
        return [r for r in self.log if r[3] == "score"]
