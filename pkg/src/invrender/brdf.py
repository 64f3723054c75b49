"""Cook-Torrance reflectance: Lambertian diffuse plus a microfacet specular lobe.

    fr = rho_d / pi + rho_s * D(h) G(wi, wo) F(h, wi) / (4 (n.wi)(n.wo))

D is Beckmann or GGX, G the separable Smith term matched to D, F Schlick's
approximation with a scalar normal-incidence reflectance. All functions
broadcast over leading axes; direction arrays end in a length-3 axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INV_PI = 1.0 / np.pi
GGX = "ggx"
BECKMANN = "beckmann"
DISTRIBUTIONS = (GGX, BECKMANN)


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _normalize(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


@dataclass
class ShadingFrame:
    normal: np.ndarray
    tangent: np.ndarray
    bitangent: np.ndarray

    @classmethod
    def from_normal(cls, n) -> "ShadingFrame":
        """Branchless orthonormal basis around n."""
        n = np.asarray(n, dtype=np.float64)
        x, y, z = n[..., 0], n[..., 1], n[..., 2]
        sign = np.where(z >= 0.0, 1.0, -1.0)
        a = -1.0 / (sign + z)
        b = x * y * a
        t = np.stack([1.0 + sign * x * x * a, sign * b, -sign * x], axis=-1)
        bt = np.stack([b, sign + y * y * a, -y], axis=-1)
        return cls(n, t, bt)

    def to_world(self, local):
        local = np.asarray(local, dtype=np.float64)
        return (
            local[..., 0:1] * self.tangent
            + local[..., 1:2] * self.bitangent
            + local[..., 2:3] * self.normal
        )

    def to_local(self, w):
        return np.stack([_dot(w, self.tangent), _dot(w, self.bitangent), _dot(w, self.normal)], axis=-1)


@dataclass
class MaterialSample:
    rho_d: np.ndarray
    rho_s: np.ndarray
    alpha: float = 0.1
    f0: float = 0.04
    distribution: str = GGX

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        self.rho_d = np.asarray(self.rho_d, dtype=np.float64)
        self.rho_s = np.asarray(self.rho_s, dtype=np.float64)


# ------------------------------------------------------------ scalar lobes

def ndf(distribution: str, alpha, c):
    """Microfacet density D as a function of cos(theta_h); also returns dD/dc and dD/dalpha."""
    c = np.asarray(c, dtype=np.float64)
    a2 = alpha * alpha
    pos = c > 0.0
    cs = np.where(pos, c, 1.0)
    if distribution == GGX:
        k = cs * cs * (a2 - 1.0) + 1.0
        d = a2 / (np.pi * k * k)
        dd_dc = -4.0 * a2 * cs * (a2 - 1.0) / (np.pi * k ** 3)
        dd_da = 2.0 * alpha * (k - 2.0 * a2 * cs * cs) / (np.pi * k ** 3)
    elif distribution == BECKMANN:
        c2 = cs * cs
        tan2 = (1.0 - c2) / c2
        d = np.exp(-tan2 / a2) / (np.pi * a2 * c2 * c2)
        dd_dc = d * (2.0 / (a2 * c2 * cs) - 4.0 / cs)
        dd_da = d * (2.0 * tan2 / (a2 * alpha) - 2.0 / alpha)
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    zero = np.zeros_like(d)
    return np.where(pos, d, zero), np.where(pos, dd_dc, zero), np.where(pos, dd_da, zero)


_B1, _B2, _B3, _B4 = 3.535, 2.181, 2.276, 2.577


def smith_g1(distribution: str, alpha, c):
    """Smith masking for one direction, cos(theta) = c; returns (G1, dG1/dc, dG1/dalpha)."""
    c = np.asarray(c, dtype=np.float64)
    pos = c > 0.0
    cs = np.where(pos, np.minimum(c, 1.0), 1.0)
    if distribution == GGX:
        a2 = alpha * alpha
        s = np.sqrt(a2 + (1.0 - a2) * cs * cs)
        g = 2.0 * cs / (cs + s)
        ds_dc = (1.0 - a2) * cs / s
        dg_dc = 2.0 * (s - cs * ds_dc) / (cs + s) ** 2
        dg_da = -2.0 * cs * (alpha * (1.0 - cs * cs) / s) / (cs + s) ** 2
    elif distribution == BECKMANN:
        sin = np.sqrt(np.maximum(1.0 - cs * cs, 0.0))
        inner = sin > 0.0
        a = np.where(inner, cs / (alpha * np.where(inner, sin, 1.0)), np.inf)
        rational = a < 1.6
        ar = np.where(rational, a, 0.0)
        num = _B1 * ar + _B2 * ar * ar
        den = 1.0 + _B3 * ar + _B4 * ar * ar
        g = np.where(rational, num / den, 1.0)
        dg_da_ = ((_B1 + 2.0 * _B2 * ar) * den - num * (_B3 + 2.0 * _B4 * ar)) / (den * den)
        sin3 = np.where(inner, sin ** 3, 1.0)
        da_dc = 1.0 / (alpha * sin3)
        dg_dc = np.where(rational, dg_da_ * da_dc, 0.0)
        dg_da = np.where(rational, dg_da_ * (-ar / alpha), 0.0)
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    zero = np.zeros_like(g)
    return np.where(pos, g, zero), np.where(pos, dg_dc, zero), np.where(pos, dg_da, zero)


def fresnel_schlick(f0, c):
    """Schlick Fresnel for cos = h.wi; returns (F, dF/dc)."""
    c = np.maximum(np.asarray(c, dtype=np.float64), 0.0)
    m = 1.0 - c
    m2 = m * m
    f = f0 + (1.0 - f0) * m2 * m2 * m
    df = np.where(c > 0.0, -5.0 * (1.0 - f0) * m2 * m2, 0.0)
    return f, df


# ------------------------------------------------------ public operations

def microfacet_d(distribution: str, alpha: float, frame: ShadingFrame, h) -> np.ndarray:
    return ndf(distribution, alpha, _dot(frame.normal, h))[0]


def smith_g(distribution: str, alpha: float, frame: ShadingFrame, wi, wo) -> np.ndarray:
    n = frame.normal
    return smith_g1(distribution, alpha, _dot(n, wi))[0] * smith_g1(distribution, alpha, _dot(n, wo))[0]


def fresnel(f0: float, h, wi) -> np.ndarray:
    return fresnel_schlick(f0, _dot(h, wi))[0]


def halfway(wi, wo):
    return _normalize(np.asarray(wi, dtype=np.float64) + np.asarray(wo, dtype=np.float64))


class Lobe:
    """Specular lobe value and its partials for a batch of configurations.

    ``value`` is D G F / (4 (n.wi)(n.wo)), zero unless both directions lie
    strictly above the surface. Partials are taken with respect to the four
    cosines it depends on (n.wi, n.wo, n.h, h.wi) and to alpha.
    """

    def __init__(self, distribution: str, alpha: float, f0: float, n, wi, wo):
        n = np.asarray(n, dtype=np.float64)
        wi = np.asarray(wi, dtype=np.float64)
        wo = np.asarray(wo, dtype=np.float64)
        self.n, self.wi, self.wo = n, wi, wo
        self.ni = _dot(n, wi)
        self.no = _dot(n, wo)
        self.valid = (self.ni > 0.0) & (self.no > 0.0)
        hsum = wi + wo
        self.hlen = np.linalg.norm(hsum, axis=-1)
        self.h = hsum / np.where(self.hlen > 0, self.hlen, 1.0)[..., None]
        self.nh = _dot(n, self.h)
        # symmetric in wi/wo so that swapping them is bit-exact
        self.hi = 0.5 * (_dot(self.h, wi) + _dot(self.h, wo))
        d, dd_dc, dd_da = ndf(distribution, alpha, self.nh)
        gi, dgi, dgi_da = smith_g1(distribution, alpha, self.ni)
        go, dgo, dgo_da = smith_g1(distribution, alpha, self.no)
        f, df = fresnel_schlick(f0, self.hi)
        denom = 4.0 * np.where(self.valid, self.ni * self.no, 1.0)
        v = self.valid
        z = np.zeros_like(denom)
        g = gi * go
        self.value = np.where(v, d * g * f / denom, z)
        self.d_nh = np.where(v, dd_dc * g * f / denom, z)
        ni_s = np.where(v, self.ni, 1.0)
        no_s = np.where(v, self.no, 1.0)
        self.d_ni = np.where(v, d * dgi * go * f / denom - self.value / ni_s, z)
        self.d_no = np.where(v, d * gi * dgo * f / denom - self.value / no_s, z)
        self.d_hi = np.where(v, d * g * df / denom, z)
        self.d_alpha = np.where(v, (dd_da * g + d * (dgi_da * go + gi * dgo_da)) * f / denom, z)

    def vjp(self, adj):
        """Pull an adjoint of ``value`` back to (n, wi, wo)."""
        adj = np.asarray(adj, dtype=np.float64)
        a_ni = adj * self.d_ni
        a_no = adj * self.d_no
        a_nh = adj * self.d_nh
        a_hi = adj * self.d_hi
        g_n = a_ni[..., None] * self.wi + a_no[..., None] * self.wo + a_nh[..., None] * self.h
        g_wi = a_ni[..., None] * self.n + 0.5 * a_hi[..., None] * self.h
        g_wo = a_no[..., None] * self.n + 0.5 * a_hi[..., None] * self.h
        g_h = a_nh[..., None] * self.n + 0.5 * a_hi[..., None] * (self.wi + self.wo)
        # h = (wi + wo) / |wi + wo|
        hl = np.where(self.hlen > 0, self.hlen, 1.0)[..., None]
        g_hsum = (g_h - self.h * _dot(self.h, g_h)[..., None]) / hl
        return g_n, g_wi + g_hsum, g_wo + g_hsum


def eval_brdf(mat: MaterialSample, frame: ShadingFrame, wi, wo) -> np.ndarray:
    if not np.any(mat.rho_s):
        # purely diffuse: skip the microfacet terms
        valid = (_dot(frame.normal, wi) > 0.0) & (_dot(frame.normal, wo) > 0.0)
        return np.where(valid[..., None], mat.rho_d * INV_PI, 0.0)
    lobe = Lobe(mat.distribution, mat.alpha, mat.f0, frame.normal, wi, wo)
    diffuse = np.where(lobe.valid[..., None], mat.rho_d * INV_PI, 0.0)
    return diffuse + mat.rho_s * lobe.value[..., None]


def d_brdf_d_params(mat: MaterialSample, frame: ShadingFrame, wi, wo):
    """Per-channel partials of fr: (d/d rho_d, d/d rho_s, d/d alpha)."""
    lobe = Lobe(mat.distribution, mat.alpha, mat.f0, frame.normal, wi, wo)
    shape = np.broadcast_shapes(np.shape(mat.rho_d), lobe.valid.shape + (3,))
    d_rd = np.broadcast_to(np.where(lobe.valid[..., None], INV_PI, 0.0), shape).copy()
    d_rs = np.broadcast_to(lobe.value[..., None], shape).copy()
    d_a = mat.rho_s * lobe.d_alpha[..., None]
    return d_rd, d_rs, np.broadcast_to(d_a, shape).copy()


def concentric_disk(u1, u2):
    a = 2.0 * np.asarray(u1, dtype=np.float64) - 1.0
    b = 2.0 * np.asarray(u2, dtype=np.float64) - 1.0
    use_a = np.abs(a) > np.abs(b)
    sa = np.where(a == 0.0, 1.0, a)
    sb = np.where(b == 0.0, 1.0, b)
    r = np.where(use_a, a, b)
    phi = np.where(use_a, (np.pi / 4.0) * (b / sa), np.pi / 2.0 - (np.pi / 4.0) * (a / sb))
    origin = (a == 0.0) & (b == 0.0)
    r = np.where(origin, 0.0, r)
    return r * np.cos(phi), r * np.sin(phi)


def sample_cosine_hemisphere(frame: ShadingFrame, u1, u2):
    """Cosine-weighted direction about the frame normal and its density cos/pi."""
    x, y = concentric_disk(u1, u2)
    z = np.sqrt(np.maximum(0.0, 1.0 - x * x - y * y))
    local = np.stack([x, y, z], axis=-1)
    return frame.to_world(local), z * INV_PI
