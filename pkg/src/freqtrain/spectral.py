"""Frequency-domain machinery.

Everything here works on a *centered* spectrum layout: frequency index
u runs over {-H/2, ..., H/2-1} and lives at array row u + H/2, so the
zero-frequency bin sits at the geometric center.  The forward transform
is unnormalized and the inverse carries the 1/(H*W) factor.

Only even heights/widths are accepted.  On an even grid the -B/2 row and
column of a cropped block lose their +B/2 mirror partner; they are
re-symmetrized (averaged with their conjugate reflection inside the
block) so that cropped spectra invert to exactly real images.  The
square low-pass filter uses the matching convention: its pass mask is
the symmetrized band indicator, which puts weight 1/2 on each member of
a Nyquist mirror pair.  That mask is exactly the transfer function of
the band's cosine kernel (see lowpass_kernel) and makes the
filter-then-decimate path agree with spectrum cropping bin by bin.

All functions are pure; none mutate their inputs.
"""

from dataclasses import dataclass
from functools import lru_cache
from math import gcd

import numpy as np

from .errors import LinearityError, ParameterError, SizeError

_REAL_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImageTensor:
    """Real C x H x W sample array, nominal range [0, 1].

    Height and width must be even; odd sizes are rejected rather than
    padded so the centered-layout index math stays unambiguous.
    """

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 3:
            raise SizeError(f"ImageTensor wants a C x H x W array, got shape {d.shape}")
        if d.dtype not in _REAL_DTYPES:
            raise SizeError(f"ImageTensor wants float32/float64 data, got {d.dtype}")
        _, h, w = d.shape
        if h % 2 or w % 2:
            raise SizeError(f"height and width must be even, got {h}x{w}")

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @classmethod
    def from_array(cls, arr, dtype=None):
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[None]
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _REAL_DTYPES:
            arr = arr.astype(np.float64)
        return cls(arr)


@dataclass(frozen=True)
class Spectrum:
    """Complex H x W frequency map of one channel, centered layout."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 2:
            raise SizeError(f"Spectrum wants an H x W array, got shape {d.shape}")
        if not np.issubdtype(d.dtype, np.complexfloating):
            raise SizeError(f"Spectrum wants complex data, got {d.dtype}")
        h, w = d.shape
        if h % 2 or w % 2:
            raise SizeError(f"spectrum sides must be even, got {h}x{w}")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class FilterSpec:
    """Square or circular pass-region selector.

    shape: "square" (bandwidth = side of the retained block, even) or
    "circular" (radius in bins).  mode: "low" keeps the region around
    the center, "high" keeps its complement.
    """

    shape: str
    mode: str
    bandwidth: int = 0
    radius: float = 0.0

    def __post_init__(self):
        if self.shape not in ("square", "circular"):
            raise ParameterError(f"unknown filter shape {self.shape!r}")
        if self.mode not in ("low", "high"):
            raise ParameterError(f"unknown filter mode {self.mode!r}")

    def validate_for(self, height, width):
        if self.shape == "square":
            b = self.bandwidth
            if b % 2 or not 2 <= b <= min(height, width):
                raise ParameterError(
                    f"square bandwidth must be even and in [2, {min(height, width)}], got {b}"
                )
        else:
            r = self.radius
            if not 0 < r <= min(height, width) / 2:
                raise ParameterError(
                    f"circular radius must be in (0, {min(height, width) / 2}], got {r}"
                )


@dataclass(frozen=True)
class FreqDependencyMatrix:
    """Dependency coefficients of a linear image operator.

    Row (u, v) x column (u', v'): the weight of input frequency
    (u', v') in output frequency (u, v).  Rows/columns are flattened in
    centered array order, so row index = (u + out_h/2) * out_w + (v + out_w/2).
    """

    out_h: int
    out_w: int
    in_h: int
    in_w: int
    data: np.ndarray  # complex, (out_h*out_w, in_h*in_w)

    def alpha(self, u, v, up, vp):
        row = (u + self.out_h // 2) * self.out_w + (v + self.out_w // 2)
        col = (up + self.in_h // 2) * self.in_w + (vp + self.in_w // 2)
        return self.data[row, col]

    def column(self, up, vp):
        col = (up + self.in_h // 2) * self.in_w + (vp + self.in_w // 2)
        return self.data[:, col].reshape(self.out_h, self.out_w)

    def column_norms(self):
        """L2 norm of every column, reshaped to the input frequency grid."""
        return np.linalg.norm(self.data, axis=0).reshape(self.in_h, self.in_w)


# ---------------------------------------------------------------------------
# Index helpers (centered layout)
# ---------------------------------------------------------------------------

def _require_even(*sides):
    for s in sides:
        if s % 2:
            raise SizeError(f"size {s} is odd; only even sides are supported")


def _neg_index(n):
    # array index of frequency -u (mod n) for each centered index
    return (n - np.arange(n)) % n


def _conj_reflect(block):
    """conj(F[-u, -v]) evaluated on the block's own centered grid."""
    h, w = block.shape
    return np.conj(block[np.ix_(_neg_index(h), _neg_index(w))])


def is_conjugate_symmetric(spectrum, rtol=1e-9):
    """Check F[u,v] = conj(F[-u,-v]) on all bins that have a mirror partner.

    The -H/2 row and -W/2 column are their own wrap-around mirrors and
    are exempt from the pairwise check.
    """
    f = spectrum.data
    mirrored = _conj_reflect(f)
    scale = max(float(np.abs(f).max()), 1e-300)
    diff = np.abs(f - mirrored) / scale
    diff[0, :] = 0.0
    diff[:, 0] = 0.0
    return bool(np.all(diff <= rtol))


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

def dft2(image):
    """Unnormalized forward 2D DFT per channel, centered layout."""
    _require_even(image.height, image.width)
    out = []
    for c in range(image.channels):
        f = np.fft.fftshift(np.fft.fft2(image.data[c].astype(np.float64)))
        out.append(Spectrum(f))
    return out


def idft2(spectrum, return_imag_residual=False):
    """Inverse 2D DFT (carries the 1/(H*W) factor) of one channel.

    The real part is returned as a single-channel ImageTensor.  If the
    spectrum violates conjugate symmetry the imaginary part is silently
    discarded; pass return_imag_residual=True to also get the discarded
    energy as a fraction of the total (0.0 for symmetric inputs).
    """
    z = np.fft.ifft2(np.fft.ifftshift(spectrum.data))
    img = ImageTensor(np.ascontiguousarray(z.real)[None])
    if not return_imag_residual:
        return img
    total = float(np.sum(np.abs(z) ** 2))
    residual = float(np.sum(z.imag**2)) / total if total > 0 else 0.0
    return img, residual


def _check_bandwidth(b, height, width):
    if b % 2 or b < 2 or b > min(height, width):
        raise ParameterError(
            f"bandwidth must be even and in [2, {min(height, width)}], got {b}"
        )


def _symmetrize_nyquist(block, rows, cols):
    """Average the -B/2 row/column with its conjugate reflection in-place."""
    out = block.copy()
    h, w = out.shape
    if rows:
        neg_w = _neg_index(w)
        out[0, :] = 0.5 * (out[0, :] + np.conj(out[0, neg_w]))
    if cols:
        neg_h = _neg_index(h)
        out[:, 0] = 0.5 * (out[:, 0] + np.conj(out[neg_h, 0]))
    return out


def crop_spectrum(spectrum, bandwidth):
    """Central B x B block scaled by B*B/(H*W), Nyquist band symmetrized.

    Retained interior bins are exactly proportional to the source.  The
    -B/2 row/column (whose +B/2 mirror falls outside the block) is
    replaced by the average of itself and its conjugate reflection, so
    the result inverts to an exactly real image whenever the source
    spectrum came from one.  No symmetrization happens along an axis the
    crop leaves whole (B equal to that side).
    """
    h, w = spectrum.height, spectrum.width
    _check_bandwidth(bandwidth, h, w)
    b = bandwidth
    r0, c0 = (h - b) // 2, (w - b) // 2
    block = spectrum.data[r0:r0 + b, c0:c0 + b] * (b * b / (h * w))
    block = _symmetrize_nyquist(block, rows=b < h, cols=b < w)
    return Spectrum(block)


def low_freq_crop(image, bandwidth):
    """Extract the centered B x B low-frequency block of every channel.

    Equivalent to idft2(crop_spectrum(dft2(channel))) and exactly real;
    the transform of the result recovers the symmetrized cropped
    spectrum, so no information inside the retained band is lost.
    """
    _check_bandwidth(bandwidth, image.height, image.width)
    out = np.empty((image.channels, bandwidth, bandwidth), dtype=image.data.dtype)
    for c, spec in enumerate(dft2(image)):
        cropped = crop_spectrum(spec, bandwidth)
        out[c] = idft2(cropped).data[0]
    return ImageTensor(out)


# ---------------------------------------------------------------------------
# Filters
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _square_low_mask(height, width, bandwidth):
    band = np.zeros((height, width))
    r0, c0 = (height - bandwidth) // 2, (width - bandwidth) // 2
    band[r0:r0 + bandwidth, c0:c0 + bandwidth] = 1.0
    # Symmetrized indicator: half weight on each member of a Nyquist
    # mirror pair that straddles the band edge.
    mask = 0.5 * (band + band[np.ix_(_neg_index(height), _neg_index(width))])
    mask.setflags(write=False)
    return mask


@lru_cache(maxsize=64)
def _circular_low_mask(height, width, radius):
    u = (np.arange(height) - height // 2)[:, None]
    v = (np.arange(width) - width // 2)[None, :]
    mask = ((u * u + v * v) <= radius * radius).astype(np.float64)
    mask.setflags(write=False)
    return mask


def filter_mask(filt, height, width):
    """Spectral multiplier implementing a FilterSpec on an H x W grid."""
    filt.validate_for(height, width)
    if filt.shape == "square":
        low = _square_low_mask(height, width, filt.bandwidth)
    else:
        low = _circular_low_mask(height, width, float(filt.radius))
    return low if filt.mode == "low" else 1.0 - low


def apply_filter(image, filt):
    """Zero spectrum bins outside (low) or inside (high) the pass region.

    Output is the same size as the input and exactly real; energy never
    increases.
    """
    mask = filter_mask(filt, image.height, image.width)
    out = np.empty_like(image.data)
    for c in range(image.channels):
        f = np.fft.fftshift(np.fft.fft2(image.data[c].astype(np.float64)))
        out[c] = np.fft.ifft2(np.fft.ifftshift(f * mask)).real
    return ImageTensor(out)


# ---------------------------------------------------------------------------
# Down-sampling
# ---------------------------------------------------------------------------

def _integer_downsample(data, kh, kw, method):
    c, h, w = data.shape
    if method == "nearest":
        return data[:, ::kh, ::kw].copy()
    if method == "box":
        return data.reshape(c, h // kh, kh, w // kw, kw).mean(axis=(2, 4))
    if method == "bilinear":
        # align-corners-false sampling at (k*x' + (k-1)/2): for odd k this
        # hits one source pixel, for even k the midpoint of two.
        def taps(k):
            if k % 2:
                return [((k - 1) // 2, 1.0)]
            return [(k // 2 - 1, 0.5), (k // 2, 0.5)]

        out = np.zeros((c, h // kh, w // kw), dtype=data.dtype)
        for sh, wh in taps(kh):
            for sw, ww in taps(kw):
                out += wh * ww * data[:, sh::kh, sw::kw]
        return out
    raise ParameterError(f"unknown down-sampling method {method!r}")


def _nearest_upsample(data, mh, mw):
    return np.repeat(np.repeat(data, mh, axis=1), mw, axis=2)


def downsample(image, out_side, method="box"):
    """Deterministic pixel-space down-sampling to out_side x out_side.

    Integer ratios use a constant convolution kernel: nearest takes the
    top-left sample of each k x k block, box takes the uniform mean, and
    bilinear uses align-corners-false weighting.  Non-integer ratios use
    the nearest-replication up-sample by m followed by an integer
    down-sample by k0 (m / k0 = out_side / side in lowest terms).
    """
    h, w = image.height, image.width
    if not 0 < out_side <= min(h, w):
        raise ParameterError(f"out_side must be in [1, {min(h, w)}], got {out_side}")
    data = image.data
    if h == out_side and w == out_side:
        return ImageTensor(data.copy())

    def factors(side):
        g = gcd(side, out_side)
        return out_side // g, side // g  # up by m, down by k0

    mh, kh = factors(h)
    mw, kw = factors(w)
    if mh > 1 or mw > 1:
        data = _nearest_upsample(data, mh, mw)
    return ImageTensor(_integer_downsample(data, kh, kw, method))


# ---------------------------------------------------------------------------
# Efficient low-frequency down-sampling (filter + decimate, or windowed sinc)
# ---------------------------------------------------------------------------

def _lanczos(t, a):
    t = np.asarray(t, dtype=np.float64)
    out = np.sinc(t) * np.sinc(t / a)
    return np.where(np.abs(t) < a, out, 0.0)


@lru_cache(maxsize=64)
def _sinc_resample_matrix(n_in, n_out, a):
    """Row-stochastic B x H matrix resampling one axis with a windowed sinc.

    Antialiased (kernel stretched by the inverse scale), top-left
    aligned (x_in = x_out * H/B, the grid frequency cropping samples),
    symmetric (edge-inclusive) reflection at the boundaries.
    """
    scale = n_out / n_in
    mat = np.zeros((n_out, n_in))
    support = int(np.ceil(a / scale))
    for i in range(n_out):
        center = i / scale
        lo = int(np.floor(center)) - support
        idx = np.arange(lo, lo + 2 * support + 2)
        wts = _lanczos(scale * (idx - center), a)
        # symmetric reflection: ... 1 0 | 0 1 ... n-1 | n-1 n-2 ...
        period = 2 * n_in
        refl = idx % period
        refl = np.where(refl >= n_in, period - 1 - refl, refl)
        np.add.at(mat[i], refl, wts)
        mat[i] /= mat[i].sum()
    mat.setflags(write=False)
    return mat


def efficient_lowfreq_downsample(image, bandwidth, path="exact", lobes=3):
    """Two-step stand-in for low_freq_crop: low-pass filter, then shrink.

    path="exact": square low-pass at B followed by decimation by H/B
    (requires an integer ratio); alias-free because every out-of-band
    bin is zero, so the result's spectrum equals the cropped spectrum
    of the input.  path="windowed_sinc": separable windowed-sinc
    resampling with the given lobe count, a CPU-cheap approximation of
    the exact path.
    """
    h, w = image.height, image.width
    _check_bandwidth(bandwidth, h, w)
    b = bandwidth
    if path == "exact":
        if h % b or w % b:
            raise ParameterError(
                f"exact path needs integer H/B and W/B (got {h}x{w} -> {b}); "
                "use the windowed_sinc path for fractional ratios"
            )
        filtered = apply_filter(image, FilterSpec("square", "low", bandwidth=b))
        return ImageTensor(filtered.data[:, ::h // b, ::w // b].copy())
    if path == "windowed_sinc":
        rows = _sinc_resample_matrix(h, b, lobes)
        cols = _sinc_resample_matrix(w, b, lobes)
        out = np.einsum("ij,cjk,lk->cil", rows, image.data.astype(np.float64), cols)
        return ImageTensor(out.astype(image.data.dtype))
    raise ParameterError(f"unknown path {path!r}")


# ---------------------------------------------------------------------------
# Spatial kernels
# ---------------------------------------------------------------------------

def lowpass_kernel(height, width, bandwidth):
    """Real H x W kernel whose circular convolution equals the square low-pass.

    kernel(x, y) = (1/(H*W)) * sum over the retained band of
    cos(2*pi*(u*x/H + v*y/W)).  Its transfer function is exactly the
    symmetrized band indicator used by apply_filter, and its entries sum
    to the DC gain 1.
    """
    _require_even(height, width)
    _check_bandwidth(bandwidth, height, width)
    b = bandwidth
    u = np.arange(-b // 2, b // 2)

    def dirichlet(n):
        x = np.arange(n)
        return np.exp(2j * np.pi * np.outer(x, u) / n).sum(axis=1)

    return np.real(np.outer(dirichlet(height), dirichlet(width))) / (height * width)


def circular_convolve(image, kernel):
    """Circular (wrap-around) convolution of every channel with a real kernel."""
    h, w = image.height, image.width
    if kernel.shape != (h, w):
        raise SizeError(f"kernel shape {kernel.shape} does not match image {h}x{w}")
    kf = np.fft.fft2(kernel)
    out = np.empty_like(image.data)
    for c in range(image.channels):
        out[c] = np.fft.ifft2(np.fft.fft2(image.data[c].astype(np.float64)) * kf).real
    return ImageTensor(out)


def sinc2d(gamma, x, y):
    """Separable 2D sinc: sin(2*pi*g*x) * sin(2*pi*g*y) / (4*pi^2*g^2*x*y).

    The removable singularities along the axes take their limit values,
    so sinc2d(g, 0, 0) = 1.  This is the infinite-size limit of the
    square low-pass kernel rescaled to unit peak (multiply the discrete
    kernel by (H*W)/B^2 to compare).
    """
    if not 0 < gamma <= 0.5:
        raise ParameterError(f"gamma must be in (0, 1/2], got {gamma}")
    return np.sinc(2.0 * gamma * np.asarray(x)) * np.sinc(2.0 * gamma * np.asarray(y))


# ---------------------------------------------------------------------------
# Brute-force linearization oracle
# ---------------------------------------------------------------------------

def linearize(op, height, width, rng=None):
    """Probe a linear image->image operator with every frequency basis image.

    Column (u', v') of the result holds the output spectrum (normalized
    by the input grid size) of the operator applied to the complex
    exponential of frequency (u', v').  Additivity is spot-checked on
    random image pairs first; a failure raises LinearityError.
    """
    _require_even(height, width)
    rng = np.random.default_rng(0) if rng is None else rng

    def run(arr):
        return op(ImageTensor(arr[None].astype(np.float64))).data[0]

    for _ in range(2):
        x = rng.standard_normal((height, width))
        y = rng.standard_normal((height, width))
        lhs = run(x + y)
        rhs = run(x) + run(y)
        scale = max(np.abs(rhs).max(), 1e-12)
        if np.abs(lhs - rhs).max() / scale > 1e-8:
            raise LinearityError("operator failed the additivity spot-check")

    ys = np.arange(width)[None, :]
    xs = np.arange(height)[:, None]
    sample = run(np.zeros((height, width)))
    out_h, out_w = sample.shape
    mat = np.empty((out_h * out_w, height * width), dtype=np.complex128)
    for iu in range(height):
        up = iu - height // 2
        for iv in range(width):
            vp = iv - width // 2
            phase = 2.0 * np.pi * (up * xs / height + vp * ys / width)
            out = run(np.cos(phase)) + 1j * run(np.sin(phase))
            spec = np.fft.fftshift(np.fft.fft2(out)) / (height * width)
            mat[:, iu * width + iv] = spec.ravel()
    return FreqDependencyMatrix(out_h, out_w, height, width, mat)


def out_of_band_column_norms(matrix, bandwidth):
    """Column norms restricted to input frequencies outside the retained band.

    "Outside" means the zero set of the symmetrized band indicator (the
    square low-pass mask): on an even grid the -B/2 row/column and its
    +B/2 mirror carry the same real-image content, so the mirror band
    counts as retained, not as a higher-frequency dependency.
    """
    norms = matrix.column_norms()
    mask = _square_low_mask(matrix.in_h, matrix.in_w, bandwidth)
    return norms[mask == 0.0]
