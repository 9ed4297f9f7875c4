"""Full-reference reconstruction metrics: PSNR, SSIM, FSIM.

PSNR runs on the RGB mean squared error; SSIM and FSIM run on the luma plane.
SSIM follows the classic 11x11 Gaussian-window formulation (sigma 1.5,
C1=0.01^2, C2=0.03^2 on unit dynamic range). FSIM combines phase congruency
(log-Gabor filter bank: 4 scales, 4 orientations, minimum wavelength 6,
scaling 2, sigmaOnf 0.55) with Scharr gradient-magnitude similarity,
weighted by the maximum phase congruency map, on a 0-255 luma range.
"""

import numpy as np
from scipy import signal

from .images import rgb_to_luma

PSNR_CAP_DB = 100.0

_SCHARR_X = np.array([[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]]) / 16.0


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images, capped at 100."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g1 = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g1, g1)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local structural similarity on the luma plane.

    Raises ValueError when the images are smaller than the 11x11 window.
    """
    a, b = _check_pair(a, b)
    x = rgb_to_luma(a)
    y = rgb_to_luma(b)
    win = _gaussian_window()
    if x.shape[0] < win.shape[0] or x.shape[1] < win.shape[1]:
        raise ValueError(f"image {x.shape} smaller than the {win.shape} SSIM window")
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2

    def filt(img):
        return signal.convolve2d(img, win, mode="valid")

    mu_x = filt(x)
    mu_y = filt(y)
    var_x = filt(x * x) - mu_x ** 2
    var_y = filt(y * y) - mu_y ** 2
    cov = filt(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def fsim(a: np.ndarray, b: np.ndarray) -> float:
    """Feature similarity on the luma plane (phase congruency + gradients)."""
    a, b = _check_pair(a, b)
    y1 = rgb_to_luma(a) * 255.0
    y2 = rgb_to_luma(b) * 255.0
    rows, cols = y1.shape
    if min(rows, cols) < 32:
        raise ValueError(f"image {y1.shape} too small for FSIM (need >= 32)")

    f = max(1, int(round(min(rows, cols) / 256.0)))
    if f > 1:
        kernel = np.ones((f, f)) / (f * f)
        y1 = signal.convolve2d(y1, kernel, mode="same")[::f, ::f]
        y2 = signal.convolve2d(y2, kernel, mode="same")[::f, ::f]

    pc1 = phase_congruency(y1)
    pc2 = phase_congruency(y2)
    g1 = _gradient_magnitude(y1)
    g2 = _gradient_magnitude(y2)

    t1, t2 = 0.85, 160.0
    s_pc = (2.0 * pc1 * pc2 + t1) / (pc1 ** 2 + pc2 ** 2 + t1)
    s_g = (2.0 * g1 * g2 + t2) / (g1 ** 2 + g2 ** 2 + t2)
    pcm = np.maximum(pc1, pc2)
    return float(np.sum(s_pc * s_g * pcm) / np.sum(pcm))


def _gradient_magnitude(y: np.ndarray) -> np.ndarray:
    gx = signal.convolve2d(y, _SCHARR_X, mode="same", boundary="fill")
    gy = signal.convolve2d(y, _SCHARR_X.T, mode="same", boundary="fill")
    return np.sqrt(gx ** 2 + gy ** 2)


def _frequency_grids(rows: int, cols: int):
    if cols % 2:
        xr = np.arange(-(cols - 1) / 2.0, (cols - 1) / 2.0 + 1) / (cols - 1)
    else:
        xr = np.arange(-cols / 2.0, cols / 2.0) / cols
    if rows % 2:
        yr = np.arange(-(rows - 1) / 2.0, (rows - 1) / 2.0 + 1) / (rows - 1)
    else:
        yr = np.arange(-rows / 2.0, rows / 2.0) / rows
    x, y = np.meshgrid(xr, yr)
    radius = np.fft.ifftshift(np.sqrt(x ** 2 + y ** 2))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    radius[0, 0] = 1.0
    return radius, theta


def _lowpass(radius_raw: np.ndarray, cutoff: float = 0.45, order: int = 15) -> np.ndarray:
    return 1.0 / (1.0 + (radius_raw / cutoff) ** (2 * order))


def phase_congruency(
    img: np.ndarray,
    nscale: int = 4,
    norient: int = 4,
    min_wavelength: float = 6.0,
    mult: float = 2.0,
    sigma_onf: float = 0.55,
    d_theta_on_sigma: float = 1.2,
    k: float = 2.0,
    cut_off: float = 0.5,
    g: float = 10.0,
    epsilon: float = 1e-4,
) -> np.ndarray:
    """Phase congruency map, summed over orientations.

    Log-Gabor filter bank with Gaussian angular spread; local energy is
    noise-compensated via the filter-overlap model (noise power from the
    median squared response at the smallest scale) and weighted by a sigmoid
    of the frequency-spread width.
    """
    img = np.asarray(img, dtype=np.float64)
    rows, cols = img.shape
    imfft = np.fft.fft2(img)
    radius, theta = _frequency_grids(rows, cols)
    lp = _lowpass(radius)
    sintheta, costheta = np.sin(theta), np.cos(theta)

    log_gabor = []
    for s in range(nscale):
        fo = 1.0 / (min_wavelength * mult ** s)
        lg = np.exp(-(np.log(radius / fo) ** 2) / (2.0 * np.log(sigma_onf) ** 2))
        lg = lg * lp
        lg[0, 0] = 0.0
        log_gabor.append(lg)

    theta_sigma = np.pi / norient / d_theta_on_sigma
    total_pc = np.zeros_like(img)

    for o in range(norient):
        angl = o * np.pi / norient
        ds = sintheta * np.cos(angl) - costheta * np.sin(angl)
        dc = costheta * np.cos(angl) + sintheta * np.sin(angl)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-(dtheta ** 2) / (2.0 * theta_sigma ** 2))

        eo = []
        ifft_filters = []
        sum_an = np.zeros_like(img)
        sum_e = np.zeros_like(img)
        sum_o = np.zeros_like(img)
        em_n = 0.0
        max_an = None
        for s in range(nscale):
            filt = log_gabor[s] * spread
            ifft_filters.append(np.real(np.fft.ifft2(filt)) * np.sqrt(rows * cols))
            response = np.fft.ifft2(imfft * filt)
            eo.append(response)
            an = np.abs(response)
            sum_an += an
            sum_e += np.real(response)
            sum_o += np.imag(response)
            if s == 0:
                em_n = float(np.sum(filt ** 2))
                max_an = an
            else:
                max_an = np.maximum(max_an, an)

        x_energy = np.sqrt(sum_e ** 2 + sum_o ** 2) + epsilon
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros_like(img)
        for s in range(nscale):
            e_part, o_part = np.real(eo[s]), np.imag(eo[s])
            energy += e_part * mean_e + o_part * mean_o - np.abs(e_part * mean_o - o_part * mean_e)

        median_e2n = float(np.median(np.abs(eo[0]) ** 2))
        mean_e2n = median_e2n / np.log(2.0)
        noise_power = mean_e2n / em_n
        est_sum_an2 = np.zeros_like(img)
        for s in range(nscale):
            est_sum_an2 += ifft_filters[s] ** 2
        est_sum_ai_aj = np.zeros_like(img)
        for si in range(nscale - 1):
            for sj in range(si + 1, nscale):
                est_sum_ai_aj += ifft_filters[si] * ifft_filters[sj]
        est_noise_energy2 = 2.0 * noise_power * np.sum(est_sum_an2) + 4.0 * noise_power * np.sum(est_sum_ai_aj)
        tau = np.sqrt(est_noise_energy2 / 2.0)
        est_noise_energy = tau * np.sqrt(np.pi / 2.0)
        est_noise_sigma = np.sqrt((2.0 - np.pi / 2.0) * tau ** 2)
        # the /1.7 rescale compensates correlated noise across the dual filter tree
        t_noise = (est_noise_energy + k * est_noise_sigma) / 1.7
        energy = np.maximum(energy - t_noise, 0.0)

        width = (sum_an / (max_an + epsilon)) / nscale
        weight = 1.0 / (1.0 + np.exp((cut_off - width) * g))
        total_pc += weight * energy / (sum_an + epsilon)
    return total_pc
