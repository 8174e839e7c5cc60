"""THz multipath MIMO channel generation, evolution and estimation.

Half-wavelength ULAs at both ends.  A channel snapshot is a sum of rank-one
path contributions with per-path Doppler phase ramps; delay taps map to
subcarriers through a DFT.  Estimates use an orthogonal split: the estimate
and the estimation error are uncorrelated by construction, with a closed-form
per-element error variance driven by pilot SNR and an aging factor.
"""

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 2.998e8


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear arrays: M transmit elements, N receive elements."""

    num_bs_antennas: int
    num_ue_antennas: int
    element_spacing: float = 0.5  # fraction of a wavelength

    def __post_init__(self):
        if self.num_bs_antennas < 1 or self.num_ue_antennas < 1:
            raise ValueError("array sizes must be >= 1")
        if self.element_spacing <= 0:
            raise ValueError("element spacing must be positive")


@dataclass(frozen=True)
class PathParams:
    """One propagation path: complex gain, angles, delay, Doppler shift."""

    gain: complex
    aoa: float  # radians, receive side
    aod: float  # radians, transmit side
    delay: float  # seconds
    doppler: float  # Hz

    def __post_init__(self):
        if not np.isfinite(self.gain):
            raise ValueError("path gain must be finite")
        for ang in (self.aoa, self.aod):
            if not (-np.pi / 2 <= ang <= np.pi / 2):
                raise ValueError("path angles must lie in [-pi/2, pi/2]")


@dataclass(frozen=True)
class ThzLinkConfig:
    carrier_freq: float  # Hz
    distance: float  # m
    absorption_coeff: float = 0.0033  # 1/m, molecular absorption
    tx_gain: float = 100.0  # linear
    rx_gain: float = 100.0  # linear
    num_nlos_paths: int = 3
    sample_period: float = 1e-9  # s, tap spacing T_s
    num_taps: int = 1
    num_subcarriers: int = 1
    noise_variance: float = 3.1623e-11  # W (-75 dBm)

    def __post_init__(self):
        if self.carrier_freq <= 0:
            raise ValueError("carrier frequency must be positive")
        if self.distance <= 0:
            raise ValueError("distance must be positive (free-space loss is singular at r=0)")
        if self.absorption_coeff < 0:
            raise ValueError("absorption coefficient must be >= 0")
        if not 0 <= self.num_nlos_paths <= 5:
            raise ValueError("NLOS path count must be small (0..5)")


@dataclass
class ChannelRealization:
    """True channel, its estimate, and the error second-order statistics."""

    time_index: int
    true_channel: np.ndarray  # (N, M) complex
    estimate: np.ndarray  # (N, M) complex
    error_covariance: np.ndarray  # (N, N) Hermitian PSD, E(err err^H)
    error_variance: float  # per-element

    @property
    def error(self) -> np.ndarray:
        return self.true_channel - self.estimate


def steering_vector(geometry: ArrayGeometry, angle: float, side: str = "tx") -> np.ndarray:
    """Unit-modulus ULA response, entry m = exp(j 2 pi spacing m sin(angle))."""
    if not np.isfinite(angle):
        raise ValueError("angle must be finite")
    if side == "tx":
        n = geometry.num_bs_antennas
    elif side == "rx":
        n = geometry.num_ue_antennas
    else:
        raise ValueError("side must be 'tx' or 'rx'")
    m = np.arange(n)
    return np.exp(2j * np.pi * geometry.element_spacing * m * np.sin(angle))


def los_gain(cfg: ThzLinkConfig, los_delay: float | None = None) -> complex:
    """Line-of-sight gain: free-space loss, molecular absorption, delay phase."""
    tau0 = cfg.distance / SPEED_OF_LIGHT if los_delay is None else los_delay
    amp = SPEED_OF_LIGHT / (4.0 * np.pi * cfg.carrier_freq * cfg.distance)
    amp *= np.exp(-0.5 * cfg.absorption_coeff * cfg.distance)
    return amp * np.exp(-2j * np.pi * cfg.carrier_freq * tau0)


def raised_cosine(t: float, symbol_period: float, rolloff: float = 0.3, span: float = 4.0) -> float:
    """Truncated raised-cosine pulse with p(0) = 1."""
    x = t / symbol_period
    if abs(x) > span:
        return 0.0
    if rolloff > 0.0:
        denom = 1.0 - (2.0 * rolloff * x) ** 2
        if abs(denom) < 1e-10:
            # removable singularity at x = 1/(2 rolloff)
            return float(np.sinc(x) * np.pi / 4.0)
        return float(np.sinc(x) * np.cos(np.pi * rolloff * x) / denom)
    return float(np.sinc(x))


def generate_tap(
    cfg: ThzLinkConfig,
    geometry: ArrayGeometry,
    paths: list[PathParams],
    tap: int,
    time: float,
) -> np.ndarray:
    """Channel matrix at delay tap ``tap`` and absolute time ``time``.

    paths[0] is the LOS path; each path contributes a rank-one outer product
    a_r(theta) a_t(phi)^T scaled by gain, antenna gains, the pulse sample at
    the tap offset and the Doppler phase ramp exp(j 2 pi nu t).
    """
    if not paths:
        raise ValueError("path list must not be empty (paths[0] is the LOS path)")
    N, M = geometry.num_ue_antennas, geometry.num_bs_antennas
    H = np.zeros((N, M), dtype=np.complex128)
    for p in paths:
        pulse = raised_cosine(tap * cfg.sample_period - p.delay, cfg.sample_period)
        if pulse == 0.0:
            continue
        scale = p.gain * cfg.tx_gain * cfg.rx_gain * pulse
        phase = np.exp(2j * np.pi * p.doppler * time)
        ar = steering_vector(geometry, p.aoa, "rx")
        at = steering_vector(geometry, p.aod, "tx")
        H += scale * phase * np.outer(ar, at)
    return H


def subcarrier_channel(taps: list[np.ndarray], f_idx: int, num_subcarriers: int | None = None) -> np.ndarray:
    """DFT of the delay-tap sequence at bin ``f_idx``."""
    if not taps:
        raise ValueError("need at least one tap")
    ns = len(taps) if num_subcarriers is None else num_subcarriers
    H = np.zeros_like(taps[0])
    for d, Hd in enumerate(taps):
        H = H + Hd * np.exp(-2j * np.pi * f_idx * d / ns)
    return H


def mobility_to_doppler(speed: float, carrier_freq: float, path_angle: float) -> float:
    """Doppler shift f*v*cos(angle)/c for a path leaving at ``path_angle``."""
    if speed < 0:
        raise ValueError("speed must be >= 0")
    return carrier_freq * speed * np.cos(path_angle) / SPEED_OF_LIGHT


def sample_paths(
    cfg: ThzLinkConfig,
    rng: np.random.Generator,
    speed: float = 0.0,
) -> list[PathParams]:
    """Draw a LOS + NLOS path set.

    NLOS gains sit 15-25 dB below LOS with uniform phase, angles uniform in
    [-pi/3, pi/3], delays up to the tap window; Doppler per path follows the
    path angle and the configured user speed.
    """
    a0 = los_gain(cfg)  # carries the absolute-delay phase already
    los_angle = rng.uniform(-np.pi / 3, np.pi / 3)
    # delays on the tap grid are excess delays relative to the LOS arrival
    paths = [
        PathParams(
            gain=a0,
            aoa=los_angle,
            aod=rng.uniform(-np.pi / 3, np.pi / 3),
            delay=0.0,
            doppler=mobility_to_doppler(speed, cfg.carrier_freq, los_angle),
        )
    ]
    for _ in range(cfg.num_nlos_paths):
        att_db = rng.uniform(15.0, 25.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        gain = abs(a0) * 10 ** (-att_db / 20.0) * np.exp(1j * phase)
        angle = rng.uniform(-np.pi / 3, np.pi / 3)
        extra = rng.uniform(0.0, max(cfg.num_taps - 1, 1) * cfg.sample_period)
        paths.append(
            PathParams(
                gain=gain,
                aoa=angle,
                aod=rng.uniform(-np.pi / 3, np.pi / 3),
                delay=extra,
                doppler=mobility_to_doppler(speed, cfg.carrier_freq, angle),
            )
        )
    return paths


def estimation_weight(pilot_snr_db: float, aging: float) -> float:
    """Combined LMMSE-style shrink factor a in [0, 1].

    a = aging^2 * gamma/(1+gamma) with gamma the linear pilot SNR.  The
    estimate is a*H + sqrt(a(1-a)) S E with E white unit-variance, which makes
    the estimate and the error exactly uncorrelated and gives per-element
    error variance (1-a) * mean|H|^2.
    """
    if not np.isfinite(pilot_snr_db):
        raise ValueError("pilot SNR must be finite")
    if not 0.0 <= aging <= 1.0:
        raise ValueError("aging factor must lie in [0, 1]")
    gamma = 10.0 ** (pilot_snr_db / 10.0)
    return aging * aging * gamma / (1.0 + gamma)


def estimate_channel(
    true_channel: np.ndarray,
    pilot_snr_db: float,
    aging: float,
    rng: np.random.Generator,
    time_index: int = 0,
) -> ChannelRealization:
    """Noisy, aged channel estimate with orthogonal error split."""
    a = estimation_weight(pilot_snr_db, aging)
    H = np.asarray(true_channel, dtype=np.complex128)
    N, M = H.shape
    sig = float(np.mean(np.abs(H) ** 2))
    b = np.sqrt(max(a * (1.0 - a) * sig, 0.0))
    noise = (rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M))) / np.sqrt(2.0)
    est = a * H + b * noise
    err_var = (1.0 - a) * sig
    C_err = err_var * M * np.eye(N, dtype=np.complex128)
    return ChannelRealization(
        time_index=time_index,
        true_channel=H,
        estimate=est,
        error_covariance=C_err,
        error_variance=err_var,
    )


@dataclass
class UserChannelProcess:
    """Frozen path geometry for one user; snapshots evolve by Doppler ramps."""

    cfg: ThzLinkConfig
    geometry: ArrayGeometry
    paths: list[PathParams] = field(default_factory=list)

    @classmethod
    def create(cls, cfg, geometry, rng, speed=0.0):
        return cls(cfg=cfg, geometry=geometry, paths=sample_paths(cfg, rng, speed))

    def snapshot(self, time: float, f_idx: int = 0) -> np.ndarray:
        taps = [
            generate_tap(self.cfg, self.geometry, self.paths, d, time)
            for d in range(self.cfg.num_taps)
        ]
        return subcarrier_channel(taps, f_idx, self.cfg.num_subcarriers)
