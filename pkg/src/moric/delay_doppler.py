"""Delay-domain decomposition and per-bin Doppler velocity estimation.

The IDFT over the subcarrier axis splits the channel into N delay bins at
tau_i = i / (N * df); each bin's complex time series is turned into a Doppler
velocity series either by a sliding-window PSD argmax (robust default) or by
the instantaneous phase derivative Im{h'/h}. Velocity vectors are then SNR
gated and z-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .core import SPEED_OF_LIGHT, CsiFrame, RadioConfig, VelocitySet, VelocityVector

VAR_FLOOR = 1e-12
STD_FLOOR = 1e-9
SNR_THRESHOLD_DB = 2.0


@dataclass(frozen=True)
class DelayProfile:
    """Per-stream delay decomposition: bins[i, s] = h(s; tau_i)."""

    bins: np.ndarray
    stream: int
    bin_delay_s: np.ndarray
    delta_tau_min_s: float
    delta_d_min_m: float

    def __post_init__(self):
        if self.bins.shape[0] != len(self.bin_delay_s):
            raise ValueError("one delay value per bin required")


@dataclass(frozen=True)
class DopplerParams:
    """Sliding-window Doppler estimation parameters.

    The SNR gate compares motion and static segments of the interpolated
    velocity series, so captures should satisfy T >= ~5x window_len for the
    static edges to span several window estimates.
    """

    window_len: int = 64
    hop: int = 4
    fft_pad: int = 512
    window_fn: str = "hann"
    estimator: str = "psd_argmax"  # or "phase_derivative"

    def __post_init__(self):
        if self.window_len < 2:
            raise ValueError("window_len must be >= 2")
        if self.hop < 1:
            raise ValueError("hop must be >= 1")
        if self.fft_pad < self.window_len:
            raise ValueError("fft_pad must be >= window_len")
        if self.window_fn != "hann":
            raise ValueError(f"unsupported window function {self.window_fn!r}")
        if self.estimator not in ("psd_argmax", "phase_derivative"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


def decompose(frame: CsiFrame, remove_static: bool = True) -> List[DelayProfile]:
    """IDFT over subcarriers: h(s; tau_i) = (1/N) sum_n H_n(s) e^{j 2 pi n i / N}.

    With remove_static=True (the pipeline default) each bin's temporal mean is
    subtracted so the static path phasor does not mask motion; pass False to
    inspect the raw decomposition (energy conservation, leakage).
    """
    n = frame.config.n_subcarriers
    df = frame.config.subcarrier_spacing_hz
    bins_all = np.fft.ifft(frame.data, axis=1)  # [S, N, T]
    if remove_static:
        bins_all = bins_all - bins_all.mean(axis=2, keepdims=True)
    delta_tau = 1.0 / (n * df)
    delays = np.arange(n) * delta_tau
    return [
        DelayProfile(
            bins=bins_all[m],
            stream=m,
            bin_delay_s=delays,
            delta_tau_min_s=delta_tau,
            delta_d_min_m=SPEED_OF_LIGHT * delta_tau,
        )
        for m in range(frame.n_streams)
    ]


def periodic_sinc(x, n: int):
    """sinc_N(x) = sin(pi N x) / (N sin(pi x)), the finite-IDFT leakage envelope.

    At integer x the removable singularity evaluates to (-1)^{x (N-1)}.
    """
    x = np.asarray(x, dtype=np.float64)
    denom = np.sin(np.pi * x)
    near_int = np.abs(denom) < 1e-12
    safe = np.where(near_int, 1.0, denom)
    vals = np.sin(np.pi * n * x) / (n * safe)
    ints = np.rint(x).astype(np.int64)
    limit = np.where((ints * (n - 1)) % 2 == 0, 1.0, -1.0)
    return np.where(near_int, limit, vals)


def estimate_velocity_psd(
    bin_series: np.ndarray, radio: RadioConfig, params: DopplerParams
) -> np.ndarray:
    """Velocity per frame from the argmax of a sliding Hann-windowed PSD.

    Each window is zero-padded to params.fft_pad; the two-sided frequency grid
    spans (-fs/2, fs/2]; the window estimates are linearly interpolated back to
    the input length.
    """
    x = np.asarray(bin_series, dtype=np.complex128)
    t = len(x)
    w = params.window_len
    if w > t:
        raise ValueError(f"window_len {w} exceeds series length {t}")
    fs = radio.sample_rate_hz
    lam = radio.wavelength_m
    starts = np.arange(0, t - w + 1, params.hop)
    segments = x[starts[:, None] + np.arange(w)[None, :]] * np.hanning(w)[None, :]
    spectra = np.abs(np.fft.fft(segments, n=params.fft_pad, axis=1)) ** 2
    freqs = np.fft.fftfreq(params.fft_pad, d=1.0 / fs)
    freqs = np.where(freqs == -fs / 2.0, fs / 2.0, freqs)  # grid is (-fs/2, fs/2]
    peak_v = lam * freqs[np.argmax(spectra, axis=1)]
    centers = starts + (w - 1) / 2.0
    return np.interp(np.arange(t, dtype=np.float64), centers, peak_v)


def estimate_velocity_phase(bin_series: np.ndarray, radio: RadioConfig) -> np.ndarray:
    """Velocity per frame from the instantaneous phase derivative.

    The per-sample derivative is the centered mean of the adjacent
    phase increments angle(h[s+1] h*[s]) (one-sided at the edges), the
    discrete form of Im{h'/h} that stays unbiased for tones up to the
    Nyquist rate. Samples whose magnitude falls below 1e-12 of the series
    maximum are set to zero; an all-zero series maps to an all-zero output.
    """
    x = np.asarray(bin_series, dtype=np.complex128)
    t = len(x)
    if t < 2:
        raise ValueError("need at least 2 samples")
    mags = np.abs(x)
    peak = mags.max()
    out = np.zeros(t)
    if peak == 0.0:
        return out
    fs = radio.sample_rate_hz
    inc = np.angle(x[1:] * np.conj(x[:-1]))  # phase step per frame
    dphi = np.empty(t)
    dphi[1:-1] = (inc[1:] + inc[:-1]) * (fs / 2.0)
    dphi[0] = inc[0] * fs
    dphi[-1] = inc[-1] * fs
    mask = mags >= 1e-12 * peak
    out[mask] = SPEED_OF_LIGHT / (2.0 * np.pi * radio.carrier_hz) * dphi[mask]
    return out


def snr_gate(
    vec: VelocityVector,
    threshold_db: float = SNR_THRESHOLD_DB,
    static_frac: float = 0.10,
    motion_frac: float = 0.60,
) -> VelocityVector:
    """Gate a velocity vector on its motion-to-static variance ratio.

    The static segments are the first and last `static_frac` of the window,
    the motion segment is the central `motion_frac`. Vectors at or below the
    threshold are zeroed and marked gated.
    """
    values = vec.values
    t = len(values)
    if t < 20:
        raise ValueError(f"need at least 20 samples to gate, got {t}")
    n_edge = max(1, int(round(static_frac * t)))
    lo = int(round((1.0 - motion_frac) / 2.0 * t))
    static = np.concatenate([values[:n_edge], values[t - n_edge :]])
    motion = values[lo : t - lo]
    snr_db = 10.0 * np.log10(
        max(float(np.var(motion)), VAR_FLOOR) / max(float(np.var(static)), VAR_FLOOR)
    )
    if snr_db <= threshold_db:
        return VelocityVector(
            values=np.zeros(t),
            delay_bin=vec.delay_bin,
            stream=vec.stream,
            snr_db=snr_db,
            gated=True,
        )
    return VelocityVector(
        values=values, delay_bin=vec.delay_bin, stream=vec.stream, snr_db=snr_db, gated=False
    )


def normalize(vec: VelocityVector) -> VelocityVector:
    """Zero-mean unit-variance scaling; gated vectors pass through as zeros."""
    if vec.gated:
        return vec
    values = vec.values
    scaled = (values - values.mean()) / max(float(values.std()), STD_FLOOR)
    return VelocityVector(
        values=scaled,
        delay_bin=vec.delay_bin,
        stream=vec.stream,
        snr_db=vec.snr_db,
        gated=False,
    )


def extract_velocity_set(
    frame: CsiFrame,
    params: Optional[DopplerParams] = None,
    snr_threshold_db: float = SNR_THRESHOLD_DB,
    apply_normalize: bool = True,
) -> VelocitySet:
    """Decompose a (sanitized) frame and estimate one velocity vector per
    (stream, delay bin), gated and normalized."""
    params = params or DopplerParams()
    radio = frame.config
    vectors = []
    for profile in decompose(frame, remove_static=True):
        for i in range(profile.bins.shape[0]):
            series = profile.bins[i]
            if params.estimator == "psd_argmax":
                v = estimate_velocity_psd(series, radio, params)
            else:
                v = estimate_velocity_phase(series, radio)
            vec = VelocityVector(
                values=v, delay_bin=i, stream=profile.stream, snr_db=0.0, gated=False
            )
            vec = snr_gate(vec, threshold_db=snr_threshold_db)
            if apply_normalize:
                vec = normalize(vec)
            vectors.append(vec)
    source = frame.meta.sample_id if frame.meta is not None else ""
    return VelocitySet(vectors=tuple(vectors), n_time=frame.n_time, source=source)
