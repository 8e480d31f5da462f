"""Evaluation metrics (ERLE, SDR, SI-SNR) and spectral/time-domain training losses."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .stft import Spectrogram, StftConfig, stft

DB_CLAMP = 100.0
COS_CLAMP = 1 - 1e-8


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"signals differ in shape: {a.shape} vs {b.shape}")
    return a, b


def _ratio_db(num: float, den: float) -> float:
    if den <= 0:
        return DB_CLAMP
    if num <= 0:
        return -DB_CLAMP
    return float(np.clip(10 * np.log10(num / den), -DB_CLAMP, DB_CLAMP))


def erle(mic, out) -> float:
    """Echo return loss enhancement in dB, clamped to [0, 100]."""
    mic, out = _pair(mic, out)
    p_mic = np.sum(mic ** 2)
    if p_mic == 0:
        raise ValueError("microphone signal has zero energy")
    p_out = max(np.sum(out ** 2), 1e-12 * p_mic)
    return float(np.clip(10 * np.log10(p_mic / p_out), 0.0, DB_CLAMP))


def single_talk_mask(near, frame: int = 320, hop: int = 80, threshold_dbfs: float = -60.0):
    """Per-sample mask of far-end single talk: near-end frame energy below threshold."""
    near = np.asarray(near, dtype=float)
    n = len(near)
    mask = np.ones(n, dtype=bool)
    limit = 10 ** (threshold_dbfs / 10)
    for start in range(0, n, hop):
        seg = near[start:start + frame]
        if seg.size and np.mean(seg ** 2) >= limit:
            mask[start:start + frame] = False
    return mask


def segmental_erle(mic, out, near, **kwargs) -> float:
    """ERLE restricted to samples where the near-end talker is silent."""
    mask = single_talk_mask(near, **kwargs)
    if not mask.any():
        raise ValueError("no far-end single-talk samples to evaluate ERLE on")
    mic, out = _pair(mic, out)
    return erle(mic[mask], out[mask])


def sdr(reference, estimate) -> float:
    """Plain SDR ``10 log10(|s|^2 / |s - s_hat|^2)``, clamped to ±100 dB."""
    s, s_hat = _pair(reference, estimate)
    energy = np.sum(s ** 2)
    if energy == 0:
        raise ValueError("reference has zero energy")
    return _ratio_db(energy, np.sum((s - s_hat) ** 2))


def _centred(reference, estimate):
    s, s_hat = _pair(reference, estimate)
    s = s - s.mean()
    s_hat = s_hat - s_hat.mean()
    if not np.any(s):
        raise ValueError("reference has zero energy after mean removal")
    return s, s_hat


def sisnr(reference, estimate) -> float:
    """Scale-invariant SNR of mean-removed signals, clamped to ±100 dB."""
    s, s_hat = _centred(reference, estimate)
    target = (np.dot(s_hat, s) / np.dot(s, s)) * s
    noise = s_hat - target
    return _ratio_db(np.sum(target ** 2), np.sum(noise ** 2))


def cos_angle(reference, estimate) -> float:
    s, s_hat = _centred(reference, estimate)
    norm = np.linalg.norm(s) * np.linalg.norm(s_hat)
    if norm == 0:
        raise ValueError("estimate has zero energy after mean removal")
    return float(np.dot(s, s_hat) / norm)


def s_sisnr(reference, estimate) -> float:
    """Stretched SI-SNR ``10 log10((1 + cos b) / (1 - cos b))``.

    Larger is better. The cosine is clamped to ``±(1 - 1e-8)``.
    """
    c = float(np.clip(cos_angle(reference, estimate), -COS_CLAMP, COS_CLAMP))
    return float(10 * np.log10((1 + c) / (1 - c)))


def s_sisnr_loss(reference, estimate) -> float:
    """The stretched SI-SNR term as it appears in :func:`total_loss`.

    Returns the value itself (higher is better); :func:`total_loss`
    subtracts it so the sum is minimised.
    """
    return s_sisnr(reference, estimate)


def _spectra(S, S_hat):
    a = S.data if isinstance(S, Spectrogram) else np.asarray(S)
    b = S_hat.data if isinstance(S_hat, Spectrogram) else np.asarray(S_hat)
    if a.shape != b.shape:
        raise ValueError(f"spectrogram shapes differ: {a.shape} vs {b.shape}")
    return a, b


def compress(S, p: float = 0.5):
    """``|S|^p e^{j angle(S)}``."""
    return np.abs(S) ** p * np.exp(1j * np.angle(S))


def mag_loss(S, S_hat, p: float = 0.5) -> float:
    a, b = _spectra(S, S_hat)
    return float(np.mean((np.abs(a) ** p - np.abs(b) ** p) ** 2))


def ri_loss(S, S_hat, p: float = 0.5) -> float:
    a, b = _spectra(S, S_hat)
    return float(np.mean(np.abs(compress(a, p) - compress(b, p)) ** 2))


def total_loss(reference, estimate, config: StftConfig | None = None, p: float = 0.5) -> float:
    """``ri + mag - s_sisnr`` on time-domain signals (minimised in training).

    The stretched SI-SNR grows with alignment, so it enters with a minus
    sign to make the sum a quantity to minimise.
    """
    config = config or StftConfig()
    s, s_hat = _pair(reference, estimate)
    S, S_hat = stft(s, config), stft(s_hat, config)
    return ri_loss(S, S_hat, p) + mag_loss(S, S_hat, p) - s_sisnr(s, s_hat)


@dataclass
class EvalReport:
    name: str
    condition: str          # "DT" or "ST_FE"
    ser_db: float | None
    erle_db: float | None
    sdr_db: float | None
    sisnr_db: float | None
    s_sisnr: float | None
    mag_loss: float | None
    ri_loss: float | None
    total_loss: float | None

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def evaluate(name: str, near, mic, out, ser_db=None, config: StftConfig | None = None,
             p: float = 0.5) -> EvalReport:
    """Score one processed utterance.

    A silent ``near`` marks far-end single talk: only ERLE is reported.
    Otherwise the utterance is double talk and the near-end based metrics
    are filled in, plus ERLE over the near-end pauses when there are any.
    """
    near, out = _pair(near, out)
    mic = np.asarray(mic, dtype=float)
    if not np.any(near):
        return EvalReport(name, "ST_FE", ser_db, erle(mic, out), *([None] * 6))
    config = config or StftConfig()
    S, S_hat = stft(near, config), stft(out, config)
    try:
        e = segmental_erle(mic - near, out - near, near)
    except ValueError:
        e = None
    ssi = s_sisnr(near, out)
    mag, ri = mag_loss(S, S_hat, p), ri_loss(S, S_hat, p)
    return EvalReport(name, "DT", ser_db, e, sdr(near, out), sisnr(near, out), ssi,
                      mag, ri, ri + mag - ssi)


def write_csv(reports, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EvalReport.columns())
        writer.writeheader()
        for rep in reports:
            writer.writerow({k: ("" if v is None else v) for k, v in asdict(rep).items()})


def aggregate(reports) -> dict:
    """Mean/median of every metric per condition (DT grouped by SER)."""
    groups: dict[str, list[EvalReport]] = {}
    for rep in reports:
        key = rep.condition if rep.condition == "ST_FE" or rep.ser_db is None \
            else f"{rep.condition}@{rep.ser_db:g}dB"
        groups.setdefault(key, []).append(rep)
    out = {}
    for key, reps in sorted(groups.items()):
        stats = {"count": len(reps)}
        for col in EvalReport.columns()[3:]:
            vals = [getattr(r, col) for r in reps if getattr(r, col) is not None]
            if vals:
                stats[col] = {"mean": float(np.mean(vals)), "median": float(np.median(vals))}
        out[key] = stats
    return out


def write_json(reports, path):
    with open(path, "w") as fh:
        json.dump(aggregate(reports), fh, indent=2, sort_keys=True)
