"""Synthetic echo scenarios: image-method RIRs, loudspeaker distortion, SER mixing."""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import butter, fftconvolve, sosfilt

SPEED_OF_SOUND = 343.0
SAMPLE_RATE = 16000

ROOM_L = np.arange(3.0, 8.01, 0.5)
ROOM_W = np.arange(3.0, 7.01, 0.5)
ROOM_H = np.arange(3.0, 5.01, 0.5)
ML_DISTANCES = (0.2, 0.3, 0.4, 0.5, 0.8)
T60_VALUES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
SER_RANGE = (-10, 10)
NONLINEAR_FRACTION = 0.9


class ScenarioError(ValueError):
    """Invalid scenario; ``field`` names the offending attribute."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class Nonlinearity:
    kind: str = "none"
    param: float | None = None

    def __post_init__(self):
        if self.kind not in ("none", "hard_clip", "sigmoidal"):
            raise ScenarioError("nonlinearity", f"unknown kind {self.kind!r}")
        if self.kind != "none" and (self.param is None or not self.param > 0):
            raise ScenarioError("nonlinearity", f"{self.kind} needs a positive parameter")

    @classmethod
    def parse(cls, spec) -> "Nonlinearity":
        """Accept ``"none"``, ``"hard_clip(0.8)"``, ``"sigmoidal(4)"`` or a dict."""
        if isinstance(spec, Nonlinearity):
            return spec
        if spec is None:
            return cls()
        if isinstance(spec, dict):
            return cls(spec.get("kind", "none"), spec.get("param"))
        match = re.fullmatch(r"\s*(\w+)\s*(?:\(\s*([-+0-9.eE]+)\s*\))?\s*", str(spec))
        if not match:
            raise ScenarioError("nonlinearity", f"cannot parse {spec!r}")
        kind, param = match.groups()
        return cls(kind, float(param) if param is not None else None)

    def __str__(self):
        return self.kind if self.kind == "none" else f"{self.kind}({self.param:g})"


@dataclass(frozen=True)
class Scenario:
    room: tuple
    mic_pos: tuple
    src_pos: tuple
    t60: float
    ser_db: float
    nonlinearity: Nonlinearity = field(default_factory=Nonlinearity)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "nonlinearity", Nonlinearity.parse(self.nonlinearity))
        for name in ("room", "mic_pos", "src_pos"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 3:
                raise ScenarioError(name, "needs three coordinates")
            object.__setattr__(self, name, value)

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.mic_pos, self.src_pos)))

    def check_geometry(self):
        """Physical constraints needed by the image method."""
        room = np.asarray(self.room)
        if np.any(room <= 0):
            raise ScenarioError("room", "dimensions must be positive")
        for name in ("mic_pos", "src_pos"):
            pos = np.asarray(getattr(self, name))
            if np.any(pos <= 0) or np.any(pos >= room):
                raise ScenarioError(name, f"{tuple(pos)} is not strictly inside room {self.room}")
        if self.distance == 0:
            raise ScenarioError("mic_pos", "coincides with src_pos")
        if not self.t60 > 0:
            raise ScenarioError("t60", "must be positive")

    def validate(self):
        """Check the data-generation grid: room sizes, distances, T60, SER."""
        self.check_geometry()
        for value, grid, name, axis in ((self.room[0], ROOM_L, "room", "length"),
                                        (self.room[1], ROOM_W, "room", "width"),
                                        (self.room[2], ROOM_H, "room", "height")):
            if not np.any(np.isclose(value, grid)):
                raise ScenarioError(name, f"{axis} {value} m not in [{grid[0]}, {grid[-1]}] "
                                          "on a 0.5 m grid")
        if not np.any(np.isclose(self.distance, ML_DISTANCES, atol=1e-6)):
            raise ScenarioError("mic_pos", f"mic-loudspeaker distance {self.distance:.3f} m "
                                           f"not in {ML_DISTANCES}")
        if not np.any(np.isclose(self.t60, T60_VALUES)):
            raise ScenarioError("t60", f"{self.t60} s not in {T60_VALUES}")
        if (self.ser_db != round(self.ser_db)
                or not SER_RANGE[0] <= self.ser_db <= SER_RANGE[1]):
            raise ScenarioError("ser_db", f"{self.ser_db} dB is not an integer in {SER_RANGE}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["nonlinearity"] = {"kind": self.nonlinearity.kind, "param": self.nonlinearity.param}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {"room", "mic_pos", "src_pos", "t60", "ser_db", "nonlinearity", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ScenarioError(sorted(unknown)[0], "unknown scenario field")
        missing = known - {"nonlinearity", "seed"} - set(d)
        if missing:
            raise ScenarioError(sorted(missing)[0], "missing scenario field")
        return cls(**d)


def sample_scenario(seed: int, ser_db: float | None = None,
                    nonlinear_fraction: float = NONLINEAR_FRACTION) -> Scenario:
    """Draw a random scenario from the data-generation grid."""
    rng = np.random.default_rng(seed)
    room = (rng.choice(ROOM_L), rng.choice(ROOM_W), rng.choice(ROOM_H))
    dist = float(rng.choice(ML_DISTANCES))
    t60 = float(rng.choice(T60_VALUES))
    ser = float(rng.integers(SER_RANGE[0], SER_RANGE[1] + 1)) if ser_db is None else ser_db
    if rng.random() < nonlinear_fraction:
        nl = Nonlinearity("hard_clip", 0.8) if rng.random() < 0.5 else Nonlinearity("sigmoidal", 4.0)
    else:
        nl = Nonlinearity()
    margin = 0.5
    room_arr = np.array(room)
    while True:
        src = rng.uniform(margin, room_arr - margin)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        mic = src + dist * direction
        if np.all(mic > 0.1) and np.all(mic < room_arr - 0.1):
            break
    return Scenario(tuple(room), tuple(mic), tuple(src), t60, ser, nl, seed)


# --- room impulse response ----------------------------------------------------

@dataclass
class Rir:
    taps: np.ndarray
    sample_rate: int = SAMPLE_RATE


def sabine_absorption(room, t60: float) -> float:
    l, w, h = room
    volume = l * w * h
    surface = 2 * (l * w + l * h + w * h)
    return 0.161 * volume / (surface * t60)


def min_t60(room) -> float:
    """Shortest T60 reachable with Sabine's formula (full absorption)."""
    return sabine_absorption(room, 1.0)


def _image_table(scenario: Scenario, length: int, sample_rate: int, c: float) -> np.ndarray:
    """``G[n, k]``: summed ``1 / (4 pi d)`` of images with ``n`` reflections at delay ``k``.

    The RIR for reflection coefficient ``beta`` is then ``sum_n beta**n G[n]``.
    """
    max_dist = length / sample_rate * c
    offsets, reflections = [], []
    for dim, s, r in zip(scenario.room, scenario.src_pos, scenario.mic_pos):
        order = int(np.ceil(max_dist / (2 * dim))) + 1
        n = np.arange(-order, order + 1)
        off = np.concatenate([s + 2 * n * dim - r, -s + 2 * n * dim - r])
        refl = np.concatenate([2 * np.abs(n), np.abs(n - 1) + np.abs(n)])
        keep = np.abs(off) <= max_dist
        offsets.append(off[keep])
        reflections.append(refl[keep])
    dx, dy, dz = offsets
    dist = np.sqrt(dx[:, None, None] ** 2 + dy[None, :, None] ** 2 + dz[None, None, :] ** 2)
    nref = (reflections[0][:, None, None] + reflections[1][None, :, None]
            + reflections[2][None, None, :])
    delay = np.rint(dist / c * sample_rate).astype(np.int64)
    keep = delay < length
    nref, delay = nref[keep], delay[keep]
    n_max = int(nref.max()) + 1
    table = np.bincount(nref * length + delay, weights=1.0 / (4 * np.pi * dist[keep]),
                        minlength=n_max * length)
    return table.reshape(n_max, length)


def _taps(table: np.ndarray, alpha: float) -> np.ndarray:
    beta = np.sqrt(1.0 - alpha)
    powers = beta ** np.arange(table.shape[0])
    powers[0] = 1.0
    return powers @ table


def decay_crossing(taps: np.ndarray, level_db: float = -60.0) -> int:
    """First sample where the Schroeder curve falls to ``level_db``."""
    edc = schroeder_decay_db(taps)
    below = edc <= level_db
    return int(np.argmax(below)) if below.any() else len(taps)


def _matched_absorption(table: np.ndarray, target: int, iters: int = 50) -> float:
    lo, hi = 0.0, 1.0 - 1e-12
    if decay_crossing(_taps(table, lo)) < target:
        raise ScenarioError("t60", "room cannot sustain the requested reverberation")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if decay_crossing(_taps(table, mid)) >= target:
            lo = mid
        else:
            hi = mid
    return lo


def image_method_rir(scenario: Scenario, sample_rate: int = SAMPLE_RATE,
                     length: int | None = None, c: float = SPEED_OF_SOUND,
                     absorption: str = "matched") -> Rir:
    """Allen-Berkley image-source RIR for a shoebox room.

    All walls share one absorption coefficient ``alpha`` (reflection
    ``sqrt(1 - alpha)``). Each image contributes
    ``beta**n_reflections / (4 pi d)`` at the nearest sample of its delay.
    The default length is ``min(1 s, 1.5 * t60)``.

    ``absorption="sabine"`` takes ``alpha`` from Sabine's formula and
    rejects T60 values the room cannot reach. Shoebox image responses
    decay non-exponentially, so Sabine misses the requested T60 by tens
    of percent. ``"matched"`` (default) instead bisects ``alpha`` until the
    Schroeder curve of the returned response crosses -60 dB at ``t60``.
    """
    scenario.check_geometry()
    if length is None:
        length = int(np.ceil(min(1.0, 1.5 * scenario.t60) * sample_rate))
    table = _image_table(scenario, length, sample_rate, c)
    if absorption == "sabine":
        alpha = sabine_absorption(scenario.room, scenario.t60)
        if alpha > 1:
            raise ScenarioError(
                "t60", f"{scenario.t60} s is below the Sabine minimum "
                       f"{min_t60(scenario.room):.3f} s for room {scenario.room} "
                       f"(absorption {alpha:.2f} > 1)")
    elif absorption == "matched":
        alpha = _matched_absorption(table, int(round(scenario.t60 * sample_rate)))
    else:
        raise ValueError(f"unknown absorption rule {absorption!r}")
    return Rir(_taps(table, alpha), sample_rate)


def schroeder_decay_db(taps: np.ndarray) -> np.ndarray:
    energy = np.cumsum(taps[::-1] ** 2)[::-1]
    return 10 * np.log10(energy / energy[0] + 1e-300)


def estimate_t60(taps: np.ndarray, sample_rate: int = SAMPLE_RATE,
                 fit_range=(-5.0, -25.0)) -> float:
    """T60 extrapolated from a line fit to the Schroeder curve (T20 by default)."""
    edc = schroeder_decay_db(taps)
    start = np.argmax(edc <= fit_range[0])
    stop = np.argmax(edc <= fit_range[1])
    if stop <= start:
        raise ValueError("decay curve does not span the fit range")
    t = np.arange(start, stop) / sample_rate
    slope, _ = np.polyfit(t, edc[start:stop], 1)
    return -60.0 / slope


# --- loudspeaker distortion, mixing ---------------------------------------------

def apply_nonlinearity(x, model=None) -> np.ndarray:
    """Memoryless loudspeaker distortion.

    ``hard_clip(c)`` clamps to ``±c·max|x|``. ``sigmoidal(g)`` is the odd
    soft limiter ``x / (1 + |g x|^4)^(1/4)``: unit slope at the origin,
    saturating at ``±1/g``, with no cubic term so small signals pass
    essentially unchanged.
    """
    model = Nonlinearity.parse(model)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite samples")
    if model.kind == "none":
        return x.copy()
    if model.kind == "hard_clip":
        limit = model.param * np.max(np.abs(x))
        return np.clip(x, -limit, limit)
    g = model.param
    return x / (1.0 + np.abs(g * x) ** 4) ** 0.25


def mix_at_ser(near, echo, ser_db: float):
    """Scale ``echo`` so ``10 log10(P_near / P_echo) == ser_db``; return ``(mic, scale)``.

    When ``near`` is silent (far-end single talk) there is no reference
    power, so the echo is left at its rendered level (``scale = 1``).
    """
    near = np.asarray(near, dtype=float)
    echo = np.asarray(echo, dtype=float)
    if near.shape != echo.shape:
        raise ValueError(f"near {near.shape} and echo {echo.shape} differ in length")
    p_echo = np.mean(echo ** 2)
    if p_echo == 0:
        raise ValueError("echo has zero energy; SER is undefined")
    p_near = np.mean(near ** 2)
    scale = 1.0 if p_near == 0 else float(np.sqrt(p_near / (p_echo * 10 ** (ser_db / 10))))
    return near + scale * echo, scale


def measured_ser(near, echo) -> float:
    return float(10 * np.log10(np.sum(np.square(near)) / np.sum(np.square(echo))))


@dataclass
class Bundle:
    far: np.ndarray
    near: np.ndarray
    echo: np.ndarray      # scaled echo as it appears in ``mic``
    mic: np.ndarray
    rir: Rir
    scale: float
    scenario: Scenario

    @property
    def ser_db(self) -> float:
        return measured_ser(self.near, self.echo)

    def metadata(self) -> dict:
        near_power = float(np.mean(self.near ** 2))
        return {
            "scenario": self.scenario.to_dict(),
            "echo_scale": self.scale,
            "measured_ser_db": self.ser_db if near_power > 0 else None,
            "rir_length": len(self.rir.taps),
            "sample_rate": self.rir.sample_rate,
            "n_samples": len(self.mic),
        }


def render_scenario(scenario: Scenario, far, near, rir: Rir | None = None,
                    sample_rate: int = SAMPLE_RATE) -> Bundle:
    """``echo = rir * distort(far)``, scaled to the scenario SER and added to ``near``."""
    far = np.asarray(far, dtype=float)
    near = np.asarray(near, dtype=float)
    if far.shape != near.shape:
        raise ValueError(f"far {far.shape} and near {near.shape} differ in length")
    if rir is None:
        rir = image_method_rir(scenario, sample_rate)
    echo = fftconvolve(apply_nonlinearity(far, scenario.nonlinearity), rir.taps)[:len(far)]
    mic, scale = mix_at_ser(near, echo, scenario.ser_db)
    return Bundle(far, near, scale * echo, mic, rir, scale, scenario)


# --- test signals ----------------------------------------------------------------

def speech_like(duration: float = 5.0, sample_rate: int = SAMPLE_RATE, seed: int = 0,
                rms_db: float = -20.0, pause_fraction: float = 0.3) -> np.ndarray:
    """Amplitude-modulated band-limited noise with talk spurts and pauses.

    A stand-in for speech corpora: pink-tilted noise band-limited to
    100-4000 Hz, a 3-6 Hz syllabic envelope and silent gaps. The active
    part is normalised to ``rms_db`` dBFS.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1 / sample_rate)
    spectrum /= np.sqrt(np.maximum(freqs, 50.0))
    noise = np.fft.irfft(spectrum, n)
    sos = butter(4, [100, 4000], btype="band", fs=sample_rate, output="sos")
    noise = sosfilt(sos, noise)
    t = np.arange(n) / sample_rate
    rate = rng.uniform(3, 6)
    envelope = 0.5 * (1 + np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))) ** 2

    gate = np.zeros(n)
    pos = int(rng.uniform(0, 0.3) * sample_rate)
    while pos < n:
        talk = int(rng.uniform(0.4, 1.5) * sample_rate)
        gate[pos:pos + talk] = 1
        pos += talk + int(rng.uniform(0.1, 0.6) * sample_rate * pause_fraction / 0.3)
    ramp = int(0.01 * sample_rate)
    gate = np.convolve(gate, np.ones(ramp) / ramp, mode="same")
    x = noise * envelope * gate
    active = gate > 0.5
    if not np.any(active):
        active = slice(None)
    x *= 10 ** (rms_db / 20) / np.sqrt(np.mean(x[active] ** 2))
    return x
