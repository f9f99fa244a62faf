"""Rear-camera localisation: box-to-ground projection, four-point homography,
a synthetic detector and the residual-error calibrator network.

Pixel coordinates use a y-up frame (origin at the bottom-left of the image),
which is the orientation in which the box-to-ground correction subtracts the
vehicle height term. Top-view coordinates are metres: lateral offset ``x`` and
range behind the camera ``y``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import CheckpointError, DomainError
from .nn import Adam, Mlp, load_mlp, save_mlp

FT = 0.3048
PIVOT_EPS = 1e-12


@dataclass(frozen=True)
class BoundingBox:
    x_b: float
    y_b: float
    d_width: float
    d_height: float
    track_id: int = 0

    def __post_init__(self):
        if not (self.d_width > 0 and self.d_height > 0):
            raise DomainError("bounding box width and height must be positive")


@dataclass(frozen=True)
class VehicleDims:
    """Vehicle size in feet (an average sedan by default)."""

    length: float = 12.0
    w_vehicle: float = 5.9
    h_vehicle: float = 4.7

    def __post_init__(self):
        if not (self.length > 0 and self.w_vehicle > 0 and self.h_vehicle >= 0):
            raise DomainError("vehicle dimensions must be positive")


def project_center_to_ground(b: BoundingBox, d: VehicleDims = VehicleDims(), y_down: bool = False) -> tuple[float, float]:
    """Image point of the ground below the vehicle centre.

    ``y_down`` flips the sign of the height correction for image frames whose
    y axis points down.
    """
    shift = d.h_vehicle * b.d_width / d.w_vehicle
    return b.x_b, (b.y_b + shift) if y_down else (b.y_b - shift)


# --------------------------------------------------------------------------
# homography


class Homography:
    """3x3 projective map with the bottom-right entry normalised to 1."""

    def __init__(self, m):
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 3):
            raise DomainError("homography must be 3x3")
        if abs(m[2, 2]) < PIVOT_EPS:
            raise DomainError("homography cannot be normalised (bottom-right entry is zero)")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) < PIVOT_EPS:
            raise DomainError("singular homography")
        self.matrix = m

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def __repr__(self) -> str:
        return f"Homography({self.matrix.tolist()})"


def _gauss_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting."""
    A = np.array(A, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    n = len(b)
    scale = max(np.abs(A).max(), 1.0)
    for col in range(n):
        piv = col + int(np.argmax(np.abs(A[col:, col])))
        if abs(A[piv, col]) < PIVOT_EPS * scale:
            raise DomainError("singular system: are three of the points collinear?")
        if piv != col:
            A[[col, piv]] = A[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        f = A[col + 1:, col] / A[col, col]
        A[col + 1:, col:] -= f[:, None] * A[col, col:]
        b[col + 1:] -= f * b[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - A[row, row + 1:] @ x[row + 1:]) / A[row, row]
    return x


def _collinear(p, q, r, tol: float) -> bool:
    return abs((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])) <= tol


def _check_general_position(pts: np.ndarray, name: str) -> None:
    span = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-300)
    tol = 1e-12 * span * span
    for i in range(4):
        others = [pts[j] for j in range(4) if j != i]
        if _collinear(*others, tol):
            raise DomainError(f"three {name} points are collinear")


def solve_homography(src: Sequence[Sequence[float]], dst: Sequence[Sequence[float]]) -> Homography:
    """Map taking each ``src`` point to the matching ``dst`` point (i fixed to 1)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise DomainError("need exactly four 2-D correspondences")
    _check_general_position(src, "source")
    _check_general_position(dst, "destination")
    A = np.zeros((8, 8))
    rhs = np.zeros(8)
    for k, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        A[2 * k] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        A[2 * k + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        rhs[2 * k], rhs[2 * k + 1] = u, v
    a, b, c, d, e, f, g, h = _gauss_solve(A, rhs)
    return Homography([[a, b, c], [d, e, f], [g, h, 1.0]])


def apply_homography(H: Homography, p) -> tuple[float, float] | np.ndarray:
    """Project a point (or an ``(n, 2)`` array of points) through ``H``."""
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    m = H.matrix
    w = m[2, 0] * pts[:, 0] + m[2, 1] * pts[:, 1] + m[2, 2]
    if np.any(np.abs(w) < PIVOT_EPS):
        raise DomainError("point maps to infinity")
    x = (m[0, 0] * pts[:, 0] + m[0, 1] * pts[:, 1] + m[0, 2]) / w
    y = (m[1, 0] * pts[:, 0] + m[1, 1] * pts[:, 1] + m[1, 2]) / w
    if single:
        return float(x[0]), float(y[0])
    return np.stack([x, y], axis=1)


# --------------------------------------------------------------------------
# synthetic rear camera


class CameraParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    focal_px: float = Field(1000.0, gt=0)
    width_px: int = Field(1280, gt=0)
    height_px: int = Field(720, gt=0)
    mount_height_m: float = Field(1.5, gt=0)

    @property
    def cx(self) -> float:
        return self.width_px / 2

    @property
    def cy(self) -> float:
        return self.height_px / 2

    def ground_to_image(self, X, Z):
        """Pinhole projection of ground points (lateral ``X``, range ``Z``) at zero pitch."""
        X, Z = np.asarray(X, dtype=float), np.asarray(Z, dtype=float)
        return self.cx + self.focal_px * X / Z, self.cy - self.focal_px * self.mount_height_m / Z

    def ground_homography(self) -> Homography:
        """Exact image-to-ground map implied by the intrinsics."""
        f, h, cx, cy = self.focal_px, self.mount_height_m, self.cx, self.cy
        to_image = np.array([[f, cx, 0.0], [0.0, cy, -f * h], [0.0, 1.0, 0.0]])
        return Homography(np.linalg.inv(to_image))


class NoiseModel(BaseModel):
    """Detection error: zero-mean jitter whose std grows with range plus a downward centre bias."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    center_std_px: float = Field(0.3, ge=0)
    center_std_px_per_m: float = Field(0.15, ge=0)
    bias_px_per_m: float = Field(0.05, ge=0)
    size_std_frac: float = Field(0.0, ge=0)

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls(center_std_px=0.0, center_std_px_per_m=0.0, bias_px_per_m=0.0, size_std_frac=0.0)


LANE_HALF_WIDTH_M = 1.8
STRIPE_SPACING_M = 7.30


def lane_marker_points(first_range: float = STRIPE_SPACING_M, stripes: int = 2) -> np.ndarray:
    """Ground coordinates of four lane-marking corners, ``stripes`` stripe spacings apart."""
    far = first_range + stripes * STRIPE_SPACING_M
    w = LANE_HALF_WIDTH_M
    return np.array([[-w, first_range], [w, first_range], [w, far], [-w, far]])


def calibrate_camera(cam: CameraParams) -> Homography:
    """Image-to-ground homography from four lane-marking correspondences."""
    ground = lane_marker_points()
    u, v = cam.ground_to_image(ground[:, 0], ground[:, 1])
    return solve_homography(np.stack([u, v], axis=1), ground)


@dataclass
class Detection:
    frame: int
    box: Optional[BoundingBox]  # None marks an out-of-frame gap
    truth: tuple[float, float]


def synth_rear_camera(
    true_positions,
    cam: CameraParams = CameraParams(),
    noise: NoiseModel = NoiseModel(),
    rng: Optional[np.random.Generator] = None,
    dims: VehicleDims = VehicleDims(),
) -> list[Detection]:
    """Detections of a follower at ground positions ``(X lateral, Z range)`` behind the camera.

    The box is drawn around the ground point below the vehicle centre: width is
    the pinhole width of the vehicle, and the box centre sits one vehicle
    height (in image scale) above that ground point.
    """
    pos = np.atleast_2d(np.asarray(true_positions, dtype=float))
    rng = rng if rng is not None else np.random.default_rng(0)
    W, Hh = dims.w_vehicle * FT, dims.h_vehicle * FT
    out = []
    for k, (X, Z) in enumerate(pos):
        if not Z > 0:
            out.append(Detection(k, None, (X, Z)))
            continue
        u, v = cam.ground_to_image(X, Z)
        d_w = cam.focal_px * W / Z
        d_h = cam.focal_px * Hh / Z
        y_b = float(v) + d_h
        std = noise.center_std_px + noise.center_std_px_per_m * Z
        # draw unconditionally so the stream does not depend on noise settings
        e = rng.standard_normal(3)
        x_b = float(u) + std * e[0]
        y_b = y_b + std * e[1] - noise.bias_px_per_m * Z
        d_w = d_w * (1.0 + noise.size_std_frac * e[2])
        in_frame = 0 <= x_b <= cam.width_px and 0 <= y_b - d_h / 2 and y_b + d_h / 2 <= cam.height_px
        out.append(Detection(k, BoundingBox(x_b, y_b, d_w, d_h, 1) if (in_frame and d_w > 0) else None, (X, Z)))
    return out


def localize(box: BoundingBox, H: Homography, dims: VehicleDims = VehicleDims()) -> tuple[float, float]:
    """Box -> ground pixel -> top-view metres."""
    return apply_homography(H, project_center_to_ground(box, dims))


# --------------------------------------------------------------------------
# calibration dataset


@dataclass
class CalibDataset:
    raw: np.ndarray  # (n, 2) top-view points from the camera pipeline
    delta: np.ndarray  # (n, 2) truth - raw
    frames: np.ndarray
    test_fraction: float = 0.2
    split_seed: int = 0
    _perm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=float).reshape(-1, 2)
        self.delta = np.asarray(self.delta, dtype=float).reshape(-1, 2)
        self.frames = np.asarray(self.frames, dtype=int)
        if len(self.raw) != len(self.delta) or len(self.raw) != len(self.frames):
            raise DomainError("dataset columns differ in length")
        if not (np.all(np.isfinite(self.raw)) and np.all(np.isfinite(self.delta))):
            raise DomainError("dataset contains non-finite values")
        if not 0.0 <= self.test_fraction < 1.0:
            raise DomainError("test fraction must lie in [0, 1)")
        self._perm = np.random.default_rng(self.split_seed).permutation(len(self.raw))
        if len(self.train_idx) == 0:
            raise DomainError("empty training split")

    def __len__(self) -> int:
        return len(self.raw)

    @property
    def n_test(self) -> int:
        return int(round(self.test_fraction * len(self.raw)))

    @property
    def test_idx(self) -> np.ndarray:
        return np.sort(self._perm[: self.n_test])

    @property
    def train_idx(self) -> np.ndarray:
        return np.sort(self._perm[self.n_test:])

    @property
    def truth(self) -> np.ndarray:
        return self.raw + self.delta

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "x_raw", "y_raw", "dx", "dy"])
            for f, (x, y), (dx, dy) in zip(self.frames, self.raw, self.delta):
                w.writerow([int(f), repr(float(x)), repr(float(y)), repr(float(dx)), repr(float(dy))])

    @classmethod
    def from_csv(cls, path, test_fraction: float = 0.2, split_seed: int = 0) -> "CalibDataset":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise DomainError(f"{path} holds no records")
        try:
            frames = [int(r["frame"]) for r in rows]
            raw = [[float(r["x_raw"]), float(r["y_raw"])] for r in rows]
            delta = [[float(r["dx"]), float(r["dy"])] for r in rows]
        except (KeyError, ValueError) as exc:
            raise DomainError(f"malformed calibration CSV {path}: {exc}") from exc
        return cls(np.array(raw), np.array(delta), np.array(frames), test_fraction, split_seed)


class CalibGenConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(5000, ge=1)
    range_min: float = Field(5.0, gt=0)
    range_max: float = Field(50.0, gt=0)
    lateral_std: float = Field(0.4, ge=0)
    camera: CameraParams = CameraParams()
    noise: NoiseModel = NoiseModel()
    test_fraction: float = 0.2


def generate_dataset(cfg: CalibGenConfig, seed: int) -> CalibDataset:
    """Synthetic follower positions, detections and the resulting top-view errors."""
    rng = np.random.default_rng(seed)
    Z = rng.uniform(cfg.range_min, cfg.range_max, cfg.n)
    X = rng.normal(0.0, cfg.lateral_std, cfg.n)
    dets = synth_rear_camera(np.stack([X, Z], axis=1), cfg.camera, cfg.noise, rng)
    H = calibrate_camera(cfg.camera)
    frames, raw, delta = [], [], []
    for d in dets:
        if d.box is None:
            continue
        p = localize(d.box, H)
        frames.append(d.frame)
        raw.append(p)
        delta.append((d.truth[0] - p[0], d.truth[1] - p[1]))
    if not raw:
        raise DomainError("every synthetic detection fell outside the image")
    return CalibDataset(np.array(raw), np.array(delta), np.array(frames), cfg.test_fraction, seed)


# --------------------------------------------------------------------------
# calibrator


class CalibFitConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    layers: tuple[int, ...] = (2, 1024, 512, 256, 2)
    lr: float = Field(1e-3, ge=0)
    batch: int = Field(512, ge=1)
    weight_decay: float = Field(1e-4, ge=0)
    epochs: int = Field(60, ge=1)


@dataclass
class CalibModel:
    net: Optional[Mlp]  # None is the zero model
    in_mean: np.ndarray
    in_std: np.ndarray
    out_scale: np.ndarray

    @classmethod
    def zero(cls) -> "CalibModel":
        return cls(None, np.zeros(2), np.ones(2), np.ones(2))

    def predict_delta(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if self.net is None:
            return np.zeros_like(p)
        return self.net.forward((p - self.in_mean) / self.in_std) * self.out_scale

    def save(self, path) -> None:
        if self.net is None:
            raise DomainError("the zero model has nothing to save")
        save_mlp(path, self.net, {"calib": {"in_mean": self.in_mean.tolist(), "in_std": self.in_std.tolist(),
                                            "out_scale": self.out_scale.tolist()}})

    @classmethod
    def load(cls, path) -> "CalibModel":
        net, meta = load_mlp(path)
        c = meta.get("calib")
        if c is None:
            raise CheckpointError(f"{path} is not a calibrator checkpoint")
        return cls(net, np.array(c["in_mean"]), np.array(c["in_std"]), np.array(c["out_scale"]))


@dataclass
class LossCurve:
    train: list[float] = field(default_factory=list)
    test: list[float] = field(default_factory=list)


def fit_calibrator(ds: CalibDataset, cfg: CalibFitConfig = CalibFitConfig(), seed: int = 0) -> tuple[CalibModel, LossCurve]:
    """Regress (dx, dy) from the raw top-view point with an MSE-trained MLP."""
    tr, te = ds.train_idx, ds.test_idx
    x_tr, y_tr = ds.raw[tr], ds.delta[tr]
    in_mean = x_tr.mean(axis=0)
    in_std = x_tr.std(axis=0)
    if np.any(in_std < 1e-12):
        raise DomainError("degenerate dataset: an input coordinate is constant")
    out_scale = np.maximum(np.abs(y_tr).max(axis=0), 1e-12)
    rng = np.random.default_rng(seed)
    acts = ["relu"] * (len(cfg.layers) - 2) + ["none"]
    net = Mlp(cfg.layers, acts, rng)
    opt = Adam(net, cfg.lr, weight_decay=cfg.weight_decay)
    model = CalibModel(net, in_mean, in_std, out_scale)
    xn = (x_tr - in_mean) / in_std
    yn = y_tr / out_scale
    curve = LossCurve()
    for _ in range(cfg.epochs):
        order = rng.permutation(len(xn))
        for s in range(0, len(order), cfg.batch):
            idx = order[s:s + cfg.batch]
            pred, cache = net.forward(xn[idx], cache=True)
            grads, _ = net.backward(cache, 2.0 * (pred - yn[idx]) / pred.size)
            opt.step(grads)
        curve.train.append(_mse(model, ds.raw[tr], ds.delta[tr]))
        curve.test.append(_mse(model, ds.raw[te], ds.delta[te]) if len(te) else math.nan)
    return model, curve


def _mse(m: CalibModel, raw: np.ndarray, delta: np.ndarray) -> float:
    return float(np.mean((m.predict_delta(raw) - delta) ** 2))


def calibrate_point(m: CalibModel, p) -> tuple[float, float]:
    d = m.predict_delta(p)[0]
    return float(p[0] + d[0]), float(p[1] + d[1])


def _rmse(err: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1)))) if len(err) else math.nan


def calibration_report(m: CalibModel, ds: CalibDataset, bins: Sequence[float] = (0, 10, 20, 30, 40, 60)) -> dict:
    """Raw vs calibrated position RMSE (metres) on the test split, overall and per range bin."""
    te = ds.test_idx
    if len(te) == 0:
        raise DomainError("empty test split")
    raw, truth = ds.raw[te], ds.truth[te]
    cal = raw + m.predict_delta(raw)
    out = {"n_test": int(len(te)), "raw_rmse": _rmse(truth - raw), "calibrated_rmse": _rmse(truth - cal), "bins": []}
    rng_truth = truth[:, 1]
    for lo, hi in zip(bins, bins[1:]):
        sel = (rng_truth >= lo) & (rng_truth < hi)
        out["bins"].append({
            "range_lo": lo, "range_hi": hi, "n": int(sel.sum()),
            "raw_rmse": _rmse(truth[sel] - raw[sel]), "calibrated_rmse": _rmse(truth[sel] - cal[sel]),
        })
    out["reduction"] = 1.0 - out["calibrated_rmse"] / out["raw_rmse"] if out["raw_rmse"] > 0 else 0.0
    return out
