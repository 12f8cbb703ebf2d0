"""HTTP annotation service.

A thin JSON layer over the annotation engine: upload an image once, run
tracking and segmentation against it, evaluate exported masks.  Images are
content-addressed, so re-uploads deduplicate and every derived cache keys
off the id.  All durable state lives under one data directory; everything
in memory (sessions, cached lifts) is rebuilt from it on startup.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import os
import tempfile
import threading
import time
import uuid
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace

import click
import numpy as np
import uvicorn
from fastapi import FastAPI, HTTPException, Request, Response
from PIL import Image
from pydantic import BaseModel

from .evalmetrics import evaluate_dataset
from .geodesic import CrackTrack, MetricParams, compute_cost, track_from_score
from .orientation import build_cake_wavelets, lift
from .raster import RasterImage, load_image, load_mask, load_probability_map
from .widthseg import extract_widths, rasterize_mask, width_profile_to_json

_ID_BYTES = 32  # sha256
_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class ServiceConfig:
    """Everything the service reads at startup.

    max_working_dim > 0 makes tracking run on a proportionally downscaled
    copy of any larger image, with coordinates mapped back; responses flag
    when that happened.  lift_budget_bytes bounds the orientation-score
    cache, not total process memory.
    """

    data_dir: str = "crackkit-data"
    host: str = "127.0.0.1"
    port: int = 8017
    max_upload_bytes: int = 32 * 2 ** 20
    lift_budget_bytes: int = 512 * 2 ** 20
    max_working_dim: int = 0
    n_orientations: int = 16
    spatial_size: int = 65
    metric_defaults: MetricParams = field(default_factory=MetricParams)
    edge_sigma: float = 2.0
    max_width: int = 32

    @classmethod
    def from_env(cls, env=None) -> "ServiceConfig":
        env = os.environ if env is None else env
        kwargs = {}
        if "CRACKKIT_DATA_DIR" in env:
            kwargs["data_dir"] = env["CRACKKIT_DATA_DIR"]
        if "CRACKKIT_LISTEN" in env:
            host, _, port = env["CRACKKIT_LISTEN"].rpartition(":")
            kwargs["host"], kwargs["port"] = host, int(port)
        for name, key in (("max_upload_bytes", "CRACKKIT_MAX_UPLOAD_MB"),
                          ("lift_budget_bytes", "CRACKKIT_LIFT_BUDGET_MB")):
            if key in env:
                kwargs[name] = int(float(env[key]) * 2 ** 20)
        for name, key, cast in (("max_working_dim", "CRACKKIT_MAX_WORKING_DIM", int),
                                ("n_orientations", "CRACKKIT_N_ORIENTATIONS", int),
                                ("spatial_size", "CRACKKIT_SPATIAL_SIZE", int),
                                ("edge_sigma", "CRACKKIT_EDGE_SIGMA", float),
                                ("max_width", "CRACKKIT_MAX_WIDTH", int)):
            if key in env:
                kwargs[name] = cast(env[key])
        if "CRACKKIT_METRIC_PARAMS" in env:
            kwargs["metric_defaults"] = MetricParams(**json.loads(env["CRACKKIT_METRIC_PARAMS"]))
        return cls(**kwargs)


class LiftCache:
    """Byte-budgeted LRU of orientation scores with single-flight builds.

    Concurrent requests for the same key block on one per-key lock, so the
    lift of an image is computed once no matter how many clients ask first.
    A volume larger than the whole budget is returned but never stored.
    """

    def __init__(self, budget_bytes: int):
        self._budget = int(budget_bytes)
        self._entries: OrderedDict = OrderedDict()
        self._total = 0
        self._lock = threading.Lock()
        self._building: dict = {}

    def get_or_build(self, key, build):
        """Returns (score, hit)."""
        with self._lock:
            if key in self._entries:
                self._entries.move_to_end(key)
                return self._entries[key], True
            gate = self._building.setdefault(key, threading.Lock())
        with gate:
            with self._lock:
                if key in self._entries:
                    self._entries.move_to_end(key)
                    return self._entries[key], True
            score = build()
            with self._lock:
                nbytes = score.data.nbytes
                if nbytes <= self._budget and key not in self._entries:
                    self._entries[key] = score
                    self._total += nbytes
                    while self._total > self._budget:
                        _, old = self._entries.popitem(last=False)
                        self._total -= old.data.nbytes
                self._building.pop(key, None)
            return score, False


@dataclass
class Session:
    """Per-image work log, persisted so a restart loses nothing."""

    session_id: str
    image_id: str
    created_at: float
    tracks: list = field(default_factory=list)
    masks: list = field(default_factory=list)


class TrackRequest(BaseModel):
    endpoints: list[tuple[float, float]]
    params: dict | None = None


class TrackVertex(BaseModel):
    x: float
    y: float
    theta: float


class SegmentRequest(BaseModel):
    track: list[TrackVertex]
    width_params: dict | None = None


class EvalPair(BaseModel):
    pred: str
    gt: str


class EvaluateRequest(BaseModel):
    pairs: list[EvalPair]
    tolerance: float = 0.0
    threshold: float = 0.5


def _canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _json_response(payload, headers=None) -> Response:
    return Response(content=_canonical_json(payload),
                    media_type="application/json", headers=headers)


def _write_bytes_atomic(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _densified(vertices: np.ndarray, thetas: np.ndarray):
    """Split segments longer than one pixel per axis.

    Tracks produced on a downscaled working copy come back with stretched
    steps; CrackTrack requires unit steps, so interpolate positions and
    carry each segment's starting orientation.
    """
    out_v, out_t = [vertices[0]], [thetas[0]]
    for k in range(1, len(vertices)):
        step = np.abs(vertices[k] - vertices[k - 1]).max()
        pieces = max(1, int(np.ceil(step - 1e-9)))
        for j in range(1, pieces + 1):
            out_v.append(vertices[k - 1] + (vertices[k] - vertices[k - 1]) * (j / pieces))
            out_t.append(thetas[k - 1] if j < pieces else thetas[k])
    return np.asarray(out_v), np.asarray(out_t)


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config if config is not None else ServiceConfig.from_env()
    for sub in ("images", "masks", "sessions"):
        os.makedirs(os.path.join(config.data_dir, sub), exist_ok=True)

    app = FastAPI(title="crackkit annotation service", openapi_url="/spec")
    app.state.config = config
    app.state.stack = build_cake_wavelets(config.n_orientations, config.spatial_size)
    app.state.lifts = LiftCache(config.lift_budget_bytes)
    app.state.lock = threading.Lock()

    def image_path(image_id: str) -> str:
        return os.path.join(config.data_dir, "images", image_id + ".png")

    def session_path(image_id: str) -> str:
        return os.path.join(config.data_dir, "sessions", image_id + ".json")

    # Rebuild the in-memory index from whatever a previous run persisted.
    images: dict[str, tuple[int, int]] = {}
    sessions: dict[str, Session] = {}
    for name in sorted(os.listdir(os.path.join(config.data_dir, "images"))):
        if not name.endswith(".png"):
            continue
        image_id = name[:-4]
        with Image.open(image_path(image_id)) as img:
            images[image_id] = img.size
    for name in sorted(os.listdir(os.path.join(config.data_dir, "sessions"))):
        if not name.endswith(".json"):
            continue
        with open(session_path(name[:-5]), "r", encoding="utf-8") as fh:
            sessions[name[:-5]] = Session(**json.load(fh))
    app.state.images = images
    app.state.sessions = sessions

    def require_image(image_id: str) -> tuple[int, int]:
        dims = images.get(image_id)
        if dims is None:
            raise HTTPException(404, detail=f"unknown image {image_id!r}")
        return dims

    def save_session(session: Session) -> None:
        _write_bytes_atomic(session_path(session.image_id),
                            _canonical_json(asdict(session)).encode())

    def ensure_session(image_id: str) -> Session:
        # Images dropped into the data directory by hand have no session yet.
        session = sessions.get(image_id)
        if session is None:
            session = Session(uuid.uuid4().hex, image_id, time.time())
            sessions[image_id] = session
        return session

    def load_raster(image_id: str) -> RasterImage:
        return load_image(image_path(image_id))

    def working_geometry(dims: tuple[int, int]):
        """Full-res to working-copy mapping, or None when tracking runs 1:1."""
        w0, h0 = dims
        limit = config.max_working_dim
        if limit <= 0 or max(w0, h0) <= limit:
            return None
        scale = limit / max(w0, h0)
        ww, wh = max(2, round(w0 * scale)), max(2, round(h0 * scale))
        return (ww, wh), ((ww - 1) / (w0 - 1), (wh - 1) / (h0 - 1))

    def lifted_score(image_id: str, dims: tuple[int, int]):
        """Orientation score of the (possibly downscaled) working copy."""
        geometry = working_geometry(dims)
        key = (image_id, config.n_orientations, config.spatial_size,
               None if geometry is None else geometry[0])

        def build():
            raster = load_raster(image_id)
            gray = raster.luma()
            if geometry is not None:
                (ww, wh), _ = geometry
                resized = Image.fromarray(np.round(gray * 255.0).astype(np.uint8), "L")
                gray = np.asarray(resized.resize((ww, wh), Image.Resampling.BILINEAR)) / 255.0
            return lift(gray, app.state.stack)

        score, hit = app.state.lifts.get_or_build(key, build)
        return score, hit, geometry

    @app.post("/images")
    async def upload_image(request: Request):
        body = await request.body()
        if len(body) > config.max_upload_bytes:
            raise HTTPException(413, detail=f"upload of {len(body)} bytes exceeds "
                                            f"the {config.max_upload_bytes} byte limit")
        if not body.startswith(_PNG_MAGIC):
            raise HTTPException(415, detail="body is not a PNG file")
        try:
            with Image.open(io.BytesIO(body)) as img:
                img.verify()
            with Image.open(io.BytesIO(body)) as img:
                width, height = img.size
                mode = img.mode
        except Exception as exc:
            raise HTTPException(415, detail=f"could not decode PNG: {exc}")
        if mode not in ("L", "RGB", "P", "1"):
            raise HTTPException(415, detail=f"unsupported PNG mode {mode!r}; "
                                            "expected grayscale or RGB")
        image_id = hashlib.sha256(body).hexdigest()
        with app.state.lock:
            if image_id not in images:
                _write_bytes_atomic(image_path(image_id), body)
                images[image_id] = (width, height)
                sessions[image_id] = Session(uuid.uuid4().hex, image_id, time.time())
                save_session(sessions[image_id])
        return _json_response({"image_id": image_id, "width": width, "height": height})

    @app.get("/images/{image_id}")
    def fetch_image(image_id: str):
        require_image(image_id)
        with open(image_path(image_id), "rb") as fh:
            return Response(content=fh.read(), media_type="image/png")

    @app.post("/images/{image_id}/track")
    def track(image_id: str, request: TrackRequest):
        started = time.perf_counter()
        w0, h0 = require_image(image_id)
        if len(request.endpoints) != 2:
            raise HTTPException(422, detail="endpoints must be exactly two [x, y] pairs")
        for x, y in request.endpoints:
            if not (0 <= round(x) < w0 and 0 <= round(y) < h0):
                raise HTTPException(422, detail={
                    "message": f"endpoint ({x}, {y}) outside image of width {w0}, height {h0}",
                    "endpoint": [x, y]})
        try:
            params = replace(config.metric_defaults, **(request.params or {}))
        except (TypeError, ValueError) as exc:
            raise HTTPException(422, detail=f"bad metric params: {exc}")

        score, hit, geometry = lifted_score(image_id, (w0, h0))
        endpoints = request.endpoints
        if geometry is not None:
            (sx, sy) = geometry[1]
            endpoints = [(x * sx, y * sy) for x, y in endpoints]
        try:
            result = track_from_score(score, endpoints, params)
        except ValueError as exc:
            raise HTTPException(422, detail=str(exc))
        except RuntimeError as exc:
            raise HTTPException(409, detail=str(exc))

        n = score.n_orientations
        step = 2.0 * np.pi / n
        slab = np.rint(result.orientations / step).astype(int) % n
        xi = np.rint(result.vertices[:, 0]).astype(int)
        yi = np.rint(result.vertices[:, 1]).astype(int)
        samples = compute_cost(score, params).values[slab, yi, xi]

        vertices = result.vertices
        downscaled = None
        if geometry is not None:
            (ww, wh), (sx, sy) = geometry
            vertices = vertices / np.array([sx, sy])
            downscaled = {"width": ww, "height": wh, "scale_x": sx, "scale_y": sy}
        payload = {
            "track": [{"x": float(x), "y": float(y), "theta": float(t)}
                      for (x, y), t in zip(vertices, result.orientations)],
            "cost_stats": {"vertices": len(result), "mean": float(samples.mean()),
                           "min": float(samples.min()), "max": float(samples.max())},
            "downscaled": downscaled,
        }
        with app.state.lock:
            session = ensure_session(image_id)
            session.tracks.append({"endpoints": [list(map(float, e)) for e in request.endpoints],
                                   "vertices": len(result)})
            save_session(session)
        elapsed = (time.perf_counter() - started) * 1000.0
        return _json_response(payload, headers={"X-Lift-Cache": "hit" if hit else "miss",
                                                "X-Elapsed-Ms": f"{elapsed:.1f}"})

    @app.post("/images/{image_id}/segment")
    def segment(image_id: str, request: SegmentRequest):
        started = time.perf_counter()
        w0, h0 = require_image(image_id)
        if not request.track:
            raise HTTPException(422, detail="track must contain at least one vertex")
        for v in request.track:
            if not (0 <= v.x <= w0 - 1 and 0 <= v.y <= h0 - 1):
                raise HTTPException(422, detail={
                    "message": f"track vertex ({v.x}, {v.y}) outside image "
                               f"of width {w0}, height {h0}",
                    "vertex": [v.x, v.y]})
        width_params = request.width_params or {}
        unknown = set(width_params) - {"sigma", "max_width"}
        if unknown:
            raise HTTPException(422, detail=f"unknown width params: {sorted(unknown)}")

        vertices = np.array([[v.x, v.y] for v in request.track], dtype=float)
        thetas = np.array([v.theta for v in request.track], dtype=float)
        vertices, thetas = _densified(vertices, thetas)
        try:
            track = CrackTrack(vertices, thetas)
            raster = load_raster(image_id)
            widths = extract_widths(raster.luma(), track,
                                    sigma=float(width_params.get("sigma", config.edge_sigma)),
                                    max_width=int(width_params.get("max_width", config.max_width)))
            mask = rasterize_mask(track, widths, (w0, h0))
        except ValueError as exc:
            raise HTTPException(422, detail=str(exc))

        buffer = io.BytesIO()
        Image.fromarray(mask.pixels.astype(np.uint8) * 255, mode="L").save(buffer, format="PNG")
        png = buffer.getvalue()
        mask_id = hashlib.sha256(png).hexdigest()
        with app.state.lock:
            mask_file = os.path.join(config.data_dir, "masks", mask_id + ".png")
            if not os.path.exists(mask_file):
                _write_bytes_atomic(mask_file, png)
            session = ensure_session(image_id)
            if mask_id not in session.masks:
                session.masks.append(mask_id)
                save_session(session)
        payload = {"mask_png_base64": base64.b64encode(png).decode("ascii"),
                   "widths": json.loads(width_profile_to_json(widths))}
        elapsed = (time.perf_counter() - started) * 1000.0
        return _json_response(payload, headers={"X-Elapsed-Ms": f"{elapsed:.1f}"})

    @app.post("/evaluate")
    def evaluate(request: EvaluateRequest):
        started = time.perf_counter()
        if not request.pairs:
            raise HTTPException(422, detail="pairs must not be empty")
        missing = sorted({p for pair in request.pairs for p in (pair.pred, pair.gt)
                          if p not in images})
        if missing:
            raise HTTPException(404, detail={"message": "unknown artifacts", "missing": missing})
        try:
            triples = [(load_probability_map(image_path(pair.pred)),
                        load_mask(image_path(pair.gt)), pair.pred)
                       for pair in request.pairs]
            report = evaluate_dataset(triples, request.tolerance, request.threshold)
        except ValueError as exc:
            raise HTTPException(422, detail=str(exc))
        elapsed = (time.perf_counter() - started) * 1000.0
        return Response(content=report.to_json(), media_type="application/json",
                        headers={"X-Elapsed-Ms": f"{elapsed:.1f}"})

    return app


def build_config(host=None, port=None, data_dir=None, lift_budget_mb=None,
                 max_upload_mb=None, max_working_dim=None, metric_params=None) -> ServiceConfig:
    """Environment configuration with explicit flags layered on top."""
    config = ServiceConfig.from_env()
    overrides = {}
    if host is not None:
        overrides["host"] = host
    if port is not None:
        overrides["port"] = port
    if data_dir is not None:
        overrides["data_dir"] = data_dir
    if lift_budget_mb is not None:
        overrides["lift_budget_bytes"] = int(lift_budget_mb * 2 ** 20)
    if max_upload_mb is not None:
        overrides["max_upload_bytes"] = int(max_upload_mb * 2 ** 20)
    if max_working_dim is not None:
        overrides["max_working_dim"] = max_working_dim
    if metric_params is not None:
        overrides["metric_defaults"] = MetricParams(**json.loads(metric_params))
    return replace(config, **overrides)


@click.command(help="Serve the crack annotation API over HTTP.")
@click.option("--host", default=None, help="Listen address (env CRACKKIT_LISTEN).")
@click.option("--port", type=int, default=None)
@click.option("--data-dir", default=None, help="Durable state directory.")
@click.option("--lift-budget-mb", type=float, default=None,
              help="Memory budget for cached orientation scores.")
@click.option("--max-upload-mb", type=float, default=None)
@click.option("--max-working-dim", type=int, default=None,
              help="Track on a downscaled copy when images exceed this size; 0 disables.")
@click.option("--metric-params", default=None, help="JSON dict of default metric params.")
def main(host, port, data_dir, lift_budget_mb, max_upload_mb, max_working_dim, metric_params):
    config = build_config(host, port, data_dir, lift_budget_mb,
                          max_upload_mb, max_working_dim, metric_params)
    uvicorn.run(create_app(config), host=config.host, port=config.port)


if __name__ == "__main__":
    main()
