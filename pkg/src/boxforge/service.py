"""Local HTTP service for interactive generation.

Wraps a loaded checkpoint behind a small JSON API: submit a box layout, poll
the job, get back a base64 PNG image/mask pair with its alignment scores.
Jobs run strictly one at a time in submission order (the checkpoint is shared
read-only state and sampling is compute-bound), so latency is predictable and
results are reproducible from the recorded request + seed.

Run with ``python3 -m boxforge.service --checkpoint model.ckpt``.
"""

from __future__ import annotations

import argparse
import base64
import io
import json
import queue
import sys
import threading
import time
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Request
from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .diffusion import (
    Checkpoint,
    conditioning_channels,
    decode_sample,
    load_checkpoint,
    sample,
    sampling_timesteps,
)
from .geometry import BoundingBox, BoxValidationError, compute_maps_fast
from .metrics import alignment_report

# Fixed overlay palette: background first, then one color per defect class.
_PALETTE = [
    (0, 0, 0),
    (230, 60, 60),
    (60, 120, 230),
    (60, 200, 90),
    (240, 180, 40),
    (170, 80, 220),
    (40, 210, 210),
    (250, 120, 40),
    (150, 150, 150),
]


@dataclass
class ServiceSettings:
    checkpoint: str
    queue_depth: int = 16
    result_cache: int = 128
    max_height: int = 256
    max_width: int = 256
    max_steps: int = 0  # 0 = the checkpoint schedule's step count
    static_dir: str = ""
    spill_dir: str = ""
    cors_origins: tuple[str, ...] = (
        "http://localhost:8787",
        "http://127.0.0.1:8787",
        "http://localhost:5173",
    )
    worker_autostart: bool = True


class BoxPayload(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    class_id: int = Field(alias="class")
    i_min: int
    j_min: int
    i_max: int
    j_max: int


class GenerateRequest(BaseModel):
    height: int
    width: int
    boxes: list[BoxPayload] = Field(default_factory=list)
    seed: int = 0
    steps: Optional[int] = None


@dataclass
class GenerationJob:
    job_id: str
    request: dict
    status: str = "queued"  # queued -> running -> done | failed
    result: Optional[dict] = None
    error: Optional[str] = None
    submitted_at: float = field(default_factory=time.time)
    started_at: Optional[float] = None
    finished_at: Optional[float] = None

    def public(self) -> dict:
        return {
            "job_id": self.job_id,
            "status": self.status,
            "request": self.request,
            "result": self.result,
            "error": self.error,
            "submitted_at": self.submitted_at,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }


def _png_base64(array: np.ndarray, mode: str) -> str:
    buf = io.BytesIO()
    Image.fromarray(array, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class JobRunner:
    """FIFO job store + single worker thread bound to one checkpoint."""

    def __init__(self, settings: ServiceSettings, ckpt: Checkpoint):
        self.settings = settings
        self.ckpt = ckpt
        self.max_steps = settings.max_steps or ckpt.schedule.num_steps
        self.jobs: "OrderedDict[str, GenerationJob]" = OrderedDict()
        self.pending: "queue.Queue[Optional[str]]" = queue.Queue(maxsize=settings.queue_depth)
        self.lock = threading.Lock()
        self.worker: Optional[threading.Thread] = None

    # -- lifecycle ----------------------------------------------------------
    def start(self) -> None:
        if self.worker is None or not self.worker.is_alive():
            self.worker = threading.Thread(target=self._run, daemon=True)
            self.worker.start()

    def stop(self) -> None:
        if self.worker and self.worker.is_alive():
            self.pending.put(None)
            self.worker.join(timeout=30)

    def _run(self) -> None:
        while True:
            job_id = self.pending.get()
            if job_id is None:
                return
            with self.lock:
                job = self.jobs.get(job_id)
            if job is None:
                continue
            job.status = "running"
            job.started_at = time.time()
            try:
                job.result = self._execute(job.request)
                job.status = "done"
            except Exception as e:  # failed jobs stay inspectable
                job.error = f"{type(e).__name__}: {e}"
                job.status = "failed"
            job.finished_at = time.time()
            self._evict()

    # -- execution ----------------------------------------------------------
    def _execute(self, request: dict) -> dict:
        alphabet = self.ckpt.alphabet
        boxes = [
            BoundingBox(b["class"], b["i_min"], b["j_min"], b["i_max"], b["j_max"])
            for b in request["boxes"]
        ]
        height, width = request["height"], request["width"]
        maps = compute_maps_fast(boxes, height, width)
        cond = conditioning_channels(maps, alphabet)
        steps = request.get("steps") or None
        x = sample(cond, self.ckpt.denoiser, self.ckpt.schedule, seed=request["seed"], t_sample=steps)
        generated = decode_sample(x, alphabet)
        report = alignment_report(generated.mask, boxes, alphabet)
        palette = [list(_PALETTE[k % len(_PALETTE)]) for k in range(alphabet.num_classes)]
        return {
            "image_png_base64": _png_base64(generated.image, "RGB"),
            "mask_png_base64": _png_base64((generated.mask - 1).astype(np.uint8), "L"),
            "palette": palette,
            "sae": report.sae_micro,
            "ebr": report.ebr_avg,
            "steps_used": len(sampling_timesteps(self.ckpt.schedule, steps)),
        }

    # -- store --------------------------------------------------------------
    def submit(self, request: dict) -> str:
        job = GenerationJob(job_id=uuid.uuid4().hex, request=request)
        with self.lock:
            self.jobs[job.job_id] = job
        try:
            self.pending.put_nowait(job.job_id)
        except queue.Full:
            with self.lock:
                del self.jobs[job.job_id]
            raise HTTPException(
                status_code=503,
                detail=f"job queue is full ({self.settings.queue_depth} pending)",
            )
        return job.job_id

    def get(self, job_id: str) -> GenerationJob:
        with self.lock:
            job = self.jobs.get(job_id)
        if job is None:
            job = self._load_spilled(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job id: {job_id}")
        return job

    def _evict(self) -> None:
        """Drop oldest finished jobs beyond the cache size, spilling if set."""
        with self.lock:
            finished = [j for j in self.jobs.values() if j.status in ("done", "failed")]
            excess = len(finished) - self.settings.result_cache
            for job in finished[:max(0, excess)]:
                if self.settings.spill_dir:
                    spill = Path(self.settings.spill_dir)
                    spill.mkdir(parents=True, exist_ok=True)
                    (spill / f"{job.job_id}.json").write_text(json.dumps(job.public()))
                del self.jobs[job.job_id]

    def _load_spilled(self, job_id: str) -> Optional[GenerationJob]:
        if not self.settings.spill_dir:
            return None
        path = Path(self.settings.spill_dir) / f"{job_id}.json"
        if not path.exists():
            return None
        data = json.loads(path.read_text())
        return GenerationJob(
            job_id=data["job_id"],
            request=data["request"],
            status=data["status"],
            result=data["result"],
            error=data["error"],
            submitted_at=data["submitted_at"],
            started_at=data["started_at"],
            finished_at=data["finished_at"],
        )


def _validate_request(req: GenerateRequest, runner: JobRunner) -> list[dict]:
    """Field-level validation messages; empty list means the request is valid."""
    problems = []
    settings = runner.settings
    if not (8 <= req.height <= settings.max_height):
        problems.append(
            {"field": "height", "message": f"height must be in 8..{settings.max_height}"}
        )
    if not (8 <= req.width <= settings.max_width):
        problems.append(
            {"field": "width", "message": f"width must be in 8..{settings.max_width}"}
        )
    if req.steps is not None and not (1 <= req.steps <= runner.max_steps):
        problems.append(
            {"field": "steps", "message": f"steps must be in 1..{runner.max_steps}"}
        )
    if problems:
        return problems
    num_defect = runner.ckpt.alphabet.num_defect_classes
    for k, b in enumerate(req.boxes):
        field_name = f"boxes[{k}]"
        if not (1 <= b.class_id <= num_defect):
            problems.append(
                {
                    "field": field_name,
                    "message": f"class must be in 1..{num_defect}, got {b.class_id}",
                }
            )
            continue
        try:
            BoundingBox(b.class_id, b.i_min, b.j_min, b.i_max, b.j_max).validate(
                req.height, req.width
            )
        except BoxValidationError as e:
            problems.append({"field": field_name, "message": str(e)})
    return problems


_FALLBACK_INDEX = """<!doctype html>
<html><head><title>boxforge</title></head>
<body><h1>boxforge generation service</h1>
<p>No UI bundle is configured. API endpoints:</p>
<ul>
<li>POST /api/generate</li>
<li>GET /api/jobs/{id}</li>
<li>GET /api/meta</li>
<li>GET /api/spec (OpenAPI)</li>
</ul></body></html>
"""


def create_app(settings: ServiceSettings) -> FastAPI:
    ckpt = load_checkpoint(settings.checkpoint)
    runner = JobRunner(settings, ckpt)

    async def lifespan(app: FastAPI):
        if settings.worker_autostart:
            runner.start()
        yield
        runner.stop()

    app = FastAPI(
        title="boxforge generation service",
        version=__version__,
        openapi_url="/api/spec",
        lifespan=lifespan,
    )
    app.state.runner = runner
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(settings.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        errors = [
            {key: value for key, value in e.items() if key in ("type", "loc", "msg")}
            for e in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": jsonable_encoder(errors)})

    @app.post("/api/generate")
    def generate(req: GenerateRequest):
        problems = _validate_request(req, runner)
        if problems:
            raise HTTPException(status_code=400, detail=problems)
        request = {
            "height": req.height,
            "width": req.width,
            "boxes": [b.model_dump(by_alias=True) for b in req.boxes],
            "seed": req.seed,
            "steps": req.steps,
        }
        return {"job_id": runner.submit(request)}

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        return runner.get(job_id).public()

    @app.get("/api/meta")
    def meta():
        alphabet = ckpt.alphabet
        return {
            "num_classes": alphabet.num_classes,
            "class_names": list(alphabet.class_names),
            "bit_width": alphabet.bit_width,
            "palette": [list(_PALETTE[k % len(_PALETTE)]) for k in range(alphabet.num_classes)],
            "max_height": settings.max_height,
            "max_width": settings.max_width,
            "max_steps": runner.max_steps,
            "queue_depth": settings.queue_depth,
            "checkpoint": {
                "path": str(settings.checkpoint),
                "schedule_steps": ckpt.schedule.num_steps,
                "trained_epochs": ckpt.extra.get("epoch"),
                "trained_height": ckpt.extra.get("height"),
                "trained_width": ckpt.extra.get("width"),
            },
            "service_version": __version__,
        }

    static_dir = Path(settings.static_dir) if settings.static_dir else None
    if static_dir and static_dir.is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    else:

        @app.get("/", response_class=HTMLResponse)
        def index():
            return _FALLBACK_INDEX

    return app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="boxforge-service", description="Serve interactive box-conditioned generation."
    )
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8787)
    parser.add_argument("--queue-depth", type=int, default=16)
    parser.add_argument("--result-cache", type=int, default=128)
    parser.add_argument("--max-steps", type=int, default=0)
    parser.add_argument("--static-dir", default="")
    parser.add_argument("--spill-dir", default="")
    args = parser.parse_args(argv)

    settings = ServiceSettings(
        checkpoint=args.checkpoint,
        queue_depth=args.queue_depth,
        result_cache=args.result_cache,
        max_steps=args.max_steps,
        static_dir=args.static_dir,
        spill_dir=args.spill_dir,
    )
    import uvicorn

    uvicorn.run(create_app(settings), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
