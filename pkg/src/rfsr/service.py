"""HTTP inference service: single-shot and progressive streaming endpoints.

Because the reconstruction is a running sum of component contributions,
the server can emit a valid partial image after every component; frame t
of the stream is byte-identical to a non-streaming request at T=t. For
images small enough to hold all pixel states, components are computed one
at a time, so a client disconnect aborts within one component's work;
larger images fall back to precomputing the fields and streaming frames.
"""

from __future__ import annotations

import asyncio
import base64
import binascii
import hashlib
import logging
import math
import time
import warnings
from typing import Optional

import numpy as np
from fastapi import FastAPI, File, HTTPException, Request, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .imaging import ImageBuffer, bilinear_upsample, decode_png, encode_png, psnr

log = logging.getLogger("rfsr.service")

DEFAULT_MAX_PIXELS = 512 * 512
DEFAULT_STREAM_CAP = 16384  # output pixels held in live recurrent state


class InferenceRequest(BaseModel):
    image: str = Field(description="base64-encoded PNG")
    s_x: float = Field(ge=1.0, description="horizontal scale factor")
    s_y: float = Field(ge=1.0, description="vertical scale factor")
    T: int = Field(ge=0, description="number of Fourier components")
    progressive: bool = False
    session_id: Optional[str] = None
    reference: Optional[str] = Field(
        default=None, description="optional base64 PNG ground truth for per-frame PSNR"
    )


def _decode_image(b64: str) -> ImageBuffer:
    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise HTTPException(status_code=400, detail=f"image is not valid base64: {exc}")
    try:
        return decode_png(raw)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc))


class ServiceState:
    def __init__(self, max_pixels: int, stream_cap: int, max_sessions: int = 16):
        self.model = None
        self.header = None
        self.digest = None
        self.max_pixels = max_pixels
        self.stream_cap = stream_cap
        self.aborted_streams = 0
        self.infer_lock = asyncio.Semaphore(4)
        self._sessions: dict = {}
        self._max_sessions = max_sessions

    def load_model(self, ckpt_path) -> None:
        from .trainer import checkpoint_digest, load_checkpoint

        model, header = load_checkpoint(ckpt_path)
        self.model = model
        self.header = header
        self.digest = checkpoint_digest(ckpt_path)

    @property
    def ready(self) -> bool:
        return self.model is not None

    def require_model(self):
        if not self.ready:
            raise HTTPException(status_code=503, detail="model not loaded yet")
        return self.model

    def session_latents(self, session_id, img_digest):
        entry = self._sessions.get(session_id)
        if entry and entry[0] == img_digest:
            return entry[1]
        return None

    def store_session(self, session_id, img_digest, latents) -> None:
        if len(self._sessions) >= self._max_sessions:
            self._sessions.pop(next(iter(self._sessions)))
        self._sessions[session_id] = (img_digest, latents)


def _validate_sizes(state: ServiceState, img: ImageBuffer, req: InferenceRequest):
    if img.height * img.width > state.max_pixels:
        raise HTTPException(
            status_code=413,
            detail=f"image has {img.height * img.width} pixels, limit {state.max_pixels}",
        )
    out_h = int(math.floor(img.height * req.s_y))
    out_w = int(math.floor(img.width * req.s_x))
    if out_h * out_w > state.max_pixels:
        raise HTTPException(
            status_code=422,
            detail=(
                f"s_x/s_y produce {out_h * out_w} output pixels, limit {state.max_pixels}"
            ),
        )
    if state.model.is_recurrent:
        t_cap = 2 * state.model.head_cfg.T_max
        reason = "the service cap (2x trained T_max)"
    else:
        t_cap = state.model.head.K
        reason = "the fixed head's component count K"
    if req.T > t_cap:
        raise HTTPException(
            status_code=422,
            detail=f"T={req.T} exceeds {reason}: {t_cap}",
        )
    return out_h, out_w


def _model_meta(state: ServiceState) -> dict:
    head = state.header["head_config"]
    enc = state.header["encoder_config"]
    return {
        "T_max": head["T_max"],
        "pe_variant": head["pe_variant"],
        "head_kind": head["head_kind"],
        "model_width": head["model_width"],
        "encoder_channels": enc["channels"],
        "checkpoint_digest": state.digest,
        "format_version": state.header["format_version"],
        "max_pixels": state.max_pixels,
        "schema_version": 1,
    }


def create_app(ckpt_path=None, max_pixels: int = DEFAULT_MAX_PIXELS,
               stream_cap: int = DEFAULT_STREAM_CAP) -> FastAPI:
    app = FastAPI(title="rfsr inference service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    state = ServiceState(max_pixels=max_pixels, stream_cap=stream_cap)
    app.state.service = state
    if ckpt_path is not None:
        state.load_model(ckpt_path)

    @app.get("/healthz")
    def healthz():
        if not state.ready:
            raise HTTPException(status_code=503, detail="model not loaded yet")
        return {"status": "ok"}

    @app.get("/v1/model")
    def model_meta():
        state.require_model()
        return _model_meta(state)

    def _latents_for(img: ImageBuffer, req: InferenceRequest):
        """Reuse the session's cached encoding when the image is unchanged."""
        if req.session_id is None or req.T == 0:
            return None
        digest = hashlib.sha256(img.data.tobytes()).hexdigest()
        latents = state.session_latents(req.session_id, digest)
        if latents is None:
            latents = state.model.encode_lr(img)
            state.store_session(req.session_id, digest, latents)
        return latents

    def _run_infer(img: ImageBuffer, req: InferenceRequest):
        model = state.model
        start = time.monotonic()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sr = model.infer_image(img, req.s_x, req.s_y, req.T,
                                   latents=_latents_for(img, req))
        elapsed_ms = (time.monotonic() - start) * 1000.0
        return sr, elapsed_ms

    @app.post("/v1/infer")
    async def infer(req: InferenceRequest):
        state.require_model()
        img = _decode_image(req.image)
        _validate_sizes(state, img, req)
        async with state.infer_lock:
            sr, elapsed_ms = await asyncio.to_thread(_run_infer, img, req)
        return {
            "image": base64.b64encode(encode_png(sr)).decode(),
            "width": sr.width,
            "height": sr.height,
            "T": req.T,
            "elapsed_ms": elapsed_ms,
            "model": _model_meta(state),
        }

    @app.post("/v1/infer/upload")
    async def infer_upload(file: UploadFile = File(...), s_x: float = 2.0,
                           s_y: float = 2.0, T: int = 8):
        """Multipart variant for large uploads."""
        raw = await file.read()
        req = InferenceRequest(image=base64.b64encode(raw).decode(), s_x=s_x, s_y=s_y, T=T)
        return await infer(req)

    def _sse(event: str, payload: dict) -> str:
        import json

        return f"event: {event}\ndata: {json.dumps(payload)}\n\n"

    @app.post("/v1/infer/stream")
    async def infer_stream(req: InferenceRequest, request: Request):
        state.require_model()
        model = state.model
        img = _decode_image(req.image)
        out_h, out_w = _validate_sizes(state, img, req)
        reference = None
        if req.reference is not None:
            reference = _decode_image(req.reference)
            if (reference.height, reference.width) != (out_h, out_w):
                raise HTTPException(
                    status_code=422,
                    detail=f"reference must be {out_h}x{out_w} to score frames",
                )
        incremental = out_h * out_w <= state.stream_cap

        async def gen():
            start = time.monotonic()
            base = bilinear_upsample(img, out_h, out_w).data
            partial = base.copy()
            latents = await asyncio.to_thread(_latents_for, img, req) if req.T else None
            if incremental:
                def field_iter():
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        yield from model.iter_component_fields(img, req.s_x, req.s_y,
                                                               req.T, latents=latents)
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    fields, _ = await asyncio.to_thread(
                        model.component_fields, img, req.s_x, req.s_y, req.T,
                        4096, latents
                    )

                def field_iter():
                    for ti in range(req.T):
                        yield ti + 1, fields[ti], None

            it = field_iter()
            frames_sent = 0
            try:
                for t in range(1, req.T + 1):
                    if await request.is_disconnected():
                        state.aborted_streams += 1
                        log.info("stream aborted by client after %d frames", frames_sent)
                        return
                    _, field, _ = await asyncio.to_thread(next, it)
                    partial += field
                    frame_img = ImageBuffer(partial.copy()).clamped()
                    payload = {
                        "t": t,
                        "image": base64.b64encode(encode_png(frame_img)).decode(),
                        "elapsed_ms": (time.monotonic() - start) * 1000.0,
                    }
                    if reference is not None:
                        val = psnr(frame_img, reference)
                        payload["psnr"] = None if math.isinf(val) else val
                    yield _sse("frame", payload)
                    frames_sent += 1
                yield _sse(
                    "done",
                    {
                        "frames": frames_sent,
                        "T": req.T,
                        "elapsed_ms": (time.monotonic() - start) * 1000.0,
                        "incremental": incremental,
                    },
                )
            except (asyncio.CancelledError, GeneratorExit):
                # client went away mid-stream; no further component is computed
                state.aborted_streams += 1
                log.info("stream cancelled by client after %d frames", frames_sent)
                raise

        return StreamingResponse(gen(), media_type="text/event-stream")

    return app
