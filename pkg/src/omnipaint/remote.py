"""HTTP client for a remote outpainting server.

Wire protocol (JSON over HTTP, Content-Type application/json):

    POST <endpoint>
    {
      "image":  "<base64 PNG of the working view, 8-bit RGB>",
      "mask":   "<base64 single-channel PNG, 255 = known>",
      "prompt": "...",
      "seed":   1234,
      "guidance": {
        "global": {"data": "<base64 float32 little-endian>", "shape": [T, D]},
        "local":  {...} | null
      }
    }
    -> 200 {"image": "<base64 PNG, same size>"}

Requests and responses are capped at 64 MiB. Timeouts retry with
exponential backoff; non-2xx answers surface as generator errors with the
response body attached; a response of the wrong size is a protocol error.
The engine re-imposes known pixels on whatever comes back.
"""

from __future__ import annotations

import base64
import json
import time

import httpx
import numpy as np

from .errors import GeneratorError, ProtocolError, TransportError
from .generator import OutpaintRequest, OutpaintResult, reimpose_known
from .pngio import decode_png, encode_mask_png, encode_png

MAX_PAYLOAD_BYTES = 64 * 1024 * 1024


def _encode_f32(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return {
        "data": base64.b64encode(data).decode("ascii"),
        "shape": list(arr.shape),
    }


def encode_request(req: OutpaintRequest) -> dict:
    guidance = {"global": _encode_f32(req.bundle.global_stream), "local": None}
    if req.bundle.local_stream is not None:
        guidance["local"] = _encode_f32(req.bundle.local_stream)
    return {
        "image": base64.b64encode(encode_png(req.nfov)).decode("ascii"),
        "mask": base64.b64encode(encode_mask_png(req.nfov_mask)).decode("ascii"),
        "prompt": req.prompt,
        "seed": int(req.seed),
        "guidance": guidance,
    }


class RemoteGenerator:
    """Outpainting through a remote inference endpoint.

    ``cancel_event`` (a threading.Event) aborts between attempts when a run
    is deleted mid-flight.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        retries: int = 3,
        backoff: float = 0.25,
        cancel_event=None,
    ):
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.cancel_event = cancel_event
        self.generator_id = f"remote:{endpoint}"

    def outpaint(self, req: OutpaintRequest) -> OutpaintResult:
        return outpaint_remote(
            req,
            self.endpoint,
            timeout=self.timeout,
            retries=self.retries,
            backoff=self.backoff,
            cancel_event=self.cancel_event,
        )


def outpaint_remote(
    req: OutpaintRequest,
    endpoint: str,
    timeout: float = 30.0,
    retries: int = 3,
    backoff: float = 0.25,
    cancel_event=None,
) -> OutpaintResult:
    """POST one outpainting request; retry timeouts with exponential backoff."""
    payload = encode_request(req)
    body = json.dumps(payload).encode()
    if len(body) > MAX_PAYLOAD_BYTES:
        raise ProtocolError(
            f"request body {len(body)} bytes exceeds the 64 MiB wire limit"
        )

    t0 = time.perf_counter()
    last_exc = None
    for attempt in range(retries + 1):
        if cancel_event is not None and cancel_event.is_set():
            raise TransportError("request cancelled")
        try:
            resp = httpx.post(
                endpoint,
                content=body,
                headers={"Content-Type": "application/json"},
                timeout=timeout,
            )
            break
        except httpx.TransportError as exc:  # timeouts, refused connections
            last_exc = exc
            if attempt < retries:
                time.sleep(backoff * (2.0**attempt))
    else:
        raise TransportError(
            f"generator endpoint unreachable after {retries + 1} attempts: {last_exc}"
        ) from last_exc

    if not (200 <= resp.status_code < 300):
        raise GeneratorError(
            f"generator returned HTTP {resp.status_code}: {resp.text[:2000]}"
        )
    if len(resp.content) > MAX_PAYLOAD_BYTES:
        raise ProtocolError("response exceeds the 64 MiB wire limit")
    try:
        reply = resp.json()
        image_b64 = reply["image"]
        out = decode_png(base64.b64decode(image_b64))
    except (KeyError, ValueError, TypeError) as exc:
        raise ProtocolError(f"malformed generator response: {exc}") from exc

    if out.shape[:2] != req.nfov.shape[:2]:
        raise ProtocolError(
            f"generator returned {out.shape[:2]}, expected {req.nfov.shape[:2]}"
        )
    completed = reimpose_known(out, req.nfov, req.nfov_mask)
    return OutpaintResult(
        completed, f"remote:{endpoint}", (time.perf_counter() - t0) * 1e3
    )
