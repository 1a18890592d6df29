"""HTTP clients for model services.

Wire format (JSON over POST, images as base64 PNG)::

    POST {url}/detect      {"image", "query", "box_threshold", "text_threshold", "model"}
                           -> {"detections": [{"box": [x1, y1, x2, y2], "confidence": p}]}
    POST {url}/embed       {"image", "model"}            -> {"embedding": [...]}
    POST {url}/similarity  {"image", "text", "model"}    -> {"similarity": s}
    POST {url}/flow        {"frames": [a, b], "model"}   -> {"shape": [H, W, 2], "flow": base64 float32}
    POST {url}/interpolate {"frames": [a, b, c], "model"} -> {"quality": q}
    POST {url}/predict     {"image", "model"}            -> {"score": s}
    POST {url}/judge       {"model", "prompt", "images", "temperature", "response_format": "json"}
                           -> {"text": "..."}

Requests time out, are retried with exponential backoff (3 attempts total)
on transport errors, 429 and 5xx, and are admitted through a token bucket.
"""

from __future__ import annotations

import base64
import logging
import threading
import time
from typing import Any, Callable

import cv2
import httpx
import numpy as np

from ..config import DEFAULT_MODELS, BackendEndpoint, RunConfig, endpoint_from_env, judge_api_keys
from .base import BackendError, BackendSet, BackendUnreachable, Detection, JudgeRequest, unit

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 3


class TokenBucket:
    """Thread-safe token bucket: ``rate`` tokens per second, burst ``capacity``."""

    def __init__(self, per_minute: float, capacity: float | None = None,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        if per_minute <= 0:
            raise ValueError("rate must be positive")
        self.rate = per_minute / 60.0
        self.capacity = capacity if capacity is not None else max(1.0, self.rate)
        self.tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Block until a token is available; returns seconds waited."""
        waited = 0.0
        while True:
            with self._lock:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self._last) * self.rate)
                self._last = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return waited
                delay = (1.0 - self.tokens) / self.rate
            self._sleep(delay)
            waited += delay


def encode_image(image: np.ndarray) -> str:
    ok, buf = cv2.imencode(".png", cv2.cvtColor(image, cv2.COLOR_RGB2BGR))
    if not ok:
        raise BackendError("could not encode image")
    return base64.b64encode(buf.tobytes()).decode("ascii")


class RemoteClient:
    def __init__(self, url: str, model: str, *, timeout: float = 120.0, per_minute: float | None = None,
                 client: httpx.Client | None = None, api_key: str | None = None,
                 backoff: float = 0.5, sleep: Callable[[float], None] = time.sleep):
        self.url = url.rstrip("/")
        self.identity = model
        self.fingerprint = model
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._bucket = TokenBucket(per_minute) if per_minute else None
        self._backoff = backoff
        self._sleep = sleep

    def _post(self, route: str, payload: dict[str, Any]) -> dict[str, Any]:
        payload = {"model": self.identity, **payload}
        last: Exception | None = None
        for attempt in range(MAX_ATTEMPTS):
            if self._bucket is not None:
                self._bucket.acquire()
            try:
                resp = self._client.post(f"{self.url}/{route}", json=payload, headers=self._headers)
            except httpx.TransportError as exc:
                last = BackendUnreachable(f"{self.url}/{route}: {exc}")
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = BackendError(f"{self.url}/{route}: HTTP {resp.status_code}")
                elif resp.status_code >= 400:
                    raise BackendError(f"{self.url}/{route}: HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise BackendError(f"{self.url}/{route}: body is not JSON") from exc
            if attempt + 1 < MAX_ATTEMPTS:
                delay = self._backoff * (2 ** attempt)
                log.warning("%s; retrying in %.1fs", last, delay)
                self._sleep(delay)
        assert last is not None
        raise last


class RemoteGrounding(RemoteClient):
    def __init__(self, url: str, model: str = DEFAULT_MODELS["grounding"], *,
                 tau_box: float = 0.25, tau_text: float = 0.20, **kw: Any):
        super().__init__(url, model, **kw)
        self.tau_box, self.tau_text = tau_box, tau_text

    def detect(self, image: np.ndarray, query: str) -> list[Detection]:
        body = self._post("detect", {"image": encode_image(image), "query": query,
                                     "box_threshold": self.tau_box, "text_threshold": self.tau_text})
        try:
            dets = [Detection(tuple(float(x) for x in d["box"]), float(d["confidence"]))
                    for d in body["detections"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed detection response: {exc}") from exc
        h, w = image.shape[:2]
        out = []
        for d in dets:
            x1, y1, x2, y2 = d.box
            box = (max(0.0, x1), max(0.0, y1), min(float(w), x2), min(float(h), y2))
            if d.confidence >= self.tau_box:
                out.append(Detection(box, min(1.0, max(0.0, d.confidence))))
        return out


class RemoteEmbedding(RemoteClient):
    def __init__(self, url: str, model: str = DEFAULT_MODELS["embedding"], **kw: Any):
        super().__init__(url, model, **kw)

    def embed(self, image: np.ndarray) -> np.ndarray:
        body = self._post("embed", {"image": encode_image(image)})
        try:
            return unit(np.asarray(body["embedding"], dtype=np.float64))
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed embedding response: {exc}") from exc


class RemoteTextImage(RemoteClient):
    def __init__(self, url: str, model: str = DEFAULT_MODELS["text_image"], **kw: Any):
        super().__init__(url, model, **kw)

    def similarity(self, image: np.ndarray, text: str) -> float:
        body = self._post("similarity", {"image": encode_image(image), "text": text})
        try:
            s = float(body["similarity"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed similarity response: {exc}") from exc
        if not -1.0 <= s <= 1.0:
            raise BackendError(f"similarity {s} outside [-1, 1]")
        return s


class RemoteFlow(RemoteClient):
    def __init__(self, url: str, model: str = DEFAULT_MODELS["flow"], **kw: Any):
        super().__init__(url, model, **kw)

    def flow(self, frame_a: np.ndarray, frame_b: np.ndarray) -> np.ndarray:
        body = self._post("flow", {"frames": [encode_image(frame_a), encode_image(frame_b)]})
        try:
            raw = np.frombuffer(base64.b64decode(body["flow"]), dtype=np.float32)
            return raw.reshape(body["shape"]).astype(np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed flow response: {exc}") from exc

    def interpolation_quality(self, prev: np.ndarray, mid: np.ndarray, nxt: np.ndarray) -> float:
        body = self._post("interpolate", {"frames": [encode_image(f) for f in (prev, mid, nxt)]})
        try:
            q = float(body["quality"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed interpolation response: {exc}") from exc
        if not 0.0 <= q <= 1.0:
            raise BackendError(f"interpolation quality {q} outside [0, 1]")
        return q


class RemoteScalar(RemoteClient):
    def __init__(self, url: str, model: str, low: float, high: float, **kw: Any):
        super().__init__(url, model, **kw)
        self.low, self.high = low, high

    def predict(self, image: np.ndarray) -> float:
        body = self._post("predict", {"image": encode_image(image)})
        try:
            s = float(body["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed predictor response: {exc}") from exc
        if not self.low <= s <= self.high:
            raise BackendError(f"score {s} outside [{self.low}, {self.high}]")
        return s


class RemoteJudge(RemoteClient):
    def __init__(self, url: str, model: str = DEFAULT_MODELS["judge"], *,
                 temperature: float = 0.0, api_keys: list[str] | None = None, **kw: Any):
        keys = api_keys or []
        super().__init__(url, model, api_key=keys[0] if keys else None, **kw)
        self.temperature = temperature
        self.n_keys = len(keys)

    def complete(self, request: JudgeRequest) -> str:
        body = self._post("judge", {"prompt": request.prompt,
                                    "images": [encode_image(im) for im in request.images],
                                    "temperature": self.temperature, "response_format": "json"})
        text = body.get("text")
        if not isinstance(text, str):
            raise BackendError("judge response has no text field")
        return text


def remote_suite(run_cfg: RunConfig) -> BackendSet:
    """HTTP backends for every role. URLs come from the run config, else CROSSSHOT_<ROLE>_URL."""
    cfg = run_cfg.eval_config
    kw = {"timeout": run_cfg.timeout_s, "per_minute": run_cfg.requests_per_minute}
    urls: dict[str, str] = {}
    models: dict[str, str] = {}
    missing = []
    for role in BackendSet.ROLES:
        ep = run_cfg.backends.get(role, BackendEndpoint())
        url = ep.url or endpoint_from_env(role)
        if not url:
            missing.append(role)
            continue
        urls[role] = url
        models[role] = ep.model or DEFAULT_MODELS[role]
    if missing:
        raise BackendError("no endpoint configured for: " + ", ".join(missing)
                           + " (set it in the run config or CROSSSHOT_<ROLE>_URL)")
    return BackendSet(
        grounding=RemoteGrounding(urls["grounding"], models["grounding"], tau_box=cfg.tau_box,
                                  tau_text=cfg.tau_text, **kw),
        embedding=RemoteEmbedding(urls["embedding"], models["embedding"], **kw),
        text_image=RemoteTextImage(urls["text_image"], models["text_image"], **kw),
        judge=RemoteJudge(urls["judge"], models["judge"], temperature=cfg.judge_temperature,
                          api_keys=judge_api_keys(), **kw),
        flow=RemoteFlow(urls["flow"], models["flow"], **kw),
        aesthetic=RemoteScalar(urls["aesthetic"], models["aesthetic"], 0.0, 1.0, **kw),
        imaging=RemoteScalar(urls["imaging"], models["imaging"], 0.0, 100.0, **kw),
    )
