"""Protocol conformance suite: exercises a live server endpoint by endpoint.

The suite is self-contained: it builds its own probe payloads, checks every
schema field, verifies determinism where the protocol promises it, checks the
unmasked-pixel preservation rule for inpainting, and validates the error
envelope.  Servers advertising a capability as unavailable pass by rejecting
its requests with a well-formed envelope.
"""

import base64
from dataclasses import dataclass, field

import numpy as np

from .codec import b64_encode, image_from_png, image_to_png, mask_from_png, mask_to_png

try:
    import requests
except ImportError:
    requests = None

_PROBE_W = 96
_PROBE_H = 64


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class EndpointReport:
    endpoint: str
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(Check(name, bool(passed), detail))


@dataclass
class ConformanceReport:
    endpoints: list[EndpointReport]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.endpoints)

    def result_for(self, endpoint: str) -> EndpointReport:
        for report in self.endpoints:
            if report.endpoint == endpoint:
                return report
        raise KeyError(endpoint)

    def passed_by_endpoint(self) -> dict:
        return {e.endpoint: e.passed for e in self.endpoints}

    def to_text(self) -> str:
        lines = []
        for report in self.endpoints:
            verdict = "PASS" if report.passed else "FAIL"
            lines.append(f"{report.endpoint:<12} {verdict}  ({len(report.checks)} checks)")
            for check in report.checks:
                if not check.passed:
                    lines.append(f"  FAIL {check.name}: {check.detail}")
        lines.append("overall      " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def _probe_image(height: int, width: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    rgb = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    alpha = np.full((height, width, 1), 255, dtype=np.uint8)
    return np.concatenate([rgb, alpha], axis=2)


def _envelope_ok(body: object) -> bool:
    if not isinstance(body, dict) or not isinstance(body.get("error"), dict):
        return False
    err = body["error"]
    return all(isinstance(err.get(k), str) for k in ("code", "message", "failed_step"))


def _json(resp) -> object:
    try:
        return resp.json()
    except Exception:
        return None


class _Suite:
    def __init__(self, endpoint: str, session) -> None:
        if session is None:
            if requests is None:
                raise RuntimeError("requests not installed; pass an explicit session")
            session = requests.Session()
        self.base = endpoint.rstrip("/")
        self.session = session
        self.counter = 0

    def rid(self) -> str:
        self.counter += 1
        return f"conformance-{self.counter:04d}"

    def post(self, path: str, payload: dict):
        return self.session.post(f"{self.base}{path}", json=payload)

    def get(self, path: str):
        return self.session.get(f"{self.base}{path}")

    # one method per reported endpoint

    def check_healthz(self) -> EndpointReport:
        report = EndpointReport("healthz")
        resp = self.get("/healthz")
        report.add("status", resp.status_code == 200, f"got {resp.status_code}")
        report.add("body", _json(resp) == {"status": "ok"}, f"got {_json(resp)!r}")
        return report

    def check_capabilities(self) -> tuple[EndpointReport, dict]:
        report = EndpointReport("capabilities")
        resp = self.get("/v1/capabilities")
        body = _json(resp)
        report.add("status", resp.status_code == 200, f"got {resp.status_code}")
        ok = isinstance(body, dict) and body.get("wire_version") == 1
        report.add("wire_version", ok, f"got {body!r}")
        caps = body.get("capabilities") if isinstance(body, dict) else None
        shape_ok = isinstance(caps, dict) and isinstance(caps.get("name"), str) and all(
            isinstance(caps.get(k), bool)
            for k in ("generate", "segment", "inpaint", "embed")
        )
        report.add("capability fields", shape_ok, f"got {caps!r}")
        caps = caps if shape_ok else {}
        if caps.get("embed"):
            dim = caps.get("embedding_dim")
            report.add(
                "embedding_dim",
                isinstance(dim, int) and not isinstance(dim, bool) and dim > 0,
                f"got {dim!r}",
            )
        return report, caps

    def _expect_envelope(self, report: EndpointReport, path: str, payload: dict) -> None:
        resp = self.post(path, payload)
        report.add(
            "unavailable capability rejects with envelope",
            resp.status_code >= 400 and _envelope_ok(_json(resp)),
            f"status {resp.status_code}, body {_json(resp)!r}",
        )

    def check_generate(self, caps: dict) -> tuple[EndpointReport, np.ndarray | None]:
        report = EndpointReport("generate")
        payload = {
            "prompt": "a photo of a single and fully visible dog",
            "seed": 7,
            "width": _PROBE_W,
            "height": _PROBE_H,
        }
        if not caps.get("generate"):
            self._expect_envelope(report, "/v1/generate", {"request_id": self.rid(), **payload})
            return report, None
        rid = self.rid()
        resp = self.post("/v1/generate", {"request_id": rid, **payload})
        body = _json(resp)
        ok = resp.status_code == 200 and isinstance(body, dict)
        report.add("status", ok, f"got {resp.status_code}: {body!r}")
        if not ok:
            return report, None
        report.add("request_id echo", body.get("request_id") == rid, f"got {body.get('request_id')!r}")
        image = None
        try:
            image = image_from_png(base64.b64decode(body["image_png"]), "image_png")
            report.add(
                "image size",
                image.shape[:2] == (_PROBE_H, _PROBE_W),
                f"got {image.shape!r}",
            )
        except Exception as exc:
            report.add("image decodes", False, str(exc))
            return report, None
        again = _json(self.post("/v1/generate", {"request_id": self.rid(), **payload}))
        report.add(
            "deterministic per seed",
            isinstance(again, dict) and again.get("image_png") == body["image_png"],
            "repeat produced different bytes",
        )
        other = _json(
            self.post("/v1/generate", {"request_id": self.rid(), **payload, "seed": 8})
        )
        report.add(
            "seed changes output",
            isinstance(other, dict) and other.get("image_png") != body["image_png"],
            "different seed produced identical bytes",
        )
        return report, image

    def check_segment(self, caps: dict, image: np.ndarray | None) -> EndpointReport:
        report = EndpointReport("segment")
        if image is None:
            image = _probe_image(_PROBE_H, _PROBE_W, 501)
        image_b64 = b64_encode(image_to_png(image))
        payload = {"image_png": image_b64, "category": "dog"}
        if not caps.get("segment"):
            self._expect_envelope(report, "/v1/segment", {"request_id": self.rid(), **payload})
            return report
        rid = self.rid()
        resp = self.post("/v1/segment", {"request_id": rid, **payload})
        body = _json(resp)
        if resp.status_code == 200 and isinstance(body, dict):
            report.add("request_id echo", body.get("request_id") == rid, f"got {body.get('request_id')!r}")
            try:
                mask = mask_from_png(base64.b64decode(body["mask_png"]), "mask_png")
            except Exception as exc:
                report.add("mask decodes", False, str(exc))
                return report
            report.add("mask size", mask.shape == image.shape[:2], f"got {mask.shape!r}")
            report.add("mask non-empty", bool(mask.any()), "all-zero mask")
            bbox = body.get("bbox")
            bbox_ok = (
                isinstance(bbox, list)
                and len(bbox) == 4
                and all(isinstance(v, int) and not isinstance(v, bool) for v in bbox)
            )
            if bbox_ok and mask.any():
                ys, xs = np.nonzero(mask)
                tight = [int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1]
                bbox_ok = bbox == tight
            report.add("bbox is tight box of mask", bbox_ok, f"got {bbox!r}")
            conf = body.get("confidence")
            report.add(
                "confidence in [0, 1]",
                isinstance(conf, (int, float)) and 0.0 <= float(conf) <= 1.0,
                f"got {conf!r}",
            )
            again = _json(self.post("/v1/segment", {"request_id": self.rid(), **payload}))
            report.add(
                "deterministic",
                isinstance(again, dict)
                and again.get("mask_png") == body.get("mask_png")
                and again.get("bbox") == body.get("bbox")
                and again.get("confidence") == body.get("confidence"),
                "repeat produced a different result",
            )
        else:
            report.add(
                "response well-formed",
                _envelope_ok(body),
                f"status {resp.status_code}, body {body!r}",
            )

        # featureless probe: success schema or error envelope, nothing else
        flat = np.full((48, 48, 4), 128, dtype=np.uint8)
        flat[..., 3] = 255
        resp = self.post(
            "/v1/segment",
            {
                "request_id": self.rid(),
                "image_png": b64_encode(image_to_png(flat)),
                "category": "dog",
            },
        )
        body = _json(resp)
        valid_hit = resp.status_code == 200 and isinstance(body, dict) and "mask_png" in body
        report.add(
            "featureless image handled",
            valid_hit or _envelope_ok(body),
            f"status {resp.status_code}, body {body!r}",
        )
        return report

    def check_inpaint(self, caps: dict, image: np.ndarray | None) -> EndpointReport:
        report = EndpointReport("inpaint")
        if image is None:
            image = _probe_image(_PROBE_H, _PROBE_W, 502)
        rng = np.random.default_rng(11)
        mask = rng.random(image.shape[:2]) < 0.3
        payload = {
            "image_png": b64_encode(image_to_png(image)),
            "mask_png": b64_encode(mask_to_png(mask)),
            "prompt": "a plain background",
            "seed": 13,
        }
        if not caps.get("inpaint"):
            self._expect_envelope(report, "/v1/inpaint", {"request_id": self.rid(), **payload})
            return report
        rid = self.rid()
        resp = self.post("/v1/inpaint", {"request_id": rid, **payload})
        body = _json(resp)
        ok = resp.status_code == 200 and isinstance(body, dict)
        report.add("status", ok, f"got {resp.status_code}: {body!r}")
        if not ok:
            return report
        report.add("request_id echo", body.get("request_id") == rid, f"got {body.get('request_id')!r}")
        try:
            out = image_from_png(base64.b64decode(body["image_png"]), "image_png")
        except Exception as exc:
            report.add("image decodes", False, str(exc))
            return report
        report.add("image size", out.shape == image.shape, f"got {out.shape!r}")
        if out.shape == image.shape:
            preserved = bool(np.array_equal(out[~mask], image[~mask]))
            report.add(
                "unmasked pixels preserved",
                preserved,
                f"{int(np.count_nonzero(np.any(out != image, axis=-1) & ~mask))} unmasked pixels changed",
            )
        again = _json(self.post("/v1/inpaint", {"request_id": self.rid(), **payload}))
        report.add(
            "deterministic per seed",
            isinstance(again, dict) and again.get("image_png") == body["image_png"],
            "repeat produced different bytes",
        )
        empty = dict(payload, mask_png=b64_encode(mask_to_png(np.zeros_like(mask))))
        resp = self.post("/v1/inpaint", {"request_id": self.rid(), **empty})
        body = _json(resp)
        identity = False
        if resp.status_code == 200 and isinstance(body, dict):
            try:
                out = image_from_png(base64.b64decode(body["image_png"]), "image_png")
                identity = bool(np.array_equal(out, image))
            except Exception:
                identity = False
        report.add("empty mask is identity", identity, "output differs from input")
        return report

    def check_embed(self, caps: dict) -> EndpointReport:
        report = EndpointReport("embed")
        texts_payload = {"kind": "text", "texts": ["red", "green", "red"]}
        if not caps.get("embed"):
            self._expect_envelope(report, "/v1/embed", {"request_id": self.rid(), **texts_payload})
            return report
        rid = self.rid()
        resp = self.post("/v1/embed", {"request_id": rid, **texts_payload})
        body = _json(resp)
        ok = resp.status_code == 200 and isinstance(body, dict)
        report.add("status", ok, f"got {resp.status_code}: {body!r}")
        if not ok:
            return report
        report.add("request_id echo", body.get("request_id") == rid, f"got {body.get('request_id')!r}")
        vectors = body.get("vectors")
        shape_ok = (
            isinstance(vectors, list)
            and len(vectors) == 3
            and all(isinstance(row, list) and len(row) == len(vectors[0]) for row in vectors)
            and all(isinstance(v, (int, float)) for row in vectors for v in row)
            and all(np.isfinite(v) for row in vectors for v in row)
        )
        report.add("vector shape", shape_ok, f"got {type(vectors)!r}")
        if shape_ok:
            report.add(
                "dim matches capabilities",
                len(vectors[0]) == caps.get("embedding_dim"),
                f"{len(vectors[0])} vs advertised {caps.get('embedding_dim')!r}",
            )
            report.add(
                "repeated item embeds identically",
                vectors[0] == vectors[2],
                "duplicate inputs produced different vectors",
            )
            again = _json(self.post("/v1/embed", {"request_id": self.rid(), **texts_payload}))
            report.add(
                "deterministic",
                isinstance(again, dict) and again.get("vectors") == vectors,
                "repeat produced different vectors",
            )
        images = [_probe_image(24, 32, 601), _probe_image(24, 32, 602)]
        resp = self.post(
            "/v1/embed",
            {
                "request_id": self.rid(),
                "kind": "image",
                "images_png": [b64_encode(image_to_png(i)) for i in images],
            },
        )
        body = _json(resp)
        rows_ok = (
            resp.status_code == 200
            and isinstance(body, dict)
            and isinstance(body.get("vectors"), list)
            and len(body["vectors"]) == 2
            and all(len(row) == caps.get("embedding_dim") for row in body["vectors"])
        )
        report.add("image vectors", rows_ok, f"status {resp.status_code}")
        return report

    def check_correlation(self, caps: dict) -> EndpointReport:
        report = EndpointReport("correlation")
        target = None
        if caps.get("embed"):
            target = ("/v1/embed", {"kind": "text", "texts": ["probe"]})
        elif caps.get("generate"):
            target = (
                "/v1/generate",
                {"prompt": "a probe", "seed": 1, "width": 32, "height": 32},
            )
        if target is None:
            report.add("no POST capability mounted", True, "correlation vacuous")
            return report
        path, payload = target
        for rid in ("corr-alpha-001", "corr-beta-002"):
            body = _json(self.post(path, {"request_id": rid, **payload}))
            report.add(
                f"echo {rid}",
                isinstance(body, dict) and body.get("request_id") == rid,
                f"got {body.get('request_id') if isinstance(body, dict) else body!r}",
            )
        return report

    def check_errors(self, caps: dict) -> EndpointReport:
        report = EndpointReport("errors")
        if caps.get("segment"):
            resp = self.post(
                "/v1/segment",
                {"request_id": self.rid(), "image_png": "!!not-base64!!", "category": "dog"},
            )
            report.add(
                "malformed base64 rejected with envelope",
                400 <= resp.status_code < 500 and _envelope_ok(_json(resp)),
                f"status {resp.status_code}, body {_json(resp)!r}",
            )
        if caps.get("generate"):
            resp = self.post(
                "/v1/generate",
                {"prompt": "a probe", "seed": 1, "width": 32, "height": 32},
            )
            report.add(
                "missing request_id rejected with envelope",
                400 <= resp.status_code < 500 and _envelope_ok(_json(resp)),
                f"status {resp.status_code}, body {_json(resp)!r}",
            )
        if not report.checks:
            report.add("no probing capability mounted", True, "error checks vacuous")
        return report


def conformance_suite(endpoint: str, session=None) -> ConformanceReport:
    """Exercise every protocol endpoint of the server at ``endpoint``.

    Returns per-endpoint pass/fail with per-check details.  ``session`` may
    be any object with requests-compatible ``get``/``post``; by default a
    fresh ``requests.Session`` is used.
    """
    suite = _Suite(endpoint, session)
    healthz = suite.check_healthz()
    capabilities, caps = suite.check_capabilities()
    generate, image = suite.check_generate(caps)
    return ConformanceReport(
        endpoints=[
            healthz,
            capabilities,
            generate,
            suite.check_segment(caps, image),
            suite.check_inpaint(caps, image),
            suite.check_embed(caps),
            suite.check_correlation(caps),
            suite.check_errors(caps),
        ]
    )
