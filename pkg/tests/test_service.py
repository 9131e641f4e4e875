"""HTTP service wire contract: endpoints, status codes, determinism,
statelessness under concurrency."""

import base64
import io
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from sketchdial.pipeline import GenerationPipeline
from sketchdial.service import create_app


@pytest.fixture(scope="module")
def client(tiny_checkpoints):
    pipeline = GenerationPipeline.from_checkpoint(tiny_checkpoints["cgc"])
    return TestClient(create_app(pipeline))


def sketch_b64(size=16):
    sk = np.zeros((size, size), dtype=np.uint8)
    sk[4:12, 4] = 1
    sk[4, 4:12] = 1
    buf = io.BytesIO()
    Image.fromarray(sk * 255).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def gen_request(**overrides):
    req = {"sketch_png_b64": sketch_b64(), "prompt": "a red circle",
           "gamma": 3, "steps": 6, "seed": 11}
    req.update(overrides)
    return req


class TestHealthAndConfig:
    def test_health_reports_knob_defaults(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"
        assert body["gamma_default"] == 20
        assert body["S_default"] == 50
        assert body["image_size"] == 16
        assert isinstance(body["model_id"], str) and body["model_id"]

    def test_config_sanitized(self, client):
        body = client.get("/config").json()
        assert body["image_size"] == 16
        assert body["T_steps"] == 50
        assert "phase" in body and "model_id" in body
        assert not any("path" in key.lower() for key in body)


class TestGenerate:
    def test_single_image(self, client):
        r = client.post("/generate", json=gen_request())
        assert r.status_code == 200
        body = r.json()
        assert len(body["images"]) == 1
        assert body["images"][0]["gamma"] == 3
        assert len(body["timings_ms"]) == 1
        png = base64.b64decode(body["images"][0]["png_b64"])
        with Image.open(io.BytesIO(png)) as im:
            assert im.size == (16, 16)

    def test_repeat_requests_byte_identical(self, client):
        a = client.post("/generate", json=gen_request()).json()
        b = client.post("/generate", json=gen_request()).json()
        assert a["images"][0]["png_b64"] == b["images"][0]["png_b64"]

    def test_spectrum_ordered_by_gamma(self, client):
        r = client.post("/generate", json=gen_request(return_spectrum=[6, 0, 3]))
        assert r.status_code == 200
        gammas = [im["gamma"] for im in r.json()["images"]]
        assert gammas == [0, 3, 6]
        assert len(r.json()["timings_ms"]) == 3

    def test_spectrum_shares_initial_noise(self, client):
        r = client.post("/generate", json=gen_request(return_spectrum=[0, 6])).json()
        single0 = client.post("/generate", json=gen_request(gamma=0, return_spectrum=None)).json()
        assert r["images"][0]["png_b64"] == single0["images"][0]["png_b64"]

    def test_different_seeds_differ(self, client):
        a = client.post("/generate", json=gen_request(seed=1)).json()
        b = client.post("/generate", json=gen_request(seed=2)).json()
        assert a["images"][0]["png_b64"] != b["images"][0]["png_b64"]


class TestErrorCodes:
    def test_gamma_above_steps_400(self, client):
        assert client.post("/generate", json=gen_request(gamma=7, steps=6)).status_code == 400

    def test_negative_gamma_400(self, client):
        assert client.post("/generate", json=gen_request(gamma=-1)).status_code == 400

    def test_non_integer_gamma_400(self, client):
        assert client.post("/generate", json=gen_request(gamma="twenty")).status_code == 400

    def test_missing_sketch_400(self, client):
        req = gen_request()
        del req["sketch_png_b64"]
        assert client.post("/generate", json=req).status_code == 400

    def test_malformed_json_400(self, client):
        r = client.post("/generate", content=b"{oops",
                        headers={"content-type": "application/json"})
        assert r.status_code == 400

    def test_invalid_base64_422(self, client):
        assert client.post("/generate", json=gen_request(sketch_png_b64="@@@not-b64@@@")).status_code == 422

    def test_valid_base64_invalid_png_422(self, client):
        junk = base64.b64encode(b"these are not the bytes of a PNG").decode()
        assert client.post("/generate", json=gen_request(sketch_png_b64=junk)).status_code == 422

    def test_duplicate_spectrum_400(self, client):
        assert client.post("/generate", json=gen_request(return_spectrum=[0, 0])).status_code == 400


class TestStatelessness:
    def test_concurrent_requests_do_not_interfere(self, client):
        requests = [gen_request(seed=s, gamma=g) for s, g in
                    [(1, 0), (2, 3), (3, 6), (1, 0), (2, 3), (3, 6)]]
        solo = [client.post("/generate", json=r).json()["images"][0]["png_b64"] for r in requests]
        with ThreadPoolExecutor(max_workers=4) as pool:
            mixed = list(pool.map(
                lambda r: client.post("/generate", json=r).json()["images"][0]["png_b64"],
                requests,
            ))
        assert mixed == solo
