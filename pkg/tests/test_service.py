import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from latentflight.backends import mock_suite
from latentflight.records import base64_to_image, image_to_base64
from latentflight.service import create_app

IDENTITY_POSE = {"euler": [0, 0, 0], "translation": [0, 0, 0]}
FORWARD_POSE = {"euler": [0, 0, 0], "translation": [0, 0, -0.2]}
SMALL = {"latent_shape": [4, 16, 16], "seed": 5}
DEGENERATE = dict(SMALL, sigma="inf", ddpm_forward=False, injection_sites=[],
                  **{"lambda": 0.0})


@pytest.fixture()
def client(tmp_path):
    with TestClient(create_app(store_dir=tmp_path)) as c:
        yield c


def _create(client, config=None, prompt="a quiet bay"):
    resp = client.post("/sessions", json={"prompt": prompt, "config": config or SMALL})
    assert resp.status_code == 200, resp.text
    return resp.json()


class TestSessionLifecycle:
    def test_health(self, client):
        assert client.get("/healthz").json() == {"status": "ok"}

    def test_create_returns_frame_zero(self, client):
        created = _create(client)
        img = base64_to_image(created["image"])
        assert img.shape == (16, 16, 3)
        assert created["frame_index"] == 0

    def test_degenerate_identity_step_over_the_wire(self, client):
        created = _create(client, config=DEGENERATE)
        sid = created["session_id"]
        stepped = client.post(f"/sessions/{sid}/step", json={"pose": IDENTITY_POSE})
        assert stepped.status_code == 200, stepped.text
        frame0 = base64_to_image(created["image"])
        frame1 = base64_to_image(stepped.json()["image"])
        # reconstruction tolerance plus one quantization step
        assert np.max(np.abs(frame1 - frame0)) <= 1e-3 + 1.0 / 255.0

    def test_step_response_fields(self, client):
        sid = _create(client)["session_id"]
        body = client.post(f"/sessions/{sid}/step", json={"pose": FORWARD_POSE}).json()
        assert body["frame_index"] == 1
        assert 0.0 <= body["hole_fraction"] <= 1.0
        assert "denoise" in body["timing"]

    def test_get_session_log_and_config(self, client):
        sid = _create(client)["session_id"]
        client.post(f"/sessions/{sid}/step",
                    json={"pose": FORWARD_POSE, "prompt": "lego world"})
        info = client.get(f"/sessions/{sid}").json()
        assert info["frame_count"] == 2
        assert info["config"]["seed"] == 5
        assert len(info["log"]) == 1
        assert info["log"][0]["prompt"] == "lego world"
        assert "hole_fraction" in info["log"][0]["info"]

    def test_frames_endpoint_serves_png(self, client):
        created = _create(client)
        sid = created["session_id"]
        resp = client.get(f"/sessions/{sid}/frames/0")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"
        assert client.get(f"/sessions/{sid}/frames/5").status_code == 404

    def test_delete_tears_down(self, client):
        sid = _create(client)["session_id"]
        assert client.delete(f"/sessions/{sid}").status_code == 200
        assert client.get(f"/sessions/{sid}").status_code == 404
        assert client.delete(f"/sessions/{sid}").status_code == 404


class TestValidation:
    def test_unknown_session_404(self, client):
        assert client.post("/sessions/nope/step",
                           json={"pose": IDENTITY_POSE}).status_code == 404

    def test_malformed_pose_400(self, client):
        sid = _create(client)["session_id"]
        bad = [{"pose": {"translation": [0, 0, 0]}},
               {"pose": {"euler": [0, 0], "translation": [0, 0, 0]}},
               {"pose": {"euler": [0, 0, 0], "rotation": [1] * 9,
                         "translation": [0, 0, 0]}},
               {}]
        for body in bad:
            assert client.post(f"/sessions/{sid}/step", json=body).status_code == 400

    def test_create_requires_one_source(self, client):
        assert client.post("/sessions", json={}).status_code == 400
        img = image_to_base64(np.zeros((16, 16, 3)))
        assert client.post("/sessions",
                           json={"prompt": "x", "image": img}).status_code == 400

    def test_bad_config_rejected(self, client):
        resp = client.post("/sessions", json={"prompt": "x",
                                              "config": {"warp_speed": 9}})
        assert resp.status_code == 400

    def test_image_source_round_trips(self, client):
        img = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
        b64 = image_to_base64(img)
        resp = client.post("/sessions", json={"image": b64, "config": SMALL})
        assert resp.status_code == 200
        # ingest quantizes to PNG precision, then keeps the frame bit-exact
        np.testing.assert_array_equal(
            base64_to_image(resp.json()["image"]), base64_to_image(b64))

    def test_backend_failure_is_500_with_stage(self, tmp_path):
        class DoomedDepth:
            def __call__(self, image):
                raise RuntimeError("no depth today")

        def factory(backend, config):
            suite = mock_suite(seed=config.seed)
            suite.depth_estimator = DoomedDepth()
            return suite

        with TestClient(create_app(store_dir=tmp_path, backend_factory=factory)) as c:
            resp = c.post("/sessions", json={"prompt": "x", "config": SMALL})
            assert resp.status_code == 500
            assert "depth" in resp.json()["detail"]


class TestDeterminismAndReplay:
    def test_wire_determinism(self, tmp_path):
        def run(store):
            with TestClient(create_app(store_dir=store)) as c:
                created = _create(c)
                sid = created["session_id"]
                steps = [client_step(c, sid, FORWARD_POSE),
                         client_step(c, sid, {"euler": [3, 0, 0],
                                              "translation": [0, 0, -0.1]})]
                return created["image"], steps

        def client_step(c, sid, pose):
            resp = c.post(f"/sessions/{sid}/step", json={"pose": pose})
            assert resp.status_code == 200
            return resp.json()["image"]

        a = run(tmp_path / "a")
        b = run(tmp_path / "b")
        assert a == b  # identical base64 PNG bytes throughout

    def test_log_replay_reproduces_frames(self, client):
        sid = _create(client)["session_id"]
        poses = [FORWARD_POSE, {"euler": [4, -2, 0], "translation": [0.05, 0, -0.15]}]
        images = []
        client.post(f"/sessions/{sid}/step", json={"pose": poses[0]})
        client.post(f"/sessions/{sid}/step",
                    json={"pose": poses[1], "prompt": "night market"})
        log = client.get(f"/sessions/{sid}").json()["log"]
        for i in range(3):
            images.append(client.get(f"/sessions/{sid}/frames/{i}").content)

        fresh = _create(client)["session_id"]
        for entry in log:
            body = {"pose": {k: v for k, v in entry.items()
                             if k in ("rotation", "euler", "translation")}}
            if "prompt" in entry:
                body["prompt"] = entry["prompt"]
            if "overrides" in entry:
                body["overrides"] = entry["overrides"]
            assert client.post(f"/sessions/{fresh}/step", json=body).status_code == 200
        replayed = [client.get(f"/sessions/{fresh}/frames/{i}").content
                    for i in range(3)]
        assert replayed == images


class TestConcurrency:
    def test_double_step_yields_exactly_one_409(self, tmp_path):
        class SlowDenoiser:
            def __init__(self, inner):
                self.inner = inner
                self.taps = inner.taps
                self.gradient_mode = inner.gradient_mode

            def __call__(self, request):
                time.sleep(0.01)
                return self.inner(request)

            def tap_vjp(self, *a):
                return self.inner.tap_vjp(*a)

        def factory(backend, config):
            suite = mock_suite(seed=config.seed)
            suite.denoiser = SlowDenoiser(suite.denoiser)
            return suite

        with TestClient(create_app(store_dir=tmp_path, backend_factory=factory)) as c:
            sid = c.post("/sessions", json={"prompt": "x", "config": SMALL}).json()["session_id"]
            codes = []
            lock = threading.Lock()

            def fire(delay):
                time.sleep(delay)
                resp = c.post(f"/sessions/{sid}/step", json={"pose": FORWARD_POSE})
                with lock:
                    codes.append(resp.status_code)

            threads = [threading.Thread(target=fire, args=(0.0,)),
                       threading.Thread(target=fire, args=(0.15,))]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            assert sorted(codes) == [200, 409]
