import base64
import hashlib
import json
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from rfsr.corpus import synthetic_corpus
from rfsr.encoder import EncoderConfig
from rfsr.heads import HeadConfig
from rfsr.imaging import ImageBuffer, bilinear_upsample, encode_png, decode_png
from rfsr.model import SRModel
from rfsr.service import create_app
from rfsr.trainer import checkpoint_digest, save_checkpoint


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    enc = EncoderConfig(channels=6, residual_blocks=1)
    head = HeadConfig(T_max=4, layers=2, model_width=12, key_dim=6)
    model = SRModel(enc, head, seed=21)
    path = tmp_path_factory.mktemp("svc") / "model.ckpt"
    save_checkpoint(model, path)
    return path


@pytest.fixture(scope="module")
def client(ckpt):
    app = create_app(ckpt_path=str(ckpt), max_pixels=128 * 128)
    with TestClient(app) as c:
        yield c


def _b64(img: ImageBuffer) -> str:
    return base64.b64encode(encode_png(img)).decode()


@pytest.fixture(scope="module")
def lr_image():
    return synthetic_corpus(size=24)[0][1]


def _events(resp_text):
    events = []
    for block in resp_text.strip().split("\n\n"):
        lines = block.strip().split("\n")
        ev = lines[0].removeprefix("event: ")
        data = json.loads(lines[1].removeprefix("data: "))
        events.append((ev, data))
    return events


# -- health / metadata --------------------------------------------------------

def test_healthz_before_and_after_load(ckpt):
    app = create_app()
    with TestClient(app) as c:
        assert c.get("/healthz").status_code == 503
        assert c.get("/v1/model").status_code == 503
        app.state.service.load_model(str(ckpt))
        assert c.get("/healthz").status_code == 200


def test_model_metadata(client, ckpt):
    meta = client.get("/v1/model").json()
    assert meta["T_max"] == 4
    assert meta["pe_variant"] == "relative"
    assert meta["checkpoint_digest"] == checkpoint_digest(ckpt)


# -- single-shot inference ------------------------------------------------------

def test_infer_shape_and_determinism(client, lr_image):
    req = {"image": _b64(lr_image), "s_x": 2.0, "s_y": 2.0, "T": 3}
    r1 = client.post("/v1/infer", json=req)
    assert r1.status_code == 200
    body = r1.json()
    assert (body["height"], body["width"]) == (48, 48)
    assert body["T"] == 3
    r2 = client.post("/v1/infer", json=req)
    assert r1.json()["image"] == r2.json()["image"]


def test_infer_t0_is_bilinear(client, lr_image):
    r = client.post("/v1/infer", json={"image": _b64(lr_image), "s_x": 2.0,
                                       "s_y": 2.0, "T": 0})
    # the service sees the 8-bit PNG payload, so compare against its decode
    decoded = decode_png(encode_png(lr_image))
    want = encode_png(bilinear_upsample(decoded, 48, 48).clamped())
    assert base64.b64decode(r.json()["image"]) == want


def test_infer_matches_cli_bytes(client, lr_image, ckpt, tmp_path):
    from rfsr.cli import main
    from rfsr.imaging import save_image

    src = tmp_path / "in.png"
    save_image(lr_image, src)
    out = tmp_path / "out.png"
    assert main(["infer", "--ckpt", str(ckpt), "--image", str(src),
                 "--out-image", str(out), "--sx", "2", "--sy", "2", "-T", "2"]) == 0
    r = client.post("/v1/infer", json={"image": _b64(lr_image), "s_x": 2.0,
                                       "s_y": 2.0, "T": 2})
    assert base64.b64decode(r.json()["image"]) == out.read_bytes()


def test_infer_error_codes(client, lr_image):
    ok = _b64(lr_image)
    assert client.post("/v1/infer", json={"image": "!!!", "s_x": 2, "s_y": 2,
                                          "T": 1}).status_code == 400
    r = client.post("/v1/infer", json={"image": ok, "s_x": 0.5, "s_y": 2, "T": 1})
    assert r.status_code == 422
    assert "s_x" in json.dumps(r.json())
    big = ImageBuffer(np.zeros((200, 200, 3)))
    assert client.post("/v1/infer", json={"image": _b64(big), "s_x": 1, "s_y": 1,
                                          "T": 1}).status_code == 413
    # output pixels beyond the guard
    assert client.post("/v1/infer", json={"image": ok, "s_x": 8.0, "s_y": 8.0,
                                          "T": 1}).status_code == 422
    # T beyond the service cap (2 * T_max)
    assert client.post("/v1/infer", json={"image": ok, "s_x": 2, "s_y": 2,
                                          "T": 9}).status_code == 422


def test_fixed_head_checkpoint_t_cap(tmp_path, lr_image):
    enc = EncoderConfig(channels=6, residual_blocks=1)
    head = HeadConfig(T_max=4, layers=2, model_width=12, key_dim=6, head_kind="fixed_fc")
    path = tmp_path / "fixed.ckpt"
    save_checkpoint(SRModel(enc, head, seed=5), path)
    app = create_app(ckpt_path=str(path), max_pixels=128 * 128)
    with TestClient(app) as c:
        ok = c.post("/v1/infer", json={"image": _b64(lr_image), "s_x": 2, "s_y": 2, "T": 4})
        assert ok.status_code == 200
        over = c.post("/v1/infer", json={"image": _b64(lr_image), "s_x": 2, "s_y": 2, "T": 5})
        assert over.status_code == 422
        assert "K" in over.json()["detail"]


def test_infer_multipart_upload(client, lr_image):
    r = client.post(
        "/v1/infer/upload",
        files={"file": ("img.png", encode_png(lr_image), "image/png")},
        params={"s_x": 2.0, "s_y": 2.0, "T": 1},
    )
    assert r.status_code == 200
    assert r.json()["height"] == 48


def test_session_latent_cache_consistent(client, lr_image):
    req = {"image": _b64(lr_image), "s_x": 2.0, "s_y": 2.0, "T": 2}
    plain = client.post("/v1/infer", json=req).json()["image"]
    with_session = client.post("/v1/infer", json={**req, "session_id": "s1"}).json()["image"]
    cached_again = client.post("/v1/infer", json={**req, "session_id": "s1"}).json()["image"]
    assert plain == with_session == cached_again


# -- streaming -------------------------------------------------------------------

def test_stream_frame_count_and_final_digest(client, lr_image):
    req = {"image": _b64(lr_image), "s_x": 2.0, "s_y": 2.0, "T": 4,
           "progressive": True}
    r = client.post("/v1/infer/stream", json=req)
    assert r.status_code == 200
    events = _events(r.text)
    frames = [d for ev, d in events if ev == "frame"]
    done = [d for ev, d in events if ev == "done"]
    assert len(frames) == 4 and len(done) == 1
    assert [f["t"] for f in frames] == [1, 2, 3, 4]
    non_stream = client.post("/v1/infer", json={**req, "progressive": False})
    assert frames[-1]["image"] == non_stream.json()["image"]


def test_stream_frames_match_prefix_inference(client, lr_image):
    req = {"image": _b64(lr_image), "s_x": 2.0, "s_y": 2.0, "T": 3,
           "progressive": True}
    frames = [d for ev, d in _events(client.post("/v1/infer/stream", json=req).text)
              if ev == "frame"]
    for t in (1, 2, 3):
        single = client.post("/v1/infer", json={"image": req["image"], "s_x": 2.0,
                                                "s_y": 2.0, "T": t})
        assert frames[t - 1]["image"] == single.json()["image"]


def test_stream_reports_psnr_vs_reference(client, lr_image):
    ref = bilinear_upsample(lr_image, 48, 48).clamped()
    req = {"image": _b64(lr_image), "s_x": 2.0, "s_y": 2.0, "T": 2,
           "reference": _b64(ref)}
    frames = [d for ev, d in _events(client.post("/v1/infer/stream", json=req).text)
              if ev == "frame"]
    assert all(("psnr" in f) for f in frames)


def test_stream_client_disconnect_aborts(ckpt, lr_image):
    # TestClient cannot model a vanished client; run a real server and
    # close the TCP stream after two frames
    import socket
    import time

    import uvicorn

    app = create_app(ckpt_path=str(ckpt), max_pixels=128 * 128)
    state = app.state.service
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started and time.monotonic() < deadline:
        time.sleep(0.02)
    assert server.started
    port = server.servers[0].sockets[0].getsockname()[1]
    try:
        body = json.dumps({"image": _b64(lr_image), "s_x": 2.0, "s_y": 2.0,
                           "T": 4}).encode()
        with socket.create_connection(("127.0.0.1", port), timeout=10) as sock:
            sock.sendall(
                b"POST /v1/infer/stream HTTP/1.1\r\nHost: x\r\n"
                b"Content-Type: application/json\r\n"
                + f"Content-Length: {len(body)}\r\n".encode()
                + b"Connection: close\r\n\r\n" + body
            )
            seen = b""
            while seen.count(b"event: frame") < 2:
                chunk = sock.recv(65536)
                assert chunk, "server closed before two frames"
                seen += chunk
        # socket closed after two frames; the server must notice promptly
        deadline = time.monotonic() + 5
        while state.aborted_streams == 0 and time.monotonic() < deadline:
            time.sleep(0.05)
        assert state.aborted_streams == 1
    finally:
        server.should_exit = True
        thread.join(timeout=5)


# -- concurrency ------------------------------------------------------------------

def test_concurrent_requests_match_serial(client, lr_image):
    req = {"image": _b64(lr_image), "s_x": 2.0, "s_y": 2.0, "T": 2}
    serial = client.post("/v1/infer", json=req).json()["image"]
    results = [None] * 8
    def hit(i):
        results[i] = client.post("/v1/infer", json=req).json()["image"]
    threads = [threading.Thread(target=hit, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(r == serial for r in results)
