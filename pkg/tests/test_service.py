"""HTTP API tests: payload shapes, error codes, replay equivalence, TTL."""

import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from convrec.critiquing import (GRU, UAC, apply_critique, save_blender,
                                start_session, train_blender, BlenderConfig)
from convrec.errors import ConfigError
from convrec.layers import init_gru
from convrec.model import MmsVae
from convrec.rng import RngStream
from convrec.service import ServiceConfig, build_app, load_service
from convrec.simulate import SimulationConfig

from conftest import tiny_config


@pytest.fixture(scope="module")
def served(toy_dataset):
    model = MmsVae(toy_dataset.n_items, toy_dataset.n_keyphrases,
                   tiny_config(epochs=2))
    model.fit(toy_dataset)
    params = init_gru(model.cfg.latent_dim, RngStream(31))
    cfg = ServiceConfig(dataset_path="ds", model_path="m", blender_path="b",
                        blender=GRU, top_n=5, max_turns=3, session_ttl=60.0)
    app = build_app(model, toy_dataset, cfg, params,
                    checkpoint_hashes={"model": "abc123"})
    return TestClient(app), model, toy_dataset, params, cfg


def test_config_validation():
    with pytest.raises(ConfigError):
        ServiceConfig(dataset_path="d", model_path="m", blender=GRU,
                      blender_path=None)
    with pytest.raises(ConfigError):
        ServiceConfig(dataset_path="d", model_path="m", blender="avg")
    with pytest.raises(ConfigError):
        ServiceConfig(dataset_path="d", model_path="m", blender=UAC,
                      session_ttl=0)


def test_create_known_user_matches_offline(served):
    client, model, ds, params, cfg = served
    user = ds.user_ids[0]
    resp = client.post("/v1/sessions", json={"user_id": user})
    assert resp.status_code == 201
    body = resp.json()
    assert body["turn"] == 0
    assert body["remaining_turns"] == cfg.max_turns
    assert body["user_id"] == user
    assert len(body["recommendations"]) == cfg.top_n
    z0 = model.z0_for_user(ds.r_train[0].toarray())
    ids, scores = model.recommend_topn(z0, cfg.top_n,
                                       exclude_items=ds.r_train[0].indices)
    got = [r["item_index"] for r in body["recommendations"]]
    assert got == ids.tolist()
    got_scores = [r["score"] for r in body["recommendations"]]
    np.testing.assert_allclose(got_scores, scores, rtol=0, atol=0)
    ranks = [r["rank"] for r in body["recommendations"]]
    assert ranks == list(range(1, cfg.top_n + 1))
    # train positives never reappear in the ranking
    assert not set(got) & set(ds.r_train[0].indices.tolist())
    assert body["explanation"][0]["keyphrase_id"] < ds.n_keyphrases


def test_create_cold_start_uses_keyphrase_encoder(served):
    client, model, ds, params, cfg = served
    resp = client.post("/v1/sessions", json={"keyphrases": [0, 2]})
    assert resp.status_code == 201
    body = resp.json()
    k_row = np.zeros((1, ds.n_keyphrases))
    k_row[0, [0, 2]] = 1.0
    z0 = np.asarray(model.encode_k(k_row).mu)[0]
    ids, _ = model.recommend_topn(z0, cfg.top_n)
    assert [r["item_index"] for r in body["recommendations"]] == ids.tolist()


def test_create_joint_user_plus_keyphrases(served):
    client, model, ds, params, cfg = served
    user = ds.user_ids[1]
    resp = client.post("/v1/sessions",
                       json={"user_id": user, "keyphrases": [1]})
    assert resp.status_code == 201
    r_row = ds.r_train[1].toarray()
    k_row = np.zeros((1, ds.n_keyphrases))
    k_row[0, 1] = 1.0
    z0 = np.asarray(model.encode_joint(r_rows=r_row, k_rows=k_row).mu)[0]
    ids, _ = model.recommend_topn(z0, cfg.top_n,
                                  exclude_items=ds.r_train[1].indices)
    got = [r["item_index"] for r in resp.json()["recommendations"]]
    assert got == ids.tolist()


def test_create_errors(served):
    client = served[0]
    resp = client.post("/v1/sessions", json={})
    assert resp.status_code == 400
    assert resp.json()["code"] == "bad_request"
    resp = client.post("/v1/sessions", json={"user_id": "nobody"})
    assert resp.status_code == 400
    assert resp.json()["code"] == "unknown_user"
    resp = client.post("/v1/sessions", json={"keyphrases": [99]})
    assert resp.status_code == 400
    assert resp.json()["code"] == "unknown_keyphrase"
    resp = client.post("/v1/sessions", json={"keyphrases": "kp0"})
    assert resp.status_code == 422
    assert resp.json()["code"] == "validation_error"


def test_critique_flow_and_rank_deltas(served):
    client, model, ds, params, cfg = served
    user = ds.user_ids[2]
    created = client.post("/v1/sessions", json={"user_id": user}).json()
    sid = created["session_id"]
    first_ranks = {r["item_index"]: r["rank"]
                   for r in created["recommendations"]}
    resp = client.post(f"/v1/sessions/{sid}/critiques",
                       json={"keyphrase_id": 3})
    assert resp.status_code == 200
    body = resp.json()
    assert body["turn"] == 1
    assert body["remaining_turns"] == cfg.max_turns - 1
    assert body["critiques"] == [3]
    for r in body["recommendations"]:
        assert isinstance(r["previous_rank"], int)
        if r["item_index"] in first_ranks:
            assert r["previous_rank"] == first_ranks[r["item_index"]]


def test_api_replay_matches_offline_session(served):
    client, model, ds, params, cfg = served
    user_idx = 4
    created = client.post("/v1/sessions",
                          json={"user_id": ds.user_ids[user_idx]}).json()
    sid = created["session_id"]
    critiques = [5, 0, 2]
    last = None
    for c in critiques:
        last = client.post(f"/v1/sessions/{sid}/critiques",
                           json={"keyphrase_id": c}).json()
    z0 = model.z0_for_user(ds.r_train[user_idx].toarray())
    offline = start_session(
        "replay", model, z0, cfg.blender, params, user_index=user_idx,
        exclude_items=ds.r_train[user_idx].indices, max_turns=cfg.max_turns)
    for c in critiques:
        apply_critique(offline, c, model, params)
    assert [r["item_index"] for r in last["recommendations"]] == \
        offline.ranking[:cfg.top_n].tolist()


def test_turn_budget_409(served):
    client, model, ds, params, cfg = served
    sid = client.post("/v1/sessions",
                      json={"user_id": ds.user_ids[3]}).json()["session_id"]
    for _ in range(cfg.max_turns):
        ok = client.post(f"/v1/sessions/{sid}/critiques",
                         json={"keyphrase_id": 1})
        assert ok.status_code == 200
    resp = client.post(f"/v1/sessions/{sid}/critiques",
                       json={"keyphrase_id": 1})
    assert resp.status_code == 409
    assert resp.json()["code"] == "turn_budget_exhausted"


def test_critique_validation_and_unknown_session(served):
    client, model, ds, params, cfg = served
    sid = client.post("/v1/sessions",
                      json={"user_id": ds.user_ids[5]}).json()["session_id"]
    resp = client.post(f"/v1/sessions/{sid}/critiques",
                       json={"keyphrase_id": ds.n_keyphrases})
    assert resp.status_code == 400
    assert resp.json()["code"] == "unknown_keyphrase"
    resp = client.post(f"/v1/sessions/{sid}/critiques",
                       json={"keyphrase_id": "x"})
    assert resp.status_code == 422
    for method, url in [("get", "/v1/sessions/feed"),
                        ("post", "/v1/sessions/feed/critiques"),
                        ("post", "/v1/sessions/feed/reset")]:
        resp = getattr(client, method)(
            url, **({"json": {"keyphrase_id": 0}}
                    if url.endswith("critiques") else {}))
        assert resp.status_code == 404
        assert resp.json()["code"] == "unknown_session"


def test_sessions_are_independent(served):
    client, model, ds, params, cfg = served
    user = ds.user_ids[6]
    sid_a = client.post("/v1/sessions",
                        json={"user_id": user}).json()["session_id"]
    sid_b = client.post("/v1/sessions",
                        json={"user_id": user}).json()["session_id"]
    assert sid_a != sid_b
    client.post(f"/v1/sessions/{sid_a}/critiques", json={"keyphrase_id": 0})
    b = client.get(f"/v1/sessions/{sid_b}").json()
    assert b["turn"] == 0 and b["critiques"] == []


def test_reset_restores_initial_state(served):
    client, model, ds, params, cfg = served
    user = ds.user_ids[7]
    created = client.post("/v1/sessions", json={"user_id": user}).json()
    sid = created["session_id"]
    first = client.post(f"/v1/sessions/{sid}/critiques",
                        json={"keyphrase_id": 2}).json()
    reset = client.post(f"/v1/sessions/{sid}/reset").json()
    assert reset["turn"] == 0 and reset["critiques"] == []
    assert [r["item_index"] for r in reset["recommendations"]] == \
        [r["item_index"] for r in created["recommendations"]]
    again = client.post(f"/v1/sessions/{sid}/critiques",
                        json={"keyphrase_id": 2}).json()
    assert [r["item_index"] for r in again["recommendations"]] == \
        [r["item_index"] for r in first["recommendations"]]


def test_catalog_and_health(served):
    client, model, ds, params, cfg = served
    catalog = client.get("/v1/catalog").json()
    assert len(catalog["items"]) == ds.n_items
    assert len(catalog["keyphrases"]) == ds.n_keyphrases
    assert catalog["n_users"] == ds.n_users
    assert catalog["max_turns"] == cfg.max_turns
    item0 = catalog["items"][0]
    np.testing.assert_array_equal(
        np.flatnonzero(ds.ki_binary[0]), item0["keyphrase_ids"])
    health = client.get("/v1/health").json()
    assert health["status"] == "ok"
    assert health["checkpoints"]["model"] == "abc123"
    assert isinstance(health["optimizer_steps"], int)


def test_cross_origin_requests_allowed(served):
    client = served[0]
    resp = client.get("/v1/health", headers={"Origin": "http://localhost:5173"})
    assert resp.headers["access-control-allow-origin"] == "*"
    preflight = client.options(
        "/v1/sessions",
        headers={"Origin": "http://localhost:5173",
                 "Access-Control-Request-Method": "POST",
                 "Access-Control-Request-Headers": "content-type"})
    assert preflight.status_code == 200
    assert "POST" in preflight.headers["access-control-allow-methods"]


def test_session_ttl_expiry(toy_dataset):
    model = MmsVae(toy_dataset.n_items, toy_dataset.n_keyphrases,
                   tiny_config(epochs=1))
    cfg = ServiceConfig(dataset_path="d", model_path="m", blender=UAC,
                        top_n=3, session_ttl=0.05)
    client = TestClient(build_app(model, toy_dataset, cfg))
    sid = client.post("/v1/sessions",
                      json={"user_id": toy_dataset.user_ids[0]}
                      ).json()["session_id"]
    assert client.get(f"/v1/sessions/{sid}").status_code == 200
    time.sleep(0.1)
    resp = client.get(f"/v1/sessions/{sid}")
    assert resp.status_code == 404


def test_load_service_from_artifacts(tmp_path, toy_dataset):
    model = MmsVae(toy_dataset.n_items, toy_dataset.n_keyphrases,
                   tiny_config(epochs=1))
    model.fit(toy_dataset)
    bcfg = BlenderConfig(margin=0.5, lr=1e-3, epochs=1, batch_size=8,
                         val_fraction=0.25, falling_map_n=10, cap=10,
                         eval_every=2, seed=0)
    params, _ = train_blender(model, toy_dataset, bcfg)
    ds_path = tmp_path / "dataset.bin"
    m_path = tmp_path / "model.bin"
    b_path = tmp_path / "blender.bin"
    toy_dataset.save(ds_path)
    model.save(m_path)
    save_blender(b_path, params, bcfg, model.cfg.latent_dim)
    cfg = ServiceConfig(dataset_path=str(ds_path), model_path=str(m_path),
                        blender_path=str(b_path), top_n=4)
    client = TestClient(load_service(cfg))
    health = client.get("/v1/health").json()
    assert set(health["checkpoints"]) == {"dataset", "model", "blender"}
    resp = client.post("/v1/sessions", json={"keyphrases": [1]})
    assert resp.status_code == 201


def test_load_service_rejects_mismatched_blender(tmp_path, toy_dataset):
    model = MmsVae(toy_dataset.n_items, toy_dataset.n_keyphrases,
                   tiny_config(epochs=1))
    ds_path = tmp_path / "dataset.bin"
    m_path = tmp_path / "model.bin"
    b_path = tmp_path / "blender.bin"
    toy_dataset.save(ds_path)
    model.save(m_path)
    wrong = init_gru(model.cfg.latent_dim + 1, RngStream(0))
    save_blender(b_path, wrong, BlenderConfig(), model.cfg.latent_dim + 1)
    cfg = ServiceConfig(dataset_path=str(ds_path), model_path=str(m_path),
                        blender_path=str(b_path))
    with pytest.raises(ConfigError):
        load_service(cfg)
