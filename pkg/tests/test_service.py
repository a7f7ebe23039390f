import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from prefbatch.service import SessionStore, create_app


@pytest.fixture()
def client(tmp_path):
    app = create_app(tmp_path / "sessions")
    with TestClient(app) as c:
        yield c


def _fast_session(q=3, dim=1, **overrides):
    body = {
        "q": q,
        "dim": dim,
        "budget_batches": 4,
        "seed": 3,
        "ep_iters": 3,
        "ep_moment_samples": 400,
        "acq_mc_samples": 300,
        "acq_restarts": 2,
    }
    body.update(overrides)
    return body


class TestHealthAndCreate:
    def test_healthz(self, client):
        res = client.get("/healthz")
        assert res.status_code == 200
        assert res.json() == {"status": "ok"}

    def test_create_proposes_in_domain_batch(self, client):
        res = client.post("/sessions", json=_fast_session(q=3, dim=2))
        assert res.status_code == 201
        doc = res.json()
        assert doc["status"] == "awaiting_feedback"
        batch = np.asarray(doc["batch"])
        assert batch.shape == (3, 2)
        assert np.all(batch >= 0) and np.all(batch <= 1)

    def test_q1_rejected_with_400(self, client):
        res = client.post("/sessions", json=_fast_session(q=1))
        assert res.status_code == 400
        assert set(res.json()) == {"code", "message"}

    def test_unknown_config_key_rejected(self, client):
        res = client.post("/sessions", json=_fast_session(bogus=1))
        assert res.status_code == 400

    def test_distinct_ids(self, client):
        a = client.post("/sessions", json=_fast_session()).json()["id"]
        b = client.post("/sessions", json=_fast_session()).json()["id"]
        assert a != b

    def test_custom_box_maps_batch(self, client):
        res = client.post(
            "/sessions", json=_fast_session(dim=1, lower=[-2.0], upper=[4.0])
        )
        batch = np.asarray(res.json()["batch"])
        assert np.all(batch >= -2.0) and np.all(batch <= 4.0)


class TestFeedback:
    def test_winner_flow_advances(self, client):
        doc = client.post("/sessions", json=_fast_session()).json()
        res = client.post(
            f"/sessions/{doc['id']}/feedback",
            json={"revision": doc["revision"], "winner": 2},
        )
        assert res.status_code == 200
        out = res.json()
        assert out["status"] == "awaiting_feedback"
        batch = np.asarray(out["batch"])
        assert batch.shape == (3, 1)
        d = np.abs(batch[:, None, 0] - batch[None, :, 0])
        d[np.diag_indices(3)] = np.inf
        assert d.min() >= 0.05 - 1e-9

    def test_winner_zero_is_422(self, client):
        doc = client.post("/sessions", json=_fast_session()).json()
        res = client.post(
            f"/sessions/{doc['id']}/feedback",
            json={"revision": doc["revision"], "winner": 0},
        )
        assert res.status_code == 422

    def test_stale_revision_409_state_unchanged(self, client):
        doc = client.post("/sessions", json=_fast_session()).json()
        res = client.post(
            f"/sessions/{doc['id']}/feedback",
            json={"revision": doc["revision"] + 5, "winner": 1},
        )
        assert res.status_code == 409
        after = client.get(f"/sessions/{doc['id']}").json()
        assert after["revision"] == doc["revision"]
        assert after["history"] == []

    def test_ranking_flow(self, client):
        doc = client.post("/sessions", json=_fast_session()).json()
        res = client.post(
            f"/sessions/{doc['id']}/feedback",
            json={"revision": doc["revision"], "ranking": [2, 3, 1]},
        )
        assert res.status_code == 200

    def test_bad_ranking_422(self, client):
        doc = client.post("/sessions", json=_fast_session()).json()
        res = client.post(
            f"/sessions/{doc['id']}/feedback",
            json={"revision": doc["revision"], "ranking": [1, 1, 2]},
        )
        assert res.status_code == 422

    def test_budget_reaches_done(self, client):
        doc = client.post("/sessions", json=_fast_session(budget_batches=2)).json()
        sid = doc["id"]
        res = client.post(
            f"/sessions/{sid}/feedback", json={"revision": doc["revision"], "winner": 1}
        ).json()
        res = client.post(
            f"/sessions/{sid}/feedback", json={"revision": res["revision"], "winner": 1}
        ).json()
        assert res["status"] == "done"
        assert res["batch"] is None
        final = client.get(f"/sessions/{sid}").json()
        assert final["status"] == "done"
        assert len(final["history"]) == 2

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/nope").status_code == 404
        assert (
            client.post("/sessions/nope/feedback", json={"revision": 1, "winner": 1}).status_code
            == 404
        )


class TestPosteriorView:
    def test_prior_before_feedback(self, client):
        doc = client.post(
            "/sessions", json=_fast_session(kernel_variance=0.25)
        ).json()
        grid = json.dumps([[0.1], [0.5], [0.9]])
        res = client.get(f"/sessions/{doc['id']}/posterior", params={"grid": grid})
        assert res.status_code == 200
        out = res.json()
        np.testing.assert_allclose(out["mean"], 0.0, atol=1e-12)
        np.testing.assert_allclose(out["sd"], 0.5, atol=1e-6)

    def test_training_point_sd_shrinks(self, client):
        doc = client.post("/sessions", json=_fast_session()).json()
        batch = np.asarray(doc["batch"])
        res = client.post(
            f"/sessions/{doc['id']}/feedback",
            json={"revision": doc["revision"], "winner": 1},
        )
        grid = json.dumps(batch.tolist())
        out = client.get(f"/sessions/{doc['id']}/posterior", params={"grid": grid}).json()
        assert np.all(np.asarray(out["sd"]) <= 0.5 + 1e-9)

    def test_invalid_grid_422(self, client):
        doc = client.post("/sessions", json=_fast_session()).json()
        res = client.get(f"/sessions/{doc['id']}/posterior", params={"grid": "oops"})
        assert res.status_code == 422

    def test_high_dim_grid_rejected(self, client):
        doc = client.post("/sessions", json=_fast_session(dim=3, acquisition="ts")).json()
        grid = json.dumps([[0.1, 0.1, 0.1]])
        res = client.get(f"/sessions/{doc['id']}/posterior", params={"grid": grid})
        assert res.status_code == 422


class TestPersistenceAndReplay:
    def test_state_rebuilt_from_log(self, tmp_path):
        app = create_app(tmp_path / "s")
        with TestClient(app) as client:
            doc = client.post("/sessions", json=_fast_session()).json()
            sid = doc["id"]
            client.post(
                f"/sessions/{sid}/feedback", json={"revision": doc["revision"], "winner": 2}
            )
            before = client.get(f"/sessions/{sid}").json()

        # a fresh app over the same directory must rebuild the session
        app2 = create_app(tmp_path / "s")
        with TestClient(app2) as client2:
            after = client2.get(f"/sessions/{sid}").json()
        assert after["revision"] == before["revision"]
        assert after["history"] == before["history"]
        assert after["batch"] == before["batch"]

    def test_same_seed_sessions_replay_identically(self, client):
        cfg = _fast_session(seed=17)
        a = client.post("/sessions", json=cfg).json()
        b = client.post("/sessions", json=cfg).json()
        assert a["batch"] == b["batch"]
        ra = client.post(
            f"/sessions/{a['id']}/feedback", json={"revision": a["revision"], "winner": 3}
        ).json()
        rb = client.post(
            f"/sessions/{b['id']}/feedback", json={"revision": b["revision"], "winner": 3}
        ).json()
        assert ra["batch"] == rb["batch"]

    def test_replay_matches_loop_proposals(self, tmp_path):
        # the persisted history re-driven through the loop's fit/propose
        # steps must reproduce every proposed batch exactly
        from prefbatch.loop import propose_from_records
        from prefbatch.preference import Feedback, PreferenceRecord
        from prefbatch.service import SessionConfig

        app = create_app(tmp_path / "s")
        with TestClient(app) as client:
            doc = client.post("/sessions", json=_fast_session(seed=23)).json()
            sid = doc["id"]
            rev = doc["revision"]
            for w in (1, 2):
                rev = client.post(
                    f"/sessions/{sid}/feedback", json={"revision": rev, "winner": w}
                ).json()["revision"]
            view = client.get(f"/sessions/{sid}").json()

        cfg = SessionConfig(**_fast_session(seed=23)).run_config()
        from prefbatch.acquisition import SearchDomain

        records = []
        batches = [np.asarray(h["x"]) for h in view["history"]]
        batches.append(np.asarray(view["batch"]))
        for i, x in enumerate(batches):
            replayed = propose_from_records(cfg, records, i, domain=SearchDomain.unit(1))
            np.testing.assert_array_equal(replayed, x)
            if i < len(view["history"]):
                records.append(
                    PreferenceRecord(x, Feedback.from_dict(view["history"][i]["feedback"]))
                )
