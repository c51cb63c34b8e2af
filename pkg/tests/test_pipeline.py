from __future__ import annotations

import json
import random
import shutil

import pytest

from dualib.errors import CorruptionError, FingerprintMismatchError, PipelineInterrupted, TransportError
from dualib.model import Config, load_libraries
from dualib.pipeline import (
    Providers, decode_rng, encode_rng, read_checkpoint, read_jsonl, resume, run, scripted_providers,
)
from dualib.scene import Dataset


def _small(shipped, n=24) -> Dataset:
    qs = shipped.questions[:n]
    return Dataset(qs, shipped.scenes, name="small", path=shipped.path, sha256=shipped.sha256)


def test_outputs_exist(desk_run):
    out = desk_run.out_dir
    for name in ("checkpoint.json", "libraries.json", "embeddings.json", "audit.jsonl", "validation.jsonl",
                 "trace.jsonl", "snapshots/iteration-1.json", "snapshots/iteration-3.json"):
        assert (out / name).exists(), name
    ckpt = read_checkpoint(out / "checkpoint.json")
    assert ckpt["complete"] and ckpt["cursor"] == {"iteration": 3, "position": 0}
    assert ckpt["config_fingerprint"] == Config().fingerprint()
    load_libraries(out / "libraries.json")


def test_trace_genesis_and_counts(desk_run):
    rows = read_jsonl(desk_run.out_dir / "trace.jsonl")
    assert rows[0]["step"] == 0 and rows[0]["examples"] == 0 and rows[0]["created"] == 0
    assert len(rows) == 1 + 3 * 60
    assert [r["step"] for r in rows] == list(range(len(rows)))
    for r in rows:
        assert r["active"] <= r["created"]


def test_random_order_uses_seeded_generator(desk_run, shipped):
    perm = list(range(len(shipped)))
    random.Random(42).shuffle(perm)
    ckpt = read_checkpoint(desk_run.out_dir / "checkpoint.json")
    assert ckpt["permutation"] == perm
    audit = read_jsonl(desk_run.out_dir / "audit.jsonl")
    ids = [q.id for q in shipped.questions]
    assert [a["question_id"] for a in audit[:60]] == [ids[i] for i in perm]
    assert [a["question_id"] for a in audit[60:120]] == [ids[i] for i in perm]


def test_rng_state_roundtrip():
    rng = random.Random(5)
    rng.random()
    back = decode_rng(json.loads(json.dumps(encode_rng(rng))))
    assert back.random() == rng.random()


def test_embedding_bank_hit_property(desk_run, shipped):
    distinct = {q.text for q in shipped.questions}
    assert desk_run.bank.texts_embedded <= len(distinct)
    assert desk_run.bank.provider_calls <= len(distinct)


@pytest.mark.parametrize("n_a,n_d", [(4, 8), (3, 5)])
def test_interval_correctness(tmp_path, shipped, n_a, n_d):
    cfg = Config(abstraction_interval=n_a, dedup_interval=n_d, iterations=2)
    res = run(shipped, cfg, scripted_providers(shipped.scenes), tmp_path)
    rows = res.trace
    fired = 0
    for prev, r in zip(rows, rows[1:]):
        admitted = r["outcome"] in ("inserted", "replaced")
        assert r["admitted"] == admitted
        assert r["abstraction_ran"] == (admitted and r["examples"] % n_a == 0)
        assert r["dedup_ran"] == (admitted and r["examples"] % n_d == 0)
        if not admitted:
            assert r["examples"] == prev["examples"]
            assert not r["abstraction_ran"] and not r["dedup_ran"]
        fired += r["abstraction_ran"]
    assert fired == 60 // n_a


def test_dataset_and_curriculum_orderings(tmp_path, shipped):
    ds = _small(shipped, 12)
    res = run(ds, Config(ordering="dataset", iterations=1), scripted_providers(ds.scenes), tmp_path / "d")
    assert [r["question_id"] for r in res.trace[1:]] == [q.id for q in ds.questions]
    res = run(ds, Config(ordering="curriculum", iterations=1), scripted_providers(ds.scenes), tmp_path / "c")
    ckpt = read_checkpoint(tmp_path / "c" / "checkpoint.json")
    ratings = ckpt["ratings"]
    order = [r["question_id"] for r in res.trace[1:]]
    assert [ratings[i] for i in order] == sorted(ratings[i] for i in order)


def test_resume_refuses_changed_config(desk_run, tmp_path):
    out = tmp_path / "r"
    shutil.copytree(desk_run.out_dir, out)
    with pytest.raises(FingerprintMismatchError):
        resume(out / "checkpoint.json", config=Config(quality_threshold=9.0))
    data = json.loads((out / "checkpoint.json").read_text())
    data["config"]["quality_threshold"] = 7.0
    (out / "checkpoint.json").write_text(json.dumps(data))
    with pytest.raises(FingerprintMismatchError):
        resume(out / "checkpoint.json")


def test_resume_detects_tampered_libraries(desk_run, tmp_path):
    out = tmp_path / "r"
    shutil.copytree(desk_run.out_dir, out)
    lib = out / "libraries.json"
    lib.write_text(lib.read_text().replace('"step_counter": 180', '"step_counter": 181'))
    with pytest.raises(CorruptionError):
        resume(out / "checkpoint.json")


def test_resume_twice_from_same_checkpoint(tmp_path, shipped):
    ds = _small(shipped)
    cfg = Config(iterations=2)
    base = tmp_path / "base"
    run(ds, cfg, scripted_providers(ds.scenes), base, max_steps=20)
    outs = []
    for name in ("x", "y"):
        shutil.copytree(base, tmp_path / name)
        resume(tmp_path / name / "checkpoint.json", dataset=ds)
        outs.append((tmp_path / name / "libraries.json").read_bytes())
    assert outs[0] == outs[1]


class Flaky:
    """Delegates to a real provider but fails the Nth call with a transport error."""

    def __init__(self, inner, fail_at):
        self.inner, self.fail_at, self.n = inner, fail_at, 0

    def complete(self, req):
        self.n += 1
        if self.n == self.fail_at:
            raise TransportError("simulated outage")
        return self.inner.complete(req)

    def spec(self):
        return self.inner.spec()


def test_provider_failure_interrupts_and_resume_completes(tmp_path, shipped):
    ds = _small(shipped)
    cfg = Config(iterations=2)
    ref = tmp_path / "ref"
    run(ds, cfg, scripted_providers(ds.scenes), ref)
    good = scripted_providers(ds.scenes)
    flaky = Providers(Flaky(good.chat, 150), good.embedder, good.spec)
    out = tmp_path / "int"
    with pytest.raises(PipelineInterrupted) as exc:
        run(ds, cfg, flaky, out)
    assert exc.value.checkpoint.endswith("checkpoint.json")
    resume(exc.value.checkpoint, dataset=ds)
    for name in ("libraries.json", "trace.jsonl", "audit.jsonl", "validation.jsonl"):
        assert (out / name).read_bytes() == (ref / name).read_bytes(), name
