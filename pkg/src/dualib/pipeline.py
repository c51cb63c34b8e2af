"""The outer loop: iterate the dataset, solve, abstract, deduplicate, checkpoint."""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .abstraction import abstraction_pass
from .errors import (
    ConfigError, CorruptionError, DualibError, FingerprintMismatchError, PersistenceError, PipelineInterrupted,
    ProviderError,
)
from .maintenance import dedup_pass
from .model import (
    AdmissionOutcome, Config, Libraries, atomic_write, basic_tools, canonical_json, dump_libraries,
    libraries_from_json,
)
from .providers import prompts
from .providers.base import chat, make_request
from .providers.desk import DeskPolicy
from .providers.embedding import EmbeddingBank, HashingEmbedder, HttpEmbedder
from .providers.http import HttpChatProvider
from .providers.scripted import ScriptedProvider, load_script
from .scene.dataset import Dataset, load_dataset
from .solver import solve_question

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LIBRARIES_FILE = "libraries.json"
EMBEDDINGS_FILE = "embeddings.json"
CHECKPOINT_FILE = "checkpoint.json"
AUDIT_FILE = "audit.jsonl"
VALIDATION_FILE = "validation.jsonl"
TRACE_FILE = "trace.jsonl"
LOG_FILES = (AUDIT_FILE, VALIDATION_FILE, TRACE_FILE)


def init_tool_library() -> dict:
    """The five basic tools, all level 0."""
    return basic_tools()


# providers


@dataclass
class Providers:
    chat: object
    embedder: object
    spec: dict = field(default_factory=dict)


def _embedder_from_spec(spec: Mapping | None):
    spec = dict(spec or {"kind": "hashing", "dim": 256})
    if spec.get("kind") == "hashing":
        return HashingEmbedder(int(spec.get("dim", 256)))
    if spec.get("kind") == "http":
        return HttpEmbedder(spec["base_url"], spec["model"], key_env=spec.get("key_env", "DUALIB_API_KEY"),
                            timeout=float(spec.get("timeout", 30.0)), max_retries=int(spec.get("max_retries", 3)))
    raise DualibError(f"unknown embedder kind {spec.get('kind')!r}")


def scripted_providers(scenes: Mapping, script: str | Path | None = None, policy: str | None = "desk") -> Providers:
    """Offline providers: an optional script file, the desk policy, and the hashing embedder."""
    replies, sha = {}, None
    if script is not None:
        data = load_script(script)
        replies, sha = data.get("replies", {}), data["sha256"]
        policy = data.get("policy", policy)
    if policy not in (None, "desk"):
        raise DualibError(f"unknown script policy {policy!r}")
    pol = DeskPolicy(scenes) if policy == "desk" else None
    spec = {"kind": "scripted", "script": str(script) if script is not None else None,
            "script_sha256": sha, "policy": policy, "embedder": {"kind": "hashing", "dim": 256}}
    chat_p = ScriptedProvider(replies, pol, source=spec)
    return Providers(chat_p, HashingEmbedder(256), spec)


def http_providers(cfg: Mapping) -> Providers:
    """Providers from a block like ``{"base_url", "model", "key_env", "role_models", "embedder"}``."""
    inline = sorted(k for k in cfg if k in ("api_key", "key", "token", "secret"))
    if inline:
        raise ConfigError(f"provider block must not hold secrets ({', '.join(inline)}); "
                          "name an environment variable with key_env instead")
    chat_p = HttpChatProvider(cfg["base_url"], cfg["model"], role_models=cfg.get("role_models"),
                              key_env=cfg.get("key_env", "DUALIB_API_KEY"),
                              timeout=float(cfg.get("timeout", 60.0)), max_retries=int(cfg.get("max_retries", 3)))
    emb_spec = cfg.get("embedder") or {"kind": "hashing", "dim": 256}
    spec = dict(chat_p.spec())
    spec["embedder"] = dict(emb_spec)
    for k in ("timeout", "max_retries"):
        if k in cfg:
            spec[k] = cfg[k]
    return Providers(chat_p, _embedder_from_spec(emb_spec), spec)


def providers_from_spec(spec: Mapping, scenes: Mapping) -> Providers:
    if spec.get("kind") == "scripted":
        script = spec.get("script")
        p = scripted_providers(scenes, script, spec.get("policy"))
        if script is not None and p.spec.get("script_sha256") != spec.get("script_sha256"):
            raise FingerprintMismatchError(f"script {script} changed since the checkpoint was written")
        return p
    if spec.get("kind") == "http":
        return http_providers(spec)
    raise DualibError(f"unknown provider kind {spec.get('kind')!r}")


# rng state as JSON


def encode_rng(rng: random.Random) -> list:
    version, internal, gauss = rng.getstate()
    return [version, list(internal), gauss]


def decode_rng(state) -> random.Random:
    rng = random.Random()
    rng.setstate((state[0], tuple(state[1]), state[2]))
    return rng


# the run


@dataclass
class RunResult:
    libs: Libraries
    trace: list
    out_dir: Path
    complete: bool
    steps_run: int = 0
    bank: EmbeddingBank | None = None


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class _Run:
    def __init__(self, dataset: Dataset, config: Config, providers: Providers, out_dir: Path, workers: int = 1):
        self.dataset = dataset
        self.config = config
        self.providers = providers
        self.out = Path(out_dir)
        self.workers = workers
        self.libs = Libraries(tools=init_tool_library())
        self.bank = EmbeddingBank(providers.embedder)
        self.permutation: list[int] = []
        self.ratings: dict | None = None
        self.memo: dict = {}
        self.iteration = 0
        self.position = 0
        self.trace: list = []
        self._bank_size_saved = -1

    # files

    def _path(self, name: str) -> Path:
        return self.out / name

    def _append(self, name: str, row: dict):
        try:
            with open(self._path(name), "a", encoding="utf-8", newline="\n") as f:
                f.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
        except OSError as exc:
            raise PersistenceError(self._path(name), f"append failed: {exc.strerror or exc}") from None

    def _offsets(self) -> dict:
        return {n: (self._path(n).stat().st_size if self._path(n).exists() else 0) for n in LOG_FILES}

    def _truncate(self, offsets: Mapping):
        for n in LOG_FILES:
            p = self._path(n)
            want = int(offsets.get(n, 0))
            if not p.exists():
                if want:
                    raise CorruptionError(p, "", "log file missing")
                p.touch()
                continue
            if p.stat().st_size < want:
                raise CorruptionError(p, "", f"log shorter than recorded offset {want}")
            with open(p, "r+b") as f:
                f.truncate(want)

    def save_checkpoint(self):
        lib_text = dump_libraries(self.libs)
        atomic_write(self._path(LIBRARIES_FILE), lib_text)
        if len(self.bank.vectors) != self._bank_size_saved:
            atomic_write(self._path(EMBEDDINGS_FILE), canonical_json(self.bank.to_json()))
            self._bank_size_saved = len(self.bank.vectors)
        ckpt = {
            "schema_version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "config_fingerprint": self.config.fingerprint(),
            "cursor": {"iteration": self.iteration, "position": self.position},
            "complete": self.iteration >= self.config.iterations,
            "permutation": self.permutation,
            "ratings": self.ratings,
            "memo": dict(sorted(self.memo.items())),
            "dataset": {"path": str(self.dataset.path) if self.dataset.path else None,
                        "sha256": self.dataset.sha256, "questions": len(self.dataset)},
            "providers": self.providers.spec,
            "libraries": {"file": LIBRARIES_FILE, "sha256": _sha(lib_text)},
            "embeddings": {"file": EMBEDDINGS_FILE, "fingerprint": self.bank.fingerprint},
            "offsets": self._offsets(),
        }
        atomic_write(self._path(CHECKPOINT_FILE), canonical_json(ckpt))

    # ordering

    def _order(self):
        n = len(self.dataset)
        mode = self.config.ordering
        rng = random.Random(self.config.seed)
        if mode == "dataset":
            perm = list(range(n))
        elif mode == "random":
            perm = list(range(n))
            rng.shuffle(perm)
        else:
            self.ratings = {}
            for q in self.dataset.questions:
                text = prompts.render("complexity_rater", question=q.text, answer_type=q.answer_type)
                req = make_request(self.config, "complexity_rater", text, key=f"complexity_rater/{q.id}",
                                   context={"question": q.text, "answer_type": q.answer_type})
                self.ratings[q.id] = chat(self.providers.chat, req).parsed.score
            ids = [q.id for q in self.dataset.questions]
            perm = sorted(range(n), key=lambda i: (self.ratings[ids[i]], i))
        self.permutation = perm
        self.libs.rng_state = encode_rng(rng)

    # stepping

    def counts_row(self) -> dict:
        c = self.libs.counts()
        return {"examples": c["examples"], "created": c["created"], "active": c["active"]}

    def start(self):
        self.out.mkdir(parents=True, exist_ok=True)
        for n in LOG_FILES:
            self._path(n).write_text("", encoding="utf-8")
        self._order()
        genesis = {"step": 0, "iteration": 0, "question_id": None, "outcome": None, "admitted": False,
                   "abstraction_ran": False, "dedup_ran": False, "tools_created": [], "tools_merged": [],
                   "after_abstraction": None, **self.counts_row()}
        self.trace.append(genesis)
        self._append(TRACE_FILE, genesis)
        self.save_checkpoint()

    def step(self):
        cfg = self.config
        q = self.dataset.questions[self.permutation[self.position]]
        scene = self.dataset.scene_for(q)
        step = self.libs.step_counter + 1
        it = self.iteration + 1
        res = solve_question(self.libs, q.id, q.text, scene, self.providers.chat, self.bank, cfg,
                             step=step, tag=f"i{it}", workers=self.workers)
        self.libs.step_counter = step
        self._append(AUDIT_FILE, res.audit(step=step, iteration=it))
        admitted = res.outcome in (AdmissionOutcome.INSERTED, AdmissionOutcome.REPLACED)
        size = len(self.libs.examples)
        archive = lambda rec: self._append(VALIDATION_FILE, {**rec, "iteration": it})  # noqa: E731
        created, merged = [], []
        ab_ran = admitted and size % cfg.abstraction_interval == 0
        if ab_ran:
            summary = abstraction_pass(self.libs, self.bank, self.providers.chat, cfg, self.dataset.scenes,
                                       self.memo, step=step, archive=archive)
            created = summary.created
        # counts between the phases, so a merge shows as a drop even when it follows a creation in one step
        mid = self.counts_row()
        dd_ran = admitted and size % cfg.dedup_interval == 0
        if dd_ran:
            summary = dedup_pass(self.libs, self.providers.chat, cfg, self.dataset.scenes, step=step,
                                 archive=archive, memo=self.memo)
            merged = summary.merged
        row = {"step": step, "iteration": it, "question_id": q.id,
               "outcome": res.outcome.value if res.outcome else "unsolved", "admitted": admitted,
               "abstraction_ran": ab_ran, "dedup_ran": dd_ran, "tools_created": created,
               "tools_merged": merged, "after_abstraction": {"created": mid["created"], "active": mid["active"]},
               **self.counts_row()}
        self.trace.append(row)
        self._append(TRACE_FILE, row)
        self.position += 1
        if self.position >= len(self.dataset):
            self.snapshot_iteration(it)
            self.iteration += 1
            self.position = 0
        self.save_checkpoint()

    def snapshot_iteration(self, it: int):
        atomic_write(self._path(f"snapshots/iteration-{it}.json"), dump_libraries(self.libs))

    def loop(self, max_steps: int | None = None) -> RunResult:
        ran = 0
        if len(self.dataset) == 0:
            self.iteration = self.config.iterations
            self.save_checkpoint()
        while self.iteration < self.config.iterations:
            if max_steps is not None and ran >= max_steps:
                return RunResult(self.libs, self.trace, self.out, False, ran, self.bank)
            try:
                self.step()
            except (ProviderError, PersistenceError, KeyboardInterrupt) as exc:
                raise PipelineInterrupted(self._path(CHECKPOINT_FILE), exc) from exc
            ran += 1
        return RunResult(self.libs, self.trace, self.out, True, ran, self.bank)


def run(dataset: Dataset, config: Config, providers: Providers, out_dir, *, max_steps: int | None = None,
        workers: int = 1) -> RunResult:
    """Process the dataset ``config.iterations`` times; ``max_steps`` pauses early after a checkpoint."""
    r = _Run(dataset, config, providers, Path(out_dir), workers)
    r.start()
    return r.loop(max_steps)


def read_checkpoint(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise PersistenceError(path, f"cannot read checkpoint: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise CorruptionError(path, "", f"not JSON ({exc.msg})") from None
    if not isinstance(data, dict) or data.get("schema_version") != CHECKPOINT_VERSION:
        raise CorruptionError(path, "schema_version", "unsupported checkpoint version")
    for key in ("config", "config_fingerprint", "cursor", "permutation", "dataset", "providers",
                "libraries", "offsets", "memo"):
        if key not in data:
            raise CorruptionError(path, key, "missing field")
    return data


def resume(checkpoint, providers: Providers | None = None, *, config: Config | None = None,
           dataset: Dataset | None = None, max_steps: int | None = None, workers: int = 1) -> RunResult:
    """Continue a run from its last checkpoint; the outcome equals an uninterrupted run."""
    path = Path(checkpoint)
    data = read_checkpoint(path)
    try:
        stored = Config.from_dict(data["config"])
    except DualibError as exc:
        raise FingerprintMismatchError(f"checkpoint config is invalid: {exc}") from None
    if stored.fingerprint() != data["config_fingerprint"]:
        raise FingerprintMismatchError("checkpoint config does not match its recorded fingerprint")
    if config is not None and config.fingerprint() != data["config_fingerprint"]:
        raise FingerprintMismatchError("config differs from the one the run started with")
    out = path.parent
    if dataset is None:
        dpath = data["dataset"].get("path")
        if not dpath:
            raise CorruptionError(path, "dataset.path", "no dataset path recorded")
        dataset = load_dataset(dpath)
    if dataset.sha256 != data["dataset"].get("sha256"):
        raise FingerprintMismatchError("dataset manifest changed since the checkpoint was written")
    if providers is None:
        providers = providers_from_spec(data["providers"], dataset.scenes)
    lib_path = out / data["libraries"]["file"]
    try:
        lib_text = lib_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PersistenceError(lib_path, f"cannot read libraries: {exc.strerror or exc}") from None
    if _sha(lib_text) != data["libraries"]["sha256"]:
        raise CorruptionError(lib_path, "", "libraries file does not match the checkpoint digest")
    try:
        lib_json = json.loads(lib_text)
    except json.JSONDecodeError as exc:
        raise CorruptionError(lib_path, "", f"not JSON ({exc.msg})") from None
    r = _Run(dataset, stored, providers, out, workers)
    r.libs = libraries_from_json(lib_json, lib_path, stored)
    emb_path = out / EMBEDDINGS_FILE
    if emb_path.exists():
        try:
            r.bank = EmbeddingBank.from_json(providers.embedder, json.loads(emb_path.read_text(encoding="utf-8")))
        except json.JSONDecodeError:
            r.bank = EmbeddingBank(providers.embedder)
    r._bank_size_saved = len(r.bank.vectors)
    r.permutation = list(data["permutation"])
    r.ratings = data.get("ratings")
    r.memo = dict(data["memo"])
    r.iteration = int(data["cursor"]["iteration"])
    r.position = int(data["cursor"]["position"])
    r._truncate(data["offsets"])
    r.trace = [json.loads(line) for line in (out / TRACE_FILE).read_text(encoding="utf-8").splitlines() if line]
    return r.loop(max_steps)


def read_jsonl(path) -> list:
    p = Path(path)
    if not p.exists():
        return []
    return [json.loads(line) for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]
