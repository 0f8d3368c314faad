"""Batch reward scoring over newline-delimited JSON.

One request object per line in, one response object per line out, in the
same order. Works over TCP (one thread per connection) or stdin/stdout.

Request:  {"id": "...", "text": "<think>...</think><answer>...</answer>",
           "gold_strategy": "Question", "config_name": "no-emotion"}
Response: {"id": "...", "fmt": 1, "cog": 1, "strat": 1, "reward": 1}
          plus "error": {"code": ..., "message": ...} on failure.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
from dataclasses import dataclass
from typing import IO, Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

from .core import UnknownStrategy
from .reward import FULL_CONFIG, NAMED_CONFIGS, RewardConfig, hierarchical_reward

log = logging.getLogger(__name__)

DEFAULT_LIMIT_BYTES = 64 * 1024

BAD_RECORD = "BAD_RECORD"
UNKNOWN_STRATEGY = "UNKNOWN_STRATEGY"
OVERSIZE = "OVERSIZE"


@dataclass(frozen=True)
class ScoreRequest:
    id: str
    text: str
    gold_strategy: str
    config_name: Optional[str] = None

    def to_json(self) -> str:
        rec = {"id": self.id, "text": self.text, "gold_strategy": self.gold_strategy}
        if self.config_name is not None:
            rec["config_name"] = self.config_name
        return json.dumps(rec, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ScoreRequest":
        rec = json.loads(line)
        if not isinstance(rec, dict):
            raise ValueError("request must be a JSON object")
        for key in ("id", "text", "gold_strategy"):
            if not isinstance(rec.get(key), str):
                raise ValueError(f"field {key!r} must be a string")
        cfg = rec.get("config_name")
        if cfg is not None and not isinstance(cfg, str):
            raise ValueError("field 'config_name' must be a string")
        return cls(rec["id"], rec["text"], rec["gold_strategy"], cfg)


@dataclass(frozen=True)
class ScoreResponse:
    id: str
    fmt: int = 0
    cog: int = 0
    strat: int = 0
    reward: int = 0
    error: Optional[Tuple[str, str]] = None  # (code, message)

    def to_json(self) -> str:
        rec = {"id": self.id, "fmt": self.fmt, "cog": self.cog, "strat": self.strat, "reward": self.reward}
        if self.error is not None:
            rec["error"] = {"code": self.error[0], "message": self.error[1]}
        return json.dumps(rec, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ScoreResponse":
        rec = json.loads(line)
        err = rec.get("error")
        return cls(
            rec["id"], rec["fmt"], rec["cog"], rec["strat"], rec["reward"],
            (err["code"], err["message"]) if err else None,
        )

    @classmethod
    def failure(cls, id: str, code: str, message: str) -> "ScoreResponse":
        return cls(id, error=(code, message))


class Scorer:
    """Turns request lines into response lines under a fixed set of configs.

    Holds no mutable state, so one instance can serve any number of
    connections. The config set is swapped by building a new Scorer.
    """

    def __init__(
        self,
        config: RewardConfig = FULL_CONFIG,
        configs: Optional[Mapping[str, RewardConfig]] = None,
        limit_bytes: int = DEFAULT_LIMIT_BYTES,
    ):
        self.config = config
        self.configs = dict(configs if configs is not None else NAMED_CONFIGS)
        self.limit_bytes = limit_bytes

    def score(self, req: ScoreRequest) -> ScoreResponse:
        if len(req.text.encode("utf-8")) > self.limit_bytes:
            return ScoreResponse.failure(req.id, OVERSIZE, f"text exceeds {self.limit_bytes} bytes")
        if req.config_name is None:
            cfg = self.config
        elif req.config_name in self.configs:
            cfg = self.configs[req.config_name]
        else:
            return ScoreResponse.failure(req.id, BAD_RECORD, f"unknown config {req.config_name!r}")
        try:
            gold = cfg.vocab.canonicalize(req.gold_strategy)
        except UnknownStrategy as exc:
            return ScoreResponse.failure(req.id, UNKNOWN_STRATEGY, str(exc))
        b = hierarchical_reward(req.text, gold, cfg)
        return ScoreResponse(req.id, b.fmt, b.cog, b.strat, b.final)

    def handle_line(self, line: str) -> str:
        try:
            req = ScoreRequest.from_json(line)
        except (ValueError, TypeError) as exc:
            return ScoreResponse.failure(_salvage_id(line), BAD_RECORD, str(exc)).to_json()
        return self.score(req).to_json()

    def handle_lines(self, lines: Iterable[str]) -> Iterator[str]:
        for line in lines:
            line = line.rstrip("\r\n")
            if line.strip():
                yield self.handle_line(line)


def _salvage_id(line: str) -> str:
    try:
        rec = json.loads(line)
        if isinstance(rec, dict) and isinstance(rec.get("id"), str):
            return rec["id"]
    except ValueError:
        pass
    return ""


def serve_stdio(scorer: Scorer, stdin: IO[str], stdout: IO[str]) -> int:
    n = 0
    for out in scorer.handle_lines(stdin):
        stdout.write(out + "\n")
        stdout.flush()
        n += 1
    return n


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        scorer: Scorer = self.server.scorer
        for raw in self.rfile:
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError:
                out = ScoreResponse.failure("", BAD_RECORD, "record is not valid UTF-8").to_json()
            else:
                if not line.strip():
                    continue
                out = scorer.handle_line(line.rstrip("\r\n"))
            self.wfile.write(out.encode("utf-8") + b"\n")


class ScoringServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: Tuple[str, int], scorer: Scorer):
        self.scorer = scorer
        super().__init__(address, _Handler)

    @property
    def address(self) -> Tuple[str, int]:
        return self.server_address[:2]

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def serve(host: str = "127.0.0.1", port: int = 8765, scorer: Optional[Scorer] = None) -> None:
    """Run the scoring service until interrupted."""
    scorer = scorer or Scorer()
    with ScoringServer((host, port), scorer) as server:
        log.info("scoring on %s:%d", *server.address)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass


def score_remote(address: Tuple[str, int], requests: Iterable[ScoreRequest], timeout: float = 30.0) -> List[ScoreResponse]:
    """Minimal client: send every request on one connection, read the replies."""
    lines = [r.to_json() for r in requests]
    with socket.create_connection(address, timeout=timeout) as sock:
        writer = threading.Thread(target=_send_all, args=(sock, lines), daemon=True)
        writer.start()
        reader = sock.makefile("r", encoding="utf-8", newline="\n")
        out = [ScoreResponse.from_json(reader.readline()) for _ in lines]
        writer.join()
    return out


def _send_all(sock: socket.socket, lines: List[str]) -> None:
    sock.sendall("".join(line + "\n" for line in lines).encode("utf-8"))
