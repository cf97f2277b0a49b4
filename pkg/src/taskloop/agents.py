"""Policy backends for the generator, solver, and external-solver roles.

Three interchangeable backends:

* ScriptedBackend replays fixed response texts (deterministic fixtures).
* SyntheticBackend is a parametric skill model for simulation: it fabricates
  small deterministic snippets, decides rollout correctness from a logistic
  skill-vs-difficulty model, and exposes the capability-ceiling mechanics
  (skill capped until external guidance lifts the cap).
* HttpBackend talks to a chat-completions style endpoint with retries.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

from .config import SyntheticParams
from .templates import GeneratorParse, SolverParse, render_generator_response, \
    render_solver_response


class TransportError(RuntimeError):
    """Endpoint unreachable or persistently failing."""


class ScoringUnsupported(RuntimeError):
    """The backend cannot produce per-token log-probabilities."""


@dataclass
class Sampling:
    temperature: float = 1.0
    max_tokens: int = 1024


@dataclass
class Completion:
    text: str
    token_logprobs: Optional[List[float]] = None
    finish_reason: str = "stop"

    def __post_init__(self):
        if self.token_logprobs is not None:
            if any(lp > 0 for lp in self.token_logprobs):
                raise ValueError("token log-probabilities must be <= 0")


class ScriptedBackend:
    """Replays per-role response lists in order; raises when exhausted."""

    def __init__(self, scripts: Dict[str, List[str]],
                 token_logprob: float = -1.0):
        self._scripts = {role: list(texts) for role, texts in scripts.items()}
        self._cursor: Dict[str, int] = {role: 0 for role in self._scripts}
        self.token_logprob = token_logprob

    def complete(self, role: str, prompt: str, n: int,
                 sampling: Sampling) -> List[Completion]:
        if n < 1:
            raise ValueError("n must be >= 1")
        script = self._scripts.get(role)
        if script is None:
            raise TransportError(f"no script for role {role!r}")
        start = self._cursor[role]
        if start + n > len(script):
            raise TransportError(
                f"script for role {role!r} exhausted ({start + n} > {len(script)})"
            )
        self._cursor[role] = start + n
        return [
            Completion(text=t, token_logprobs=self._token_logprobs(t))
            for t in script[start:start + n]
        ]

    def _token_logprobs(self, text: str) -> List[float]:
        n_tokens = max(1, len(text.split()))
        return [self.token_logprob] * n_tokens

    def score(self, prompt: str, completion: str) -> List[float]:
        return self._token_logprobs(completion)


# ---------------------------------------------------------------------------
# Synthetic skill model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticState:
    skill: float
    skill_cap: float
    predict_noise_sd: float
    latent_difficulty_sd: float

    def __post_init__(self):
        if self.skill > self.skill_cap + 1e-12:
            raise ValueError("skill cannot exceed skill_cap")


def synth_step(state: SyntheticState, informative_fraction: float,
               external_events: int, params: SyntheticParams) -> SyntheticState:
    """One training-step transition of the synthetic skill model.

    Skill grows with the fraction of informative tasks but never beyond the
    cap; the cap only rises when external guidance was accepted; prediction
    noise decays geometrically toward a floor.
    """
    if not (0.0 <= informative_fraction <= 1.0):
        raise ValueError("informative_fraction must be in [0, 1]")
    if external_events < 0:
        raise ValueError("external_events must be >= 0")
    new_cap = state.skill_cap + params.delta * external_events
    new_skill = min(new_cap, state.skill + params.eta * informative_fraction)
    new_noise = max(params.predict_noise_floor,
                    state.predict_noise_sd * params.rho)
    return SyntheticState(
        skill=new_skill, skill_cap=new_cap, predict_noise_sd=new_noise,
        latent_difficulty_sd=state.latent_difficulty_sd,
    )


def _logistic(x: float) -> float:
    if x >= 0:
        z = math.exp(-x)
        return 1.0 / (1.0 + z)
    z = math.exp(x)
    return z / (1.0 + z)


@dataclass
class _TaskMeta:
    latent_difficulty: float
    input_literal: str
    output_repr: str


class SyntheticBackend:
    """Simulation stand-in for the LLM playing all roles.

    Generated snippets are affine-iteration puzzles whose ground truth the
    backend computes itself, so sandbox validation always matches. Rollout
    correctness is Bernoulli(logistic(alpha * (skill - d))) with latent
    difficulty d drawn per task around the current skill minus a shrinking
    gap (easy tasks first, approaching the skill frontier as steps pass).
    """

    def __init__(self, params: SyntheticParams, seed: int,
                 external_skill: Optional[float] = None):
        self.params = params
        self.rng = random.Random(seed)
        self.state = SyntheticState(
            skill=params.skill0, skill_cap=params.cap0,
            predict_noise_sd=params.predict_noise_sd0,
            latent_difficulty_sd=params.latent_difficulty_sd,
        )
        self.step_index = 0
        self.external_skill = external_skill
        self._registry: Dict[str, _TaskMeta] = {}

    # -- loop-barrier state transition ------------------------------------

    def advance(self, informative_fraction: float, external_events: int) -> None:
        self.state = synth_step(self.state, informative_fraction,
                                external_events, self.params)
        self.step_index += 1

    def snapshot(self) -> dict:
        return {
            "skill": self.state.skill,
            "skill_cap": self.state.skill_cap,
            "predict_noise_sd": self.state.predict_noise_sd,
            "latent_difficulty_sd": self.state.latent_difficulty_sd,
            "step_index": self.step_index,
            "rng_state": _encode_rng_state(self.rng.getstate()),
        }

    def restore(self, snap: dict) -> None:
        self.state = SyntheticState(
            skill=snap["skill"], skill_cap=snap["skill_cap"],
            predict_noise_sd=snap["predict_noise_sd"],
            latent_difficulty_sd=snap["latent_difficulty_sd"],
        )
        self.step_index = snap["step_index"]
        self.rng.setstate(_decode_rng_state(snap["rng_state"]))

    # -- policy interface ---------------------------------------------------

    def complete(self, role: str, prompt: str, n: int,
                 sampling: Sampling) -> List[Completion]:
        if n < 1:
            raise ValueError("n must be >= 1")
        if role == "generator":
            return [self._generate_task() for _ in range(n)]
        if role in ("solver", "external"):
            skill = self.state.skill if role == "solver" else self._ext_skill()
            return [self._solve(prompt, skill) for _ in range(n)]
        raise ValueError(f"unknown role {role!r}")

    def score(self, prompt: str, completion: str) -> List[float]:
        meta = self._lookup(prompt)
        d = meta.latent_difficulty if meta else self.state.skill
        return self._draw_logprobs(d)

    # -- internals ------------------------------------------------------------

    def _ext_skill(self) -> float:
        if self.external_skill is not None:
            return self.external_skill
        return self.state.skill_cap + self.params.external_skill_bonus

    def _difficulty_gap(self) -> float:
        p = self.params
        return p.gap_final + (p.gap0 - p.gap_final) * (p.gap_decay ** self.step_index)

    def _generate_task(self) -> Completion:
        rng = self.rng
        a = rng.randrange(3, 9)
        b = rng.randrange(2, 7)
        c = rng.randrange(1, 50)
        m = rng.randrange(97, 997)
        x0 = rng.randrange(1, 100)
        code = (
            "def f(x):\n"
            "    acc = x\n"
            f"    for i in range({a}):\n"
            f"        acc = (acc * {b} + {c} + i) % {m}\n"
            "    return acc\n"
        ).rstrip("\n")
        acc = x0
        for i in range(a):
            acc = (acc * b + c + i) % m
        input_literal = str(x0)
        output_repr = repr(acc)

        d = self.state.skill - self._difficulty_gap() + \
            rng.gauss(0.0, self.state.latent_difficulty_sd)
        p_success = _logistic(self.params.alpha * (self.state.skill - d))
        k = round(8.0 * p_success + rng.gauss(0.0, self.state.predict_noise_sd))
        k = max(0, min(8, k))

        self._registry[code] = _TaskMeta(d, input_literal, output_repr)
        parse = GeneratorParse(
            think="plan an affine iteration with modular wraparound",
            answer_code=code,
            answer_input=input_literal,
            review="medium difficulty: several dependent transformations",
            difficulty_k=k,
        )
        text = render_generator_response(parse)
        return Completion(text=text, token_logprobs=self._draw_logprobs(d))

    def _lookup(self, prompt: str) -> Optional[_TaskMeta]:
        for code, meta in self._registry.items():
            if code in prompt:
                return meta
        return None

    def _solve(self, prompt: str, skill: float) -> Completion:
        meta = self._lookup(prompt)
        rng = self.rng
        if meta is None:
            # Unknown task (e.g. the seed): treat as trivially easy.
            meta = _TaskMeta(self.state.skill - 5.0, "1", "1")
        p_success = _logistic(self.params.alpha * (skill - meta.latent_difficulty))
        correct = rng.random() < p_success
        if correct:
            answer = meta.output_repr
        else:
            true_value, offset = meta.output_repr, rng.randrange(1, 7)
            try:
                answer = repr(int(true_value) + offset)
            except ValueError:
                answer = true_value + "_wrong"
        parse = SolverParse(think="trace the iteration", answer=answer)
        return Completion(
            text=render_solver_response(parse),
            token_logprobs=self._draw_logprobs(meta.latent_difficulty),
        )

    def _draw_logprobs(self, latent_difficulty: float) -> List[float]:
        p = self.params
        mean = max(0.05, p.novelty_base + p.novelty_slope *
                   (latent_difficulty - self.state.skill))
        return [-self.rng.expovariate(1.0 / mean)
                for _ in range(p.tokens_per_rollout)]


def _encode_rng_state(state) -> list:
    version, internal, gauss_next = state
    return [version, list(internal), gauss_next]


def _decode_rng_state(data) -> tuple:
    version, internal, gauss_next = data
    return (version, tuple(internal), gauss_next)


# ---------------------------------------------------------------------------
# HTTP backend
# ---------------------------------------------------------------------------

class HttpBackend:
    """Chat-completions client with capped retry backoff.

    Credentials come from the environment (TASKLOOP_API_KEY); base URL and
    model from config. Scoring is unsupported: callers fall back to logprobs
    captured at sampling time.
    """

    RETRYABLE_STATUS = (429, 500, 502, 503, 504)

    def __init__(self, base_url: str, model: str, api_key: Optional[str] = None,
                 max_retries: int = 3, timeout_s: float = 60.0,
                 backoff_s: float = 1.0, backoff_cap_s: float = 8.0):
        import requests  # deferred so scripted/synthetic paths never need it
        self._requests = requests
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.max_retries = max_retries
        self.timeout_s = timeout_s
        self.backoff_s = backoff_s
        self.backoff_cap_s = backoff_cap_s

    def complete(self, role: str, prompt: str, n: int,
                 sampling: Sampling) -> List[Completion]:
        if n < 1:
            raise ValueError("n must be >= 1")
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "n": n,
            "temperature": sampling.temperature,
            "max_tokens": sampling.max_tokens,
            "logprobs": True,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._requests.post(
                    f"{self.base_url}/chat/completions", json=payload,
                    headers=headers, timeout=self.timeout_s,
                )
            except self._requests.RequestException as exc:
                last_error = exc
            else:
                if resp.status_code == 200:
                    return self._parse_choices(resp.json(), n)
                if resp.status_code not in self.RETRYABLE_STATUS:
                    raise TransportError(
                        f"endpoint returned {resp.status_code}: {resp.text[:200]}"
                    )
                last_error = TransportError(f"status {resp.status_code}")
            if attempt < self.max_retries:
                time.sleep(min(self.backoff_cap_s, self.backoff_s * 2 ** attempt))
        raise TransportError(f"exhausted retries: {last_error}")

    def _parse_choices(self, body: dict, n: int) -> List[Completion]:
        choices = body.get("choices")
        if not isinstance(choices, list) or len(choices) != n:
            raise TransportError(f"malformed backend response: {body!r:.200}")
        out = []
        for choice in choices:
            message = choice.get("message") or {}
            text = message.get("content")
            if not isinstance(text, str):
                raise TransportError("malformed backend response: missing content")
            logprobs = None
            lp_block = choice.get("logprobs") or {}
            content = lp_block.get("content")
            if isinstance(content, list):
                logprobs = [float(tok.get("logprob", 0.0)) for tok in content]
            out.append(Completion(
                text=text, token_logprobs=logprobs,
                finish_reason=choice.get("finish_reason", "stop"),
            ))
        return out

    def score(self, prompt: str, completion: str) -> List[float]:
        raise ScoringUnsupported("chat-completions endpoints cannot rescore text")
