"""Per-generation parameter controllers: rule-based, LLM-backed, or frozen.

Three agents each own one search parameter and are consulted once per
generation, decisions taking effect the following generation:

* game agent — ambient pressure AP (elite fraction; exploit vs explore),
* positive feedback agent — PF, weight of the edge-deletion channel,
* negative feedback agent — NF, weight of the edge-addition channel.

The LLM backend posts a rendered prompt to any chat-completion-shaped HTTP
endpoint and expects a strict JSON object ``{"decision": number,
"reasoning": string}`` back; on timeouts, HTTP errors, or unparseable
replies it falls back to the deterministic rule policy so a run always
makes progress.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import requests

from kclearn.errors import ConfigurationError, DecisionParseError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_STEP = 0.05
DEFAULT_EPSILON = 1e-3
DEFAULT_HISTORY_K = 5

_PROMPT_FILES = {
    "GAME": "game_agent.txt",
    "PFA": "positive_feedback_agent.txt",
    "NFA": "negative_feedback_agent.txt",
}

_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*[ \t]*\n?(.*?)\n?```$", re.DOTALL)


class AgentRole(str, Enum):
    GAME = "GAME"
    PFA = "PFA"
    NFA = "NFA"


@dataclass(frozen=True)
class AgentObservation:
    """State snapshot handed to one agent at the end of a generation."""

    agent: AgentRole
    generation: int
    loss_current: float
    loss_previous: float
    delta_loss: float
    param_current: float
    param_bounds: tuple[float, float]
    history: tuple[tuple[int, float, float], ...] = ()

    def __post_init__(self) -> None:
        lo, hi = self.param_bounds
        if lo > hi:
            raise ValidationError(f"bounds out of order: [{lo}, {hi}]")
        if not lo <= self.param_current <= hi:
            raise ValidationError(
                f"param {self.param_current} outside bounds [{lo}, {hi}]"
            )
        if abs(self.delta_loss - (self.loss_previous - self.loss_current)) > 1e-9:
            raise ValidationError("delta_loss does not match the two loss fields")

    def to_dict(self) -> dict:
        return {
            "agent": self.agent.value,
            "generation": self.generation,
            "loss_current": self.loss_current,
            "loss_previous": self.loss_previous,
            "delta_loss": self.delta_loss,
            "param_current": self.param_current,
            "param_bounds": list(self.param_bounds),
            "history": [list(h) for h in self.history],
        }


@dataclass(frozen=True)
class AgentDecision:
    """Proposed parameter value plus the agent's stated reasoning."""

    value: float
    reasoning: str
    source: str  # llm | rule | fallback


@dataclass(frozen=True)
class ControllerConfig:
    backend: str = "rule"  # llm | rule | off
    game_enabled: bool = True
    pfa_enabled: bool = True
    nfa_enabled: bool = True
    endpoint: str = ""
    model: str = ""
    timeout: float = 30.0
    max_retries: int = 2
    api_key_env: str = "KCLEARN_API_KEY"
    prompt_dir: str | None = None
    temperature: float = 0.0
    step: float = DEFAULT_STEP
    epsilon: float = DEFAULT_EPSILON
    history_k: int = DEFAULT_HISTORY_K

    def __post_init__(self) -> None:
        if self.backend not in ("llm", "rule", "off"):
            raise ConfigurationError(f"unknown controller backend {self.backend!r}")
        if self.timeout <= 0:
            raise ConfigurationError(f"timeout must be positive, got {self.timeout}")
        if self.max_retries < 1:
            raise ConfigurationError(f"max_retries must be >= 1, got {self.max_retries}")
        if self.backend == "llm" and not self.endpoint:
            raise ConfigurationError("llm backend requires an endpoint URL")
        if self.step <= 0:
            raise ConfigurationError(f"step must be positive, got {self.step}")
        if self.history_k < 0:
            raise ConfigurationError(f"history_k must be >= 0, got {self.history_k}")

    def enabled(self, role: AgentRole) -> bool:
        if self.backend == "off":
            return False
        flags = {
            AgentRole.GAME: self.game_enabled,
            AgentRole.PFA: self.pfa_enabled,
            AgentRole.NFA: self.nfa_enabled,
        }
        return flags[role]


def _clamp(value: float, bounds: tuple[float, float]) -> float:
    return min(max(value, bounds[0]), bounds[1])


def rule_decide(
    obs: AgentObservation,
    step: float = DEFAULT_STEP,
    epsilon: float = DEFAULT_EPSILON,
) -> AgentDecision:
    """Deterministic policy: react to whether the loss is still improving.

    While improving, the game agent raises AP (exploit); once stalled it
    lowers AP and both feedback agents strengthen their factors.
    """
    improving = obs.delta_loss > epsilon
    param = obs.param_current
    if obs.agent is AgentRole.GAME:
        if improving:
            value, why = param + step, "loss improving; raising ambient pressure to exploit"
        else:
            value, why = param - step, "loss stalled; lowering ambient pressure to explore"
    else:
        channel = "deletion" if obs.agent is AgentRole.PFA else "addition"
        if improving:
            value, why = param, f"loss improving; keeping the {channel} factor"
        else:
            value, why = param + step, f"loss stalled; strengthening the {channel} factor"
    return AgentDecision(_clamp(value, obs.param_bounds), why, "rule")


def parse_decision(raw: str) -> AgentDecision:
    """Parse one strict JSON decision object, tolerating a code fence around it."""
    text = raw.strip()
    fenced = _FENCE_RE.match(text)
    if fenced:
        text = fenced.group(1).strip()

    def _reject(token: str) -> float:
        raise DecisionParseError(f"non-finite number {token!r} is not valid JSON")

    try:
        obj = json.loads(text, parse_constant=_reject)
    except json.JSONDecodeError as exc:
        raise DecisionParseError(f"reply is not a single JSON object: {exc}") from exc
    if not isinstance(obj, dict):
        raise DecisionParseError(f"top-level JSON value must be an object, got {type(obj).__name__}")
    if "decision" not in obj or "reasoning" not in obj:
        raise DecisionParseError("decision object requires keys 'decision' and 'reasoning'")
    value = obj["decision"]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DecisionParseError(f"'decision' must be a number, got {value!r}")
    reasoning = obj["reasoning"]
    if not isinstance(reasoning, str):
        raise DecisionParseError(f"'reasoning' must be a string, got {reasoning!r}")
    return AgentDecision(float(value), reasoning, "llm")


def _reply_text(body: str) -> str:
    """Assistant text from a chat-completion body, or the body itself."""
    try:
        data = json.loads(body)
    except json.JSONDecodeError:
        return body
    if isinstance(data, dict):
        choices = data.get("choices")
        if isinstance(choices, list) and choices and isinstance(choices[0], dict):
            message = choices[0].get("message")
            if isinstance(message, dict) and isinstance(message.get("content"), str):
                return message["content"]
    return body


class Controller:
    """Dispatches agent observations to the configured decision backend."""

    def __init__(self, config: ControllerConfig):
        self.config = config
        self._session: requests.Session | None = None

    def _http(self) -> requests.Session:
        if self._session is None:
            self._session = requests.Session()
        return self._session

    def decide(self, obs: AgentObservation) -> AgentDecision:
        """One decision for one agent; value is clamped to the observed bounds."""
        if not self.config.enabled(obs.agent):
            return AgentDecision(obs.param_current, "agent disabled; parameter frozen", "rule")
        if self.config.backend == "rule":
            decision = rule_decide(obs, self.config.step, self.config.epsilon)
        else:
            decision = self.llm_decide(obs)
        return self._sanitize(decision, obs)

    def _sanitize(self, decision: AgentDecision, obs: AgentObservation) -> AgentDecision:
        value = decision.value
        if not math.isfinite(value):
            logger.warning(
                "%s decision %r is not finite; keeping current value", obs.agent.value, value
            )
            return replace(decision, value=obs.param_current)
        clamped = _clamp(value, obs.param_bounds)
        if clamped != value:
            logger.warning(
                "%s decision %s outside bounds %s; clamped to %s",
                obs.agent.value,
                value,
                obs.param_bounds,
                clamped,
            )
        return replace(decision, value=clamped)

    def render_prompt(self, obs: AgentObservation) -> str:
        template = self._template(obs.agent)
        lo, hi = obs.param_bounds
        fields = {
            "agent": obs.agent.value,
            "generation": str(obs.generation),
            "loss_current": f"{obs.loss_current:.6g}",
            "loss_previous": f"{obs.loss_previous:.6g}",
            "delta_loss": f"{obs.delta_loss:.6g}",
            "param_current": f"{obs.param_current:.6g}",
            "param_lo": f"{lo:.6g}",
            "param_hi": f"{hi:.6g}",
            "history": json.dumps([list(h) for h in obs.history]),
        }
        text = template
        for key, value in fields.items():
            text = text.replace("{{" + key + "}}", value)
        return text

    def _template(self, role: AgentRole) -> str:
        base = Path(self.config.prompt_dir) if self.config.prompt_dir else Path(__file__).parent / "prompts"
        path = base / _PROMPT_FILES[role.value]
        return path.read_text(encoding="utf-8")

    def llm_decide(self, obs: AgentObservation) -> AgentDecision:
        """POST the rendered prompt; on repeated failure apply the rule policy."""
        cfg = self.config
        payload = {
            "model": cfg.model,
            "messages": [{"role": "user", "content": self.render_prompt(obs)}],
            "temperature": cfg.temperature,
        }
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(cfg.api_key_env, "") if cfg.api_key_env else ""
        if token:
            headers["Authorization"] = f"Bearer {token}"

        last_error: Exception | None = None
        raw: str | None = None
        for attempt in range(1, cfg.max_retries + 1):
            try:
                response = self._http().post(
                    cfg.endpoint, json=payload, headers=headers, timeout=cfg.timeout
                )
                response.raise_for_status()
                raw = response.text
                return parse_decision(_reply_text(raw))
            except (requests.RequestException, DecisionParseError) as exc:
                last_error = exc
                logger.warning(
                    "%s llm attempt %d/%d failed: %s",
                    obs.agent.value,
                    attempt,
                    cfg.max_retries,
                    exc,
                )
        logger.warning(
            "%s llm backend exhausted retries; raw response: %r", obs.agent.value, raw
        )
        fallback = rule_decide(obs, cfg.step, cfg.epsilon)
        return AgentDecision(
            fallback.value,
            f"llm unavailable ({last_error}); rule policy applied: {fallback.reasoning}",
            "fallback",
        )
