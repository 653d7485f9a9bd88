"""Reference planners and the stdio planner protocol.

A planner maps (last m_l scans, last m_l actions, goal unit vector in the
robot frame) to exactly m_a future actions. The stdio protocol exchanges one
JSON object per line: request {"scans", "past_actions", "goal"}, response
{"actions"}; it lets externally trained planners run as subprocesses without
linking.
"""

from __future__ import annotations

import json
import math
import subprocess
import sys
from typing import Protocol

import numpy as np

from .geometry import LidarConfig


class PlannerInterface(Protocol):
    def plan(
        self, scans: np.ndarray, past_actions: np.ndarray, goal_unit: np.ndarray
    ) -> np.ndarray:
        """Return an (m_a, 2) array of [v, omega] actions."""
        ...


class ConstantPlanner:
    """Always commands the same action. Useful for harness self-tests."""

    def __init__(self, v: float, omega: float, m_a: int = 5):
        self.action = (v, omega)
        self.m_a = m_a

    def plan(self, scans, past_actions, goal_unit) -> np.ndarray:
        return np.tile(self.action, (self.m_a, 1))


class ReplayPlanner:
    """Plays back a recorded action tape, one step per query.

    The tape is zero-padded past its end so the robot stops when the
    recording runs out.
    """

    def __init__(self, actions: np.ndarray, m_a: int = 5):
        self.actions = np.asarray(actions, dtype=float).reshape(-1, 2)
        self.m_a = m_a
        self.cursor = 0

    def plan(self, scans, past_actions, goal_unit) -> np.ndarray:
        out = np.zeros((self.m_a, 2))
        for k in range(self.m_a):
            idx = self.cursor + k
            if idx < len(self.actions):
                out[k] = self.actions[idx]
        self.cursor += 1
        return out


class GapFollowerPlanner:
    """Steer toward the goal through the widest safe gap in the current scan.

    Beams with range above ``safe_distance`` are free; among free beams the
    planner picks the one closest in angle to the goal direction, slows down
    in proportion to the obstruction straight ahead, and repeats the chosen
    action m_a times. Deterministic.
    """

    def __init__(
        self,
        lidar: LidarConfig = LidarConfig(),
        m_a: int = 5,
        max_speed: float = 1.0,
        safe_distance: float = 1.6,
        turn_gain: float = 1.8,
        max_turn: float = 1.8,
    ):
        self.offsets = lidar.offsets()
        self.max_range = lidar.max_range
        self.m_a = m_a
        self.max_speed = max_speed
        self.safe_distance = safe_distance
        self.turn_gain = turn_gain
        self.max_turn = max_turn

    def plan(self, scans, past_actions, goal_unit) -> np.ndarray:
        scan = np.asarray(scans, dtype=float)[-1]
        gx, gy = float(goal_unit[0]), float(goal_unit[1])
        goal_angle = math.atan2(gy, gx) if (gx or gy) else 0.0
        free = scan >= self.safe_distance
        if np.any(free):
            candidates = np.where(free)[0]
            pick = candidates[np.argmin(np.abs(self.offsets[candidates] - goal_angle))]
        else:
            pick = int(np.argmax(scan))
        steer = float(self.offsets[pick])
        # Slow down when the forward cone is obstructed.
        cone = np.abs(self.offsets) <= 0.35
        ahead = float(np.min(scan[cone])) if np.any(cone) else float(np.min(scan))
        speed = self.max_speed * min(ahead / self.safe_distance, 1.0)
        speed *= max(math.cos(steer), 0.0)
        omega = float(np.clip(self.turn_gain * steer, -self.max_turn, self.max_turn))
        return np.tile((speed, omega), (self.m_a, 1))


def _parse_actions(payload, m_a: int) -> np.ndarray:
    actions = np.asarray(payload, dtype=float)
    if actions.shape != (m_a, 2):
        raise ValueError(f"planner must return exactly {m_a} actions, got {actions.shape}")
    return actions


class SubprocessPlanner:
    """Drives an external planner process over the line-oriented protocol."""

    def __init__(self, command: list[str] | str, m_a: int = 5):
        self.m_a = m_a
        shell = isinstance(command, str)
        self.proc = subprocess.Popen(
            command,
            shell=shell,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def plan(self, scans, past_actions, goal_unit) -> np.ndarray:
        request = {
            "scans": np.asarray(scans, dtype=float).tolist(),
            "past_actions": np.asarray(past_actions, dtype=float).tolist(),
            "goal": [float(goal_unit[0]), float(goal_unit[1])],
        }
        self.proc.stdin.write(json.dumps(request) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise RuntimeError("planner process closed its output")
        return _parse_actions(json.loads(line)["actions"], self.m_a)

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.stdin.close()
            self.proc.wait(timeout=5)


def serve_planner(planner: PlannerInterface, stdin=None, stdout=None) -> None:
    """Serve a planner over stdin/stdout, one JSON request/response per line."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        request = json.loads(line)
        actions = planner.plan(
            np.asarray(request["scans"], dtype=float),
            np.asarray(request["past_actions"], dtype=float),
            np.asarray(request["goal"], dtype=float),
        )
        stdout.write(json.dumps({"actions": np.asarray(actions).tolist()}) + "\n")
        stdout.flush()
