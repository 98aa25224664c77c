"""Goal-oriented environments.

PointMassMaze: a force-controlled point mass in a grid-wall maze with a
binary goal-ball reward, arbitrary reset, and episode termination at the
goal. The default map is a G-shaped corridor whose dead end holds the goal.

SyntheticBobWorld: the closed-form stand-in learner used by the asymmetric
self-play failure demo (return time t_B = |s0 - goal| / v_B inside a
competence radius, a maximum value outside it).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

WALL = "#"
FREE = "."
GOAL = "G"
START = "S"

# Pinned collision margin: a stopped coordinate sits this far off the wall
# face, keeping the cell index strictly on the free side.
PIN_MARGIN = 1e-9


class MapError(ValueError):
    pass


@dataclass(frozen=True)
class EnvState:
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0

    def position(self):
        return (self.x, self.y)

    def zero_velocity(self) -> "EnvState":
        return EnvState(self.x, self.y, 0.0, 0.0)


class MazeSpec:
    """Immutable maze description parsed from the ASCII map format.

    The file starts with one header line of space-separated key=value pairs
    (cell_size, goal_radius, dt, v_max, action_bound, horizon; optionally
    goal_x/goal_y to place the goal center off the goal cell's center),
    followed by one text row per cell row, top row first. '#' is wall,
    '.' free, 'G' the goal cell, 'S' a canonical start-region marker
    (treated as free).
    """

    REQUIRED_KEYS = ("cell_size", "goal_radius", "dt", "v_max", "action_bound", "horizon")

    def __init__(self, rows, cell_size, goal_radius, dt, v_max, action_bound,
                 horizon, goal_center=None):
        if not rows:
            raise MapError("empty map")
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise MapError("map is not rectangular")
        bad = {c for r in rows for c in r} - {WALL, FREE, GOAL, START}
        if bad:
            raise MapError(f"unknown map characters: {sorted(bad)}")
        self.rows = tuple(rows)            # top row first, as in the file
        self.n_cols = width
        self.n_rows = len(rows)
        self.cell_size = float(cell_size)
        self.goal_radius = float(goal_radius)
        self.dt = float(dt)
        self.v_max = float(v_max)
        self.action_bound = float(action_bound)
        self.horizon = int(horizon)
        if min(self.cell_size, self.goal_radius, self.dt, self.v_max,
               self.action_bound) <= 0 or self.horizon <= 0:
            raise MapError("header values must be positive")

        # walls[cy][cx] with cy = 0 at the bottom
        self.walls = np.array([[c == WALL for c in row] for row in reversed(rows)], dtype=bool)
        goal_cells = [(cx, cy) for cy in range(self.n_rows) for cx in range(self.n_cols)
                      if self.rows[self.n_rows - 1 - cy][cx] == GOAL]
        if len(goal_cells) != 1:
            raise MapError(f"map must contain exactly one '{GOAL}' cell, found {len(goal_cells)}")
        self.goal_cell = goal_cells[0]
        self.start_cells = tuple((cx, cy) for cy in range(self.n_rows) for cx in range(self.n_cols)
                                 if self.rows[self.n_rows - 1 - cy][cx] == START)
        if goal_center is None:
            gx = (self.goal_cell[0] + 0.5) * self.cell_size
            gy = (self.goal_cell[1] + 0.5) * self.cell_size
            goal_center = (gx, gy)
        self.goal_center = (float(goal_center[0]), float(goal_center[1]))
        self.width = self.n_cols * self.cell_size
        self.height = self.n_rows * self.cell_size

        if not self.cell_free(*self.cell_of(*self.goal_center)):
            raise MapError(f"goal center {self.goal_center} lies in a wall cell")
        self.free_cells = tuple((cx, cy) for cy in range(self.n_rows)
                                for cx in range(self.n_cols) if not self.walls[cy, cx])
        self._check_communicating()

    # -- cell helpers --

    def cell_of(self, x, y):
        return int(math.floor(x / self.cell_size)), int(math.floor(y / self.cell_size))

    def cell_free(self, cx, cy) -> bool:
        if cx < 0 or cy < 0 or cx >= self.n_cols or cy >= self.n_rows:
            return False
        return not self.walls[cy, cx]

    def position_feasible(self, x, y) -> bool:
        if not (0.0 <= x < self.width and 0.0 <= y < self.height):
            return False
        return not self.walls[int(y / self.cell_size), int(x / self.cell_size)]

    def _check_communicating(self):
        """Every free cell must reach the goal cell (4-connected flood fill)."""
        seen = {self.goal_cell}
        stack = [self.goal_cell]
        while stack:
            cx, cy = stack.pop()
            for nx, ny in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
                if self.cell_free(nx, ny) and (nx, ny) not in seen:
                    seen.add((nx, ny))
                    stack.append((nx, ny))
        unreachable = [c for c in self.free_cells if c not in seen]
        if unreachable:
            raise MapError(f"free cells cannot reach the goal cell: {unreachable[:8]}"
                           f"{'...' if len(unreachable) > 8 else ''}")

    # -- serialization --

    @classmethod
    def from_text(cls, text: str) -> "MazeSpec":
        lines = [ln.rstrip("\n") for ln in text.strip("\n").split("\n")]
        if len(lines) < 2:
            raise MapError("map text needs a header line and at least one row")
        header = {}
        for tok in lines[0].split():
            if "=" not in tok:
                raise MapError(f"bad header token {tok!r} (expected key=value)")
            k, v = tok.split("=", 1)
            header[k] = float(v)
        missing = [k for k in cls.REQUIRED_KEYS if k not in header]
        if missing:
            raise MapError(f"map header missing keys: {missing}")
        goal_center = None
        if "goal_x" in header or "goal_y" in header:
            if not ("goal_x" in header and "goal_y" in header):
                raise MapError("goal_x and goal_y must be given together")
            goal_center = (header["goal_x"], header["goal_y"])
        return cls(rows=lines[1:], cell_size=header["cell_size"],
                   goal_radius=header["goal_radius"], dt=header["dt"],
                   v_max=header["v_max"], action_bound=header["action_bound"],
                   horizon=header["horizon"], goal_center=goal_center)

    @classmethod
    def load(cls, path) -> "MazeSpec":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_text(f.read())

    def to_text(self) -> str:
        header = (f"cell_size={self.cell_size} goal_radius={self.goal_radius} dt={self.dt} "
                  f"v_max={self.v_max} action_bound={self.action_bound} horizon={self.horizon} "
                  f"goal_x={self.goal_center[0]} goal_y={self.goal_center[1]}")
        return "\n".join([header, *self.rows]) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def default_g_maze() -> MazeSpec:
    """The versioned default G-maze shipped with the package."""
    text = resources.files("revcur").joinpath("maps/default_g.maze").read_text()
    return MazeSpec.from_text(text)


class PointMassMaze:
    """Force-controlled point mass in a MazeSpec.

    Dynamics per step: clip the action per axis to +-action_bound, integrate
    v += a*dt with the speed norm clamped to v_max, then move one axis at a
    time with move-and-stop wall collision (the blocked axis's velocity is
    zeroed). Reward is 1 exactly when the new position enters the closed
    goal ball, which also ends the episode; episodes also end at the horizon.

    One instance runs one rollout at a time; create one instance per worker.
    """

    def __init__(self, spec: MazeSpec, horizon: int | None = None):
        self.spec = spec
        self.horizon = int(horizon) if horizon is not None else spec.horizon
        self.obs_dim = 4
        self.act_dim = 2
        self.total_steps = 0               # lifetime env-step ledger
        self._x = self._y = self._vx = self._vy = 0.0
        self._t = 0
        self._done = True

    def clone(self) -> "PointMassMaze":
        return PointMassMaze(self.spec, self.horizon)

    # -- predicates --

    def is_feasible(self, state: EnvState) -> bool:
        if not self.spec.position_feasible(state.x, state.y):
            return False
        return state.vx ** 2 + state.vy ** 2 <= self.spec.v_max ** 2 * (1 + 1e-12)

    def is_goal(self, state: EnvState) -> bool:
        gx, gy = self.spec.goal_center
        dx, dy = state.x - gx, state.y - gy
        return dx * dx + dy * dy <= self.spec.goal_radius ** 2

    def goal_state(self) -> EnvState:
        return EnvState(self.spec.goal_center[0], self.spec.goal_center[1])

    # -- observation --

    def observe(self, state: EnvState | None = None) -> np.ndarray:
        if state is None:
            state = self.state()
        return np.array([state.x / self.spec.width, state.y / self.spec.height,
                         state.vx / self.spec.v_max, state.vy / self.spec.v_max])

    def observe_many(self, pos: np.ndarray, vel: np.ndarray) -> np.ndarray:
        return np.column_stack([pos[:, 0] / self.spec.width, pos[:, 1] / self.spec.height,
                                vel[:, 0] / self.spec.v_max, vel[:, 1] / self.spec.v_max])

    def state(self) -> EnvState:
        return EnvState(self._x, self._y, self._vx, self._vy)

    # -- episode control --

    def reset_to(self, state: EnvState) -> np.ndarray:
        if not self.is_feasible(state):
            raise ValueError(f"reset to infeasible state {state}")
        self._x, self._y = float(state.x), float(state.y)
        self._vx, self._vy = float(state.vx), float(state.vy)
        self._t = 0
        self._done = False
        return self.observe()

    def _move_axis(self, x, y, vx, axis_x: bool):
        """Move one coordinate by v*dt with move-and-stop against walls."""
        spec = self.spec
        if axis_x:
            n = x + vx * spec.dt
            if spec.position_feasible(n, y):
                return n, vx
            cell = math.floor(x / spec.cell_size)
            face = (cell + 1) * spec.cell_size if vx > 0 else cell * spec.cell_size
            return (face - PIN_MARGIN if vx > 0 else face + PIN_MARGIN), 0.0
        n = y + vx * spec.dt
        if spec.position_feasible(x, n):
            return n, vx
        cell = math.floor(y / spec.cell_size)
        face = (cell + 1) * spec.cell_size if vx > 0 else cell * spec.cell_size
        return (face - PIN_MARGIN if vx > 0 else face + PIN_MARGIN), 0.0

    def step(self, action) -> tuple[EnvState, int, bool]:
        if self._done:
            raise RuntimeError("step on finished episode (reset_to first)")
        ax, ay = float(action[0]), float(action[1])
        if not (math.isfinite(ax) and math.isfinite(ay)):
            raise ValueError("non-finite action")
        spec = self.spec
        ab = spec.action_bound
        ax = -ab if ax < -ab else (ab if ax > ab else ax)
        ay = -ab if ay < -ab else (ab if ay > ab else ay)
        vx = self._vx + ax * spec.dt
        vy = self._vy + ay * spec.dt
        s2 = vx * vx + vy * vy
        if s2 > spec.v_max ** 2:
            scale = spec.v_max / math.sqrt(s2)
            vx *= scale
            vy *= scale
        x, vx = self._move_axis(self._x, self._y, vx, axis_x=True)
        y, vy = self._move_axis(x, self._y, vy, axis_x=False)
        self._x, self._y, self._vx, self._vy = x, y, vx, vy
        self._t += 1
        self.total_steps += 1
        gx, gy = spec.goal_center
        dxg, dyg = x - gx, y - gy
        if dxg * dxg + dyg * dyg <= spec.goal_radius ** 2:
            self._done = True
            return self.state(), 1, True
        if self._t >= self.horizon:
            self._done = True
        return self.state(), 0, self._done

    # -- vectorized lanes (used by evaluation and oracle screening) --

    def step_many(self, pos: np.ndarray, vel: np.ndarray, actions: np.ndarray):
        """One dynamics step for N independent lanes.

        Arithmetic mirrors step() operation for operation so scalar and
        vector paths agree bit for bit. Returns (pos, vel, at_goal).
        """
        spec = self.spec
        a = np.clip(actions, -spec.action_bound, spec.action_bound)
        vel = vel + a * spec.dt
        s2 = (vel ** 2).sum(axis=1)
        over = s2 > spec.v_max ** 2
        if over.any():
            vel[over] *= (spec.v_max / np.sqrt(s2[over]))[:, None]
        pos = pos.copy()
        vel = vel.copy()
        cs = spec.cell_size
        for axis in (0, 1):
            n = pos[:, axis] + vel[:, axis] * spec.dt
            other = pos[:, 1 - axis]
            if axis == 0:
                ok = self._feasible_many(n, other)
            else:
                ok = self._feasible_many(other, n)
            blocked = ~ok
            if blocked.any():
                cur = pos[blocked, axis]
                v = vel[blocked, axis]
                cell = np.floor(cur / cs)
                face = np.where(v > 0, (cell + 1) * cs - PIN_MARGIN, cell * cs + PIN_MARGIN)
                n[blocked] = face
                vel[blocked, axis] = 0.0
            pos[:, axis] = n
        d = pos - np.asarray(spec.goal_center)
        at_goal = (d ** 2).sum(axis=1) <= spec.goal_radius ** 2
        self.total_steps += pos.shape[0]
        return pos, vel, at_goal

    def _feasible_many(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        spec = self.spec
        ok = (x >= 0.0) & (x < spec.width) & (y >= 0.0) & (y < spec.height)
        cx = np.clip((x / spec.cell_size).astype(np.int64), 0, spec.n_cols - 1)
        cy = np.clip((y / spec.cell_size).astype(np.int64), 0, spec.n_rows - 1)
        return ok & ~spec.walls[cy, cx]

    def is_goal_many(self, pos: np.ndarray) -> np.ndarray:
        d = pos - np.asarray(self.spec.goal_center)
        return (d ** 2).sum(axis=1) <= self.spec.goal_radius ** 2

    # -- sampling --

    def sample_uniform_feasible(self, n: int, rng: np.random.Generator) -> list[EnvState]:
        """n zero-velocity states with positions uniform over free cells."""
        if n <= 0:
            raise ValueError("n must be positive")
        out = []
        spec = self.spec
        while len(out) < n:
            chunk = max(64, 2 * (n - len(out)))
            xs = rng.uniform(0.0, spec.width, size=chunk)
            ys = rng.uniform(0.0, spec.height, size=chunk)
            ok = self._feasible_many(xs, ys)
            for x, y in zip(xs[ok], ys[ok]):
                out.append(EnvState(float(x), float(y)))
                if len(out) == n:
                    break
        return out


@dataclass(frozen=True)
class SyntheticBobWorld:
    """Synthetic learner with a closed-form competence region."""
    goal: tuple[float, float] = (0.0, 0.0)
    bob_radius: float = 1.5
    bob_speed: float = 1.0
    t_max: float = 10.0
    box_half_extent: float = 4.0

    def __post_init__(self):
        if self.bob_radius < 0 or self.bob_speed <= 0 or self.t_max <= 0:
            raise ValueError("need bob_radius >= 0, bob_speed > 0, t_max > 0")


def bob_time(world: SyntheticBobWorld, s0) -> float:
    """Time for the synthetic learner to return to the goal from s0."""
    dx = float(s0[0]) - world.goal[0]
    dy = float(s0[1]) - world.goal[1]
    d = math.sqrt(dx * dx + dy * dy)
    if d <= world.bob_radius:
        return d / world.bob_speed
    return world.t_max
