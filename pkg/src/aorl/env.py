"""Episodic reset/step environment: frozen screen + mirror + focal detector.

Each episode starts from a neutral (flat) mirror in front of one static
turbulence screen.  Actions are absolute actuator positions (the state is
Markov in the screen: the same action on the same screen always produces
the same result, regardless of history).  The observation is the 4-value
quadrant-detector reading; the reward is the Strehl ratio of the corrected
beam.  Agents see only observation and reward; ground-truth diagnostics
ride along in ``StepResult.info`` for logging and tests.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import dm as dm_mod
from . import sensing
from .dm import ActuatorCommand, DMConfig, clamp_command, zero_command
from .optics import (ConfigurationError, OpticalConfig, apply_phase,
                     circular_aperture, power_map, propagate_to_focus)
from .turbulence import PhaseScreen, TurbulenceConfig, derive_seed, generate_screen

STANDARD_EPISODE_LENGTHS = (30, 50, 100)

SCREEN_FIXED = "fixed_per_run"
SCREEN_RESAMPLE = "resample_per_episode"


class ProtocolError(RuntimeError):
    """Environment API used out of order (e.g. step after done)."""


@dataclass(frozen=True)
class EnvConfig:
    """Everything needed to reproduce an environment run bit-for-bit."""

    turbulence: TurbulenceConfig
    optics: OpticalConfig = field(default_factory=OpticalConfig)
    dm: DMConfig = field(default_factory=DMConfig)
    episode_length: int = 30
    screen_mode: str = SCREEN_RESAMPLE
    seed: int = 0
    reward_mode: str = "direct"
    allow_custom_length: bool = False

    def __post_init__(self):
        if self.episode_length not in STANDARD_EPISODE_LENGTHS and not self.allow_custom_length:
            raise ConfigurationError(
                f"episode_length {self.episode_length} is not one of "
                f"{STANDARD_EPISODE_LENGTHS}; set allow_custom_length to override")
        if self.episode_length < 1:
            raise ConfigurationError("episode_length must be positive")
        if self.screen_mode not in (SCREEN_FIXED, SCREEN_RESAMPLE):
            raise ConfigurationError(f"unknown screen_mode: {self.screen_mode!r}")
        if self.reward_mode not in ("direct", "mahajan"):
            raise ConfigurationError(f"unknown reward_mode: {self.reward_mode!r}")


@dataclass
class EnvState:
    """Mutable per-episode state owned by the environment."""

    screen: PhaseScreen
    command: ActuatorCommand
    step_index: int
    episode_index: int
    residual: PhaseScreen  # cached screen + mirror phase


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


class AdaptiveOpticsEnv:
    """Quasi-static wavefront-sensorless adaptive optics environment."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        optics = cfg.optics
        self.grid = optics.pupil_sampling
        self.aperture = circular_aperture(self.grid, optics.aperture_diameter)
        self.mask = np.abs(self.aperture.amplitude) > 0
        ideal_focal = propagate_to_focus(self.aperture, optics)
        ideal_power = power_map(ideal_focal)
        n = optics.focal_sampling.n_samples
        self.ideal_peak = float(ideal_power[n // 2, n // 2])
        self.reference_total = float(ideal_power.sum() * optics.focal_sampling.cell_area)
        self._screen_cache: dict[int, PhaseScreen] = {}

    # -- screens ---------------------------------------------------------

    def screen_seed(self, episode_index: int) -> int:
        if self.cfg.screen_mode == SCREEN_FIXED:
            return self.cfg.seed
        return derive_seed(self.cfg.seed, episode_index)

    def screen_for_episode(self, episode_index: int) -> PhaseScreen:
        seed = self.screen_seed(episode_index)
        screen = self._screen_cache.get(seed)
        if screen is None:
            tcfg = TurbulenceConfig(self.cfg.turbulence.fried_parameter,
                                    self.cfg.turbulence.outer_scale, seed)
            screen = generate_screen(self.grid, tcfg,
                                     aperture_diameter=self.cfg.optics.aperture_diameter)
            if len(self._screen_cache) > 8:
                self._screen_cache.clear()
            self._screen_cache[seed] = screen
        return screen

    # -- core optics -----------------------------------------------------

    def _residual(self, screen: PhaseScreen, command: ActuatorCommand) -> PhaseScreen:
        surface = dm_mod.surface_from_command(command, self.cfg.dm, self.grid)
        mirror_phase = dm_mod.phase_from_surface(surface, self.cfg.optics.wavelength,
                                                 self.grid)
        return screen + mirror_phase

    def _sense(self, residual: PhaseScreen):
        focal = propagate_to_focus(apply_phase(self.aperture, residual.values),
                                   self.cfg.optics)
        fp = power_map(focal)
        obs = sensing.quadrant_observation(fp, self.cfg.optics.focal_sampling,
                                           self.reference_total)
        direct = sensing.strehl_direct(fp, self.ideal_peak)
        mahajan = sensing.strehl_mahajan(residual, self.mask)
        return obs, fp, direct, mahajan

    def reward(self, state: EnvState) -> float:
        """Strehl reward of the current residual (see sensing.reward)."""
        _, fp, direct, mahajan = self._sense(state.residual)
        return direct if self.cfg.reward_mode == "direct" else mahajan

    # -- episode API -------------------------------------------------------

    def reset(self, episode_index: int = 0) -> tuple[EnvState, np.ndarray]:
        """Start an episode with a flat mirror; returns the uncorrected view."""
        screen = self.screen_for_episode(episode_index)
        command = zero_command()
        residual = self._residual(screen, command)
        state = EnvState(screen=screen, command=command, step_index=0,
                         episode_index=episode_index, residual=residual)
        obs, _, direct, mahajan = self._sense(residual)
        self._last_reset_info = {
            "strehl_direct": direct,
            "strehl_mahajan": mahajan,
            "reward": direct if self.cfg.reward_mode == "direct" else mahajan,
            "residual_rms": float(np.std(residual.values[self.mask])),
        }
        return state, obs

    def step(self, state: EnvState, action: np.ndarray) -> StepResult:
        """Apply an absolute actuator command and observe the result."""
        if state.step_index >= self.cfg.episode_length:
            raise ProtocolError("episode is finished; call reset")
        state.command = clamp_command(np.asarray(action, dtype=float))
        state.residual = self._residual(state.screen, state.command)
        obs, fp, direct, mahajan = self._sense(state.residual)
        reward_value = direct if self.cfg.reward_mode == "direct" else mahajan
        state.step_index += 1
        done = state.step_index >= self.cfg.episode_length
        info = {
            "strehl_direct": direct,
            "strehl_mahajan": mahajan,
            "residual_rms": float(np.std(state.residual.values[self.mask])),
            "command_clipped_nan": state.command.had_nan,
        }
        return StepResult(observation=obs, reward=reward_value, done=done, info=info)


TRAJECTORY_COLUMNS = ["run_id", "trial", "episode", "step", "reward",
                      "strehl_direct", "q1", "q2", "q3", "q4", "action_l2"]


class TrajectoryLogger:
    """CSV log of every environment step, one frozen row schema.

    Columns: run_id, trial, episode, step, reward, strehl_direct,
    q1..q4 (quadrant observation after the step), action_l2 (Euclidean
    norm of the commanded action).
    """

    def __init__(self, path):
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(TRAJECTORY_COLUMNS)

    def log(self, run_id: str, trial: int, episode: int, step: int,
            result: StepResult, action: np.ndarray) -> None:
        self._writer.writerow([
            run_id, trial, episode, step,
            f"{result.reward:.12g}", f"{result.info['strehl_direct']:.12g}",
            *(f"{q:.12g}" for q in result.observation),
            f"{float(np.linalg.norm(action)):.12g}",
        ])

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
