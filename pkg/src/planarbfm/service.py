"""Live steering service: one WebSocket client drives the trained BFM.

The control loop owns every piece of mutable state and runs at the control
rate (50 Hz for the default embodiment).  Incoming commands land on a queue
and are drained once at the top of each control step, so a state broadcast
reflects every command received before that step and none after.  State
frames are throttled (≤ 30 Hz) and droppable — a slow client loses frames,
never commands, and never stalls the loop.  Malformed frames produce an
``error`` reply and the session continues.  Client disconnect pauses the
environment; a later client finds it where it left off.

Steering semantics per step:

- goal source is the active clip's next reference frame while tracking
  (cyclic clips re-anchor root x on wrap), or the client-set goal vector;
- the latent is ``modulate(history, goal, mask, λ)`` — λ = 0 is exactly the
  prior mean — unless composition is enabled, in which case the two saved
  goal/mask endpoints are both evaluated against the live state and
  interpolated with coefficient α;
- the decoder's mean action steps nominal dynamics (no randomization).
"""

from __future__ import annotations

import asyncio
import contextlib
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .control import (
    GOAL_DIM,
    MASK_DIM,
    ProprioHistory,
    apply_mask,
    build_goal_from_reference,
    preset_mask,
    real_proprio,
)
from .cvae import BfmModel
from .embodiment import EmbodimentSpec, default_embodiment
from .latent import compose, modulate
from .motions import MotionClip, generate_stand
from .protocol import (
    ErrorMsg,
    GoalSpec,
    Hello,
    HelloReply,
    Pause,
    ProtocolError,
    RefGhost,
    Reset,
    Resume,
    SetComposition,
    SetGoal,
    SetMask,
    SetMode,
    SetModulation,
    StateMsg,
    parse_client_message,
)
from .sim import DomainBatch, batch_kinematics, kinematics, reset_batch_from_poses, step_batch

__all__ = ["SteeringSession", "create_app"]


@dataclass
class _Composition:
    alpha: float
    a: tuple[np.ndarray, np.ndarray]   # (goal, mask)
    b: tuple[np.ndarray, np.ndarray]


class SteeringSession:
    """Synchronous steering state machine; the async layer is plumbing only."""

    def __init__(
        self,
        model: BfmModel,
        clips: dict[str, MotionClip] | None = None,
        spec: EmbodimentSpec | None = None,
        seed: int = 0,
    ):
        self.model = model
        self.spec = spec or default_embodiment()
        self.clips = dict(clips or {})
        self.seed = seed
        self.dom = DomainBatch.nominal(self.spec, 1)
        self.paused = False
        self.lam = 0.0
        self.composition: _Composition | None = None
        self.mask = preset_mask("LOCO")          # stand still until steered
        self.manual_goal = np.zeros(GOAL_DIM)
        self.tracking_clip: str | None = None
        self.frame = 0
        self._loop_offset = 0.0                  # root-x re-anchor on clip wrap
        self.z_norm = 0.0
        self.steps = 0
        self._reset_to_stand()

    # -- resets ------------------------------------------------------------
    def _reset_to_stand(self) -> None:
        clip = self.clips.get("stand") or generate_stand(spec=self.spec)
        self.batch = reset_batch_from_poses(
            clip.frames[0][None], clip.frame_velocities[0][None], self.spec
        )
        self.history = ProprioHistory(1)
        self.history.reset(real_proprio(self.batch))
        self.tracking_clip = None
        self.frame = 0
        self._loop_offset = 0.0

    def _reset_to_clip(self, name: str) -> None:
        clip = self.clips[name]
        self.batch = reset_batch_from_poses(
            clip.frames[0][None], clip.frame_velocities[0][None], self.spec
        )
        self.history = ProprioHistory(1)
        self.history.reset(real_proprio(self.batch))
        self.tracking_clip = name
        self.frame = 0
        self._loop_offset = 0.0

    # -- command application ------------------------------------------------
    def apply(self, msg) -> object | None:
        """Apply one parsed client message; returns a reply or None."""
        if isinstance(msg, Hello):
            return HelloReply(
                clips=sorted(self.clips),
                control_hz=1.0 / self.spec.control_dt,
                state_hz=min(30.0, 1.0 / self.spec.control_dt),
            )
        if isinstance(msg, Reset):
            if msg.clip is None:
                self._reset_to_stand()
            elif msg.clip in self.clips:
                self._reset_to_clip(msg.clip)
            else:
                return ErrorMsg(
                    code="unknown_clip",
                    message=f"no clip named {msg.clip!r}; known: {sorted(self.clips)}",
                )
            return None
        if isinstance(msg, SetMask):
            self.mask = np.asarray(msg.mask, dtype=float)
            return None
        if isinstance(msg, SetGoal):
            self.manual_goal = np.asarray(msg.goal, dtype=float)
            self.tracking_clip = None        # explicit goal takes over
            return None
        if isinstance(msg, SetMode):
            self.mask = preset_mask(msg.mode)
            return None
        if isinstance(msg, SetModulation):
            self.lam = float(msg.lam)
            return None
        if isinstance(msg, SetComposition):
            if not msg.enabled:
                self.composition = None
            else:
                def pair(spec_: GoalSpec) -> tuple[np.ndarray, np.ndarray]:
                    return (np.asarray(spec_.goal, dtype=float),
                            np.asarray(spec_.mask, dtype=float))
                self.composition = _Composition(msg.alpha, pair(msg.a), pair(msg.b))
            return None
        if isinstance(msg, Pause):
            self.paused = True
            return None
        if isinstance(msg, Resume):
            self.paused = False
            return None
        raise ProtocolError("unknown_type", f"unhandled message {type(msg).__name__}")

    # -- stepping ----------------------------------------------------------
    def _reference(self) -> tuple[np.ndarray, np.ndarray, object] | None:
        if self.tracking_clip is None:
            return None
        clip = self.clips[self.tracking_clip]
        nxt = self.frame + 1
        if nxt >= len(clip.frames):              # wrap, re-anchoring root x
            self._loop_offset += clip.frames[-1][0] - clip.frames[0][0]
            self.frame = 0
            nxt = 1
        pose = clip.frames[nxt].copy()[None]
        vel = clip.frame_velocities[nxt][None]
        pose[0, 0] += self._loop_offset
        ref_kin = kinematics(self.spec, pose[:, 0:2], pose[:, 2], pose[:, 3:9])
        return pose, vel, ref_kin

    def current_goal(self) -> np.ndarray:
        ref = self._reference()
        if ref is None:
            return self.manual_goal[None].copy()
        pose, vel, ref_kin = ref
        return build_goal_from_reference(self.spec, self.batch, pose, vel, ref_kin)

    def control_step(self) -> None:
        if self.paused:
            return
        history = self.history.flat()
        goal = self.current_goal()
        if self.composition is not None:
            c = self.composition
            z_a = self.model.prior(history, apply_mask(c.a[0][None], c.a[1][None])).mean
            z_b = self.model.prior(history, apply_mask(c.b[0][None], c.b[1][None])).mean
            z = compose(z_a, z_b, c.alpha)
        else:
            z = modulate(self.model, history, goal, self.mask[None], self.lam)
        self.z_norm = float(np.linalg.norm(z))
        action = self.model.decode(history, z)
        self.batch = step_batch(self.batch, action, self.dom, self.spec)
        self.history.push(real_proprio(self.batch))
        if self.tracking_clip is not None:
            self.frame += 1
        self.steps += 1

    # -- reporting ---------------------------------------------------------
    def state_message(self) -> StateMsg:
        kin = batch_kinematics(self.batch, self.spec)
        ref = self._reference()
        ghost = None
        if ref is not None:
            pose, _, ref_kin = ref
            ghost = RefGhost(
                base=[float(pose[0, 0]), float(pose[0, 1]), float(pose[0, 2])],
                keypoints=[[float(x), float(z)] for x, z in ref_kin.keypoints[0]],
            )
        return StateMsg(
            t=float(self.batch.time[0]),
            base=[float(self.batch.base_pos[0, 0]), float(self.batch.base_pos[0, 1]),
                  float(self.batch.base_pitch[0])],
            q=[float(v) for v in self.batch.q[0]],
            dq=[float(v) for v in self.batch.dq[0]],
            keypoints=[[float(x), float(z)] for x, z in kin.keypoints[0]],
            mask=[float(v) for v in self.mask],
            z_norm=self.z_norm,
            paused=self.paused,
            ref=ghost,
        )


def create_app(
    model: BfmModel,
    clips: dict[str, MotionClip] | None = None,
    spec: EmbodimentSpec | None = None,
    seed: int = 0,
    realtime: bool = True,
) -> FastAPI:
    """Build the FastAPI app hosting one steering session at /ws."""
    spec = spec or default_embodiment()
    session = SteeringSession(model, clips, spec, seed)
    app = FastAPI(title="planarbfm steering service")
    app.state.session = session
    app.state.connected = False

    control_dt = spec.control_dt
    # Broadcast every k-th step so the state rate stays at or below 30 Hz.
    broadcast_every = max(1, int(np.ceil((1.0 / control_dt) / 30.0)))

    @app.get("/schema")
    def schema() -> dict:
        from .protocol import protocol_schema

        return protocol_schema()

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket) -> None:
        await websocket.accept()
        if app.state.connected:
            await websocket.send_text(
                ErrorMsg(code="busy", message="another client is connected").model_dump_json()
            )
            await websocket.close()
            return
        app.state.connected = True

        inbox: asyncio.Queue[str] = asyncio.Queue()
        outbox: asyncio.Queue[str] = asyncio.Queue()   # reliable: replies/errors
        latest_state: list[str | None] = [None]        # droppable slot
        wakeup = asyncio.Event()

        async def reader() -> None:
            while True:
                inbox.put_nowait(await websocket.receive_text())

        async def sender() -> None:
            while True:
                await wakeup.wait()
                wakeup.clear()
                while not outbox.empty():
                    await websocket.send_text(outbox.get_nowait())
                if latest_state[0] is not None:
                    frame, latest_state[0] = latest_state[0], None
                    await websocket.send_text(frame)

        reader_task = asyncio.create_task(reader())
        sender_task = asyncio.create_task(sender())
        loop = asyncio.get_running_loop()
        ticks = 0
        try:
            while not reader_task.done() and not sender_task.done():
                deadline = loop.time() + control_dt
                while not inbox.empty():
                    text = inbox.get_nowait()
                    try:
                        reply = session.apply(parse_client_message(text))
                    except ProtocolError as e:
                        reply = ErrorMsg(code=e.code, message=e.message)
                    if reply is not None:
                        outbox.put_nowait(reply.model_dump_json())
                        wakeup.set()

                session.control_step()
                ticks += 1
                if ticks % broadcast_every == 0:
                    latest_state[0] = session.state_message().model_dump_json()
                    wakeup.set()

                if realtime:
                    await asyncio.sleep(max(0.0, deadline - loop.time()))
                else:
                    await asyncio.sleep(0)
        except WebSocketDisconnect:
            pass
        finally:
            session.paused = True
            for task in (reader_task, sender_task):
                task.cancel()
                with contextlib.suppress(asyncio.CancelledError, WebSocketDisconnect, Exception):
                    await task
            app.state.connected = False

    return app
