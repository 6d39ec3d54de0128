"""Real-time human-in-the-loop service.

One persistent bidirectional websocket per client, JSON objects as messages.
Clients claim a human-designated vehicle with a hello message and stream
pedal messages; the simulation loop reads the latest pedal per vehicle once
per tick (last write wins), maps it to an acceleration, and streams state
frames back.  The per-tick pedal snapshot is recorded so a run can be
replayed bit-for-bit without any client.
"""

from __future__ import annotations

import asyncio
import dataclasses
import json
import logging
import time

from .config import AppConfig
from .simulate import Artifacts, ClosedLoopRunner, SimResult, prepare_artifacts

log = logging.getLogger("platoonctl.hil")


def merged_hil_config(cfg: AppConfig) -> AppConfig:
    """Substitute fitted equilibrium-curve parameters for human vehicles."""
    if not cfg.hil.human_params:
        return cfg
    hdv = list(cfg.platoon.hdv)
    for vid, params in cfg.hil.human_params.items():
        hdv[vid - 1] = params
    platoon = dataclasses.replace(cfg.platoon, hdv=tuple(hdv))
    return dataclasses.replace(cfg, platoon=platoon)


def pedal_acceleration(throttle: float, brake: float, cfg: AppConfig) -> float:
    return cfg.hil.a_max * throttle - cfg.hil.b_max * brake


class HilSession:
    """Tick loop plus client bookkeeping for one run."""

    def __init__(self, cfg: AppConfig, artifacts: Artifacts,
                 realtime: bool = True, seed: int | None = None):
        self.cfg = merged_hil_config(cfg)
        self.runner = ClosedLoopRunner(self.cfg, artifacts, seed=seed)
        self.realtime = realtime
        self.tick_hz = cfg.hil.tick_hz
        self.claims = {}          # websocket -> vehicle id
        self.latest_pedals = {}   # vehicle id -> (throttle, brake)
        self.pedal_log = []       # per tick: {vehicle id: [throttle, brake]}
        self.connections = set()
        self.overruns = []
        self.net_events = []      # claim/disconnect/overrun bookkeeping
        self.result: SimResult | None = None

    # -- client side -----------------------------------------------------

    async def handle_client(self, websocket):
        self.connections.add(websocket)
        try:
            async for raw in websocket:
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    log.warning("dropping non-JSON message")
                    continue
                kind = msg.get("type")
                if kind == "hello":
                    await self._handle_hello(websocket, msg)
                elif kind == "pedal":
                    self._handle_pedal(websocket, msg)
                else:
                    log.warning("ignoring unknown message type %r", kind)
        finally:
            self.connections.discard(websocket)
            vid = self.claims.pop(websocket, None)
            if vid is not None:
                self.latest_pedals.pop(vid, None)
                await self._broadcast_event(
                    "client-disconnected", f"vehicle {vid} reverts to car-following"
                )

    async def _handle_hello(self, websocket, msg):
        vid = int(msg.get("vehicle_id", -1))
        if vid not in self.cfg.hil.human_vehicles:
            await self._send(websocket, {
                "type": "event", "kind": "claim-rejected",
                "detail": f"vehicle {vid} is not human-designated",
            })
            return
        if vid in self.claims.values():
            await self._send(websocket, {
                "type": "event", "kind": "claim-rejected",
                "detail": f"vehicle {vid} already claimed",
            })
            return
        self.claims[websocket] = vid
        await self._send(websocket, {
            "type": "event", "kind": "claim-accepted", "detail": f"vehicle {vid}",
        })

    def _handle_pedal(self, websocket, msg):
        vid = self.claims.get(websocket)
        if vid is None or int(msg.get("vehicle_id", -1)) != vid:
            log.warning("pedal message without a matching claim; ignored")
            return
        throttle = min(max(float(msg.get("throttle", 0.0)), 0.0), 1.0)
        brake = min(max(float(msg.get("brake", 0.0)), 0.0), 1.0)
        self.latest_pedals[vid] = (throttle, brake)

    async def _send(self, websocket, obj):
        try:
            await websocket.send(json.dumps(obj))
        except Exception:
            pass

    async def _broadcast(self, obj):
        if not self.connections:
            return
        data = json.dumps(obj)
        for ws in list(self.connections):
            try:
                await ws.send(data)
            except Exception:
                pass

    async def _broadcast_event(self, kind, detail):
        log.info("event %s: %s", kind, detail)
        self.net_events.append({"kind": kind, "detail": detail, "tick": self.runner.k})
        await self._broadcast({"type": "event", "kind": kind, "detail": detail})

    # -- tick loop ---------------------------------------------------------

    async def run_loop(self) -> SimResult:
        period = 1.0 / self.tick_hz
        start = time.perf_counter()
        while not self.runner.done:
            snapshot = {vid: list(p) for vid, p in self.latest_pedals.items()}
            self.pedal_log.append(snapshot)
            overrides = {
                vid: pedal_acceleration(p[0], p[1], self.cfg)
                for vid, p in snapshot.items()
            }
            frame = self.runner.step(overrides)
            await self._broadcast(frame)
            if self.realtime:
                deadline = start + (self.runner.k) * period
                now = time.perf_counter()
                if now > deadline + 0.5 * period:
                    late_ms = 1e3 * (now - deadline)
                    self.overruns.append({"tick": self.runner.k - 1, "late_ms": late_ms})
                    await self._broadcast_event("tick-overrun", f"{late_ms:.1f} ms late")
                else:
                    await asyncio.sleep(max(deadline - now, 0.0))
            else:
                await asyncio.sleep(0)
        self.result = self.runner.finish()
        return self.result


def hil_replay(cfg: AppConfig, artifacts: Artifacts, pedal_log,
               seed: int | None = None) -> SimResult:
    """Re-run a recorded session deterministically from its pedal log."""
    cfg = merged_hil_config(cfg)

    def feed(step, vid):
        if step >= len(pedal_log):
            return None
        entry = pedal_log[step].get(vid) or pedal_log[step].get(str(vid))
        if entry is None:
            return None
        return pedal_acceleration(entry[0], entry[1], cfg)

    from .simulate import run_closed_loop

    return run_closed_loop(cfg, artifacts, seed=seed, pedal_feed=feed)


async def serve_session(cfg: AppConfig, artifacts: Artifacts, host: str, port: int,
                        realtime: bool = True, seed: int | None = None,
                        ready_event=None, start_event=None) -> HilSession:
    """Run one session to completion with a websocket endpoint attached.

    ready_event fires once the socket listens; when start_event is given the
    tick loop waits for it (lets a scripted client claim its vehicle first).
    """
    import websockets

    session = HilSession(cfg, artifacts, realtime=realtime, seed=seed)
    async with websockets.serve(session.handle_client, host, port):
        if ready_event is not None:
            ready_event.set()
        if start_event is not None:
            await start_event.wait()
        await session.run_loop()
    return session


def serve(cfg: AppConfig, host: str, port: int, tick_hz: float | None = None,
          out_dir=None) -> int:
    """CLI entry: learn artifacts, run one real-time session, persist results."""
    from .simulate import save_metrics, save_trace

    if tick_hz is not None:
        cfg = dataclasses.replace(cfg, hil=dataclasses.replace(cfg.hil, tick_hz=tick_hz))
    log.info("preparing offline artifacts")
    artifacts = prepare_artifacts(cfg)
    log.info("listening on ws://%s:%d at %.0f Hz", host, port, cfg.hil.tick_hz)
    session = asyncio.run(serve_session(cfg, artifacts, host, port))
    if out_dir is not None and session.result is not None:
        save_trace(session.result, merged_hil_config(cfg), out_dir / "trace.csv")
        save_metrics(session.result, out_dir / "metrics.json")
        with open(out_dir / "pedal_log.json", "w") as fh:
            json.dump(session.pedal_log, fh)
        log.info("session results written to %s", out_dir)
    return 0
