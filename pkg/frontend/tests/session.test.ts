import { describe, expect, it } from "vitest";
import { WebSocketServer } from "ws";
import WebSocket from "ws";
import { Session, WebSocketLike } from "../src/session.js";

function nodeFactory(url: string): WebSocketLike {
  const ws = new WebSocket(url) as unknown as WebSocketLike & WebSocket;
  return ws as WebSocketLike;
}

function startServer(onMessage: (msg: any, send: (obj: any) => void) => void) {
  const server = new WebSocketServer({ port: 0 });
  server.on("connection", (sock) => {
    const send = (obj: any) => sock.send(JSON.stringify(obj));
    sock.on("message", (raw) => onMessage(JSON.parse(String(raw)), send));
  });
  const port = (server.address() as { port: number }).port;
  return { server, url: `ws://127.0.0.1:${port}` };
}

const wait = (ms: number) => new Promise((r) => setTimeout(r, ms));

describe("session", () => {
  it("claims a vehicle and counts frames", async () => {
    const { server, url } = startServer((msg, send) => {
      if (msg.type === "hello") {
        send({ type: "event", kind: "claim-accepted", detail: `vehicle ${msg.vehicle_id}` });
        for (let tick = 0; tick < 5; tick++) {
          send({
            type: "state", t: tick / 20, tick,
            vehicles: [{ id: 0, role: "head", pos: 0, vel: 18, spacing: 0 }],
            cav: { u_sent: 0, u_received: 0 },
          });
        }
      }
    });
    const session = new Session(nodeFactory, url, 2);
    await wait(200);
    expect(session.state.status).toBe("claimed");
    expect(session.state.framesSeen).toBe(5);
    expect(session.state.latestFrame!.tick).toBe(4);
    session.close();
    server.close();
  });

  it("surfaces claim rejection", async () => {
    const { server, url } = startServer((msg, send) => {
      if (msg.type === "hello") {
        send({ type: "event", kind: "claim-rejected", detail: "not human-designated" });
      }
    });
    const session = new Session(nodeFactory, url, 1);
    await wait(200);
    expect(session.state.status).toBe("rejected");
    expect(session.state.events[0].kind).toBe("claim-rejected");
    session.close();
    server.close();
  });

  it("only sends pedals after a claim and clamps them", async () => {
    const received: any[] = [];
    const { server, url } = startServer((msg, send) => {
      if (msg.type === "hello") {
        send({ type: "event", kind: "claim-accepted", detail: "ok" });
      } else {
        received.push(msg);
      }
    });
    const session = new Session(nodeFactory, url, 2);
    session.sendPedals(1, 1); // ignored: not yet claimed
    await wait(150);
    session.sendPedals(2.0, -1.0);
    await wait(150);
    expect(received).toHaveLength(1);
    expect(received[0]).toEqual({ type: "pedal", vehicle_id: 2, throttle: 1, brake: 0 });
    session.close();
    server.close();
  });

  it("ignores unknown message types and flags staleness", async () => {
    let t = 1000;
    const { server, url } = startServer((msg, send) => {
      if (msg.type === "hello") {
        send({ type: "event", kind: "claim-accepted", detail: "ok" });
        send({ type: "wat", payload: 1 });
        send({
          type: "state", t: 0, tick: 0,
          vehicles: [{ id: 0, role: "head", pos: 0, vel: 18, spacing: 0 }],
          cav: { u_sent: 0, u_received: 0 },
        });
      }
    });
    const session = new Session(nodeFactory, url, 2, { now: () => t, tickHz: 20 });
    await wait(200);
    expect(session.state.framesSeen).toBe(1);
    expect(session.isStale()).toBe(false);
    t += 1000; // a second with no frames -> stale
    expect(session.isStale()).toBe(true);
    session.close();
    server.close();
  });

  it("reports closed when the server drops the connection", async () => {
    let serverSock: import("ws").WebSocket | null = null;
    const server = new WebSocketServer({ port: 0 });
    server.on("connection", (sock) => {
      serverSock = sock;
      sock.on("message", () =>
        sock.send(JSON.stringify({ type: "event", kind: "claim-accepted", detail: "ok" })),
      );
    });
    const port = (server.address() as { port: number }).port;
    const session = new Session(nodeFactory, `ws://127.0.0.1:${port}`, 2);
    await wait(150);
    serverSock!.terminate();
    await wait(150);
    expect(session.state.status).toBe("closed");
    session.close();
    server.close();
  });
});
