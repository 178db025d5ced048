import { spawn, type ChildProcess } from "node:child_process";
import { createServer } from "node:net";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { SceneStore } from "../src/store.js";
import { SyncClient } from "../src/sync.js";

async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.once("error", reject);
    srv.listen(0, "127.0.0.1", () => {
      const addr = srv.address();
      if (addr === null || typeof addr === "string") {
        reject(new Error("no port"));
        return;
      }
      srv.close(() => resolve(addr.port));
    });
  });
}

async function waitForServer(base: string, timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const res = await fetch(`${base}/metrics`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("server did not come up");
    await new Promise((r) => setTimeout(r, 200));
  }
}

async function until(cond: () => boolean, timeoutMs = 10_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!cond()) {
    if (Date.now() > deadline) throw new Error("condition not met in time");
    await new Promise((r) => setTimeout(r, 50));
  }
}

describe("two browsers against a live edge server", () => {
  let proc: ChildProcess;
  let base: string;

  beforeAll(async () => {
    const port = await freePort();
    base = `http://127.0.0.1:${port}`;
    proc = spawn("python3", [
      "-c",
      "from ecar.cli import serve_main; import sys; sys.exit(serve_main())",
      "--port", String(port), "--demo-scene",
    ], { stdio: ["ignore", "inherit", "inherit"] });
    await waitForServer(base);
  }, 60_000);

  afterAll(() => {
    proc?.kill("SIGTERM");
  });

  it("a registration on one client converges on the other", async () => {
    const storeA = new SceneStore();
    const storeB = new SceneStore();
    const a = new SyncClient(1001, storeA, { baseUrl: base, intervalMs: 100 });
    const b = new SyncClient(1002, storeB, { baseUrl: base, intervalMs: 100 });
    a.start();
    b.start();
    try {
      const reg = await a.register([1.4, 0, 3.5]);
      expect(reg.version).toBe(1);
      await until(() => storeB.getObject(reg.vo_id) !== undefined);
      const seen = storeB.getObject(reg.vo_id)!;
      expect(seen.position[0]).toBeCloseTo(1.4, 5);
      expect(seen.position[2]).toBeCloseTo(3.5, 5);

      const man = await b.manipulate(reg.vo_id, [2.0, 0, 6.0]);
      expect(man.version).toBe(2);
      await until(() => (storeA.getObject(reg.vo_id)?.version ?? 0) >= 2);
      expect(storeA.getObject(reg.vo_id)!.position[2]).toBeCloseTo(6.0, 5);
    } finally {
      a.stop();
      b.stop();
    }
  }, 30_000);

  it("a drawn line round-trips with its endpoints", async () => {
    const store = new SceneStore();
    const client = new SyncClient(1003, store, { baseUrl: base });
    const reg = await client.register([0.5, 0, 2.0], {
      start: [0.4, 0, 1.9],
      end: [0.6, 0, 2.1],
      rgb: [10, 200, 30],
      width: 0.05,
    });
    await client.pollOnce();
    const vo = store.getObject(reg.vo_id);
    expect(vo?.line).toBeDefined();
    expect(vo!.line!.start[0]).toBeCloseTo(0.4, 5);
    expect(vo!.line!.end[2]).toBeCloseTo(2.1, 5);
    expect(vo!.line!.rgb).toEqual([10, 200, 30]);
  }, 30_000);

  it("rejects a manipulation of a missing object", async () => {
    const store = new SceneStore();
    const client = new SyncClient(1004, store, { baseUrl: base });
    await expect(client.manipulate(999_999, [0, 0, 0]))
      .rejects.toThrow("409");
  }, 30_000);
});
