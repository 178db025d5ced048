import { describe, expect, it } from "vitest";

import { SceneStore } from "../src/store.js";
import { SyncClient, type FetchFn } from "../src/sync.js";
import type { StateSnapshot } from "../src/types.js";

function jsonResponse(doc: unknown, status = 200): Response {
  return new Response(JSON.stringify(doc), {
    status,
    headers: { "content-type": "application/json" },
  });
}

function emptySnap(): StateSnapshot {
  return { planes: [], virtual_objects: [], devices: [], cellsize: 1 };
}

describe("SyncClient", () => {
  it("pollOnce folds /state into the store", async () => {
    const store = new SceneStore();
    const snap: StateSnapshot = {
      planes: [{ id: 1, label: 1, normal: [0, 1, 0], d: 0 }],
      virtual_objects: [
        { id: 7, position: [1, 0, 2], version: 3, owner_device: 4,
          cell: [0, 0, 0] },
      ],
      devices: [],
      cellsize: 0.5,
    };
    const calls: string[] = [];
    const fetchFn: FetchFn = async (url) => {
      calls.push(url);
      return jsonResponse(snap);
    };
    const client = new SyncClient(42, store, { fetchFn });
    await client.pollOnce();
    expect(calls).toEqual(["/state"]);
    expect(store.getObject(7)?.version).toBe(3);
    expect(store.cellsize).toBe(0.5);
  });

  it("register posts JSON and applies the confirmed version locally", async () => {
    const store = new SceneStore();
    const bodies: unknown[] = [];
    const fetchFn: FetchFn = async (url, init) => {
      if (url.endsWith("/interact")) {
        bodies.push(JSON.parse(String(init?.body)));
        return jsonResponse({ vo_id: 11, version: 1 });
      }
      return jsonResponse(emptySnap());
    };
    const client = new SyncClient(42, store, { fetchFn, baseUrl: "http://s" });
    const out = await client.register([1.5, 0, 3.5]);
    expect(out).toEqual({ vo_id: 11, version: 1 });
    expect(bodies).toEqual([
      { device_id: 42, op: "register", position: [1.5, 0, 3.5] },
    ]);
    expect(store.getObject(11)?.version).toBe(1);
  });

  it("manipulate includes vo_id", async () => {
    const store = new SceneStore();
    const bodies: unknown[] = [];
    const fetchFn: FetchFn = async (_url, init) => {
      bodies.push(JSON.parse(String(init?.body)));
      return jsonResponse({ vo_id: 11, version: 2 });
    };
    const client = new SyncClient(7, store, { fetchFn });
    await client.manipulate(11, [4, 0, 4]);
    expect(bodies).toEqual([
      { device_id: 7, op: "manipulate", vo_id: 11, position: [4, 0, 4] },
    ]);
    expect(store.getObject(11)?.version).toBe(2);
  });

  it("rejects on a non-2xx interaction response", async () => {
    const store = new SceneStore();
    const fetchFn: FetchFn = async () => jsonResponse({ detail: "nope" }, 409);
    const client = new SyncClient(7, store, { fetchFn });
    await expect(client.manipulate(99, [0, 0, 0])).rejects.toThrow("409");
  });

  it("polls on the configured interval until stopped", async () => {
    const store = new SceneStore();
    let polls = 0;
    const fetchFn: FetchFn = async () => {
      polls += 1;
      return jsonResponse(emptySnap());
    };
    const pending: Array<() => void> = [];
    const client = new SyncClient(1, store, {
      fetchFn,
      intervalMs: 250,
      setTimer: (fn) => {
        pending.push(fn);
        return pending.length;
      },
      clearTimer: () => undefined,
    });
    client.start();
    await new Promise((r) => setTimeout(r, 0));
    // drain whatever ticks were scheduled, simulating elapsed intervals
    for (let i = 0; i < 3; i += 1) {
      const fn = pending.shift();
      expect(fn).toBeDefined();
      fn!();
      await new Promise((r) => setTimeout(r, 0));
    }
    expect(polls).toBe(4);
    client.stop();
    // a timer scheduled before stop() must not poll after it fires
    pending.shift()?.();
    await new Promise((r) => setTimeout(r, 0));
    expect(polls).toBe(4);
  });

  it("keeps polling after a failed poll and reports the error", async () => {
    const store = new SceneStore();
    let polls = 0;
    const errors: unknown[] = [];
    const fetchFn: FetchFn = async () => {
      polls += 1;
      if (polls === 1) throw new Error("offline");
      return jsonResponse(emptySnap());
    };
    const pending: Array<() => void> = [];
    const client = new SyncClient(1, store, {
      fetchFn,
      onError: (e) => errors.push(e),
      setTimer: (fn) => {
        pending.push(fn);
        return 0;
      },
      clearTimer: () => undefined,
    });
    client.start();
    await new Promise((r) => setTimeout(r, 0));
    expect(errors).toHaveLength(1);
    pending.shift()!();
    await new Promise((r) => setTimeout(r, 0));
    expect(polls).toBe(2);
    client.stop();
  });
});
