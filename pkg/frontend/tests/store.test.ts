import { describe, expect, it } from "vitest";

import { SceneStore } from "../src/store.js";
import type { StateSnapshot, VirtualObjectSnapshot } from "../src/types.js";

function vo(id: number, version: number,
            position: [number, number, number] = [0, 0, 0],
            ): VirtualObjectSnapshot {
  return { id, version, position, owner_device: 1, cell: [0, 0, 0] };
}

function snap(vos: VirtualObjectSnapshot[],
              cellsize = 1.0): StateSnapshot {
  return { planes: [], virtual_objects: vos, devices: [], cellsize };
}

describe("SceneStore", () => {
  it("adopts objects from a snapshot", () => {
    const store = new SceneStore();
    store.applySnapshot(snap([vo(1, 1), vo(2, 3)]));
    expect(store.virtualObjects().map((v) => v.id)).toEqual([1, 2]);
    expect(store.getObject(2)?.version).toBe(3);
  });

  it("never rolls an object back to an older version", () => {
    const store = new SceneStore();
    store.applySnapshot(snap([vo(1, 5, [1, 0, 1])]));
    store.applySnapshot(snap([vo(1, 3, [9, 0, 9])]));
    expect(store.getObject(1)?.version).toBe(5);
    expect(store.getObject(1)?.position).toEqual([1, 0, 1]);
  });

  it("equal-version snapshot rows replace local stubs", () => {
    const store = new SceneStore();
    store.applyLocalUpdate(vo(1, 2, [1, 0, 1]));
    const serverRow = { ...vo(1, 2, [1, 0, 1]), cell: [3, 0, 5] as const };
    store.applySnapshot(snap([{ ...serverRow, cell: [3, 0, 5] }]));
    expect(store.getObject(1)?.cell).toEqual([3, 0, 5]);
  });

  it("drops objects missing from a snapshot", () => {
    const store = new SceneStore();
    store.applySnapshot(snap([vo(1, 1), vo(2, 1)]));
    store.applySnapshot(snap([vo(2, 1)]));
    expect(store.virtualObjects().map((v) => v.id)).toEqual([2]);
  });

  it("applyLocalUpdate is itself version-monotone", () => {
    const store = new SceneStore();
    store.applyLocalUpdate(vo(1, 4, [2, 0, 2]));
    store.applyLocalUpdate(vo(1, 2, [8, 0, 8]));
    expect(store.getObject(1)?.version).toBe(4);
    expect(store.getObject(1)?.position).toEqual([2, 0, 2]);
  });

  it("notifies subscribers on changes and honours unsubscribe", () => {
    const store = new SceneStore();
    let calls = 0;
    const off = store.subscribe(() => { calls += 1; });
    store.applySnapshot(snap([vo(1, 1)]));
    expect(calls).toBe(1);
    off();
    store.applySnapshot(snap([vo(1, 2)]));
    expect(calls).toBe(1);
  });

  it("keeps objects sorted by id", () => {
    const store = new SceneStore();
    store.applySnapshot(snap([vo(9, 1), vo(2, 1), vo(5, 1)]));
    expect(store.virtualObjects().map((v) => v.id)).toEqual([2, 5, 9]);
  });
});
