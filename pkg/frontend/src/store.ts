import type {
  DeviceSnapshot,
  PlaneSnapshot,
  StateSnapshot,
  VirtualObjectSnapshot,
} from "./types.js";

export type Listener = () => void;

/**
 * Client-side mirror of the server scene, independent of the DOM.
 *
 * Virtual objects merge version-monotonically: a polled snapshot never
 * rolls an object back past a version we already hold (e.g. when our own
 * POST /interact response lands between two /state polls).
 */
export class SceneStore {
  private vos = new Map<number, VirtualObjectSnapshot>();
  private planesById = new Map<number, PlaneSnapshot>();
  private devicesById = new Map<number, DeviceSnapshot>();
  private listeners = new Set<Listener>();
  cellsize = 1.0;

  applySnapshot(snap: StateSnapshot): void {
    let changed = false;

    const seen = new Set<number>();
    for (const vo of snap.virtual_objects) {
      seen.add(vo.id);
      const cur = this.vos.get(vo.id);
      // >= so equal-version server rows replace locally synthesized stubs
      if (cur === undefined || vo.version >= cur.version) {
        this.vos.set(vo.id, vo);
        changed = true;
      }
    }
    for (const id of this.vos.keys()) {
      if (!seen.has(id)) {
        this.vos.delete(id);
        changed = true;
      }
    }

    this.planesById = new Map(snap.planes.map((p) => [p.id, p]));
    this.devicesById = new Map(snap.devices.map((d) => [d.device_id, d]));
    if (snap.cellsize !== this.cellsize) {
      this.cellsize = snap.cellsize;
      changed = true;
    }

    if (changed || snap.planes.length || snap.devices.length) {
      this.emit();
    }
  }

  /** Record a locally confirmed interaction before the next poll shows it. */
  applyLocalUpdate(vo: VirtualObjectSnapshot): void {
    const cur = this.vos.get(vo.id);
    if (cur === undefined || vo.version > cur.version) {
      this.vos.set(vo.id, vo);
      this.emit();
    }
  }

  virtualObjects(): VirtualObjectSnapshot[] {
    return [...this.vos.values()].sort((a, b) => a.id - b.id);
  }

  getObject(id: number): VirtualObjectSnapshot | undefined {
    return this.vos.get(id);
  }

  planes(): PlaneSnapshot[] {
    return [...this.planesById.values()];
  }

  devices(): DeviceSnapshot[] {
    return [...this.devicesById.values()];
  }

  subscribe(fn: Listener): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }
}
