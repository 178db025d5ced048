import type { SceneStore } from "./store.js";
import type { Vec3, VirtualObjectSnapshot } from "./types.js";

export interface Transform {
  /** world metres per screen pixel */
  scale: number;
  /** world X at the canvas centre */
  centerX: number;
  /** world Z at the canvas centre */
  centerZ: number;
}

export interface ScreenPoint {
  x: number;
  y: number;
}

/** Top-down floor view: world X goes right, world Z goes up the screen. */
export function worldToScreen(t: Transform, wx: number, wz: number,
                              width: number, height: number): ScreenPoint {
  return {
    x: width / 2 + (wx - t.centerX) / t.scale,
    y: height / 2 - (wz - t.centerZ) / t.scale,
  };
}

export function screenToWorld(t: Transform, sx: number, sy: number,
                              width: number, height: number,
                              ): { x: number; z: number } {
  return {
    x: t.centerX + (sx - width / 2) * t.scale,
    z: t.centerZ - (sy - height / 2) * t.scale,
  };
}

export function zoomAt(t: Transform, sx: number, sy: number, factor: number,
                       width: number, height: number): Transform {
  const anchor = screenToWorld(t, sx, sy, width, height);
  const scale = Math.min(1.0, Math.max(0.001, t.scale * factor));
  // keep the world point under the cursor fixed on screen
  return {
    scale,
    centerX: anchor.x - (sx - width / 2) * scale,
    centerZ: anchor.z + (sy - height / 2) * scale,
  };
}

export function panBy(t: Transform, dxPx: number, dyPx: number): Transform {
  return {
    scale: t.scale,
    centerX: t.centerX - dxPx * t.scale,
    centerZ: t.centerZ + dyPx * t.scale,
  };
}

const HIT_RADIUS_PX = 12;

export function hitTestObject(store: SceneStore, t: Transform,
                              sx: number, sy: number,
                              width: number, height: number,
                              ): VirtualObjectSnapshot | null {
  let best: VirtualObjectSnapshot | null = null;
  let bestD2 = HIT_RADIUS_PX * HIT_RADIUS_PX;
  for (const vo of store.virtualObjects()) {
    const p = worldToScreen(t, vo.position[0], vo.position[2], width, height);
    const d2 = (p.x - sx) ** 2 + (p.y - sy) ** 2;
    if (d2 <= bestD2) {
      best = vo;
      bestD2 = d2;
    }
  }
  return best;
}

export interface ViewCallbacks {
  onRegister: (position: Vec3) => void;
  onManipulate: (voId: number, position: Vec3) => void;
}

/**
 * Canvas renderer plus mouse handling.
 *
 * Click on empty floor registers a new object at (x, 0, z); dragging an
 * existing object fires a manipulation with its new floor position. Wheel
 * zooms about the cursor; dragging empty space pans.
 */
export class FloorView {
  transform: Transform = { scale: 0.02, centerX: 1.5, centerZ: 5.0 };
  private drag: null | {
    startX: number; startY: number;
    lastX: number; lastY: number;
    target: VirtualObjectSnapshot | null;
    moved: boolean;
  } = null;

  constructor(private canvas: HTMLCanvasElement,
              private store: SceneStore,
              private callbacks: ViewCallbacks) {
    canvas.addEventListener("mousedown", (e) => this.onMouseDown(e));
    canvas.addEventListener("mousemove", (e) => this.onMouseMove(e));
    canvas.addEventListener("mouseup", (e) => this.onMouseUp(e));
    canvas.addEventListener("wheel", (e) => this.onWheel(e), {
      passive: false,
    });
    store.subscribe(() => this.render());
  }

  render(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width, height } = this.canvas;
    ctx.fillStyle = "#141820";
    ctx.fillRect(0, 0, width, height);

    this.drawGrid(ctx, width, height);

    ctx.font = "11px monospace";
    for (const dev of this.store.devices()) {
      const p = worldToScreen(this.transform, dev.position[0],
                              dev.position[2], width, height);
      const tip = worldToScreen(this.transform,
                                dev.position[0] + dev.forward[0],
                                dev.position[2] + dev.forward[2],
                                width, height);
      ctx.strokeStyle = "#4f8fd0";
      ctx.beginPath();
      ctx.moveTo(p.x, p.y);
      ctx.lineTo(tip.x, tip.y);
      ctx.stroke();
      ctx.fillStyle = "#4f8fd0";
      ctx.beginPath();
      ctx.arc(p.x, p.y, 5, 0, 2 * Math.PI);
      ctx.fill();
      ctx.fillText(`dev ${dev.device_id}`, p.x + 8, p.y - 8);
    }

    for (const vo of this.store.virtualObjects()) {
      if (vo.line) {
        const a = worldToScreen(this.transform, vo.line.start[0],
                                vo.line.start[2], width, height);
        const b = worldToScreen(this.transform, vo.line.end[0],
                                vo.line.end[2], width, height);
        const [r, g, bl] = vo.line.rgb;
        ctx.strokeStyle = `rgb(${r},${g},${bl})`;
        ctx.lineWidth = 2;
        ctx.beginPath();
        ctx.moveTo(a.x, a.y);
        ctx.lineTo(b.x, b.y);
        ctx.stroke();
        ctx.lineWidth = 1;
        continue;
      }
      const p = worldToScreen(this.transform, vo.position[0],
                              vo.position[2], width, height);
      ctx.fillStyle = "#e0b040";
      ctx.beginPath();
      ctx.arc(p.x, p.y, 7, 0, 2 * Math.PI);
      ctx.fill();
      ctx.fillStyle = "#cfd5de";
      ctx.fillText(`#${vo.id} v${vo.version}`, p.x + 9, p.y + 4);
    }
  }

  private drawGrid(ctx: CanvasRenderingContext2D, width: number,
                   height: number): void {
    const cell = this.store.cellsize;
    const t = this.transform;
    const topLeft = screenToWorld(t, 0, 0, width, height);
    const bottomRight = screenToWorld(t, width, height, width, height);
    ctx.strokeStyle = "#232a36";
    const x0 = Math.floor(topLeft.x / cell) * cell;
    for (let x = x0; x <= bottomRight.x; x += cell) {
      const p = worldToScreen(t, x, 0, width, height);
      ctx.beginPath();
      ctx.moveTo(p.x, 0);
      ctx.lineTo(p.x, height);
      ctx.stroke();
    }
    const z0 = Math.floor(bottomRight.z / cell) * cell;
    for (let z = z0; z <= topLeft.z; z += cell) {
      const p = worldToScreen(t, 0, z, width, height);
      ctx.beginPath();
      ctx.moveTo(0, p.y);
      ctx.lineTo(width, p.y);
      ctx.stroke();
    }
  }

  private canvasXY(e: MouseEvent): ScreenPoint {
    const rect = this.canvas.getBoundingClientRect();
    return { x: e.clientX - rect.left, y: e.clientY - rect.top };
  }

  private onMouseDown(e: MouseEvent): void {
    const { x, y } = this.canvasXY(e);
    const target = hitTestObject(this.store, this.transform, x, y,
                                 this.canvas.width, this.canvas.height);
    this.drag = { startX: x, startY: y, lastX: x, lastY: y, target,
                  moved: false };
  }

  private onMouseMove(e: MouseEvent): void {
    if (!this.drag) return;
    const { x, y } = this.canvasXY(e);
    const dx = x - this.drag.lastX;
    const dy = y - this.drag.lastY;
    if (Math.abs(x - this.drag.startX) + Math.abs(y - this.drag.startY) > 3) {
      this.drag.moved = true;
    }
    if (this.drag.target === null && this.drag.moved) {
      this.transform = panBy(this.transform, dx, dy);
      this.render();
    }
    this.drag.lastX = x;
    this.drag.lastY = y;
  }

  private onMouseUp(e: MouseEvent): void {
    if (!this.drag) return;
    const drag = this.drag;
    this.drag = null;
    const { x, y } = this.canvasXY(e);
    const w = screenToWorld(this.transform, x, y,
                            this.canvas.width, this.canvas.height);
    if (drag.target !== null && drag.moved) {
      this.callbacks.onManipulate(drag.target.id, [w.x, 0, w.z]);
    } else if (drag.target === null && !drag.moved) {
      this.callbacks.onRegister([w.x, 0, w.z]);
    }
  }

  private onWheel(e: WheelEvent): void {
    e.preventDefault();
    const { x, y } = this.canvasXY(e);
    const factor = e.deltaY > 0 ? 1.15 : 1 / 1.15;
    this.transform = zoomAt(this.transform, x, y, factor,
                            this.canvas.width, this.canvas.height);
    this.render();
  }
}
