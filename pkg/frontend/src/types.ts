/** JSON shapes served by the edge server's /state and /metrics endpoints. */

export type Vec3 = [number, number, number];

export interface LineSnapshot {
  start: Vec3;
  end: Vec3;
  rgb: [number, number, number];
  width: number;
  normal: Vec3;
}

export interface VirtualObjectSnapshot {
  id: number;
  position: Vec3;
  version: number;
  owner_device: number;
  cell: [number, number, number];
  line?: LineSnapshot;
}

export interface PlaneSnapshot {
  id: number;
  label: number;
  normal: Vec3;
  d: number;
}

export interface DeviceSnapshot {
  device_id: number;
  position: Vec3;
  forward: Vec3;
}

export interface StateSnapshot {
  planes: PlaneSnapshot[];
  virtual_objects: VirtualObjectSnapshot[];
  devices: DeviceSnapshot[];
  cellsize: number;
}

export interface InteractionRequest {
  device_id: number;
  op: "register" | "manipulate";
  position: Vec3;
  vo_id?: number;
  line?: {
    start: Vec3;
    end: Vec3;
    rgb?: [number, number, number];
    width?: number;
    normal?: Vec3;
  };
}

export interface InteractionResponse {
  vo_id: number;
  version: number;
}
