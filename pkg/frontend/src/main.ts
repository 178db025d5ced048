import { SceneStore } from "./store.js";
import { SyncClient } from "./sync.js";
import { FloorView } from "./view.js";

function randomDeviceId(): number {
  // browser clients park in the high id range, clear of simulated devices
  return 1000 + Math.floor(Math.random() * 9000);
}

function main(): void {
  const canvas = document.getElementById("floor") as HTMLCanvasElement | null;
  const status = document.getElementById("status");
  if (!canvas) throw new Error("missing #floor canvas");

  const store = new SceneStore();
  const client = new SyncClient(randomDeviceId(), store, {
    onError: (err) => {
      if (status) status.textContent = `sync error: ${String(err)}`;
    },
  });

  const view = new FloorView(canvas, store, {
    onRegister: (position) => {
      client.register(position).catch((err) => {
        if (status) status.textContent = `register failed: ${String(err)}`;
      });
    },
    onManipulate: (voId, position) => {
      client.manipulate(voId, position).catch((err) => {
        if (status) status.textContent = `manipulate failed: ${String(err)}`;
      });
    },
  });

  store.subscribe(() => {
    if (status) {
      const n = store.virtualObjects().length;
      const d = store.devices().length;
      status.textContent =
        `device ${client.deviceId} | ${n} objects | ${d} devices online`;
    }
  });

  view.render();
  client.start();
}

main();
