import { EnvClient } from "../src/protocol.js";

async function main() {
  const n = Number(process.argv[2] ?? 4);
  const envs: EnvClient[] = [];
  for (let i = 0; i < n; i++) envs.push(new EnvClient());
  await Promise.all(envs.map((e) => e.hello()));
  await Promise.all(envs.map((e, i) => e.reset(i, { vx: 0, vy: 0, period: 0.4 })));
  const steps = 200;
  const t0 = Date.now();
  for (let t = 0; t < steps; t++) {
    await Promise.all(
      envs.map((e) =>
        e.step([0, 0, 0]).then((tr) => (tr.done ? e.reset(1, { vx: 0, vy: 0, period: 0.4 }) : null))
      )
    );
  }
  const dt = Date.now() - t0;
  console.log(`protocol only: ${steps} parallel steps x ${n} envs in ${dt} ms -> ${(dt / steps).toFixed(1)} ms/step`);
  await Promise.all(envs.map((e) => e.close()));
}
main();
