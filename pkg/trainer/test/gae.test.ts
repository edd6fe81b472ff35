import { describe, expect, it } from "vitest";

import { computeGae } from "../src/ppo.js";

function f32(values: number[]): Float32Array {
  return Float32Array.from(values);
}

/** Brute-force oracle: adv_t = sum_l (gamma*lambda)^l * delta_{t+l}, cut at terminals. */
function gaeOracle(
  rewards: number[],
  values: number[],
  dones: number[],
  lastValue: number,
  gamma: number,
  lambda: number
): number[] {
  const n = rewards.length;
  const deltas = rewards.map((r, t) => {
    const nextV = t === n - 1 ? lastValue : values[t + 1];
    return r + gamma * nextV * (dones[t] ? 0 : 1) - values[t];
  });
  const adv = new Array(n).fill(0);
  for (let t = 0; t < n; t++) {
    let factor = 1;
    for (let l = t; l < n; l++) {
      adv[t] += factor * deltas[l];
      if (dones[l]) break;
      factor *= gamma * lambda;
    }
  }
  return adv;
}

describe("generalized advantage estimation", () => {
  it("reduces to the one-step advantage for gamma=1, lambda=1, single step", () => {
    const { advantages } = computeGae([f32([0.7])], [f32([0.2])], [Uint8Array.from([0])], f32([0.5]), 1.0, 1.0);
    // adv = r + V(s') * (1 - done) - V(s)
    expect(advantages[0][0]).toBeCloseTo(0.7 + 0.5 - 0.2, 6);
  });

  it("ignores the bootstrap after a terminal step", () => {
    const { advantages } = computeGae([f32([1.0])], [f32([0.3])], [Uint8Array.from([1])], f32([99.0]), 0.99, 0.95);
    expect(advantages[0][0]).toBeCloseTo(1.0 - 0.3, 6);
  });

  it("matches the brute-force oracle on a random multi-step stream", () => {
    const rewards = [0.1, -0.4, 0.9, 0.0, 0.3, -0.2, 0.5];
    const values = [0.2, 0.1, -0.3, 0.4, 0.0, 0.2, -0.1];
    const dones = [0, 0, 1, 0, 0, 0, 0];
    const last = 0.25;
    const oracle = gaeOracle(rewards, values, dones, last, 0.99, 0.95);
    const { advantages, returns } = computeGae(
      [f32(rewards)],
      [f32(values)],
      [Uint8Array.from(dones)],
      f32([last]),
      0.99,
      0.95
    );
    for (let t = 0; t < rewards.length; t++) {
      expect(advantages[0][t]).toBeCloseTo(oracle[t], 5);
      expect(returns[0][t]).toBeCloseTo(oracle[t] + values[t], 5);
    }
  });

  it("handles several environments independently", () => {
    const { advantages } = computeGae(
      [f32([1, 0]), f32([0, 1])],
      [f32([0, 0]), f32([0, 0])],
      [Uint8Array.from([0, 0]), Uint8Array.from([0, 0])],
      f32([0, 0]),
      0.5,
      1.0
    );
    expect(advantages[0][0]).toBeCloseTo(1.0, 6);
    expect(advantages[1][0]).toBeCloseTo(0.5, 6); // delta_0 + gamma * lambda * delta_1 = 0 + 0.5 * 1
  });
});
