/**
 * PPO with an asymmetric critic plus the encoder-decoder auxiliary losses.
 *
 * Total loss per minibatch:
 *   clipped surrogate + value_coef * critic MSE - entropy_coef * entropy
 *   + [latent path enabled]    recon MSE + beta * KL(N(mu, sigma^2) || N(0, I))
 *   + [estimate path enabled]  velocity MSE + contact BCE
 *
 * The ablation mode gates loss terms and actor inputs together so gradients
 * through a disabled path are exactly zero.
 */
import * as tf from "@tensorflow/tfjs";

import { AblationMode, Nets, actorMean, criticValue, decode, encode, gaussianLogProb, logStd } from "./nets.js";
import { Rng } from "./rng.js";

export interface PpoConfig {
  gamma: number;
  lambda: number;
  clipEpsilon: number;
  learningRate: number;
  epochs: number;
  minibatches: number;
  valueCoef: number;
  entropyCoef: number;
  beta: number; // KL weight of the VAE regularizer
}

export const DEFAULT_PPO: PpoConfig = {
  gamma: 0.99,
  lambda: 0.95,
  clipEpsilon: 0.2,
  learningRate: 3e-4,
  epochs: 4,
  minibatches: 4,
  valueCoef: 0.5,
  entropyCoef: 0.005,
  beta: 0.005,
};

/**
 * Generalized advantage estimation over env-major arrays.
 * rewards/values/dones: (envs, steps); lastValues: (envs,) bootstrap at the
 * truncation point (ignored after terminal steps).
 */
export function computeGae(
  rewards: Float32Array[],
  values: Float32Array[],
  dones: Uint8Array[],
  lastValues: Float32Array,
  gamma: number,
  lambda: number
): { advantages: Float32Array[]; returns: Float32Array[] } {
  const advantages = rewards.map((r) => new Float32Array(r.length));
  const returns = rewards.map((r) => new Float32Array(r.length));
  for (let e = 0; e < rewards.length; e++) {
    const n = rewards[e].length;
    let gae = 0;
    for (let t = n - 1; t >= 0; t--) {
      const notDone = dones[e][t] ? 0 : 1;
      const nextValue = t === n - 1 ? lastValues[e] : values[e][t + 1];
      const delta = rewards[e][t] + gamma * nextValue * notDone - values[e][t];
      gae = delta + gamma * lambda * notDone * gae;
      advantages[e][t] = gae;
      returns[e][t] = gae + values[e][t];
    }
  }
  return { advantages, returns };
}

export interface Batch {
  histories: tf.Tensor2D; // (B, H * obs)
  obs: tf.Tensor2D; // (B, obs)
  nextObs: tf.Tensor2D; // (B, obs)
  actions: tf.Tensor2D; // (B, 3)
  oldLogProb: tf.Tensor1D;
  advantages: tf.Tensor1D;
  returns: tf.Tensor1D;
  privileged: tf.Tensor2D;
  trueVel: tf.Tensor2D; // (B, 3)
  trueContact: tf.Tensor1D; // (B,) in {0, 1}
}

export interface LossParts {
  total: number;
  surrogate: number;
  value: number;
  entropy: number;
  recon: number;
  kl: number;
  velMse: number;
  contactBce: number;
}

export function vaeLossTerms(nets: Nets, histories: tf.Tensor2D, nextObs: tf.Tensor2D, seed: number) {
  const { mu, logSigma } = encode(nets, histories);
  const sigma = tf.exp(logSigma);
  const eps = tf.randomNormal(mu.shape as [number, number], 0, 1, "float32", seed);
  const z = tf.add(mu, tf.mul(sigma, eps)) as tf.Tensor2D;
  const recon = tf.mean(tf.square(tf.sub(decode(nets, z), nextObs)));
  // KL(N(mu, sigma^2) || N(0, 1)) summed over the latent, averaged over batch
  const kl = tf.mean(
    tf.sum(tf.mul(tf.sub(tf.add(tf.square(mu), tf.square(sigma)), tf.add(tf.scalar(1), tf.mul(tf.scalar(2), logSigma))), 0.5), 1)
  );
  return { recon, kl };
}

export function estimatorLossTerms(nets: Nets, histories: tf.Tensor2D, trueVel: tf.Tensor2D, trueContact: tf.Tensor1D) {
  const { vhat, contactLogit } = encode(nets, histories);
  const velMse = tf.mean(tf.square(tf.sub(vhat, trueVel)));
  const logits = tf.squeeze(contactLogit, [1]);
  const bce = tf.mean(tf.losses.sigmoidCrossEntropy(trueContact, logits, undefined, undefined, tf.Reduction.NONE));
  return { velMse, bce };
}

export function ppoLoss(nets: Nets, batch: Batch, cfg: PpoConfig, mode: AblationMode, seed: number) {
  const { mu, vhat } = encode(nets, batch.histories);
  const mean = actorMean(nets, batch.obs, mu, vhat, mode);
  const ls = logStd(nets);
  const logProb = gaussianLogProb(mean, ls, batch.actions);
  const ratio = tf.exp(tf.sub(logProb, batch.oldLogProb));
  const clipped = tf.clipByValue(ratio, 1 - cfg.clipEpsilon, 1 + cfg.clipEpsilon);
  const surrogate = tf.neg(tf.mean(tf.minimum(tf.mul(ratio, batch.advantages), tf.mul(clipped, batch.advantages))));
  const value = tf.mean(tf.square(tf.sub(criticValue(nets, batch.obs, batch.privileged), batch.returns)));
  // diagonal Gaussian entropy depends only on log_std
  const entropy = tf.add(tf.sum(ls), 0.5 * 3 * Math.log(2 * Math.PI * Math.E));

  let total = tf.add(surrogate, tf.mul(value, cfg.valueCoef)).sub(tf.mul(entropy, cfg.entropyCoef)) as tf.Scalar;
  let recon = tf.scalar(0);
  let kl = tf.scalar(0);
  let velMse = tf.scalar(0);
  let bce = tf.scalar(0);
  if (mode !== "estimation_only") {
    const v = vaeLossTerms(nets, batch.histories, batch.nextObs, seed);
    recon = v.recon as tf.Scalar;
    kl = v.kl as tf.Scalar;
    total = total.add(recon).add(tf.mul(kl, cfg.beta)) as tf.Scalar;
  }
  if (mode !== "latent_only") {
    const e = estimatorLossTerms(nets, batch.histories, batch.trueVel, batch.trueContact);
    velMse = e.velMse as tf.Scalar;
    bce = e.bce as tf.Scalar;
    total = total.add(velMse).add(bce) as tf.Scalar;
  }
  return { total, surrogate, value, entropy, recon, kl, velMse, bce };
}

export interface UpdateStats extends LossParts {
  skippedNonFinite: number;
}

/** One PPO update over the whole rollout buffer (epochs x minibatches). */
export function ppoUpdate(
  nets: Nets,
  optimizer: tf.Optimizer,
  data: {
    histories: Float32Array;
    obs: Float32Array;
    nextObs: Float32Array;
    actions: Float32Array;
    oldLogProb: Float32Array;
    advantages: Float32Array;
    returns: Float32Array;
    privileged: Float32Array;
    trueVel: Float32Array;
    trueContact: Float32Array;
    size: number;
  },
  cfg: PpoConfig,
  mode: AblationMode,
  rng: Rng
): UpdateStats {
  const histDim = nets.meta.history_len * nets.meta.obs_dim;
  const obsDim = nets.meta.obs_dim;
  const n = data.size;

  // normalize advantages over the full buffer
  let mean = 0;
  for (let i = 0; i < n; i++) mean += data.advantages[i];
  mean /= n;
  let varSum = 0;
  for (let i = 0; i < n; i++) varSum += (data.advantages[i] - mean) ** 2;
  const std = Math.sqrt(varSum / n) + 1e-8;
  const normAdv = new Float32Array(n);
  for (let i = 0; i < n; i++) normAdv[i] = (data.advantages[i] - mean) / std;

  const indices = new Int32Array(n);
  for (let i = 0; i < n; i++) indices[i] = i;
  const mbSize = Math.max(1, Math.floor(n / cfg.minibatches));
  const stats: UpdateStats = {
    total: 0, surrogate: 0, value: 0, entropy: 0, recon: 0, kl: 0,
    velMse: 0, contactBce: 0, skippedNonFinite: 0,
  };
  let batches = 0;
  let seed = rng.int(1 << 30);

  const gather = (src: Float32Array, idx: Int32Array, width: number) => {
    const out = new Float32Array(idx.length * width);
    for (let i = 0; i < idx.length; i++) out.set(src.subarray(idx[i] * width, (idx[i] + 1) * width), i * width);
    return out;
  };

  const variables = [...nets.vars.values()];
  for (let epoch = 0; epoch < cfg.epochs; epoch++) {
    rng.shuffle(indices);
    for (let start = 0; start + mbSize <= n; start += mbSize) {
      const idx = indices.subarray(start, start + mbSize);
      const parts: LossParts = { total: 0, surrogate: 0, value: 0, entropy: 0, recon: 0, kl: 0, velMse: 0, contactBce: 0 };
      const lossSeed = seed++;
      const applied = tf.tidy(() => {
        const batch: Batch = {
          histories: tf.tensor2d(gather(data.histories, idx, histDim), [idx.length, histDim]),
          obs: tf.tensor2d(gather(data.obs, idx, obsDim), [idx.length, obsDim]),
          nextObs: tf.tensor2d(gather(data.nextObs, idx, obsDim), [idx.length, obsDim]),
          actions: tf.tensor2d(gather(data.actions, idx, 3), [idx.length, 3]),
          oldLogProb: tf.tensor1d(gather(data.oldLogProb, idx, 1)),
          advantages: tf.tensor1d(gather(normAdv, idx, 1)),
          returns: tf.tensor1d(gather(data.returns, idx, 1)),
          privileged: tf.tensor2d(gather(data.privileged, idx, nets.privDim), [idx.length, nets.privDim]),
          trueVel: tf.tensor2d(gather(data.trueVel, idx, 3), [idx.length, 3]),
          trueContact: tf.tensor1d(gather(data.trueContact, idx, 1)),
        };
        const { value: lossValue, grads } = tf.variableGrads(
          () => {
            const out = ppoLoss(nets, batch, cfg, mode, lossSeed);
            parts.surrogate = out.surrogate.dataSync()[0];
            parts.value = out.value.dataSync()[0];
            parts.entropy = out.entropy.dataSync()[0];
            parts.recon = out.recon.dataSync()[0];
            parts.kl = out.kl.dataSync()[0];
            parts.velMse = out.velMse.dataSync()[0];
            parts.contactBce = out.bce.dataSync()[0];
            return out.total;
          },
          variables
        );
        parts.total = lossValue.dataSync()[0];
        let finite = Number.isFinite(parts.total);
        if (finite) {
          for (const g of Object.values(grads)) {
            const bad = tf.logicalNot(tf.all(tf.isFinite(g))).dataSync()[0];
            if (bad) {
              finite = false;
              break;
            }
          }
        }
        if (finite) optimizer.applyGradients(grads);
        return finite;
      });
      if (!applied) {
        stats.skippedNonFinite += 1;
        continue;
      }
      batches += 1;
      stats.total += parts.total;
      stats.surrogate += parts.surrogate;
      stats.value += parts.value;
      stats.entropy += parts.entropy;
      stats.recon += parts.recon;
      stats.kl += parts.kl;
      stats.velMse += parts.velMse;
      stats.contactBce += parts.contactBce;
    }
  }
  if (batches > 0) {
    stats.total /= batches;
    stats.surrogate /= batches;
    stats.value /= batches;
    stats.entropy /= batches;
    stats.recon /= batches;
    stats.kl /= batches;
    stats.velMse /= batches;
    stats.contactBce /= batches;
  }
  return stats;
}
