/**
 * Networks, stored as flat named variables that mirror the weights-container
 * tensor names one-to-one:
 *
 *   encoder trunk  enc.i.{w,b}      flattened observation history -> features
 *   heads          head_mu / head_logsigma / head_vel / head_contact
 *   decoder        dec.i.{w,b}, dec.out.{w,b}   latent -> next observation
 *   actor          actor.i.{w,b}, actor.out.{w,b}  (obs ++ mu ++ vhat) -> action
 *
 * Trainer-only parameters (never exported): critic.* and actor.log_std.
 * Linear layers compute y = x W^T + b with W shaped (out, in).
 */
import * as tf from "@tensorflow/tfjs";

import { Rng } from "./rng.js";
import { ArchMeta, NamedTensors } from "./weights.js";

export type AblationMode = "full" | "estimation_only" | "latent_only";

export interface Nets {
  meta: ArchMeta;
  privDim: number;
  vars: Map<string, tf.Variable>;
}

function linearInit(rng: Rng, out: number, input: number): Float32Array {
  return rng.normalArray(out * input, 1.0 / Math.sqrt(input));
}

let netsInstanceCounter = 0;

export function buildNets(meta: ArchMeta, privDim: number, seed = 0): Nets {
  const rng = new Rng(seed * 2654435761 + 12345);
  const vars = new Map<string, tf.Variable>();
  // tf registers variable names globally; namespace them per instance while
  // the map keys keep the canonical container names
  const ns = `nets${netsInstanceCounter++}`;
  const add = (name: string, out: number, input: number) => {
    vars.set(`${name}.w`, tf.variable(tf.tensor2d(linearInit(rng, out, input), [out, input]), true, `${ns}/${name}.w`));
    vars.set(`${name}.b`, tf.variable(tf.zeros([out]), true, `${ns}/${name}.b`));
  };

  let width = meta.obs_dim * meta.history_len;
  meta.encoder_hidden.forEach((h, i) => {
    add(`enc.${i}`, h, width);
    width = h;
  });
  add("head_mu", meta.latent_dim, width);
  add("head_logsigma", meta.latent_dim, width);
  add("head_vel", 3, width);
  add("head_contact", 1, width);

  let dwidth = meta.latent_dim;
  meta.decoder_hidden.forEach((h, i) => {
    add(`dec.${i}`, h, dwidth);
    dwidth = h;
  });
  add("dec.out", meta.obs_dim, dwidth);

  let awidth = meta.obs_dim + meta.latent_dim + 3;
  meta.actor_hidden.forEach((h, i) => {
    add(`actor.${i}`, h, awidth);
    awidth = h;
  });
  add("actor.out", 3, awidth);

  let cwidth = meta.obs_dim + privDim;
  meta.actor_hidden.forEach((h, i) => {
    add(`critic.${i}`, h, cwidth);
    cwidth = h;
  });
  add("critic.out", 1, cwidth);

  vars.set("actor.log_std", tf.variable(tf.fill([3], Math.log(0.15)), true, `${ns}/actor.log_std`));
  return { meta, privDim, vars };
}

function activation(meta: ArchMeta, x: tf.Tensor2D): tf.Tensor2D {
  switch (meta.activation) {
    case "elu":
      return tf.elu(x);
    case "relu":
      return tf.relu(x);
    case "tanh":
      return tf.tanh(x);
    default:
      throw new Error(`unsupported activation ${meta.activation}`);
  }
}

function chain(nets: Nets, prefix: string, hidden: number[], x: tf.Tensor2D, finalLinear = true): tf.Tensor2D {
  let h = x;
  for (let i = 0; i < hidden.length; i++) {
    const w = nets.vars.get(`${prefix}.${i}.w`)! as tf.Tensor2D;
    const b = nets.vars.get(`${prefix}.${i}.b`)!;
    h = activation(nets.meta, tf.add(tf.matMul(h, w, false, true), b));
  }
  if (finalLinear) {
    const w = nets.vars.get(`${prefix}.out.w`)! as tf.Tensor2D;
    const b = nets.vars.get(`${prefix}.out.b`)!;
    h = tf.add(tf.matMul(h, w, false, true), b) as tf.Tensor2D;
  }
  return h;
}

export interface EncoderOut {
  mu: tf.Tensor2D;
  logSigma: tf.Tensor2D;
  vhat: tf.Tensor2D;
  contactLogit: tf.Tensor2D;
}

/** history: (batch, history_len * obs_dim), newest observation first. */
export function encode(nets: Nets, history: tf.Tensor2D): EncoderOut {
  const trunk = chain(nets, "enc", nets.meta.encoder_hidden, history, false);
  const head = (name: string) =>
    tf.add(
      tf.matMul(trunk, nets.vars.get(`${name}.w`)! as tf.Tensor2D, false, true),
      nets.vars.get(`${name}.b`)!
    ) as tf.Tensor2D;
  return { mu: head("head_mu"), logSigma: head("head_logsigma"), vhat: head("head_vel"), contactLogit: head("head_contact") };
}

export function decode(nets: Nets, latent: tf.Tensor2D): tf.Tensor2D {
  return chain(nets, "dec", nets.meta.decoder_hidden, latent);
}

/**
 * Actor mean action.  Ablations gate the encoder products at the input:
 * estimation_only zeroes the latent path, latent_only zeroes the estimate
 * path, which also kills every gradient through the disabled head.
 */
export function actorMean(
  nets: Nets,
  obs: tf.Tensor2D,
  mu: tf.Tensor2D,
  vhat: tf.Tensor2D,
  mode: AblationMode
): tf.Tensor2D {
  const latent = mode === "estimation_only" ? tf.zerosLike(mu) : mu;
  const estimate = mode === "latent_only" ? tf.zerosLike(vhat) : vhat;
  return chain(nets, "actor", nets.meta.actor_hidden, tf.concat([obs, latent, estimate], 1) as tf.Tensor2D);
}

/** Critic value from observation plus privileged simulator state. */
export function criticValue(nets: Nets, obs: tf.Tensor2D, privileged: tf.Tensor2D): tf.Tensor1D {
  const v = chain(nets, "critic", nets.meta.actor_hidden, tf.concat([obs, privileged], 1) as tf.Tensor2D);
  return tf.squeeze(v, [1]);
}

export function logStd(nets: Nets): tf.Tensor1D {
  return nets.vars.get("actor.log_std")! as tf.Tensor1D;
}

/** Diagonal-Gaussian log density of actions under the current policy. */
export function gaussianLogProb(mean: tf.Tensor2D, logStdVec: tf.Tensor1D, actions: tf.Tensor2D): tf.Tensor1D {
  const std = tf.exp(logStdVec);
  const z = tf.div(tf.sub(actions, mean), std);
  const quad = tf.sum(tf.square(z), 1);
  const norm = tf.sum(logStdVec).mul(2).add(actions.shape[1] * Math.log(2 * Math.PI));
  return tf.mul(tf.add(quad, norm), -0.5) as tf.Tensor1D;
}

/** Names and values of the exportable (runtime) tensors. */
export function exportableTensors(nets: Nets): NamedTensors {
  const out: NamedTensors = {};
  for (const [name, variable] of nets.vars) {
    if (name.startsWith("critic.") || name === "actor.log_std") continue;
    out[name] = { shape: variable.shape.slice(), data: variable.dataSync() as Float32Array };
  }
  return out;
}

/** Load exported tensors back into matching variables (shape-checked). */
export function assignTensors(nets: Nets, tensors: NamedTensors): void {
  for (const [name, t] of Object.entries(tensors)) {
    const variable = nets.vars.get(name);
    if (!variable) continue;
    if (JSON.stringify(variable.shape) !== JSON.stringify(t.shape)) {
      throw new Error(`tensor ${name}: shape ${t.shape} does not match variable ${variable.shape}`);
    }
    variable.assign(tf.tensor(t.data, t.shape as [number, number]));
  }
}

export function trainableList(nets: Nets, mode: AblationMode): tf.Variable[] {
  // every variable stays registered; gating happens in the loss graph
  void mode;
  return [...nets.vars.values()];
}
