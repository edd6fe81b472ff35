/**
 * Training entry point: PPO over a batch of rollout-service child processes.
 *
 * The default task is the planar reduced setting: flat terrain, commands
 * restricted to the y axis, fixed gait period.  Outputs per run directory:
 *   manifest.json     config + seeds, for reproducibility
 *   curve.csv         per-iteration returns, losses, probe estimator MSE
 *   checkpoint_*.hlpw / policy.hlpw   exported weights
 */
import * as fs from "fs";
import * as path from "path";
import * as tf from "@tensorflow/tfjs";
import yargs from "yargs";

tf.enableProdMode();
import { hideBin } from "yargs/helpers";

import { AblationMode, Nets, actorMean, buildNets, criticValue, encode, exportableTensors, gaussianLogProb, logStd } from "./nets.js";
import { EnvClient, PRIV_DIM, privilegedVector } from "./protocol.js";
import { DEFAULT_PPO, PpoConfig, computeGae, estimatorLossTerms, ppoUpdate } from "./ppo.js";
import { Rng } from "./rng.js";
import { DEFAULT_META, saveWeights } from "./weights.js";

export interface TrainConfig {
  envs: number;
  iterations: number;
  rolloutSteps: number;
  seed: number;
  ablation: AblationMode;
  horizonSteps: number; // policy steps per episode before truncation
  commandRange: number; // |vy| <= range, y axis only
  period: number;
  outDir: string;
  checkpointEvery: number;
  pythonCmd: string[];
  ppo: PpoConfig;
}

export const DEFAULT_TRAIN: TrainConfig = {
  envs: 16,
  iterations: 500,
  rolloutSteps: 128,
  seed: 0,
  ablation: "full",
  horizonSteps: 1000, // 20 s at 50 Hz
  commandRange: 0.3,
  period: 0.4,
  outDir: "runs/latest",
  checkpointEvery: 50,
  pythonCmd: ["python3", "-m", "hopperlab", "serve", "--stdio"],
  ppo: DEFAULT_PPO,
};

interface EnvState {
  client: EnvClient;
  history: Float32Array; // (H * obs), newest first
  obs: Float32Array;
  priv: Float32Array;
  stepsInEpisode: number;
  episodeReturn: number;
  nextSeed: number;
}

function pushHistory(history: Float32Array, obs: Float32Array, obsDim: number): void {
  history.copyWithin(obsDim, 0, history.length - obsDim);
  history.set(obs, 0);
}

export interface RolloutData {
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
  episodeReturns: number[];
  meanReward: number;
}

export class Trainer {
  readonly cfg: TrainConfig;
  readonly nets: Nets;
  private readonly optimizer: tf.Optimizer;
  private readonly rng: Rng;
  private envs: EnvState[] = [];
  private seedCounter: number;

  constructor(cfg: TrainConfig) {
    this.cfg = cfg;
    this.nets = buildNets(DEFAULT_META, PRIV_DIM, cfg.seed);
    this.optimizer = tf.train.adam(cfg.ppo.learningRate);
    this.rng = new Rng(cfg.seed * 7919 + 17);
    this.seedCounter = cfg.seed * 1_000_000;
  }

  private drawCommand() {
    return { vx: 0, vy: this.rng.uniform(-this.cfg.commandRange, this.cfg.commandRange), period: this.cfg.period };
  }

  async start(): Promise<void> {
    const obsDim = DEFAULT_META.obs_dim;
    const histDim = obsDim * DEFAULT_META.history_len;
    for (let i = 0; i < this.cfg.envs; i++) {
      const client = new EnvClient(this.cfg.pythonCmd);
      await client.hello();
      const seed = this.seedCounter++;
      const first = await client.reset(seed, this.drawCommand());
      this.envs.push({
        client,
        history: new Float32Array(histDim),
        obs: Float32Array.from(first.obs),
        priv: Float32Array.from(privilegedVector(first.privileged)),
        stepsInEpisode: 0,
        episodeReturn: 0,
        nextSeed: seed,
      });
    }
  }

  async stop(): Promise<void> {
    await Promise.all(this.envs.map((e) => e.client.close()));
    this.envs = [];
  }

  /** Batched policy forward for the current env states (no gradients). */
  private policyStep(): { actions: number[][]; logProb: Float32Array } {
    const n = this.envs.length;
    const obsDim = DEFAULT_META.obs_dim;
    const histDim = obsDim * DEFAULT_META.history_len;
    const hist = new Float32Array(n * histDim);
    const obs = new Float32Array(n * obsDim);
    this.envs.forEach((e, i) => {
      hist.set(e.history, i * histDim);
      obs.set(e.obs, i * obsDim);
    });
    const noise = this.rng.normalArray(n * 3);
    return tf.tidy(() => {
      const histT = tf.tensor2d(hist, [n, histDim]);
      const obsT = tf.tensor2d(obs, [n, obsDim]);
      const { mu, vhat } = encode(this.nets, histT);
      const mean = actorMean(this.nets, obsT, mu, vhat, this.cfg.ablation);
      const std = tf.exp(logStd(this.nets));
      const actionsT = tf.add(mean, tf.mul(tf.tensor2d(noise, [n, 3]), std)) as tf.Tensor2D;
      const logProb = gaussianLogProb(mean, logStd(this.nets), actionsT).dataSync() as Float32Array;
      const raw = actionsT.dataSync() as Float32Array;
      const actions: number[][] = [];
      for (let i = 0; i < n; i++) actions.push([raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]]);
      return { actions, logProb: Float32Array.from(logProb) };
    });
  }

  /** Critic values for every stored row plus the bootstrap states, one pass. */
  private batchedValues(data: RolloutData): { values: Float32Array; lastValues: Float32Array } {
    const n = this.envs.length;
    const obsDim = DEFAULT_META.obs_dim;
    const rows = data.size;
    const obs = new Float32Array((rows + n) * obsDim);
    const priv = new Float32Array((rows + n) * PRIV_DIM);
    obs.set(data.obs, 0);
    priv.set(data.privileged, 0);
    this.envs.forEach((e, i) => {
      obs.set(e.obs, (rows + i) * obsDim);
      priv.set(e.priv, (rows + i) * PRIV_DIM);
    });
    const all = tf.tidy(
      () =>
        criticValue(
          this.nets,
          tf.tensor2d(obs, [rows + n, obsDim]),
          tf.tensor2d(priv, [rows + n, PRIV_DIM])
        ).dataSync() as Float32Array
    );
    return { values: all.subarray(0, rows) as Float32Array, lastValues: all.subarray(rows) as Float32Array };
  }

  async collectRollout(): Promise<RolloutData> {
    const cfg = this.cfg;
    const n = this.envs.length;
    const steps = cfg.rolloutSteps;
    const obsDim = DEFAULT_META.obs_dim;
    const histDim = obsDim * DEFAULT_META.history_len;
    const size = n * steps;
    const data: RolloutData = {
      histories: new Float32Array(size * histDim),
      obs: new Float32Array(size * obsDim),
      nextObs: new Float32Array(size * obsDim),
      actions: new Float32Array(size * 3),
      oldLogProb: new Float32Array(size),
      advantages: new Float32Array(size),
      returns: new Float32Array(size),
      privileged: new Float32Array(size * PRIV_DIM),
      trueVel: new Float32Array(size * 3),
      trueContact: new Float32Array(size),
      size,
      episodeReturns: [],
      meanReward: 0,
    };
    const rewards = Array.from({ length: n }, () => new Float32Array(steps));
    const dones = Array.from({ length: n }, () => new Uint8Array(steps));
    let rewardSum = 0;

    for (let t = 0; t < steps; t++) {
      const { actions, logProb } = this.policyStep();
      const results = await Promise.all(this.envs.map((e, i) => e.client.step(actions[i])));
      for (let i = 0; i < n; i++) {
        const e = this.envs[i];
        const tr = results[i];
        const row = i * steps + t;
        data.histories.set(e.history, row * histDim);
        data.obs.set(e.obs, row * obsDim);
        data.actions.set(actions[i], row * 3);
        data.oldLogProb[row] = logProb[i];
        data.privileged.set(e.priv, row * PRIV_DIM);
        const nextObs = Float32Array.from(tr.obs);
        data.nextObs.set(nextObs, row * obsDim);
        data.trueVel.set(tr.privileged.lin_vel, row * 3);
        data.trueContact[row] = tr.privileged.contact ? 1 : 0;
        rewards[i][t] = tr.reward;
        rewardSum += tr.reward;
        e.episodeReturn += tr.reward;
        e.stepsInEpisode += 1;

        const truncated = e.stepsInEpisode >= this.cfg.horizonSteps;
        if (tr.done || truncated) {
          dones[i][t] = 1; // horizon truncation is treated as terminal for GAE
          data.episodeReturns.push(e.episodeReturn);
          const seed = this.seedCounter++;
          const first = await e.client.reset(seed, this.drawCommand());
          e.history.fill(0);
          e.obs = Float32Array.from(first.obs);
          e.priv = Float32Array.from(privilegedVector(first.privileged));
          e.stepsInEpisode = 0;
          e.episodeReturn = 0;
        } else {
          dones[i][t] = 0;
          pushHistory(e.history, e.obs, obsDim);
          e.obs = nextObs;
          e.priv = Float32Array.from(privilegedVector(tr.privileged));
        }
      }
    }

    const { values: flatValues, lastValues } = this.batchedValues(data);
    const values = Array.from({ length: n }, (_, i) =>
      Float32Array.from(flatValues.subarray(i * steps, (i + 1) * steps))
    );
    const { advantages, returns } = computeGae(rewards, values, dones, lastValues, cfg.ppo.gamma, cfg.ppo.lambda);
    for (let i = 0; i < n; i++) {
      for (let t = 0; t < steps; t++) {
        const row = i * steps + t;
        data.advantages[row] = advantages[i][t];
        data.returns[row] = returns[i][t];
      }
    }
    data.meanReward = rewardSum / size;
    return data;
  }

  update(data: RolloutData) {
    return ppoUpdate(this.nets, this.optimizer, data, this.cfg.ppo, this.cfg.ablation, this.rng);
  }

  /** Velocity-estimator MSE on a fixed probe batch (checkpoint metric). */
  probeEstimatorMse(probe: { histories: Float32Array; trueVel: Float32Array; size: number }): number {
    const histDim = DEFAULT_META.obs_dim * DEFAULT_META.history_len;
    return tf.tidy(() => {
      const { velMse } = estimatorLossTerms(
        this.nets,
        tf.tensor2d(probe.histories, [probe.size, histDim]),
        tf.tensor2d(probe.trueVel, [probe.size, 3]),
        tf.zeros([probe.size])
      );
      return velMse.dataSync()[0];
    });
  }

  exportWeights(file: string): void {
    saveWeights(file, exportableTensors(this.nets), this.nets.meta);
  }
}

export async function trainMain(cfg: TrainConfig): Promise<void> {
  fs.mkdirSync(cfg.outDir, { recursive: true });
  fs.writeFileSync(
    path.join(cfg.outDir, "manifest.json"),
    JSON.stringify({ config: { ...cfg, pythonCmd: cfg.pythonCmd.join(" ") }, created: new Date().toISOString() }, null, 2)
  );
  const curvePath = path.join(cfg.outDir, "curve.csv");
  fs.writeFileSync(
    curvePath,
    "iteration,wall_s,mean_reward,mean_return,episodes,loss,surrogate,value,entropy,recon,kl,vel_mse,contact_bce,probe_vel_mse,skipped\n"
  );

  const trainer = new Trainer(cfg);
  await trainer.start();
  const started = Date.now();
  let probe: { histories: Float32Array; trueVel: Float32Array; size: number } | null = null;
  try {
    for (let iter = 1; iter <= cfg.iterations; iter++) {
      const data = await trainer.collectRollout();
      if (probe === null) {
        // freeze the first rollout as the held-out estimator probe
        probe = {
          histories: data.histories.slice(),
          trueVel: data.trueVel.slice(),
          size: data.size,
        };
      }
      const stats = trainer.update(data);
      const probeMse = trainer.probeEstimatorMse(probe);
      const meanReturn = data.episodeReturns.length
        ? data.episodeReturns.reduce((a, b) => a + b, 0) / data.episodeReturns.length
        : NaN;
      const wall = (Date.now() - started) / 1000;
      fs.appendFileSync(
        curvePath,
        [
          iter, wall.toFixed(1), data.meanReward.toFixed(5),
          Number.isNaN(meanReturn) ? "" : meanReturn.toFixed(3),
          data.episodeReturns.length,
          stats.total.toFixed(5), stats.surrogate.toFixed(5), stats.value.toFixed(5),
          stats.entropy.toFixed(5), stats.recon.toFixed(5), stats.kl.toFixed(5),
          stats.velMse.toFixed(6), stats.contactBce.toFixed(5),
          probeMse.toFixed(6), stats.skippedNonFinite,
        ].join(",") + "\n"
      );
      if (iter % 10 === 0 || iter === 1) {
        console.log(
          `iter ${iter}/${cfg.iterations} wall=${wall.toFixed(0)}s reward/step=${data.meanReward.toFixed(3)} ` +
            `probe_vel_mse=${probeMse.toFixed(4)} episodes=${data.episodeReturns.length}`
        );
      }
      if (iter % cfg.checkpointEvery === 0) {
        trainer.exportWeights(path.join(cfg.outDir, `checkpoint_${String(iter).padStart(4, "0")}.hlpw`));
      }
    }
    trainer.exportWeights(path.join(cfg.outDir, "policy.hlpw"));
  } finally {
    await trainer.stop();
  }
}

const isMain = process.argv[1] && path.resolve(process.argv[1]) === path.resolve(new URL(import.meta.url).pathname);
if (isMain) {
  const argv = yargs(hideBin(process.argv))
    .option("envs", { type: "number", default: DEFAULT_TRAIN.envs })
    .option("iterations", { type: "number", default: DEFAULT_TRAIN.iterations })
    .option("rollout", { type: "number", default: DEFAULT_TRAIN.rolloutSteps })
    .option("seed", { type: "number", default: DEFAULT_TRAIN.seed })
    .option("ablation", { choices: ["full", "estimation_only", "latent_only"] as const, default: DEFAULT_TRAIN.ablation })
    .option("out", { type: "string", default: DEFAULT_TRAIN.outDir })
    .option("lr", { type: "number", default: DEFAULT_PPO.learningRate })
    .option("beta", { type: "number", default: DEFAULT_PPO.beta })
    .option("checkpoint-every", { type: "number", default: DEFAULT_TRAIN.checkpointEvery })
    .parseSync();
  const cfg: TrainConfig = {
    ...DEFAULT_TRAIN,
    envs: argv.envs,
    iterations: argv.iterations,
    rolloutSteps: argv.rollout,
    seed: argv.seed,
    ablation: argv.ablation as AblationMode,
    outDir: argv.out,
    checkpointEvery: argv["checkpoint-every"],
    ppo: { ...DEFAULT_PPO, learningRate: argv.lr, beta: argv.beta },
  };
  trainMain(cfg).catch((err) => {
    console.error(err);
    process.exit(1);
  });
}
