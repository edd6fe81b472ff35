/**
 * Client for the rollout service: one child process per environment,
 * newline-delimited JSON over stdio.  Requests are strictly serial per
 * environment; different environments step concurrently.
 */
import { ChildProcess, spawn } from "child_process";
import * as readline from "readline";

export interface CommandSpec {
  vx: number;
  vy: number;
  period: number;
}

export interface Privileged {
  lin_vel: number[];
  contact: boolean;
  height: number;
  params: { body_mass: number; friction: number; contact_stiffness: number; gain_scale: number };
}

export interface Transition {
  obs: number[];
  reward: number;
  done: boolean;
  privileged: Privileged;
  info: { reward_parts: Record<string, number>; time: number; fault: string | null };
}

/** Flatten the privileged block into the critic input vector (fixed layout). */
export function privilegedVector(p: Privileged): number[] {
  return [
    ...p.lin_vel,
    p.contact ? 1 : 0,
    p.height,
    p.params.body_mass,
    p.params.friction,
    p.params.contact_stiffness / 1000.0,
    p.params.gain_scale,
  ];
}

export const PRIV_DIM = 9;

export class EnvClient {
  private proc: ChildProcess;
  private lines: AsyncIterator<string>;
  private closed = false;

  constructor(command: string[] = ["python3", "-m", "hopperlab", "serve", "--stdio"]) {
    this.proc = spawn(command[0], command.slice(1), { stdio: ["pipe", "pipe", "inherit"] });
    const rl = readline.createInterface({ input: this.proc.stdout! });
    this.lines = rl[Symbol.asyncIterator]();
  }

  private async request<T>(payload: object): Promise<T> {
    if (this.closed) throw new Error("environment is closed");
    this.proc.stdin!.write(JSON.stringify(payload) + "\n");
    const { value, done } = await this.lines.next();
    if (done) throw new Error("environment closed the stream");
    const msg = JSON.parse(value);
    if (msg.type === "error") throw new Error(`env error ${msg.code}: ${msg.message}`);
    return msg as T;
  }

  async hello(): Promise<void> {
    await this.request({ type: "hello", version: 1 });
  }

  async reset(
    seed: number,
    command: CommandSpec,
    terrain = "flat",
    randomize = true,
    conversion = "torque"
  ): Promise<{ obs: number[]; privileged: Privileged }> {
    return await this.request({ type: "reset", seed, command, terrain, randomize, conversion });
  }

  async step(action: number[]): Promise<Transition> {
    return await this.request({ type: "step", action });
  }

  async close(): Promise<void> {
    if (this.closed) return;
    this.closed = true;
    try {
      this.proc.stdin!.write(JSON.stringify({ type: "close" }) + "\n");
    } catch {
      // already gone
    }
    this.proc.kill();
  }
}
