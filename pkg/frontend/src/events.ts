/**
 * Wire types mirroring the gateway's canonical JSON (snake_case fields).
 * Field names are kept exactly as serialized so the reducer consumes raw
 * event documents without a mapping layer.
 */

export interface PoseDoc {
  x: number;
  y: number;
  z: number;
  yaw: number;
}

export type EventKind =
  | "task_submitted"
  | "plan_issued"
  | "step_dispatched"
  | "step_result"
  | "critic_scored"
  | "clarification_asked"
  | "clarification_answered"
  | "robot_registered"
  | "robot_disconnected"
  | "memory_inserted"
  | "task_state_changed";

export interface EventDoc {
  seq: number;
  sim_time: number;
  kind: EventKind;
  payload: Record<string, unknown>;
}

export interface Envelope<T = unknown> {
  version: number;
  kind: string;
  correlation_id: string | null;
  body: T;
}

export const WIRE_VERSION = 1;

export interface RobotDoc {
  robot_id: string;
  morphology: string;
  capabilities: string[];
  pose: PoseDoc;
  active_subtasks: number;
  max_concurrent: number;
  last_heartbeat: number;
  liveness: string;
}

export interface PlanStepDoc {
  step_id: string;
  invocation: {
    skill: string;
    target: Record<string, unknown>;
    params: Record<string, unknown>;
  };
  assigned_robot: string | null;
  depends_on: string[];
  on_failure: string;
}

export interface PlanDoc {
  plan_id: string;
  steps: PlanStepDoc[];
}

export interface NavigableResultDoc {
  category: string;
  confidence: number;
  evidence: string;
  pose: PoseDoc;
  source: string;
}

export function envelope<T>(kind: string, body: T, correlationId?: string): Envelope<T> {
  return {
    version: WIRE_VERSION,
    kind,
    correlation_id: correlationId ?? `console-${Math.random().toString(36).slice(2, 10)}`,
    body,
  };
}
