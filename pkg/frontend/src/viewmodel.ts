/**
 * Event-sourced view model: a pure fold over the gateway event stream.
 *
 * Nothing in here is invented client-side; every field traces to an event.
 * Query endpoints (fleet poses between events, semantic search results)
 * hydrate transient UI affordances only and never enter the snapshot, so a
 * recorded log folded offline yields byte-identical panel state to a live
 * session that produced the same events.
 */

import type { EventDoc, PlanDoc, PoseDoc, RobotDoc } from "./events.js";

export type StepStatus = "pending" | "active" | "done" | "failed";

export interface StepView {
  stepId: string;
  skill: string;
  dependsOn: string[];
  assignedRobot: string | null;
  status: StepStatus;
  robot: string | null;
  attempt: number;
  lastOutcome: string | null;
  lastReason: string | null;
}

export interface TaskView {
  taskId: string;
  instruction: string;
  priority: number;
  submittedAt: number;
  state: string;
  planId: string | null;
  planKind: string | null;
  steps: StepView[];
  report: Record<string, unknown> | null;
  lastReason: string | null;
}

export interface RobotView {
  robotId: string;
  morphology: string;
  capabilities: string[];
  pose: PoseDoc;
  liveness: string;
  activeSubtasks: number;
  maxConcurrent: number;
  lastEventSeq: number;
}

export interface ClarificationView {
  clarificationId: string;
  taskId: string;
  question: string;
  options: string[];
  kind: string;
  askedAt: number;
  answer: string | null;
  open: boolean;
}

export interface ScorePoint {
  attempt: number;
  tick: number;
  score: number;
  decision: string | null;
}

export interface FrameView {
  frameId: string;
  robotId: string;
  simTime: number;
  isKeyframe: boolean;
  objects: string[];
}

export interface AnchorView {
  name: string;
  pose: PoseDoc;
  registeredBy: string;
}

export interface ViewModel {
  lastSeq: number;
  simTime: number;
  robots: Record<string, RobotView>;
  tasks: Record<string, TaskView>;
  taskOrder: string[];
  clarifications: Record<string, ClarificationView>;
  /** step timelines keyed "taskId/stepId" */
  criticTimelines: Record<string, ScorePoint[]>;
  anchors: AnchorView[];
  frames: FrameView[];
  objectIds: string[];
}

export function emptyViewModel(): ViewModel {
  return {
    lastSeq: -1,
    simTime: 0,
    robots: {},
    tasks: {},
    taskOrder: [],
    clarifications: {},
    criticTimelines: {},
    anchors: [],
    frames: [],
    objectIds: [],
  };
}

function str(v: unknown): string {
  return String(v);
}

function asPlan(doc: unknown): PlanDoc {
  return doc as PlanDoc;
}

/** Fold one event into the model (mutating; events arrive in seq order). */
export function applyEvent(model: ViewModel, event: EventDoc): ViewModel {
  if (event.seq <= model.lastSeq) {
    return model; // duplicate delivery: the feed is strictly ordered per seq
  }
  model.lastSeq = event.seq;
  model.simTime = Math.max(model.simTime, event.sim_time);
  const p = event.payload;
  switch (event.kind) {
    case "task_submitted": {
      const taskId = str(p.task_id);
      model.tasks[taskId] = {
        taskId,
        instruction: str(p.instruction),
        priority: Number(p.priority ?? 0),
        submittedAt: event.sim_time,
        state: "pending",
        planId: null,
        planKind: null,
        steps: [],
        report: null,
        lastReason: null,
      };
      model.taskOrder.push(taskId);
      break;
    }
    case "task_state_changed": {
      const task = model.tasks[str(p.task_id)];
      if (!task) break;
      task.state = str(p.to);
      task.lastReason = str(p.reason ?? "");
      if (p.report !== undefined && p.report !== null) {
        task.report = p.report as Record<string, unknown>;
      }
      break;
    }
    case "plan_issued": {
      const task = model.tasks[str(p.task_id)];
      if (!task) break;
      const plan = asPlan(p.plan);
      task.planId = plan.plan_id;
      task.planKind = str(p.plan_kind ?? "goal");
      task.steps = plan.steps.map((s) => ({
        stepId: s.step_id,
        skill: s.invocation.skill,
        dependsOn: [...s.depends_on],
        assignedRobot: s.assigned_robot,
        status: "pending" as StepStatus,
        robot: null,
        attempt: 0,
        lastOutcome: null,
        lastReason: null,
      }));
      break;
    }
    case "step_dispatched": {
      const task = model.tasks[str(p.task_id)];
      const step = task?.steps.find((s) => s.stepId === str(p.step_id));
      if (!step) break;
      step.status = "active";
      step.robot = str(p.robot_id);
      step.attempt = Number(p.attempt ?? 1);
      break;
    }
    case "step_result": {
      const task = model.tasks[str(p.task_id)];
      const step = task?.steps.find((s) => s.stepId === str(p.step_id));
      if (!step) break;
      step.lastOutcome = str(p.outcome);
      step.lastReason = str(p.reason ?? "");
      step.status = p.outcome === "success" ? "done" : "failed";
      break;
    }
    case "critic_scored": {
      const key = `${str(p.task_id)}/${str(p.step_id)}`;
      (model.criticTimelines[key] ??= []).push({
        attempt: Number(p.attempt ?? 1),
        tick: Number(p.tick),
        score: Number(p.score),
        decision: p.decision === null || p.decision === undefined ? null : str(p.decision),
      });
      break;
    }
    case "clarification_asked": {
      const id = str(p.clarification_id);
      model.clarifications[id] = {
        clarificationId: id,
        taskId: str(p.task_id),
        question: str(p.question),
        options: (p.options as string[] | undefined) ?? [],
        kind: str(p.kind ?? ""),
        askedAt: event.sim_time,
        answer: null,
        open: true,
      };
      break;
    }
    case "clarification_answered": {
      const clar = model.clarifications[str(p.clarification_id)];
      if (!clar) break;
      clar.answer = str(p.answer);
      clar.open = false;
      break;
    }
    case "robot_registered": {
      const doc = p as unknown as RobotDoc;
      model.robots[doc.robot_id] = {
        robotId: doc.robot_id,
        morphology: doc.morphology,
        capabilities: [...doc.capabilities],
        pose: doc.pose,
        liveness: doc.liveness,
        activeSubtasks: doc.active_subtasks,
        maxConcurrent: doc.max_concurrent,
        lastEventSeq: event.seq,
      };
      break;
    }
    case "robot_disconnected": {
      const robot = model.robots[str(p.robot_id)];
      if (!robot) break;
      robot.liveness = "disconnected";
      robot.lastEventSeq = event.seq;
      break;
    }
    case "memory_inserted": {
      if (p.entry_kind === "anchor") {
        const name = str(p.name);
        const next: AnchorView = {
          name,
          pose: p.pose as PoseDoc,
          registeredBy: str(p.registered_by ?? "auto"),
        };
        const idx = model.anchors.findIndex((a) => a.name.toLowerCase() === name.toLowerCase());
        if (idx >= 0) model.anchors[idx] = next;
        else model.anchors.push(next);
      } else if (p.entry_kind === "visual") {
        model.frames.push({
          frameId: str(p.frame_id),
          robotId: str(p.robot_id),
          simTime: Number(p.sim_time),
          isKeyframe: Boolean(p.is_keyframe),
          objects: (p.objects as string[] | undefined) ?? [],
        });
        for (const objectId of (p.objects as string[] | undefined) ?? []) {
          if (!model.objectIds.includes(objectId)) model.objectIds.push(objectId);
        }
      }
      break;
    }
  }
  return model;
}

export function foldEvents(events: EventDoc[], into?: ViewModel): ViewModel {
  const model = into ?? emptyViewModel();
  for (const event of events) applyEvent(model, event);
  return model;
}

function sortedReplacer(_key: string, value: unknown): unknown {
  if (value && typeof value === "object" && !Array.isArray(value)) {
    const entries = Object.entries(value as Record<string, unknown>).sort(([a], [b]) =>
      a < b ? -1 : a > b ? 1 : 0,
    );
    return Object.fromEntries(entries);
  }
  return value;
}

/** Canonical serialization of the panel state for snapshot comparison. */
export function snapshot(model: ViewModel): string {
  return JSON.stringify(model, sortedReplacer);
}

export function openClarifications(model: ViewModel): ClarificationView[] {
  return Object.values(model.clarifications)
    .filter((c) => c.open)
    .sort((a, b) => a.clarificationId.localeCompare(b.clarificationId));
}

export function tasksInOrder(model: ViewModel): TaskView[] {
  return model.taskOrder.map((id) => model.tasks[id]);
}
