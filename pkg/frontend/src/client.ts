/**
 * Gateway client: enveloped requests plus a server-sent-events subscription.
 * Uses fetch streaming so the same code runs in the browser and under node.
 */

import type { EventDoc, Envelope, NavigableResultDoc, RobotDoc } from "./events.js";
import { envelope } from "./events.js";

export class GatewayError extends Error {
  constructor(
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

async function unwrap<T>(response: Response): Promise<T> {
  const doc = (await response.json()) as Envelope<T & { message?: string }>;
  if (!response.ok) {
    throw new GatewayError(doc.body?.message ?? response.statusText, response.status);
  }
  return doc.body as T;
}

export interface SubmitOptions {
  priority?: number;
  explicitRobot?: string;
  tauOverride?: number;
}

export class GatewayClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  async submitInstruction(text: string, options: SubmitOptions = {}): Promise<string> {
    const response = await fetch(this.url("/instructions"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(
        envelope("submit_instruction", {
          text,
          priority: options.priority ?? 0,
          explicit_robot: options.explicitRobot ?? null,
          tau_override: options.tauOverride ?? null,
        }),
      ),
    });
    const body = await unwrap<{ task_id: string }>(response);
    return body.task_id;
  }

  async answerClarification(clarificationId: string, answer: string): Promise<void> {
    const response = await fetch(this.url(`/clarifications/${clarificationId}`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(envelope("answer_clarification", { answer })),
    });
    await unwrap(response);
  }

  async fleet(): Promise<RobotDoc[]> {
    const body = await unwrap<{ robots: RobotDoc[] }>(await fetch(this.url("/fleet")));
    return body.robots;
  }

  async anchors(): Promise<{ name: string; pose: unknown; registered_by: string }[]> {
    const body = await unwrap<{ anchors: { name: string; pose: unknown; registered_by: string }[] }>(
      await fetch(this.url("/anchors")),
    );
    return body.anchors;
  }

  async semanticSearch(query: string, k = 5): Promise<NavigableResultDoc[]> {
    const response = await fetch(this.url("/memory/semantic"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(envelope("memory_semantic", { query, k })),
    });
    const body = await unwrap<{ results: NavigableResultDoc[] }>(response);
    return body.results;
  }

  async structuredSearch(filter: Record<string, unknown>): Promise<NavigableResultDoc[]> {
    const response = await fetch(this.url("/memory/structured"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(envelope("memory_structured", { filter })),
    });
    const body = await unwrap<{ results: NavigableResultDoc[] }>(response);
    return body.results;
  }

  /**
   * Subscribe to the event feed from `fromSeq`. With follow=false the
   * iterator drains the current log and ends; with follow=true it tails
   * live until the signal aborts.
   */
  async *events(fromSeq = 0, follow = false, signal?: AbortSignal): AsyncGenerator<EventDoc> {
    const response = await fetch(
      this.url(`/events?from_seq=${fromSeq}&follow=${follow}`),
      { signal },
    );
    if (!response.ok || response.body === null) {
      throw new GatewayError(`event stream failed: ${response.status}`, response.status);
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      while (true) {
        const { done, value } = await reader.read();
        if (done) break;
        buffer += decoder.decode(value, { stream: true });
        let boundary;
        while ((boundary = buffer.indexOf("\n\n")) >= 0) {
          const chunk = buffer.slice(0, boundary);
          buffer = buffer.slice(boundary + 2);
          for (const line of chunk.split("\n")) {
            if (!line.startsWith("data: ")) continue; // keepalives are comments
            const doc = JSON.parse(line.slice("data: ".length)) as Envelope<EventDoc>;
            yield doc.body;
          }
        }
      }
    } finally {
      reader.releaseLock();
    }
  }
}

/** Parse a run-log file's contents (header line + one event per line). */
export function parseRunLog(text: string): { header: Record<string, unknown>; events: EventDoc[] } {
  const lines = text.split("\n").filter((line) => line.length > 0);
  if (lines.length === 0) throw new Error("empty run log");
  const header = JSON.parse(lines[0]) as Record<string, unknown>;
  const events: EventDoc[] = [];
  for (const line of lines.slice(1)) {
    try {
      events.push(JSON.parse(line) as EventDoc);
    } catch {
      break; // torn tail record
    }
  }
  return { header, events };
}
