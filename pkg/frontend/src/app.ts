/**
 * Browser entry point: connects to a runtime, folds the live event stream
 * into the view model, and renders the five panels. User actions call the
 * gateway and nothing else; panels change only when the echoed events come
 * back down the stream (optimistic updates are deliberately absent).
 */

import { GatewayClient, GatewayError } from "./client.js";
import type { ScorePoint, StepView, TaskView, ViewModel } from "./viewmodel.js";
import { applyEvent, emptyViewModel, openClarifications, tasksInOrder } from "./viewmodel.js";

const MORPHOLOGY_GLYPHS: Record<string, string> = {
  arm: "A",
  quadruped: "Q",
  humanoid: "H",
  mobile: "M",
};

const STATUS_COLORS: Record<string, string> = {
  pending: "#999",
  active: "#2a7fff",
  done: "#1a9e4b",
  failed: "#d33",
};

export class ConsoleApp {
  readonly model: ViewModel = emptyViewModel();
  private client: GatewayClient | null = null;
  private abort: AbortController | null = null;
  private renderQueued = false;

  constructor(private readonly root: HTMLElement) {
    this.root.innerHTML = this.skeleton();
    this.bindControls();
  }

  async connect(runtimeUrl: string): Promise<void> {
    this.disconnect();
    this.client = new GatewayClient(runtimeUrl);
    const controller = new AbortController();
    this.abort = controller;
    this.setBanner(`connecting to ${runtimeUrl}...`, "info");
    try {
      for await (const event of this.client.events(this.model.lastSeq + 1, true, controller.signal)) {
        applyEvent(this.model, event);
        this.setBanner(`live: seq ${this.model.lastSeq}, tick ${this.model.simTime}`, "ok");
        this.scheduleRender();
      }
    } catch (error) {
      if (!controller.signal.aborted) {
        this.setBanner(`connection lost: ${String(error)} (retrying in 2s)`, "error");
        setTimeout(() => {
          if (!controller.signal.aborted) void this.connect(runtimeUrl);
        }, 2000);
      }
    }
  }

  disconnect(): void {
    this.abort?.abort();
  }

  private scheduleRender(): void {
    if (this.renderQueued) return;
    this.renderQueued = true;
    requestAnimationFrame(() => {
      this.renderQueued = false;
      this.render();
    });
  }

  private skeleton(): string {
    return `
      <header>
        <input id="runtime-url" value="http://127.0.0.1:8080" size="28">
        <button id="connect">connect</button>
        <span id="banner" class="banner">disconnected</span>
      </header>
      <main>
        <section id="fleet-panel"><h2>Fleet</h2><svg id="map" viewBox="-12 -12 24 24"></svg><div id="fleet-list"></div></section>
        <section id="task-panel"><h2>Tasks</h2>
          <form id="submit-form">
            <input id="instruction" placeholder="deliver the coffee bottle to room 207" size="40">
            <input id="priority" type="number" value="0" min="0" size="3" title="priority">
            <button type="submit">submit</button>
          </form>
          <div id="task-list"></div>
        </section>
        <section id="clarification-panel"><h2>Clarifications</h2><div id="clarification-list"></div></section>
        <section id="memory-panel"><h2>Memory</h2>
          <form id="search-form"><input id="search-query" placeholder="semantic search" size="24"><button type="submit">search</button></form>
          <div id="search-results"></div>
          <div id="anchor-list"></div>
          <div id="frame-list"></div>
        </section>
        <section id="critic-panel"><h2>Critic timelines</h2><div id="timeline-list"></div></section>
      </main>`;
  }

  private bindControls(): void {
    this.q("#connect").addEventListener("click", () => {
      const url = (this.q("#runtime-url") as HTMLInputElement).value;
      void this.connect(url);
    });
    this.q("#submit-form").addEventListener("submit", (ev) => {
      ev.preventDefault();
      const text = (this.q("#instruction") as HTMLInputElement).value;
      const priority = Number((this.q("#priority") as HTMLInputElement).value || "0");
      if (!text.trim() || !this.client) return;
      this.client.submitInstruction(text, { priority }).catch((error) => this.toastError(error));
    });
    this.q("#search-form").addEventListener("submit", (ev) => {
      ev.preventDefault();
      const query = (this.q("#search-query") as HTMLInputElement).value;
      if (!query.trim() || !this.client) return;
      this.client
        .semanticSearch(query, 5)
        .then((results) => {
          this.q("#search-results").innerHTML = results
            .map(
              (r) =>
                `<div class="result">${esc(r.category)} (${r.confidence.toFixed(2)}) @ ` +
                `(${r.pose.x.toFixed(1)}, ${r.pose.y.toFixed(1)}) [${esc(r.evidence)}]</div>`,
            )
            .join("");
        })
        .catch((error) => this.toastError(error));
    });
  }

  private q(selector: string): HTMLElement {
    const el = this.root.querySelector(selector);
    if (!el) throw new Error(`missing element ${selector}`);
    return el as HTMLElement;
  }

  private setBanner(text: string, cls: string): void {
    const banner = this.q("#banner");
    banner.textContent = text;
    banner.className = `banner ${cls}`;
  }

  private toastError(error: unknown): void {
    const message = error instanceof GatewayError ? `${error.status}: ${error.message}` : String(error);
    this.setBanner(message, "error");
  }

  render(): void {
    this.renderFleet();
    this.renderTasks();
    this.renderClarifications();
    this.renderMemory();
    this.renderTimelines();
  }

  private renderFleet(): void {
    const robots = Object.values(this.model.robots).sort((a, b) =>
      a.robotId.localeCompare(b.robotId),
    );
    const map = this.q("#map");
    map.innerHTML = robots
      .map((r) => {
        const glyph = MORPHOLOGY_GLYPHS[r.morphology] ?? "?";
        const fill = r.liveness === "connected" ? "#1a9e4b" : "#d33";
        return (
          `<g transform="translate(${r.pose.x},${-r.pose.y})">` +
          `<circle r="0.7" fill="${fill}" opacity="0.85"></circle>` +
          `<text y="0.3" text-anchor="middle" font-size="0.9" fill="#fff">${glyph}</text>` +
          `</g>`
        );
      })
      .join("");
    this.q("#fleet-list").innerHTML = robots
      .map(
        (r) =>
          `<div class="robot ${r.liveness}">${esc(r.robotId)} [${esc(r.morphology)}] ` +
          `${esc(r.liveness)} load ${r.activeSubtasks}/${r.maxConcurrent} ` +
          `at (${r.pose.x.toFixed(1)}, ${r.pose.y.toFixed(1)})</div>`,
      )
      .join("");
  }

  private renderTasks(): void {
    this.q("#task-list").innerHTML = tasksInOrder(this.model)
      .map((task) => this.taskHtml(task))
      .join("");
  }

  private taskHtml(task: TaskView): string {
    const steps = task.steps
      .map((s) => this.stepHtml(s))
      .join("");
    const report = task.report ? `<div class="report">${esc(JSON.stringify(task.report))}</div>` : "";
    return (
      `<div class="task state-${task.state}">` +
      `<div class="task-head"><b>${esc(task.taskId)}</b> [${esc(task.state)}] p${task.priority} ` +
      `${esc(task.instruction)}</div>` +
      `<div class="steps">${steps}</div>${report}</div>`
    );
  }

  private stepHtml(step: StepView): string {
    const color = STATUS_COLORS[step.status] ?? "#999";
    const robot = step.robot ? ` @${esc(step.robot)}` : "";
    return (
      `<span class="step" style="border-color: ${color}">` +
      `${esc(step.skill)}${robot} (${step.status}${step.attempt > 1 ? ` x${step.attempt}` : ""})</span>`
    );
  }

  private renderClarifications(): void {
    const open = openClarifications(this.model);
    const answered = Object.values(this.model.clarifications).filter((c) => !c.open);
    const list = this.q("#clarification-list");
    list.innerHTML =
      open
        .map(
          (c) =>
            `<div class="clarification open" data-id="${esc(c.clarificationId)}">` +
            `<div>${esc(c.question)}</div>` +
            (c.options.length
              ? c.options
                  .map((o) => `<button class="answer" data-answer="${esc(o)}">${esc(o)}</button>`)
                  .join("")
              : `<input class="free-answer" placeholder="answer"><button class="answer" data-answer="">send</button>`) +
            `</div>`,
        )
        .join("") +
      answered
        .map((c) => `<div class="clarification closed">${esc(c.question)} &rarr; ${esc(c.answer ?? "")}</div>`)
        .join("");
    for (const button of Array.from(list.querySelectorAll("button.answer"))) {
      button.addEventListener("click", () => {
        const host = (button as HTMLElement).closest(".clarification") as HTMLElement;
        const id = host.dataset.id ?? "";
        let answer = (button as HTMLElement).dataset.answer ?? "";
        if (!answer) {
          answer = (host.querySelector(".free-answer") as HTMLInputElement | null)?.value ?? "";
        }
        this.client?.answerClarification(id, answer).catch((error) => this.toastError(error));
      });
    }
  }

  private renderMemory(): void {
    this.q("#anchor-list").innerHTML =
      "<h3>Anchors</h3>" +
      this.model.anchors
        .map(
          (a) =>
            `<div class="anchor">${esc(a.name)} (${a.pose.x.toFixed(1)}, ${a.pose.y.toFixed(1)}) ` +
            `[${esc(a.registeredBy)}]</div>`,
        )
        .join("");
    const recent = this.model.frames.slice(-12).reverse();
    this.q("#frame-list").innerHTML =
      "<h3>Frames</h3>" +
      recent
        .map(
          (f) =>
            `<div class="frame">${esc(f.frameId)} t${f.simTime} by ${esc(f.robotId)}` +
            `${f.isKeyframe ? " [keyframe]" : ""} objects: ${f.objects.map(esc).join(", ") || "-"}</div>`,
        )
        .join("");
  }

  private renderTimelines(): void {
    const entries = Object.entries(this.model.criticTimelines).sort(([a], [b]) =>
      a.localeCompare(b),
    );
    this.q("#timeline-list").innerHTML = entries
      .map(([key, points]) => `<div class="timeline"><code>${esc(key)}</code>${sparkline(points)}</div>`)
      .join("");
  }
}

function sparkline(points: ScorePoint[]): string {
  if (points.length === 0) return "";
  const t0 = points[0].tick;
  const t1 = points[points.length - 1].tick;
  const width = Math.max(t1 - t0, 1);
  const coords = points
    .map((p) => `${(100 * (p.tick - t0)) / width},${30 - 28 * p.score}`)
    .join(" ");
  const markers = points
    .filter((p) => p.decision !== null)
    .map((p) => {
      const x = (100 * (p.tick - t0)) / width;
      const y = 30 - 28 * p.score;
      const color = p.decision === "complete" ? "#1a9e4b" : p.decision === "replan" ? "#d33" : "#e8a23d";
      return `<circle cx="${x}" cy="${y}" r="2.2" fill="${color}"><title>${p.decision} @${p.tick}</title></circle>`;
    })
    .join("");
  return (
    `<svg viewBox="-2 -2 104 34" class="spark">` +
    `<polyline points="${coords}" fill="none" stroke="#2a7fff" stroke-width="1"></polyline>${markers}</svg>`
  );
}

function esc(text: string): string {
  return text.replace(/[&<>"']/g, (ch) => `&#${ch.charCodeAt(0)};`);
}

declare global {
  interface Window {
    fleetloopConsole?: ConsoleApp;
  }
}

if (typeof document !== "undefined" && document.getElementById("console-root")) {
  window.fleetloopConsole = new ConsoleApp(document.getElementById("console-root") as HTMLElement);
}
