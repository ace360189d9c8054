/** HTML renderers for session events. String in, string out: the page glues
 * them into a list, and tests can assert on them without a DOM. */

import type { SessionEvent, ToolResultPayload } from "./client.js";

export function esc(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function chip(text: string): string {
  return `<span class="chip">${esc(text)}</span>`;
}

export function renderEvent(event: SessionEvent): string {
  const body = renderBody(event);
  return (
    `<li class="ev ev-${event.type}" data-seq="${event.seq}">` +
    `<span class="seq">#${event.seq}</span>${body}</li>`
  );
}

function renderBody(event: SessionEvent): string {
  const p = event.payload;
  switch (event.type) {
    case "think":
      return `<span class="label">think</span><span class="text">${esc(String(p.text ?? ""))}</span>`;
    case "tool_call": {
      const args = JSON.stringify(p.args ?? {});
      return (
        `<span class="label">call</span><code>${esc(String(p.tool))}.${esc(String(p.method))}</code>` +
        `<code class="args">${esc(args)}</code>`
      );
    }
    case "tool_result":
      return renderToolResult(p as unknown as ToolResultPayload);
    case "answer":
      return `<span class="label">answer</span><strong>${esc(String(p.text ?? ""))}</strong>`;
    case "aborted":
      return `<span class="label">aborted</span><em>${esc(String(p.reason ?? ""))}</em>`;
    default:
      return `<span class="label">${esc(event.type)}</span><code>${esc(JSON.stringify(p))}</code>`;
  }
}

function renderToolResult(p: ToolResultPayload): string {
  const name = p.tool ? `${p.tool}.${p.method}` : "malformed";
  let html =
    `<span class="label status-${esc(p.status.toLowerCase())}">${esc(p.status)}</span>` +
    `<code>${esc(name)}</code><span class="text">${esc(p.text)}</span>`;
  if (p.variables.length) {
    html += `<span class="vars">${p.variables.map(chip).join("")}</span>`;
  }
  if (p.image) {
    html +=
      `<img class="overlay" alt="${esc(p.image.name)}" width="${p.image.width * 2}" ` +
      `src="data:image/png;base64,${p.image.png_base64}">`;
  }
  return html;
}

export function renderStatus(state: "idle" | "streaming" | "reconnecting" | "done", detail = ""): string {
  const text = detail ? `${state}: ${detail}` : state;
  return `<span class="state state-${state}">${esc(text)}</span>`;
}
