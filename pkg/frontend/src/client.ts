/** Typed client for the session API: create, message, abort, event stream.
 *
 * Events arrive as NDJSON over GET /sessions/{sid}/events?after=N. The server
 * closes the stream whenever the session goes idle, so `follow` keeps
 * re-opening it from the last seen seq until a terminal event (answer or
 * aborted) shows up. Reconnects can never duplicate: the resume cursor is the
 * seq itself, and anything at or below it is dropped.
 */

export interface ToolResultPayload {
  tool: string | null;
  method: string | null;
  status: string;
  text: string;
  image: { name: string; png_base64: string; width: number; height: number } | null;
  variables: string[];
}

export interface SessionEvent {
  type: "think" | "tool_call" | "tool_result" | "answer" | "aborted";
  payload: Record<string, unknown>;
  seq: number;
}

export interface FixtureInfo {
  id: string;
  task: string | null;
  question: string | null;
}

export type CreateSource =
  | { fixtureId: string; seed?: number }
  | { imageBase64: string; seed?: number };

const TERMINAL: ReadonlySet<string> = new Set(["answer", "aborted"]);

async function jsonOrThrow(resp: Response): Promise<any> {
  if (!resp.ok) {
    let detail = `HTTP ${resp.status}`;
    try {
      const body = await resp.json();
      if (body && typeof body.error === "string") detail = body.error;
    } catch {
      // non-JSON error body; keep the status line
    }
    throw new Error(detail);
  }
  return resp.json();
}

export class SessionClient {
  constructor(readonly baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  async listFixtures(): Promise<FixtureInfo[]> {
    return jsonOrThrow(await fetch(`${this.baseUrl}/fixtures`));
  }

  async createSession(source: CreateSource): Promise<string> {
    const body: Record<string, unknown> = { seed: source.seed ?? 0 };
    if ("fixtureId" in source) body.fixture_id = source.fixtureId;
    else body.image = source.imageBase64;
    const doc = await jsonOrThrow(
      await fetch(`${this.baseUrl}/sessions`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      }),
    );
    return doc.session_id as string;
  }

  async sendMessage(sid: string, text: string): Promise<number> {
    const doc = await jsonOrThrow(
      await fetch(`${this.baseUrl}/sessions/${sid}/message`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ text }),
      }),
    );
    return doc.turn as number;
  }

  async abort(sid: string): Promise<boolean> {
    const doc = await jsonOrThrow(
      await fetch(`${this.baseUrl}/sessions/${sid}/abort`, { method: "POST" }),
    );
    return doc.was_active as boolean;
  }

  /** One connection's worth of events; ends when the server closes it. */
  async *events(sid: string, after: number, signal?: AbortSignal): AsyncGenerator<SessionEvent> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sid}/events?after=${after}`, { signal });
    if (!resp.ok) {
      const body = await resp.json().catch(() => ({}));
      throw new Error(body.error ?? `HTTP ${resp.status}`);
    }
    if (!resp.body) throw new Error("no response body");

    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      while (true) {
        const { value, done } = await reader.read();
        if (done) break;
        buffer += decoder.decode(value, { stream: true });
        const lines = buffer.split("\n");
        buffer = lines.pop() ?? "";
        for (const line of lines) {
          if (!line.trim()) continue;
          yield JSON.parse(line) as SessionEvent;
        }
      }
      if (buffer.trim()) yield JSON.parse(buffer) as SessionEvent;
    } finally {
      // runs on early exit too (consumer break / abort); drop the connection
      // instead of leaving a half-read stream in the pool
      reader.cancel().catch(() => {});
    }
  }
}

export interface FollowOptions {
  after?: number;
  /** pause between reconnects, both after errors and after idle closes */
  retryDelayMs?: number;
  signal?: AbortSignal;
  onEvent: (event: SessionEvent) => void;
  /** called when a dropped connection is about to be reopened */
  onReconnect?: (lastSeq: number) => void;
}

function sleep(ms: number, signal?: AbortSignal): Promise<void> {
  if (signal?.aborted) return Promise.resolve();
  return new Promise((resolve) => {
    const id = setTimeout(resolve, ms);
    signal?.addEventListener(
      "abort",
      () => {
        clearTimeout(id);
        resolve();
      },
      { once: true },
    );
  });
}

/**
 * Tail a session until a terminal event or the signal aborts.
 * Returns the last seq delivered. Guarantees the onEvent callback sees a
 * strictly increasing seq sequence with no duplicates across reconnects.
 */
export async function follow(
  client: SessionClient,
  sid: string,
  opts: FollowOptions,
): Promise<number> {
  let last = opts.after ?? 0;
  const delay = opts.retryDelayMs ?? 250;
  while (!opts.signal?.aborted) {
    try {
      for await (const event of client.events(sid, last, opts.signal)) {
        if (event.seq <= last) continue; // replayed on resume: drop
        last = event.seq;
        opts.onEvent(event);
        if (TERMINAL.has(event.type)) return last;
        // don't block on another read once the consumer has pulled the plug
        if (opts.signal?.aborted) return last;
      }
    } catch (err) {
      if (opts.signal?.aborted) break;
      opts.onReconnect?.(last);
      await sleep(delay, opts.signal);
      continue;
    }
    // clean close: the rollout went idle without a terminal event, keep tailing
    await sleep(delay, opts.signal);
  }
  return last;
}
