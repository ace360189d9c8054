/** Page wiring: fixture picker, message box, live event list, abort. */

import { follow, SessionClient } from "./client.js";
import type { SessionEvent } from "./client.js";
import { renderEvent, renderStatus } from "./view.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const apiInput = el<HTMLInputElement>("api-url");
const fixtureSelect = el<HTMLSelectElement>("fixture");
const connectBtn = el<HTMLButtonElement>("connect");
const newSessionBtn = el<HTMLButtonElement>("new-session");
const abortBtn = el<HTMLButtonElement>("abort");
const messageInput = el<HTMLTextAreaElement>("message");
const sendBtn = el<HTMLButtonElement>("send");
const eventList = el<HTMLUListElement>("events");
const statusLine = el<HTMLElement>("status");
const questionLine = el<HTMLElement>("question");

let client: SessionClient | null = null;
let sessionId: string | null = null;
let stopFollowing: AbortController | null = null;

function setStatus(state: "idle" | "streaming" | "reconnecting" | "done", detail = "") {
  statusLine.innerHTML = renderStatus(state, detail);
}

function appendEvent(event: SessionEvent) {
  eventList.insertAdjacentHTML("beforeend", renderEvent(event));
  eventList.lastElementChild?.scrollIntoView({ block: "nearest" });
}

async function loadFixtures() {
  client = new SessionClient(apiInput.value);
  const fixtures = await client.listFixtures();
  fixtureSelect.innerHTML = fixtures
    .map((f) => `<option value="${f.id}">${f.id} (${f.task ?? "free"})</option>`)
    .join("");
  fixtureSelect.onchange = () => {
    const picked = fixtures.find((f) => f.id === fixtureSelect.value);
    questionLine.textContent = picked?.question ?? "";
  };
  fixtureSelect.onchange(new Event("change"));
  setStatus("idle", `${fixtures.length} fixtures`);
}

async function startSession() {
  if (!client) return;
  stopFollowing?.abort();
  eventList.innerHTML = "";
  sessionId = await client.createSession({ fixtureId: fixtureSelect.value });
  setStatus("idle", `session ${sessionId}`);

  stopFollowing = new AbortController();
  // tail forever; each terminal event ends one rollout, so chain restarts
  void (async () => {
    let after = 0;
    while (!stopFollowing?.signal.aborted) {
      setStatus("streaming", `session ${sessionId}`);
      after = await follow(client!, sessionId!, {
        after,
        signal: stopFollowing!.signal,
        onEvent: appendEvent,
        onReconnect: () => setStatus("reconnecting", `from #${after}`),
      });
      setStatus("done", `turn complete at #${after}`);
    }
  })();
}

async function sendMessage() {
  if (!client || !sessionId) return;
  const text = messageInput.value;
  if (!text.trim()) return;
  try {
    await client.sendMessage(sessionId, text);
    messageInput.value = "";
  } catch (err) {
    setStatus("idle", String(err));
  }
}

async function abortRollout() {
  if (!client || !sessionId) return;
  await client.abort(sessionId);
}

connectBtn.onclick = () => void loadFixtures().catch((err) => setStatus("idle", String(err)));
newSessionBtn.onclick = () => void startSession().catch((err) => setStatus("idle", String(err)));
sendBtn.onclick = () => void sendMessage();
abortBtn.onclick = () => void abortRollout();
messageInput.onkeydown = (ev) => {
  if (ev.key === "Enter" && (ev.ctrlKey || ev.metaKey)) void sendMessage();
};
