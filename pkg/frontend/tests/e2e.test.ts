// Scripted browser session against the live fixture server: log in, submit
// the data key, decide the waiting contracts, invoke the released function,
// download and unseal the output, and watch the audit trail — all through
// the mounted console, exactly as a human agent would.
import { readFileSync } from "node:fs";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { EscrowClient } from "../src/api.js";
import { App } from "../src/app.js";
import { ConsoleSession } from "../src/session.js";

const here = path.dirname(fileURLToPath(import.meta.url));

interface Fixture {
  url: string;
  alice_key_b64: string;
  alice_password: string;
  bob_password: string;
  agent_ids: { alice: number; bob: number };
  de1: number;
  c1: number;
  c2: number;
  shared_text: string;
  long_tag: string;
}

interface Download {
  filename: string;
  bytes: Uint8Array;
  mime: string;
}

let fixture: Fixture;
let app: App;
let root: HTMLElement;
const downloads: Download[] = [];
let c3 = -1;

function q<T extends Element>(selector: string): T {
  const node = root.querySelector<T>(selector);
  if (node === null) throw new Error(`missing element: ${selector}`);
  return node;
}

function maybe<T extends Element>(selector: string): T | null {
  return root.querySelector<T>(selector);
}

function submitForm(form: HTMLFormElement): void {
  form.dispatchEvent(new Event("submit", { bubbles: true, cancelable: true }));
}

function clickTab(name: string): void {
  q<HTMLButtonElement>(`nav.tabs button[data-tab="${name}"]`).click();
}

function clickSubTab(name: string): void {
  q<HTMLButtonElement>(`#subtab-${name}`).click();
}

function toastText(): string {
  return q<HTMLElement>("#toast-region").textContent ?? "";
}

async function settle(): Promise<void> {
  await app.whenIdle();
  await app.poll();
}

beforeAll(() => {
  fixture = JSON.parse(
    readFileSync(path.join(here, ".server.json"), "utf8"),
  ) as Fixture;
  root = document.createElement("div");
  root.id = "app";
  document.body.appendChild(root);
  app = new App(root, {
    baseUrl: fixture.url,
    pollMs: 3_600_000, // the test drives refreshes explicitly
    downloadSink: (filename, bytes, mime) =>
      downloads.push({ filename, bytes, mime }),
  });
});

afterAll(() => {
  app.stop();
});

describe("console end-to-end session", () => {
  it("logs in through the form and keeps the token off disk and URL", async () => {
    app.mount();
    expect(maybe("#login-form")).not.toBeNull();

    q<HTMLInputElement>("#login-external-id").value = "alice";
    q<HTMLInputElement>("#login-password").value = fixture.alice_password;
    submitForm(q<HTMLFormElement>("#login-form"));
    await app.whenIdle();

    expect(q<HTMLElement>("#agent-label").textContent).toBe(
      `agent #${fixture.agent_ids.alice}`,
    );
    const stored = sessionStorage.getItem("escrow.console.session");
    expect(stored).not.toBeNull();
    expect(stored).toContain(app.session.token as string);
    expect(localStorage.length).toBe(0);
    expect(window.location.href).not.toContain(app.session.token as string);
  });

  it("submits the data key through the key form without echoing it", async () => {
    clickTab("key");
    const input = q<HTMLInputElement>("#key-input");
    input.value = fixture.alice_key_b64;
    submitForm(q<HTMLFormElement>("#key-form"));
    expect(q<HTMLInputElement>("#key-input").value).toBe(""); // cleared at once
    await app.whenIdle();

    expect(toastText()).toContain("Key accepted.");
    expect(document.documentElement.outerHTML).not.toContain(
      fixture.alice_key_b64,
    );
    expect(localStorage.length).toBe(0);
  });

  it("renders the waiting contracts with every agreement field", async () => {
    await settle();
    clickTab("contracts");

    const c1 = q<HTMLElement>(`[data-contract-id="${fixture.c1}"]`);
    const text = c1.textContent ?? "";
    expect(text).toContain(`Contract #${fixture.c1} — combine`);
    expect(text).toContain(`agent #${fixture.agent_ids.bob}`); // proposer
    expect(text).toContain(`#${fixture.agent_ids.alice}`); // destination
    expect(text).toContain(`#${fixture.de1} (kv)`); // element id + type
    expect(text).toContain("__wildcard__"); // args shown in full
    expect(text).toContain("hello");
    expect(text).toContain("pre: tag length within bounds [tag-length]");
    expect(text).toContain(`agent #${fixture.agent_ids.bob}: approved`);
    expect(text).toContain(`agent #${fixture.agent_ids.alice}: pending`);
    expect(text).toContain("(unlimited)");

    const c2 = q<HTMLElement>(`[data-contract-id="${fixture.c2}"]`);
    expect(c2.textContent).toContain('{"tag":"risky"}');
    expect(c2.textContent).toContain("0 of 1");
  });

  it("refuses to deny without a reason", async () => {
    const card = q<HTMLElement>(`[data-contract-id="${fixture.c2}"]`);
    card.querySelector<HTMLButtonElement>(".deny-btn")?.click();
    await app.whenIdle();

    expect(toastText()).toContain("A reason is required to deny a contract.");
    expect(maybe(`[data-contract-id="${fixture.c2}"]`)).not.toBeNull();
  });

  it("denies with a reason; the audit feed and the card show it", async () => {
    const card = q<HTMLElement>(`[data-contract-id="${fixture.c2}"]`);
    const reason = card.querySelector<HTMLInputElement>(".deny-reason");
    if (reason === null) throw new Error("deny reason input missing");
    reason.value = "insufficient safeguards";
    card.querySelector<HTMLButtonElement>(".deny-btn")?.click();

    // Optimistic update: the card leaves the pending list immediately.
    expect(maybe(`#contract-list [data-contract-id="${fixture.c2}"]`)).toBeNull();
    await settle();

    clickTab("audit");
    const entry = q<HTMLElement>(
      `#audit-feed li[data-kind="denial"][data-contract-id="${fixture.c2}"]`,
    );
    expect(entry.textContent).toContain("insufficient safeguards");

    clickTab("contracts");
    clickSubTab("approved");
    const decided = q<HTMLElement>(`[data-contract-id="${fixture.c2}"]`);
    expect(decided.dataset.status).toBe("denied");
    expect(decided.textContent).toContain("Denied: insufficient safeguards");
  });

  it("approves the final pending slot and observes status approved", async () => {
    clickSubTab("pending");
    const card = q<HTMLElement>(`[data-contract-id="${fixture.c1}"]`);
    card.querySelector<HTMLButtonElement>(".approve-btn")?.click();

    expect(maybe(`#contract-list [data-contract-id="${fixture.c1}"]`)).toBeNull();
    await settle();

    clickSubTab("approved");
    const decided = q<HTMLElement>(`[data-contract-id="${fixture.c1}"]`);
    expect(decided.dataset.status).toBe("approved");
    expect(decided.querySelector(".status-pill")?.textContent).toBe("approved");
  });

  it("shows the empty state once nothing is pending", async () => {
    clickSubTab("pending");
    // Other suites sharing this server may have left contracts waiting on
    // this agent's slot; clear them through the UI like a user would.
    for (let guard = 0; guard < 20; guard += 1) {
      const card = maybe<HTMLElement>("#contract-list .contract-card");
      if (card === null) break;
      const reason = card.querySelector<HTMLInputElement>(".deny-reason");
      if (reason === null) throw new Error("deny reason input missing");
      reason.value = "cleanup sweep";
      card.querySelector<HTMLButtonElement>(".deny-btn")?.click();
      await settle();
      clickSubTab("pending");
    }
    expect(maybe("#pending-empty")).not.toBeNull();
  });

  it("invokes the approved function and downloads the unsealed output", async () => {
    clickTab("functions");
    const form = q<HTMLFormElement>('form[data-fn="combine"]');
    form.querySelector<HTMLInputElement>('input[data-param="tag"]')!.value =
      "hello";
    submitForm(form);
    await app.whenIdle();

    const banner = q<HTMLElement>(".released-banner");
    expect(banner.textContent).toContain(`under contract #${fixture.c1}`);

    q<HTMLButtonElement>(".download-btn").click();
    await app.whenIdle();

    expect(downloads).toHaveLength(1);
    expect(downloads[0].filename).toBe(`contract-${fixture.c1}-output.json`);
    expect(downloads[0].mime).toBe("application/json");
    const payload = JSON.parse(new TextDecoder().decode(downloads[0].bytes));
    expect(payload).toEqual({ tag: "hello", joined: fixture.shared_text });
  });

  it("shows condition failures verbatim", async () => {
    const form = q<HTMLFormElement>('form[data-fn="combine"]');
    form.querySelector<HTMLInputElement>('input[data-param="tag"]')!.value =
      fixture.long_tag;
    submitForm(form);
    await app.whenIdle();

    const banner = q<HTMLElement>(".failure-banner");
    expect(banner.dataset.outcome).toBe("precondition_failed");
    expect(q<HTMLElement>(".failure-message").textContent).toBe(
      "Tag length constraint failed.",
    );
  });

  it("surfaces a 422 when no contract matches the call", async () => {
    const form = q<HTMLFormElement>('form[data-fn="combine"]');
    form.querySelector<HTMLInputElement>('input[data-param="tag"]')!.value =
      "nope";
    submitForm(form);
    await app.whenIdle();

    expect(toastText()).toContain("NoMatchingContract");
  });

  it("lists only this agent's rules and registers a new one", async () => {
    await settle();
    clickTab("rules");
    const list = q<HTMLElement>("#rule-list");
    expect(list.textContent).toContain("auto-approve summaries");

    const { rules } = await app.client.rules();
    for (const rule of rules) {
      expect(rule.owner).toBe(fixture.agent_ids.alice);
    }

    q<HTMLInputElement>("#rule-functions").value = "summarize";
    q<HTMLInputElement>("#rule-description").value = "tab-created rule";
    submitForm(q<HTMLFormElement>("#rule-form"));
    await app.whenIdle();

    expect(toastText()).toContain("registered");
    expect(q<HTMLElement>("#rule-list").textContent).toContain(
      "tab-created rule",
    );
  });

  it("shows rule-matched proposals in approved, never in pending", async () => {
    const bobSession = new ConsoleSession(fixture.url);
    const bob = new EscrowClient(bobSession);
    const login = await bob.login("bob", fixture.bob_password);
    bobSession.token = login.token;
    bobSession.agentId = login.agent_id;

    const proposal = await bob.propose({
      dest_agents: [fixture.agent_ids.bob],
      de_ids: [fixture.de1],
      function: "summarize",
      args: { title: "weekly digest" },
      max_uses: 1,
    });
    c3 = proposal.contract_id;
    await bob.approve(c3);

    await settle();
    clickTab("contracts");
    clickSubTab("pending");
    expect(maybe(`[data-contract-id="${c3}"]`)).toBeNull();
    expect(maybe("#pending-empty")).not.toBeNull();

    clickSubTab("approved");
    const entry = q<HTMLElement>(
      `#rule-approved-list li[data-contract-id="${c3}"]`,
    );
    expect(entry.textContent).toContain("via rule #");
  });

  it("keeps secrets out of local storage, URLs, and the page", () => {
    expect(localStorage.length).toBe(0);
    const token = app.session.token as string;
    expect(window.location.href).not.toContain(token);
    const page = document.documentElement.outerHTML;
    expect(page).not.toContain(token);
    expect(page).not.toContain(fixture.alice_key_b64);
  });
});
