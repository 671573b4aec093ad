// Single-page console over the escrow REST surface. Pure client: every
// action maps to one documented route, state is whatever the server
// returns, and the only client-side secret handling is the in-memory data
// key used to unseal released outputs for download.

import { EscrowClient } from "./api.js";
import { renderContractCard } from "./card.js";
import { b64decode, unsealOutput } from "./crypto.js";
import { ConsoleSession } from "./session.js";
import {
  AgreementView,
  ApiError,
  AuditEventView,
  DiscoverableElement,
  ExecutionView,
  FunctionView,
  RuleView,
} from "./types.js";

export type DownloadSink = (
  filename: string,
  bytes: Uint8Array,
  mime: string,
) => void;

export interface AppOptions {
  baseUrl: string;
  /** Refresh cadence; the console polls rather than using server push. */
  pollMs?: number;
  /** Receives downloaded output bytes; defaults to a browser save dialog. */
  downloadSink?: DownloadSink;
}

type TabName = "data" | "contracts" | "functions" | "rules" | "audit" | "key";
type SubTab = "pending" | "approved";

interface DecidedCard {
  contract: AgreementView;
  status: string;
  reason?: string;
}

interface LastCall {
  fn: string;
  kind: "execution" | "endpoint";
  execution?: ExecutionView;
  endpoint?: unknown;
}

function browserDownload(filename: string, bytes: Uint8Array, mime: string): void {
  const blob = new Blob([bytes as unknown as BlobPart], { type: mime });
  const url = URL.createObjectURL(blob);
  const a = document.createElement("a");
  a.href = url;
  a.download = filename;
  a.click();
  URL.revokeObjectURL(url);
}

export class App {
  readonly session: ConsoleSession;
  readonly client: EscrowClient;

  private readonly root: HTMLElement;
  private readonly pollMs: number;
  private readonly downloadSink: DownloadSink;
  private timer: ReturnType<typeof setInterval> | null = null;
  private readonly inflight = new Set<Promise<unknown>>();

  private tab: TabName = "contracts";
  private subTab: SubTab = "pending";
  private pending: AgreementView[] = [];
  private decided = new Map<number, DecidedCard>();
  private functions: FunctionView[] = [];
  private rules: RuleView[] = [];
  private discoverable: DiscoverableElement[] = [];
  private audit: AuditEventView[] = [];
  private auditRestricted = false;
  private lastCall: LastCall | null = null;
  private lastSnapshot = "";

  constructor(root: HTMLElement, options: AppOptions) {
    this.root = root;
    this.session = new ConsoleSession(options.baseUrl);
    this.client = new EscrowClient(this.session);
    this.pollMs = options.pollMs ?? 2000;
    this.downloadSink = options.downloadSink ?? browserDownload;
  }

  // ---- lifecycle ---------------------------------------------------------

  mount(): void {
    if (this.session.resume()) {
      this.enterMain();
    } else {
      this.renderLogin();
    }
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** Resolves once every in-flight request handler has settled. */
  async whenIdle(): Promise<void> {
    while (this.inflight.size > 0) {
      await Promise.allSettled([...this.inflight]);
    }
  }

  private track<T>(promise: Promise<T>): Promise<T> {
    this.inflight.add(promise);
    promise.finally(() => this.inflight.delete(promise)).catch(() => undefined);
    return promise;
  }

  // ---- polling -----------------------------------------------------------

  async poll(): Promise<void> {
    if (!this.session.loggedIn) return;
    const jobs: Promise<void>[] = [
      this.client
        .pendingContracts()
        .then((r) => {
          this.pending = r.contracts;
        })
        .catch(() => undefined),
      this.client
        .functions()
        .then((r) => {
          this.functions = r.functions;
        })
        .catch(() => undefined),
      this.client
        .rules()
        .then((r) => {
          this.rules = r.rules;
        })
        .catch(() => undefined),
      this.client
        .discoverable()
        .then((r) => {
          this.discoverable = r.elements;
        })
        .catch(() => undefined),
    ];
    if (!this.auditRestricted) {
      jobs.push(
        this.client
          .audit()
          .then((r) => {
            this.audit = r.events;
          })
          .catch((err) => {
            if (err instanceof ApiError && err.code === "NotOwner") {
              this.auditRestricted = true;
            }
          }),
      );
    }
    await Promise.all(jobs);
    const snapshot = this.snapshot();
    if (snapshot !== this.lastSnapshot) {
      this.lastSnapshot = snapshot;
      this.renderTabContent();
    }
  }

  private snapshot(): string {
    return JSON.stringify({
      tab: this.tab,
      subTab: this.subTab,
      pending: this.pending,
      decided: [...this.decided.entries()],
      functions: this.functions,
      rules: this.rules,
      discoverable: this.discoverable,
      auditLen: this.audit.length,
      auditRestricted: this.auditRestricted,
      lastCall: this.lastCall,
    });
  }

  // ---- login / logout ------------------------------------------------------

  private renderLogin(): void {
    this.root.replaceChildren();
    const view = document.createElement("div");
    view.id = "login-view";
    const form = document.createElement("form");
    form.id = "login-form";
    form.className = "stack";
    form.innerHTML = `
      <h2>Escrow Console</h2>
      <label>Agent id
        <input id="login-external-id" autocomplete="username" />
      </label>
      <label>Password
        <input id="login-password" type="password" autocomplete="current-password" />
      </label>
      <button class="primary" type="submit">Log in</button>
    `;
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const externalId = (
        form.querySelector("#login-external-id") as HTMLInputElement
      ).value.trim();
      const password = (
        form.querySelector("#login-password") as HTMLInputElement
      ).value;
      this.track(this.login(externalId, password));
    });
    view.appendChild(form);
    this.root.appendChild(view);
    this.ensureToastRegion();
  }

  private async login(externalId: string, password: string): Promise<void> {
    try {
      const res = await this.client.login(externalId, password);
      this.session.start(res.token, res.agent_id);
      this.enterMain();
    } catch (err) {
      this.toastError(err);
    }
  }

  private enterMain(): void {
    this.renderMain();
    this.stop();
    this.timer = setInterval(() => {
      void this.track(this.poll());
    }, this.pollMs);
    void this.track(this.poll());
  }

  private logout(): void {
    this.stop();
    this.session.end();
    this.decided.clear();
    this.pending = [];
    this.audit = [];
    this.auditRestricted = false;
    this.lastCall = null;
    this.lastSnapshot = "";
    this.renderLogin();
  }

  // ---- main frame ----------------------------------------------------------

  private renderMain(): void {
    this.root.replaceChildren();
    const view = document.createElement("div");
    view.id = "main-view";

    const header = document.createElement("header");
    header.className = "console-header";
    const title = document.createElement("h2");
    title.textContent = "Escrow Console";
    const who = document.createElement("span");
    who.id = "agent-label";
    who.textContent = `agent #${this.session.agentId}`;
    const logout = document.createElement("button");
    logout.id = "logout";
    logout.textContent = "Log out";
    logout.addEventListener("click", () => this.logout());
    header.append(title, who, logout);
    view.appendChild(header);

    const tabs = document.createElement("nav");
    tabs.className = "tabs";
    const names: TabName[] = [
      "data",
      "contracts",
      "functions",
      "rules",
      "audit",
      "key",
    ];
    for (const name of names) {
      const btn = document.createElement("button");
      btn.dataset.tab = name;
      btn.textContent = name;
      btn.addEventListener("click", () => {
        this.tab = name;
        this.renderTabs();
        this.renderTabContent();
      });
      tabs.appendChild(btn);
    }
    view.appendChild(tabs);

    const content = document.createElement("div");
    content.id = "tab-content";
    view.appendChild(content);

    this.root.appendChild(view);
    this.ensureToastRegion();
    this.renderTabs();
    this.renderTabContent();
  }

  private renderTabs(): void {
    for (const btn of this.root.querySelectorAll<HTMLButtonElement>(
      "nav.tabs button",
    )) {
      btn.classList.toggle("active", btn.dataset.tab === this.tab);
    }
  }

  private content(): HTMLElement | null {
    return this.root.querySelector("#tab-content");
  }

  private renderTabContent(): void {
    const content = this.content();
    if (content === null) return;
    content.replaceChildren();
    switch (this.tab) {
      case "data":
        this.renderData(content);
        break;
      case "contracts":
        this.renderContracts(content);
        break;
      case "functions":
        this.renderFunctions(content);
        break;
      case "rules":
        this.renderRules(content);
        break;
      case "audit":
        this.renderAudit(content);
        break;
      case "key":
        this.renderKeyForm(content);
        break;
    }
  }

  // ---- toasts ---------------------------------------------------------------

  private ensureToastRegion(): void {
    if (this.root.querySelector("#toast-region") === null) {
      const region = document.createElement("div");
      region.id = "toast-region";
      this.root.appendChild(region);
    }
  }

  toast(text: string, kind: "error" | "info" = "error"): void {
    const region = this.root.querySelector("#toast-region");
    if (region === null) return;
    const node = document.createElement("div");
    node.className = kind === "info" ? "toast info" : "toast";
    node.textContent = text;
    region.appendChild(node);
    setTimeout(() => node.remove(), 6000);
  }

  private toastError(err: unknown): void {
    if (err instanceof ApiError) {
      this.toast(`${err.code}: ${err.message}`);
    } else {
      this.toast(String(err));
    }
  }

  // ---- data tab ---------------------------------------------------------------

  private renderData(content: HTMLElement): void {
    const heading = document.createElement("h3");
    heading.textContent = "Discoverable data elements";
    content.appendChild(heading);
    if (this.discoverable.length === 0) {
      const empty = document.createElement("div");
      empty.className = "empty-state";
      empty.textContent = "No discoverable data elements.";
      content.appendChild(empty);
      return;
    }
    const table = document.createElement("table");
    table.id = "data-table";
    const head = document.createElement("tr");
    head.innerHTML = "<th>id</th><th>type</th>";
    table.appendChild(head);
    for (const element of this.discoverable) {
      const row = document.createElement("tr");
      row.dataset.deId = String(element.id);
      const idCell = document.createElement("td");
      idCell.textContent = `#${element.id}`;
      const typeCell = document.createElement("td");
      typeCell.textContent = element.type;
      row.append(idCell, typeCell);
      table.appendChild(row);
    }
    content.appendChild(table);
  }

  // ---- contracts tab -------------------------------------------------------------

  private typeById(): Map<number, string> {
    return new Map(this.discoverable.map((e) => [e.id, e.type]));
  }

  private renderContracts(content: HTMLElement): void {
    const subtabs = document.createElement("nav");
    subtabs.className = "tabs subtabs";
    for (const name of ["pending", "approved"] as SubTab[]) {
      const btn = document.createElement("button");
      btn.id = `subtab-${name}`;
      btn.dataset.subtab = name;
      btn.textContent = name;
      btn.classList.toggle("active", this.subTab === name);
      btn.addEventListener("click", () => {
        this.subTab = name;
        this.renderTabContent();
      });
      subtabs.appendChild(btn);
    }
    content.appendChild(subtabs);

    const list = document.createElement("div");
    list.id = "contract-list";
    content.appendChild(list);

    if (this.subTab === "pending") this.renderPending(list);
    else this.renderDecided(list);
  }

  private renderPending(list: HTMLElement): void {
    if (this.pending.length === 0) {
      const empty = document.createElement("div");
      empty.className = "empty-state";
      empty.id = "pending-empty";
      empty.textContent = "No contracts are waiting for your approval.";
      list.appendChild(empty);
      return;
    }
    const typeById = this.typeById();
    for (const contract of this.pending) {
      list.appendChild(
        renderContractCard(contract, {
          typeById,
          onApprove: (c) => this.track(this.approve(c)),
          onDeny: (c, reason) => this.track(this.deny(c, reason)),
          onDenyMissingReason: () =>
            this.toast("A reason is required to deny a contract."),
        }),
      );
    }
  }

  private async approve(contract: AgreementView): Promise<void> {
    // Optimistic: the card leaves the pending list immediately and is
    // reconciled with the server's answer (or restored on failure).
    this.pending = this.pending.filter((c) => c.id !== contract.id);
    this.decided.set(contract.id, { contract, status: "approved" });
    this.renderTabContent();
    try {
      const res = await this.client.approve(contract.id);
      this.decided.set(contract.id, { contract, status: res.status });
    } catch (err) {
      this.decided.delete(contract.id);
      this.pending = [contract, ...this.pending];
      this.toastError(err);
    }
    this.renderTabContent();
  }

  private async deny(contract: AgreementView, reason: string): Promise<void> {
    this.pending = this.pending.filter((c) => c.id !== contract.id);
    this.decided.set(contract.id, { contract, status: "denied", reason });
    this.renderTabContent();
    try {
      const res = await this.client.deny(contract.id, reason);
      this.decided.set(contract.id, { contract, status: res.status, reason });
    } catch (err) {
      this.decided.delete(contract.id);
      this.pending = [contract, ...this.pending];
      this.toastError(err);
    }
    this.renderTabContent();
  }

  private denialReasonFromAudit(contractId: number): string | undefined {
    for (const event of this.audit) {
      if (event.kind === "denial" && event.contract_id === contractId) {
        const reason = event.detail["reason"];
        if (typeof reason === "string") return reason;
      }
    }
    return undefined;
  }

  private renderDecided(list: HTMLElement): void {
    const typeById = this.typeById();
    const entries = [...this.decided.values()].sort(
      (a, b) => a.contract.id - b.contract.id,
    );
    const ruleApproved = this.ruleApprovedFromAudit();
    if (entries.length === 0 && ruleApproved.length === 0) {
      const empty = document.createElement("div");
      empty.className = "empty-state";
      empty.id = "decided-empty";
      empty.textContent = "You have not decided any contracts yet.";
      list.appendChild(empty);
      return;
    }
    const decidedList = document.createElement("div");
    decidedList.id = "decided-list";
    for (const entry of entries) {
      const denialReason =
        entry.status === "denied"
          ? this.denialReasonFromAudit(entry.contract.id) ?? entry.reason
          : undefined;
      decidedList.appendChild(
        renderContractCard(entry.contract, {
          typeById,
          statusOverride: entry.status,
          denialReason,
        }),
      );
    }
    list.appendChild(decidedList);

    if (ruleApproved.length > 0) {
      const extra = document.createElement("div");
      extra.id = "approved-extra";
      const heading = document.createElement("h4");
      heading.textContent = "Approved by standing rule";
      extra.appendChild(heading);
      const ul = document.createElement("ul");
      ul.id = "rule-approved-list";
      for (const line of ruleApproved) {
        const li = document.createElement("li");
        li.textContent = line.text;
        li.dataset.contractId = String(line.contractId);
        ul.appendChild(li);
      }
      extra.appendChild(ul);
      list.appendChild(extra);
    }
  }

  private ruleApprovedFromAudit(): { contractId: number; text: string }[] {
    const seen = new Set<number>();
    const lines: { contractId: number; text: string }[] = [];
    for (const event of this.audit) {
      if (event.kind !== "approval" || event.contract_id === null) continue;
      const viaRule = event.detail["via_rule"];
      if (viaRule === undefined || viaRule === null) continue;
      if (seen.has(event.contract_id)) continue;
      seen.add(event.contract_id);
      lines.push({
        contractId: event.contract_id,
        text:
          `Contract #${event.contract_id}: agent #${event.actor}'s slot ` +
          `approved via rule #${viaRule}`,
      });
    }
    return lines;
  }

  // ---- functions tab ---------------------------------------------------------------

  private renderFunctions(content: HTMLElement): void {
    const heading = document.createElement("h3");
    heading.textContent = "Callable functions";
    content.appendChild(heading);
    for (const fn of this.functions) {
      content.appendChild(this.functionForm(fn));
    }
    const resultRegion = document.createElement("div");
    resultRegion.id = "call-result";
    content.appendChild(resultRegion);
    this.renderCallResult(resultRegion);
  }

  private functionForm(fn: FunctionView): HTMLElement {
    const card = document.createElement("article");
    card.className = "card";
    const form = document.createElement("form");
    form.className = "stack function-form";
    form.dataset.fn = fn.name;

    const title = document.createElement("h3");
    title.textContent = `${fn.name} (${fn.kind})`;
    form.appendChild(title);
    if (fn.doc) {
      const doc = document.createElement("p");
      doc.textContent = fn.doc;
      form.appendChild(doc);
    }

    for (const param of fn.params) {
      const label = document.createElement("label");
      const caption = param.annotation
        ? `${param.name} (${param.annotation})`
        : param.name;
      label.appendChild(document.createTextNode(caption));
      const input = document.createElement("input");
      input.name = param.name;
      input.dataset.param = param.name;
      if (param.default !== null) {
        input.placeholder = `default: ${param.default}`;
      }
      label.appendChild(input);
      form.appendChild(label);
    }

    const submit = document.createElement("button");
    submit.type = "submit";
    submit.className = "primary call-btn";
    submit.textContent = "Call";
    form.appendChild(submit);

    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const args: Record<string, unknown> = {};
      for (const input of form.querySelectorAll<HTMLInputElement>(
        "input[data-param]",
      )) {
        const raw = input.value;
        if (raw === "") continue; // omitted: server applies the default
        args[input.dataset.param as string] = parseArgValue(raw);
      }
      this.track(this.invoke(fn.name, args));
    });

    card.appendChild(form);
    return card;
  }

  private async invoke(
    name: string,
    args: Record<string, unknown>,
  ): Promise<void> {
    try {
      const res = await this.client.call(name, args);
      if (res.kind === "execution") {
        this.lastCall = { fn: name, kind: "execution", execution: res.result };
      } else {
        this.lastCall = { fn: name, kind: "endpoint", endpoint: res.result };
      }
      this.renderTabContent();
    } catch (err) {
      this.toastError(err);
    }
  }

  private renderCallResult(region: HTMLElement): void {
    region.replaceChildren();
    const last = this.lastCall;
    if (last === null) return;

    if (last.kind === "endpoint") {
      const pre = document.createElement("pre");
      pre.id = "endpoint-result";
      pre.textContent = JSON.stringify(last.endpoint, null, 2);
      region.appendChild(pre);
      return;
    }

    const exec = last.execution as ExecutionView;
    const outcome = exec.condition_outcome;
    if (outcome.kind === "released") {
      const banner = document.createElement("div");
      banner.className = "released-banner";
      banner.textContent =
        `Output released for ${last.fn} under contract ` +
        `#${exec.contract_id}. `;
      const download = document.createElement("button");
      download.className = "download-btn";
      download.type = "button";
      download.textContent = "Download output";
      download.addEventListener("click", () => {
        this.track(this.download(exec));
      });
      banner.appendChild(download);
      region.appendChild(banner);
      if (exec.output_de_id !== null) {
        const note = document.createElement("p");
        note.textContent = `Stored in the escrow as data element #${exec.output_de_id}.`;
        region.appendChild(note);
      }
    } else {
      const banner = document.createElement("div");
      banner.className = "failure-banner";
      banner.dataset.outcome = outcome.kind;
      const label = document.createElement("strong");
      label.textContent =
        outcome.kind === "precondition_failed"
          ? "Precondition failed: "
          : "Postcondition failed: ";
      banner.appendChild(label);
      // The condition message is shown exactly as the function reported it.
      const message = document.createElement("span");
      message.className = "failure-message";
      message.textContent = outcome.message;
      banner.appendChild(message);
      region.appendChild(banner);
    }
  }

  private async download(exec: ExecutionView): Promise<void> {
    if (exec.output_b64 === null) return;
    const sealed = b64decode(exec.output_b64);
    if (this.session.dataKey === null) {
      this.downloadSink(
        `contract-${exec.contract_id}-output.sealed`,
        sealed,
        "application/octet-stream",
      );
      this.toast(
        "No data key on file; downloaded the sealed bytes. Submit your key to unseal.",
        "info",
      );
      return;
    }
    try {
      const plain = await unsealOutput(this.session.dataKey, sealed);
      this.downloadSink(
        `contract-${exec.contract_id}-output.json`,
        plain,
        "application/json",
      );
    } catch {
      this.toast("The stored data key does not unseal this output.");
    }
  }

  // ---- rules tab -----------------------------------------------------------------

  private renderRules(content: HTMLElement): void {
    const heading = document.createElement("h3");
    heading.textContent = "Your standing rules";
    content.appendChild(heading);

    const list = document.createElement("ul");
    list.id = "rule-list";
    if (this.rules.length === 0) {
      const empty = document.createElement("div");
      empty.className = "empty-state";
      empty.id = "rules-empty";
      empty.textContent = "No standing rules registered.";
      content.appendChild(empty);
    } else {
      for (const rule of this.rules) {
        const li = document.createElement("li");
        li.dataset.ruleId = String(rule.id);
        const fns = rule.functions === null ? "any function" : rule.functions.join(", ");
        const des =
          rule.de_ids === null
            ? "any of your elements"
            : rule.de_ids.map((d) => `#${d}`).join(", ");
        const dests =
          rule.dest_agents === null
            ? "any destination"
            : rule.dest_agents.map((a) => `#${a}`).join(", ");
        li.textContent =
          `Rule #${rule.id}: ${rule.decision} — ${fns}; elements ${des}; ` +
          `destinations ${dests}` +
          (rule.description ? ` — ${rule.description}` : "");
        list.appendChild(li);
      }
      content.appendChild(list);
    }

    content.appendChild(this.ruleForm());
  }

  private ruleForm(): HTMLElement {
    const form = document.createElement("form");
    form.id = "rule-form";
    form.className = "stack";
    form.innerHTML = `
      <h3>Register a standing rule</h3>
      <label>Decision
        <select id="rule-decision">
          <option value="approve">approve</option>
          <option value="reject">reject</option>
        </select>
      </label>
      <label>Function names (comma separated; blank = any)
        <input id="rule-functions" />
      </label>
      <label>Data element ids (comma separated; blank = any of yours)
        <input id="rule-de-ids" />
      </label>
      <label>Destination agent ids (comma separated; blank = any)
        <input id="rule-dest-agents" />
      </label>
      <label>Description
        <input id="rule-description" />
      </label>
      <button class="primary" type="submit">Register rule</button>
    `;
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const value = (id: string): string =>
        (form.querySelector(`#${id}`) as HTMLInputElement).value.trim();
      const csv = (text: string): string[] =>
        text
          .split(",")
          .map((s) => s.trim())
          .filter((s) => s !== "");
      const functions = csv(value("rule-functions"));
      const deIds = csv(value("rule-de-ids")).map((s) => Number(s));
      const destAgents = csv(value("rule-dest-agents")).map((s) => Number(s));
      const decision = (
        form.querySelector("#rule-decision") as HTMLSelectElement
      ).value as "approve" | "reject";
      this.track(
        this.registerRule({
          decision,
          functions: functions.length > 0 ? functions : null,
          de_ids: deIds.length > 0 ? deIds : null,
          dest_agents: destAgents.length > 0 ? destAgents : null,
          description: value("rule-description"),
        }),
      );
    });
    return form;
  }

  private async registerRule(body: {
    decision: "approve" | "reject";
    functions: string[] | null;
    de_ids: number[] | null;
    dest_agents: number[] | null;
    description: string;
  }): Promise<void> {
    try {
      const res = await this.client.registerRule(body);
      this.toast(`Rule #${res.rule_id} registered.`, "info");
      const rules = await this.client.rules();
      this.rules = rules.rules;
      this.renderTabContent();
    } catch (err) {
      this.toastError(err);
    }
  }

  // ---- audit tab ---------------------------------------------------------------

  private renderAudit(content: HTMLElement): void {
    const heading = document.createElement("h3");
    heading.textContent = "Audit trail";
    content.appendChild(heading);
    if (this.auditRestricted) {
      const notice = document.createElement("p");
      notice.className = "restricted-notice";
      notice.textContent = "The audit trail is restricted to configured auditors.";
      content.appendChild(notice);
      return;
    }
    const feed = document.createElement("ol");
    feed.id = "audit-feed";
    for (const event of this.audit) {
      const li = document.createElement("li");
      li.dataset.kind = event.kind;
      if (event.contract_id !== null) {
        li.dataset.contractId = String(event.contract_id);
      }
      li.textContent = describeAuditEvent(event);
      feed.appendChild(li);
    }
    content.appendChild(feed);
  }

  // ---- key tab -----------------------------------------------------------------

  private renderKeyForm(content: HTMLElement): void {
    const form = document.createElement("form");
    form.id = "key-form";
    form.className = "stack";
    form.innerHTML = `
      <h3>Submit your data key</h3>
      <p>The key authorizes your durable records and unseals outputs released
      to you. It is sent once to the server and kept only in memory here;
      it is never stored or shown again.</p>
      <label>Key (base64, 32 bytes)
        <input id="key-input" type="password" autocomplete="off" />
      </label>
      <button class="primary" type="submit">Submit key</button>
    `;
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const input = form.querySelector("#key-input") as HTMLInputElement;
      const keyB64 = input.value.trim();
      input.value = "";
      if (keyB64 === "") {
        this.toast("Paste your base64 key first.");
        return;
      }
      this.track(this.submitKey(keyB64));
    });
    content.appendChild(form);
  }

  private async submitKey(keyB64: string): Promise<void> {
    let bytes: Uint8Array;
    try {
      bytes = b64decode(keyB64);
    } catch {
      this.toast("The key must be base64 encoded.");
      return;
    }
    try {
      await this.client.submitKey(keyB64);
      this.session.dataKey = bytes;
      this.toast("Key accepted.", "info");
    } catch (err) {
      this.toastError(err);
    }
  }
}

function parseArgValue(raw: string): unknown {
  try {
    return JSON.parse(raw);
  } catch {
    return raw; // bare strings may be typed without quotes
  }
}

export function describeAuditEvent(event: AuditEventView): string {
  const where =
    event.contract_id === null ? "" : ` on contract #${event.contract_id}`;
  let detail = "";
  if (event.kind === "denial") {
    const reason = event.detail["reason"];
    detail = ` — reason: ${typeof reason === "string" ? reason : ""}`;
  } else if (event.kind === "approval") {
    const viaRule = event.detail["via_rule"];
    detail =
      viaRule !== undefined && viaRule !== null ? ` — via rule #${viaRule}` : "";
  } else if (Object.keys(event.detail).length > 0) {
    detail = ` — ${JSON.stringify(event.detail)}`;
  }
  return `#${event.seq} ${event.kind} by agent #${event.actor}${where}${detail}`;
}
