// Renders one contract as a card. Every field of the sharing agreement is
// shown — destination agents, data elements with their advertised types,
// function name, arguments, condition descriptors, and the per-source
// approval slots — plus lifecycle metadata (status, uses, expiry).

import { AgreementView, ApprovalSlotView, ConditionView } from "./types.js";

export interface CardOptions {
  /** Advertised type per data element id (from the discoverable listing). */
  typeById?: Map<number, string>;
  /** When set, the card offers an approve button. */
  onApprove?: (contract: AgreementView) => void;
  /** When set, the card offers a deny button plus a reason input. */
  onDeny?: (contract: AgreementView, reason: string) => void;
  /** Called when deny is clicked with an empty reason (required field). */
  onDenyMissingReason?: () => void;
  /** Overrides the status pill (e.g. after an optimistic decision). */
  statusOverride?: string;
  /** Denial reason to display, usually sourced from the audit feed. */
  denialReason?: string;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function field(dl: HTMLDListElement, label: string, value: Node | string): void {
  dl.appendChild(el("dt", undefined, label));
  const dd = el("dd");
  if (typeof value === "string") dd.textContent = value;
  else dd.appendChild(value);
  dl.appendChild(dd);
}

function elementList(
  ids: number[],
  typeById: Map<number, string>,
): HTMLUListElement {
  const ul = el("ul", "element-list");
  for (const id of ids) {
    const type = typeById.get(id) ?? "type not discoverable";
    ul.appendChild(el("li", undefined, `#${id} (${type})`));
  }
  return ul;
}

function conditionList(conditions: ConditionView[]): Node {
  if (conditions.length === 0) {
    return el("span", "slot-pending", "none declared");
  }
  const ul = el("ul", "condition-list");
  for (const c of conditions) {
    const tag = c.machine_tag ? ` [${c.machine_tag}]` : "";
    ul.appendChild(el("li", undefined, `${c.kind}: ${c.description}${tag}`));
  }
  return ul;
}

function slotList(
  srcAgents: number[],
  approvals: Record<string, ApprovalSlotView>,
): HTMLUListElement {
  const ul = el("ul", "slot-list");
  for (const agentId of srcAgents) {
    const slot = approvals[String(agentId)];
    const state = slot?.state ?? "pending";
    let text = `agent #${agentId}: ${state}`;
    if (slot?.via_rule !== null && slot?.via_rule !== undefined) {
      text += ` (via rule #${slot.via_rule})`;
    }
    if (slot?.reason) text += ` — ${slot.reason}`;
    ul.appendChild(el("li", `slot-${state}`, text));
  }
  return ul;
}

export function renderContractCard(
  contract: AgreementView,
  options: CardOptions = {},
): HTMLElement {
  const typeById = options.typeById ?? new Map<number, string>();
  const card = el("article", "card contract-card");
  card.dataset.contractId = String(contract.id);
  const status = options.statusOverride ?? contract.status;
  card.dataset.status = status;

  const header = el("h3", undefined, `Contract #${contract.id} — ${contract.function}`);
  const pill = el("span", `status-pill status-${status}`, status);
  header.appendChild(document.createTextNode(" "));
  header.appendChild(pill);
  card.appendChild(header);

  const dl = el("dl");
  field(dl, "Proposed by", `agent #${contract.proposer}`);
  field(
    dl,
    "Destination agents",
    contract.dest_agents.map((a) => `#${a}`).join(", "),
  );
  field(dl, "Data elements", elementList(contract.data_elements, typeById));
  field(dl, "Function", contract.function);
  field(dl, "Arguments", JSON.stringify(contract.args));
  field(dl, "Conditions", conditionList(contract.conditions));
  field(dl, "Approvals", slotList(contract.src_agents, contract.approvals));
  field(
    dl,
    "Uses",
    contract.max_uses === null
      ? `${contract.uses} (unlimited)`
      : `${contract.uses} of ${contract.max_uses}`,
  );
  field(
    dl,
    "Expires",
    contract.expires_at === null
      ? "never"
      : new Date(contract.expires_at * 1000).toISOString(),
  );
  field(dl, "Proposed at", new Date(contract.created_at * 1000).toISOString());
  card.appendChild(dl);

  if (options.denialReason !== undefined) {
    card.appendChild(
      el("p", "denial-reason", `Denied: ${options.denialReason}`),
    );
  }

  if (options.onApprove || options.onDeny) {
    const actions = el("div", "card-actions");
    if (options.onApprove) {
      const btn = el("button", "primary approve-btn", "Approve");
      btn.type = "button";
      btn.addEventListener("click", () => options.onApprove?.(contract));
      actions.appendChild(btn);
    }
    if (options.onDeny) {
      const reason = el("input", "deny-reason");
      reason.type = "text";
      reason.placeholder = "reason (required to deny)";
      const btn = el("button", "danger deny-btn", "Deny");
      btn.type = "button";
      btn.addEventListener("click", () => {
        const text = reason.value.trim();
        if (text === "") {
          options.onDenyMissingReason?.();
          return;
        }
        options.onDeny?.(contract, text);
      });
      actions.appendChild(reason);
      actions.appendChild(btn);
    }
    card.appendChild(actions);
  }

  return card;
}
