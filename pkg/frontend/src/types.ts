// Typed views of the escrow server's JSON payloads. These mirror the REST
// responses field-for-field; the console performs no computation on data
// element content and treats every payload as display material.

export interface ApprovalSlotView {
  agent_id: number;
  state: "pending" | "approved" | "denied";
  timestamp: number;
  reason: string;
  via_rule: number | null;
}

export interface ConditionView {
  kind: string; // "pre"/"precondition" or "post"/"postcondition"
  description: string;
  machine_tag: string | null;
}

export type AgreementStatus =
  | "proposed"
  | "approved"
  | "denied"
  | "executed"
  | "expired";

export interface AgreementView {
  id: number;
  proposer: number;
  dest_agents: number[];
  data_elements: number[];
  function: string;
  args: Record<string, unknown>;
  src_agents: number[];
  conditions: ConditionView[];
  approvals: Record<string, ApprovalSlotView>;
  status: AgreementStatus;
  max_uses: number | null;
  uses: number;
  expires_at: number | null;
  created_at: number;
}

export interface ParamView {
  name: string;
  annotation: string;
  default: string | null; // repr of the default, null when required
}

export interface FunctionView {
  name: string;
  kind: "api_endpoint" | "contract_function" | "both" | "helper";
  params: ParamView[];
  doc: string;
}

export interface AuditEventView {
  seq: number;
  kind: string; // proposal | approval | denial | execution | short_circuit | recovery
  actor: number;
  contract_id: number | null;
  detail: Record<string, unknown>;
  timestamp: number;
}

export interface DiscoverableElement {
  id: number;
  type: string;
}

export interface RuleView {
  id: number;
  owner: number;
  decision: "approve" | "reject";
  functions: string[] | null;
  de_ids: number[] | null;
  dest_agents: number[] | null;
  description: string;
}

export interface ConditionOutcomeView {
  kind: "released" | "precondition_failed" | "postcondition_failed";
  message: string;
}

export interface ExecutionView {
  contract_id: number;
  condition_outcome: ConditionOutcomeView;
  output_b64: string | null;
  output_de_id: number | null;
  timing: Record<string, number>;
}

export type CallResponse =
  | { kind: "execution"; result: ExecutionView }
  | { kind: "endpoint"; result: unknown };

export interface LoginResponse {
  token: string;
  agent_id: number;
}

/** Error raised for any non-2xx response; mirrors the {code, message} body. */
export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.code = code;
  }
}
