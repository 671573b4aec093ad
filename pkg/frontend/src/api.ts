// Thin typed client over the escrow REST surface. Every method maps to
// exactly one route; non-2xx responses become ApiError carrying the
// server's {code, message} body verbatim.

import {
  AgreementView,
  ApiError,
  AuditEventView,
  CallResponse,
  DiscoverableElement,
  FunctionView,
  LoginResponse,
  RuleView,
} from "./types.js";
import { ConsoleSession } from "./session.js";

async function parseError(res: Response): Promise<ApiError> {
  let code = "HttpError";
  let message = `${res.status} ${res.statusText}`;
  try {
    const body = (await res.json()) as { code?: string; message?: string };
    if (typeof body.code === "string") code = body.code;
    if (typeof body.message === "string") message = body.message;
  } catch {
    // non-JSON body: keep the status line
  }
  return new ApiError(res.status, code, message);
}

export class EscrowClient {
  constructor(private readonly session: ConsoleSession) {}

  private headers(json = true): Record<string, string> {
    const h: Record<string, string> = {};
    if (json) h["content-type"] = "application/json";
    if (this.session.token !== null) {
      h["authorization"] = `Bearer ${this.session.token}`;
    }
    return h;
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const res = await fetch(`${this.session.baseUrl}${path}`, {
      method,
      headers: this.headers(body !== undefined),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!res.ok) throw await parseError(res);
    if (res.status === 204) return undefined as T;
    return (await res.json()) as T;
  }

  registerAgent(
    name: string,
    externalId: string,
    password: string,
  ): Promise<{ agent_id: number }> {
    return this.request("POST", "/agents", {
      name,
      external_id: externalId,
      password,
    });
  }

  login(externalId: string, password: string): Promise<LoginResponse> {
    return this.request("POST", "/login", {
      external_id: externalId,
      password,
    });
  }

  submitKey(keyB64: string): Promise<void> {
    return this.request("POST", "/keys", { key_b64: keyB64 });
  }

  registerData(
    type: string,
    accessParameters: Record<string, unknown>,
    discoverable: boolean,
  ): Promise<{ de_id: number }> {
    return this.request("POST", "/data", {
      type,
      access_parameters: accessParameters,
      discoverable,
    });
  }

  async uploadContent(deId: number, content: Uint8Array): Promise<void> {
    const res = await fetch(
      `${this.session.baseUrl}/data/${deId}/content`,
      {
        method: "PUT",
        headers: {
          ...this.headers(false),
          "content-type": "application/octet-stream",
        },
        body: content as unknown as BodyInit,
      },
    );
    if (!res.ok) throw await parseError(res);
  }

  discoverable(): Promise<{ elements: DiscoverableElement[] }> {
    return this.request("GET", "/data/discoverable");
  }

  propose(body: {
    dest_agents: number[];
    de_ids: number[];
    function: string;
    args: Record<string, unknown>;
    max_uses?: number | null;
    expires_at?: number | null;
  }): Promise<{ contract_id: number; status: string }> {
    return this.request("POST", "/contracts", body);
  }

  pendingContracts(): Promise<{ contracts: AgreementView[] }> {
    return this.request("GET", "/contracts/pending");
  }

  approve(contractId: number): Promise<{ status: string }> {
    return this.request("POST", `/contracts/${contractId}/approve`, {});
  }

  deny(contractId: number, reason: string): Promise<{ status: string }> {
    return this.request("POST", `/contracts/${contractId}/deny`, { reason });
  }

  registerRule(body: {
    decision: "approve" | "reject";
    functions?: string[] | null;
    de_ids?: number[] | null;
    dest_agents?: number[] | null;
    description?: string;
  }): Promise<{ rule_id: number }> {
    return this.request("POST", "/rules", body);
  }

  rules(): Promise<{ rules: RuleView[] }> {
    return this.request("GET", "/rules");
  }

  functions(): Promise<{ functions: FunctionView[] }> {
    return this.request("GET", "/functions");
  }

  call(name: string, args: Record<string, unknown>): Promise<CallResponse> {
    return this.request("POST", `/functions/${name}/call`, { args });
  }

  audit(): Promise<{ events: AuditEventView[] }> {
    return this.request("GET", "/audit");
  }

  healthz(): Promise<{ status: string; agents: number }> {
    return this.request("GET", "/healthz");
  }
}
