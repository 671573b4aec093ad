// Holds the console's connection state. The bearer token lives only in
// sessionStorage (cleared when the browser session ends) and the data key
// only in memory; neither is ever written to localStorage or a URL.

const STORAGE_KEY = "escrow.console.session";

interface StoredSession {
  baseUrl: string;
  token: string;
  agentId: number;
}

export class ConsoleSession {
  baseUrl: string;
  token: string | null = null;
  agentId: number | null = null;
  /** AES key for unsealing released outputs; memory only, never persisted. */
  dataKey: Uint8Array | null = null;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  get loggedIn(): boolean {
    return this.token !== null;
  }

  start(token: string, agentId: number): void {
    this.token = token;
    this.agentId = agentId;
    const record: StoredSession = {
      baseUrl: this.baseUrl,
      token,
      agentId,
    };
    sessionStorage.setItem(STORAGE_KEY, JSON.stringify(record));
  }

  /** Restore a session persisted earlier in the same browser session. */
  resume(): boolean {
    const raw = sessionStorage.getItem(STORAGE_KEY);
    if (raw === null) return false;
    try {
      const record = JSON.parse(raw) as StoredSession;
      if (record.baseUrl !== this.baseUrl) return false;
      this.token = record.token;
      this.agentId = record.agentId;
      return true;
    } catch {
      sessionStorage.removeItem(STORAGE_KEY);
      return false;
    }
  }

  end(): void {
    this.token = null;
    this.agentId = null;
    this.dataKey = null;
    sessionStorage.removeItem(STORAGE_KEY);
  }
}
