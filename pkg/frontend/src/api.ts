import { importSigningSeed, signNonce } from "./crypto.js";
import type {
  ChainVerifyOut,
  ErrorBody,
  FindMatchOut,
  LoginResponse,
  PeerOut,
  RecordIn,
  RecordOut,
  StatusOut,
  TxOut,
  WriteAck,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string,
    readonly txId?: string,
  ) {
    super(`${status} ${code}: ${detail}`);
  }
}

export const isConflict = (e: unknown): e is ApiError =>
  e instanceof ApiError && e.status === 409;

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/**
 * Typed client for the gateway. Holds the bearer token after login();
 * every error response is raised as ApiError with the server's machine
 * slug so screens can branch on `code` instead of string-matching detail.
 */
export class GatewayClient {
  token = "";
  identity: LoginResponse | null = null;
  private fetchImpl: FetchLike;

  constructor(
    readonly baseUrl: string,
    opts: { fetch?: FetchLike } = {},
  ) {
    // bind: bare `fetch` loses its `this` in browsers
    this.fetchImpl = opts.fetch ?? ((input, init) => fetch(input, init));
  }

  async login(identityId: string, seedHex: string): Promise<LoginResponse> {
    const key = await importSigningSeed(seedHex);
    const { nonce } = await this.request<{ nonce: string }>("POST", "/auth/nonce", {
      identity_id: identityId,
    });
    const signature = await signNonce(key, nonce);
    const session = await this.request<LoginResponse>("POST", "/auth/login", {
      identity_id: identityId,
      nonce,
      signature,
    });
    this.token = session.token;
    this.identity = session;
    return session;
  }

  async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    if (body !== undefined) headers["Content-Type"] = "application/json";
    const resp = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) {
      let parsed: Partial<ErrorBody> & { detail?: unknown } = {};
      try {
        parsed = (await resp.json()) as ErrorBody;
      } catch {
        // non-JSON error body; keep the status
      }
      const detail =
        typeof parsed.detail === "string" ? parsed.detail : JSON.stringify(parsed.detail ?? "");
      throw new ApiError(resp.status, parsed.error ?? "http_error", detail, parsed.tx_id);
    }
    if (resp.status === 204) return undefined as T;
    return (await resp.json()) as T;
  }

  // -- records ------------------------------------------------------------

  addPatient(rec: RecordIn): Promise<WriteAck> {
    return this.request("POST", "/patients", rec);
  }
  addDonor(rec: RecordIn): Promise<WriteAck> {
    return this.request("POST", "/donors", rec);
  }
  getPatient(id: string): Promise<RecordOut> {
    return this.request("GET", `/patients/${encodeURIComponent(id)}`);
  }
  getDonor(id: string): Promise<RecordOut> {
    return this.request("GET", `/donors/${encodeURIComponent(id)}`);
  }
  allPatients(): Promise<RecordOut[]> {
    return this.request("GET", "/patients");
  }
  allDonors(): Promise<RecordOut[]> {
    return this.request("GET", "/donors");
  }
  hospitalPatients(org: string): Promise<RecordOut[]> {
    return this.request("GET", `/hospitals/${encodeURIComponent(org)}/patients`);
  }
  hospitalDonors(org: string): Promise<RecordOut[]> {
    return this.request("GET", `/hospitals/${encodeURIComponent(org)}/donors`);
  }
  deletePatient(id: string): Promise<WriteAck> {
    return this.request("DELETE", `/patients/${encodeURIComponent(id)}`);
  }
  deleteDonor(id: string): Promise<WriteAck> {
    return this.request("DELETE", `/donors/${encodeURIComponent(id)}`);
  }

  // -- matchmaking ----------------------------------------------------------

  patientStatus(id: string): Promise<StatusOut> {
    return this.request("GET", `/patients/${encodeURIComponent(id)}/status`);
  }
  findMatch(patientId: string): Promise<FindMatchOut> {
    return this.request("POST", `/patients/${encodeURIComponent(patientId)}/find-match`);
  }
  selectMatch(patientId: string, donorId: string): Promise<WriteAck> {
    return this.request("POST", "/match/select", { patientId, donorId });
  }

  // -- ledger + admin ---------------------------------------------------------

  tx(txId: string): Promise<TxOut> {
    return this.request("GET", `/tx/${encodeURIComponent(txId)}`);
  }
  chainVerify(): Promise<ChainVerifyOut> {
    return this.request("GET", "/chain/verify");
  }
  peers(): Promise<PeerOut[]> {
    return this.request("GET", "/admin/peers");
  }
}
