import { GatewayClient } from "../api.js";
import type { ChainVerifyOut, PeerOut } from "../types.js";

export interface AdminState {
  peers: PeerOut[];
  chain: ChainVerifyOut | null;
  error: string | null;
}

/** Operator view: joined peers plus a hash-chain verification sweep. */
export class AdminPanel {
  state: AdminState = { peers: [], chain: null, error: null };

  constructor(private api: GatewayClient) {}

  async load(): Promise<AdminState> {
    try {
      const [peers, chain] = await Promise.all([this.api.peers(), this.api.chainVerify()]);
      this.state = { peers, chain, error: null };
    } catch (err) {
      this.state = { peers: [], chain: null, error: String(err) };
    }
    return this.state;
  }
}
