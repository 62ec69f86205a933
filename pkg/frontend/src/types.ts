// Wire types for the gateway. Field names follow the chaincode format
// (camelCase IDs like `organRequired`), which the REST layer passes through
// unchanged; gateway-level envelopes use snake_case.

export type RecordKind = "patient" | "donor";

export interface RecordIn {
  ID: string;
  firstName: string;
  lastName: string;
  age: number;
  phoneNumber: string;
  address: string;
  organRequired: string;
  bloodgroup: string;
  gender: string;
  medhistory: string;
}

export interface RecordOut extends RecordIn {
  hospitalId: string;
  match: string;
  status: string; // waiting | available | matched
}

export interface LoginResponse {
  token: string;
  identity_id: string;
  org_id: string;
  role: string;
  expires_at: number;
}

export interface WriteAck {
  tx_id: string;
  flag: string; // "valid" once committed
  block_number: number;
  result?: Record<string, unknown> | null;
}

export interface FindMatchOut {
  patientId: string;
  candidates: string[];
  produced_at: number; // ledger height the candidate list was computed at
}

export interface StatusOut {
  patientId: string;
  status: "Waiting" | "Matched";
  matchedDonorId?: string | null;
  registered_at: number;
  waiting_time_s: number;
}

export interface TxOut {
  tx_id: string;
  block_number: number;
  tx_index: number;
  flag: string;
  method: string;
  chaincode_event?: Record<string, unknown> | null;
}

export interface ChainVerifyOut {
  ok: boolean;
  height: number;
  bad_block?: number | null;
}

export interface PeerOut {
  peer_id: string;
  org_id: string;
  channels: string[];
}

export interface TransportNotice {
  noticeId: string;
  patientId: string;
  donorId: string;
  organ: string;
  sourceHospital: string;
  destinationHospital: string;
  createdAtBlock: number;
}

export interface ErrorBody {
  error: string; // machine slug: unauthorized, not_a_match, mvcc_conflict, ...
  detail: string;
  tx_id?: string;
}
