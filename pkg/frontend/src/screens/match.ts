import { GatewayClient, isConflict } from "../api.js";
import type { RecordOut } from "../types.js";

export interface WorkbenchState {
  patient: RecordOut | null;
  candidates: string[];
  producedAt: number | null; // ledger height of the candidate list
  busy: boolean;
  conflict: string | null; // banner: somebody else took the donor first
  selected: { donorId: string; txId: string; block: number } | null;
  error: string | null;
}

/**
 * Staff matchmaking flow: load a patient, fetch compatible donors, commit a
 * selection. Selection is exclusive on-chain, so two hospitals picking the
 * same donor race; the loser gets a 409. When that happens we show the
 * conflict banner and immediately re-run findMatch so the list on screen is
 * never the stale one the user just lost with.
 */
export class MatchWorkbench {
  state: WorkbenchState = {
    patient: null,
    candidates: [],
    producedAt: null,
    busy: false,
    conflict: null,
    selected: null,
    error: null,
  };
  private listeners: Array<(s: WorkbenchState) => void> = [];

  constructor(private api: GatewayClient) {}

  onChange(fn: (s: WorkbenchState) => void): void {
    this.listeners.push(fn);
  }

  private emit(patch: Partial<WorkbenchState>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) fn(this.state);
  }

  async load(patientId: string): Promise<void> {
    this.emit({ busy: true, error: null, conflict: null, selected: null });
    try {
      const patient = await this.api.getPatient(patientId);
      this.emit({ patient });
      await this.refresh();
    } catch (err) {
      this.emit({ busy: false, error: String(err), patient: null, candidates: [] });
    }
  }

  /** Re-run findMatch for the loaded patient. */
  async refresh(): Promise<void> {
    const patient = this.state.patient;
    if (!patient) return;
    this.emit({ busy: true });
    try {
      const found = await this.api.findMatch(patient.ID);
      this.emit({ busy: false, candidates: found.candidates, producedAt: found.produced_at });
    } catch (err) {
      this.emit({ busy: false, error: String(err) });
    }
  }

  async select(donorId: string): Promise<void> {
    const patient = this.state.patient;
    if (!patient) return;
    this.emit({ busy: true, conflict: null, error: null });
    try {
      const ack = await this.api.selectMatch(patient.ID, donorId);
      const refreshed = await this.api.getPatient(patient.ID);
      this.emit({
        busy: false,
        patient: refreshed,
        selected: { donorId, txId: ack.tx_id, block: ack.block_number },
        candidates: [],
      });
    } catch (err) {
      if (isConflict(err)) {
        // lost the race (or the pair got locked); banner + fresh candidates
        this.emit({ conflict: `${donorId}: ${err.detail}` });
        await this.refresh();
      } else {
        this.emit({ busy: false, error: String(err) });
      }
    }
  }
}
