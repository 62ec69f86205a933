import { GatewayClient } from "../api.js";
import type { RecordIn, RecordKind, RecordOut } from "../types.js";

export interface RecordsState {
  rows: RecordOut[];
  busy: boolean;
  error: string | null;
}

/**
 * Patient or donor listing backed by whichever route the logged-in role can
 * actually use: staff see their hospital's records, administrators and
 * auditors see every hospital, patients see just their own row.
 */
export class RecordsScreen {
  state: RecordsState = { rows: [], busy: false, error: null };
  private listeners: Array<(s: RecordsState) => void> = [];

  constructor(
    private api: GatewayClient,
    readonly kind: RecordKind,
  ) {}

  onChange(fn: (s: RecordsState) => void): void {
    this.listeners.push(fn);
  }

  private emit(patch: Partial<RecordsState>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) fn(this.state);
  }

  get canWrite(): boolean {
    return this.api.identity?.role === "hospital_staff";
  }
  get canDelete(): boolean {
    const role = this.api.identity?.role;
    return role === "hospital_staff" || role === "administrator";
  }

  async load(): Promise<void> {
    const ident = this.api.identity;
    if (!ident) throw new Error("not logged in");
    this.emit({ busy: true, error: null });
    try {
      let rows: RecordOut[];
      if (ident.role === "hospital_staff") {
        rows =
          this.kind === "patient"
            ? await this.api.hospitalPatients(ident.org_id)
            : await this.api.hospitalDonors(ident.org_id);
      } else if (ident.role === "patient") {
        rows = this.kind === "patient" ? [await this.api.getPatient(ident.identity_id)] : [];
      } else {
        rows = this.kind === "patient" ? await this.api.allPatients() : await this.api.allDonors();
      }
      this.emit({ busy: false, rows });
    } catch (err) {
      this.emit({ busy: false, error: String(err), rows: [] });
    }
  }

  async add(rec: RecordIn): Promise<void> {
    this.emit({ busy: true, error: null });
    try {
      if (this.kind === "patient") await this.api.addPatient(rec);
      else await this.api.addDonor(rec);
    } catch (err) {
      this.emit({ busy: false, error: String(err) });
      return;
    }
    await this.load();
  }

  async remove(id: string): Promise<void> {
    this.emit({ busy: true, error: null });
    try {
      if (this.kind === "patient") await this.api.deletePatient(id);
      else await this.api.deleteDonor(id);
    } catch (err) {
      this.emit({ busy: false, error: String(err) });
      return;
    }
    await this.load();
  }
}
