import { beforeEach, describe, expect, it } from "vitest";

import { ApiError, GatewayClient, isConflict } from "../src/api.js";
import { bytesToHex, hexToBytes } from "../src/crypto.js";
import { FakeGateway, makeRecord } from "./fake_gateway.js";

let gw: FakeGateway;
let staffSeed: string;

beforeEach(async () => {
  gw = new FakeGateway();
  staffSeed = await gw.addIdentity("staff-a", "hospital-a", "hospital_staff");
  await gw.addIdentity("auditor-1", "gov", "government_auditor");
});

function client(): GatewayClient {
  return new GatewayClient("http://fake", { fetch: gw.fetch });
}

describe("hex helpers", () => {
  it("round-trips", () => {
    const bytes = new Uint8Array([0, 1, 0xab, 0xff]);
    expect(hexToBytes(bytesToHex(bytes))).toEqual(bytes);
  });
  it("rejects junk", () => {
    expect(() => hexToBytes("zz")).toThrow(/not hex/);
    expect(() => hexToBytes("abc")).toThrow(/not hex/);
  });
});

describe("login", () => {
  it("signs the nonce and stores the session", async () => {
    const api = client();
    const session = await api.login("staff-a", staffSeed);
    expect(session.org_id).toBe("hospital-a");
    expect(session.role).toBe("hospital_staff");
    expect(api.token).toBe(session.token);
    expect(api.identity?.identity_id).toBe("staff-a");
  });

  it("rejects a wrong key with 401", async () => {
    const wrongSeed = bytesToHex(crypto.getRandomValues(new Uint8Array(32)));
    await expect(client().login("staff-a", wrongSeed)).rejects.toMatchObject({
      status: 401,
      code: "bad_login",
    });
  });

  it("rejects unknown identities before signing", async () => {
    await expect(client().login("ghost", staffSeed)).rejects.toMatchObject({
      status: 401,
      code: "unknown_identity",
    });
  });
});

describe("records", () => {
  it("registers and reads back a patient", async () => {
    const api = client();
    await api.login("staff-a", staffSeed);
    const ack = await api.addPatient(makeRecord("p1"));
    expect(ack.flag).toBe("valid");
    expect(ack.block_number).toBeGreaterThan(0);
    const rec = await api.getPatient("p1");
    expect(rec.hospitalId).toBe("hospital-a");
    expect(rec.status).toBe("waiting");
  });

  it("surfaces duplicate registration as a 409 ApiError", async () => {
    const api = client();
    await api.login("staff-a", staffSeed);
    await api.addPatient(makeRecord("p1"));
    const err = await api.addPatient(makeRecord("p1")).catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).code).toBe("duplicate_id");
    expect(isConflict(err)).toBe(true);
  });

  it("maps 404 and 403 onto codes screens can branch on", async () => {
    const api = client();
    await api.login("staff-a", staffSeed);
    await expect(api.getPatient("nope")).rejects.toMatchObject({
      status: 404,
      code: "not_found",
    });
    gw.seed("patients", makeRecord("pb"), "hospital-b");
    await expect(api.getPatient("pb")).rejects.toMatchObject({
      status: 403,
      code: "unauthorized",
    });
    // 403 is not a conflict
    expect(isConflict(await api.getPatient("pb").catch((e: unknown) => e))).toBe(false);
  });

  it("encodes record ids in paths", async () => {
    const api = client();
    await api.login("staff-a", staffSeed);
    await api.addPatient(makeRecord("p 1/odd"));
    const rec = await api.getPatient("p 1/odd");
    expect(rec.ID).toBe("p 1/odd");
  });

  it("auditors list every hospital, staff only their own", async () => {
    gw.seed("patients", makeRecord("pa"), "hospital-a");
    gw.seed("patients", makeRecord("pb"), "hospital-b");
    const auditorSeed = await gw.addIdentity("auditor-2", "gov", "government_auditor");
    const api = client();
    await api.login("auditor-2", auditorSeed);
    const all = await api.allPatients();
    expect(all.map((r) => r.ID).sort()).toEqual(["pa", "pb"]);

    const staff = client();
    await staff.login("staff-a", staffSeed);
    const mine = await staff.hospitalPatients("hospital-a");
    expect(mine.map((r) => r.ID)).toEqual(["pa"]);
    await expect(staff.allPatients()).rejects.toMatchObject({ status: 403 });
  });
});
