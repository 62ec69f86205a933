import { beforeEach, expect, it } from "vitest";

import { GatewayClient } from "../src/api.js";
import { RecordsScreen } from "../src/screens/records.js";
import { FakeGateway, makeRecord } from "./fake_gateway.js";

let gw: FakeGateway;

beforeEach(async () => {
  gw = new FakeGateway();
  gw.seed("patients", makeRecord("pa"), "hospital-a");
  gw.seed("patients", makeRecord("pb"), "hospital-b");
  gw.seed("donors", makeRecord("da"), "hospital-a");
});

async function loginAs(id: string, org: string, role: string): Promise<GatewayClient> {
  const seed = await gw.addIdentity(id, org, role);
  const api = new GatewayClient("http://fake", { fetch: gw.fetch });
  await api.login(id, seed);
  return api;
}

it("staff see their own hospital and can write", async () => {
  const api = await loginAs("staff-a", "hospital-a", "hospital_staff");
  const screen = new RecordsScreen(api, "patient");
  expect(screen.canWrite).toBe(true);
  expect(screen.canDelete).toBe(true);

  await screen.load();
  expect(screen.state.rows.map((r) => r.ID)).toEqual(["pa"]);

  await screen.add(makeRecord("p-new"));
  expect(screen.state.rows.map((r) => r.ID).sort()).toEqual(["p-new", "pa"]);

  await screen.remove("pa");
  expect(screen.state.rows.map((r) => r.ID)).toEqual(["p-new"]);
  expect(screen.state.error).toBeNull();
});

it("auditors see everything read-only", async () => {
  const api = await loginAs("aud", "gov", "government_auditor");
  const screen = new RecordsScreen(api, "patient");
  expect(screen.canWrite).toBe(false);
  expect(screen.canDelete).toBe(false);

  await screen.load();
  expect(screen.state.rows.map((r) => r.ID).sort()).toEqual(["pa", "pb"]);
});

it("surfaces a denied write as an error and keeps the rows", async () => {
  const api = await loginAs("aud", "gov", "government_auditor");
  const screen = new RecordsScreen(api, "donor");
  await screen.load();
  expect(screen.state.rows.map((r) => r.ID)).toEqual(["da"]);

  await screen.add(makeRecord("d-no"));
  expect(screen.state.error).toMatch(/unauthorized/);
  expect(gw.donors.has("d-no")).toBe(false);
});

it("patients get exactly their own record", async () => {
  gw.seed("patients", makeRecord("self-1"), "hospital-a");
  const api = await loginAs("self-1", "hospital-a", "patient");
  const screen = new RecordsScreen(api, "patient");
  await screen.load();
  expect(screen.state.rows.map((r) => r.ID)).toEqual(["self-1"]);
  expect(screen.canWrite).toBe(false);
});
