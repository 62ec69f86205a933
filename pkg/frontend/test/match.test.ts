import { beforeEach, expect, it } from "vitest";

import { GatewayClient } from "../src/api.js";
import { MatchWorkbench } from "../src/screens/match.js";
import { FakeGateway, makeRecord } from "./fake_gateway.js";

let gw: FakeGateway;
let api: GatewayClient;
let bench: MatchWorkbench;

beforeEach(async () => {
  gw = new FakeGateway();
  const seed = await gw.addIdentity("staff-a", "hospital-a", "hospital_staff");
  api = new GatewayClient("http://fake", { fetch: gw.fetch });
  await api.login("staff-a", seed);
  bench = new MatchWorkbench(api);

  gw.seed("patients", makeRecord("p1"), "hospital-a");
  gw.seed("donors", makeRecord("d1"), "hospital-a");
  gw.seed("donors", makeRecord("d2"), "hospital-b");
  gw.seed("donors", makeRecord("d3", { bloodgroup: "ab-" }), "hospital-a"); // incompatible
});

it("loads a patient with its compatible donors", async () => {
  await bench.load("p1");
  expect(bench.state.patient?.ID).toBe("p1");
  expect(bench.state.candidates).toEqual(["d1", "d2"]);
  expect(bench.state.busy).toBe(false);
  expect(bench.state.conflict).toBeNull();
});

it("commits a selection and refreshes the patient", async () => {
  await bench.load("p1");
  await bench.select("d1");
  expect(bench.state.selected?.donorId).toBe("d1");
  expect(bench.state.selected?.txId).toMatch(/^tx-/);
  expect(bench.state.patient?.status).toBe("matched");
  expect(bench.state.patient?.match).toBe("d1");
  expect(bench.state.conflict).toBeNull();
});

it("on a selection conflict shows the banner and re-runs findMatch", async () => {
  await bench.load("p1");
  expect(bench.state.candidates).toContain("d1");

  // another hospital grabs d1 between our findMatch and select
  const other = gw.donors.get("d1")!;
  other.status = "matched";
  other.match = "someone-else";

  await bench.select("d1");
  expect(bench.state.conflict).toMatch(/d1/);
  expect(bench.state.selected).toBeNull();
  // candidate list was refreshed automatically and no longer offers d1
  expect(bench.state.candidates).toEqual(["d2"]);
  expect(bench.state.busy).toBe(false);

  // picking a remaining candidate then succeeds and clears the banner
  await bench.select("d2");
  expect(bench.state.conflict).toBeNull();
  expect(bench.state.selected?.donorId).toBe("d2");
  expect(bench.state.patient?.match).toBe("d2");
});

it("keeps non-conflict failures as plain errors without refetching", async () => {
  await bench.load("p1");
  const requestsBefore = gw.requests.length;
  await bench.select("missing-donor");
  expect(bench.state.error).toMatch(/not_found/);
  expect(bench.state.conflict).toBeNull();
  // only the select itself hit the wire, no auto findMatch
  expect(gw.requests.slice(requestsBefore)).toEqual(["POST /match/select"]);
});

it("reports load failures for unknown patients", async () => {
  await bench.load("ghost");
  expect(bench.state.patient).toBeNull();
  expect(bench.state.error).toMatch(/not_found/);
});
