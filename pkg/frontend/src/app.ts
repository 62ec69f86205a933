// DOM bootstrap. All behavior lives in the screen controllers; this file
// only renders their state and forwards clicks, so it stays untested glue.

import { GatewayClient } from "./api.js";
import { AdminPanel } from "./screens/admin.js";
import { MatchWorkbench } from "./screens/match.js";
import { RecordsScreen } from "./screens/records.js";
import { TransportBoard } from "./screens/transport.js";
import type { RecordIn, RecordOut } from "./types.js";

const app = document.getElementById("app")!;
const esc = (s: unknown): string =>
  String(s).replace(/[&<>"']/g, (c) => `&#${c.charCodeAt(0)};`);

function h(html: string): HTMLElement {
  const div = document.createElement("div");
  div.innerHTML = html;
  return div;
}

function recordRow(r: RecordOut, deletable: boolean): string {
  return `<tr>
    <td>${esc(r.ID)}</td><td>${esc(r.firstName)} ${esc(r.lastName)}</td>
    <td>${esc(r.organRequired)}</td><td>${esc(r.bloodgroup)}</td>
    <td>${esc(r.hospitalId)}</td><td>${esc(r.status)}</td><td>${esc(r.match)}</td>
    <td>${deletable ? `<button data-del="${esc(r.ID)}">delete</button>` : ""}</td>
  </tr>`;
}

function recordsView(title: string, screen: RecordsScreen): HTMLElement {
  const el = h(`<section>
    <h2>${esc(title)}</h2>
    <p class="error"></p>
    <table><thead><tr><th>ID</th><th>name</th><th>organ</th><th>blood</th>
      <th>hospital</th><th>status</th><th>match</th><th></th></tr></thead>
      <tbody></tbody></table>
    ${screen.canWrite ? `<details><summary>register</summary>
      <textarea rows="6" cols="60" placeholder='{"ID": "...", "firstName": ...}'></textarea>
      <button class="add">submit</button></details>` : ""}
  </section>`);
  const tbody = el.querySelector("tbody")!;
  screen.onChange((s) => {
    el.querySelector(".error")!.textContent = s.error ?? "";
    tbody.innerHTML = s.rows.map((r) => recordRow(r, screen.canDelete)).join("");
  });
  el.addEventListener("click", (ev) => {
    const t = ev.target as HTMLElement;
    const del = t.getAttribute("data-del");
    if (del) void screen.remove(del);
    if (t.classList.contains("add")) {
      const raw = (el.querySelector("textarea") as HTMLTextAreaElement).value;
      try {
        void screen.add(JSON.parse(raw) as RecordIn);
      } catch {
        el.querySelector(".error")!.textContent = "registration payload is not valid JSON";
      }
    }
  });
  void screen.load();
  return el;
}

function workbenchView(bench: MatchWorkbench): HTMLElement {
  const el = h(`<section>
    <h2>match workbench</h2>
    <input placeholder="patient ID"><button class="load">load</button>
    <p class="conflict" style="color:#b00"></p>
    <p class="error"></p>
    <div class="patient"></div>
    <ul class="candidates"></ul>
    <p class="done"></p>
  </section>`);
  bench.onChange((s) => {
    el.querySelector(".conflict")!.textContent = s.conflict
      ? `Donor no longer available (${s.conflict}); candidate list refreshed.`
      : "";
    el.querySelector(".error")!.textContent = s.error ?? "";
    el.querySelector(".patient")!.textContent = s.patient
      ? `${s.patient.ID}: needs ${s.patient.organRequired}, ${s.patient.bloodgroup},` +
        ` status ${s.patient.status}`
      : "";
    el.querySelector(".candidates")!.innerHTML = s.candidates
      .map((d) => `<li>${esc(d)} <button data-pick="${esc(d)}">select</button></li>`)
      .join("");
    el.querySelector(".done")!.textContent = s.selected
      ? `matched with ${s.selected.donorId} in block ${s.selected.block} (${s.selected.txId})`
      : "";
  });
  el.addEventListener("click", (ev) => {
    const t = ev.target as HTMLElement;
    if (t.classList.contains("load")) {
      void bench.load((el.querySelector("input") as HTMLInputElement).value.trim());
    }
    const pick = t.getAttribute("data-pick");
    if (pick) void bench.select(pick);
  });
  return el;
}

function transportView(board: TransportBoard): HTMLElement {
  const el = h(`<section><h2>transport feed</h2>
    <p class="status"></p><ul class="notices"></ul></section>`);
  board.onChange((s) => {
    el.querySelector(".status")!.textContent = `${s.status}${s.cursor ? ` @ ${s.cursor}` : ""}`;
    el.querySelector(".notices")!.innerHTML = s.notices
      .map(
        (n) =>
          `<li><b>${esc(n.organ)}</b> ${esc(n.sourceHospital)} &rarr; ` +
          `${esc(n.destinationHospital)} (patient ${esc(n.patientId)}, donor ` +
          `${esc(n.donorId)}, block ${n.createdAtBlock})</li>`,
      )
      .join("");
  });
  board.start();
  return el;
}

function adminView(panel: AdminPanel): HTMLElement {
  const el = h(`<section><h2>network</h2><pre class="out"></pre></section>`);
  void panel.load().then((s) => {
    el.querySelector(".out")!.textContent = s.error
      ? s.error
      : `chain ok=${s.chain?.ok} height=${s.chain?.height}\n` +
        s.peers.map((p) => `${p.peer_id} (${p.org_id}) ${p.channels.join(",")}`).join("\n");
  });
  return el;
}

async function main(): Promise<void> {
  const api = new GatewayClient(location.origin);
  const login = h(`<section><h2>donorchain console</h2>
    <input class="id" placeholder="identity id">
    <input class="seed" placeholder="signing key (hex)" type="password" size="70">
    <button>log in</button><p class="error" style="color:#b00"></p></section>`);
  app.append(login);
  login.querySelector("button")!.addEventListener("click", async () => {
    const id = (login.querySelector(".id") as HTMLInputElement).value.trim();
    const seed = (login.querySelector(".seed") as HTMLInputElement).value.trim();
    try {
      const session = await api.login(id, seed);
      login.remove();
      app.append(h(`<p>signed in as <b>${esc(session.identity_id)}</b> (${esc(session.role)}
        @ ${esc(session.org_id)})</p>`));
      const role = session.role;
      if (role === "hospital_staff") {
        app.append(recordsView("patients", new RecordsScreen(api, "patient")));
        app.append(recordsView("donors", new RecordsScreen(api, "donor")));
        app.append(workbenchView(new MatchWorkbench(api)));
      } else if (role === "transporter") {
        app.append(transportView(new TransportBoard(location.origin, api.token)));
      } else if (role === "patient") {
        const status = await api.patientStatus(session.identity_id);
        app.append(h(`<p>status: <b>${esc(status.status)}</b>${
          status.matchedDonorId ? ` with donor ${esc(status.matchedDonorId)}` : ""
        } (waiting ${Math.round(status.waiting_time_s)}s)</p>`));
      } else {
        // administrator and auditor get the global views
        app.append(recordsView("patients", new RecordsScreen(api, "patient")));
        app.append(recordsView("donors", new RecordsScreen(api, "donor")));
        if (role === "government_auditor") {
          app.append(transportView(new TransportBoard(location.origin, api.token)));
        }
        app.append(adminView(new AdminPanel(api)));
      }
    } catch (err) {
      login.querySelector(".error")!.textContent = String(err);
    }
  });
}

void main();
