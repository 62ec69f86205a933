"""Operator command line.

Thin HTTP client over the gateway, plus `network up` which boots the
whole stack (network + gateway) in the foreground. `network up` writes
a wallet file holding the enrolled signing keys so later commands can
log in; point other machines at the same gateway with --gateway-url.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import json
import os
import sys
from pathlib import Path
from typing import Optional

import click
import httpx

from . import bench as benchlib
from .identity import SigningKey

DEFAULT_GATEWAY = "http://127.0.0.1:8440"
DEFAULT_WALLET = "~/.donorchain/wallet.json"


class CliError(click.ClickException):
    exit_code = 1


class Settings:
    def __init__(self, gateway_url, identity_id, topology_path, wallet_path, output):
        self.gateway_url = gateway_url
        self.identity_explicit = identity_id is not None
        self.identity_id = identity_id or "admin-1"
        self.topology_path = topology_path
        self.wallet_path = Path(wallet_path).expanduser()
        self.output = output

    # -- wallet ----------------------------------------------------------

    def read_wallet(self) -> dict:
        try:
            return json.loads(self.wallet_path.read_text())
        except FileNotFoundError:
            raise CliError(
                f"no wallet at {self.wallet_path}; run `donorchain network up` first "
                "or pass --wallet"
            ) from None

    def signing_key(self) -> SigningKey:
        wallet = self.read_wallet()
        entry = wallet.get("identities", {}).get(self.identity_id)
        if entry is None:
            known = ", ".join(sorted(wallet.get("identities", {})))
            raise CliError(f"identity {self.identity_id!r} not in wallet (have: {known})")
        return SigningKey.from_private_bytes(self.identity_id, bytes.fromhex(entry["private_key"]))

    # -- gateway session ---------------------------------------------------

    def client(self) -> httpx.Client:
        # writes can legitimately take the full 30s commit wait
        return httpx.Client(base_url=self.gateway_url, timeout=65.0)

    def login(self, client: httpx.Client) -> dict:
        key = self.signing_key()
        resp = client.post("/auth/nonce", json={"identity_id": self.identity_id})
        self._check(resp)
        nonce = resp.json()["nonce"]
        resp = client.post(
            "/auth/login",
            json={
                "identity_id": self.identity_id,
                "nonce": nonce,
                "signature": key.sign(nonce.encode()).sig.hex(),
            },
        )
        self._check(resp)
        session = resp.json()
        client.headers["Authorization"] = f"Bearer {session['token']}"
        return session

    def _check(self, resp: httpx.Response) -> None:
        if resp.status_code < 400:
            return
        try:
            body = resp.json()
            detail = f"{body.get('error', 'error')}: {body.get('detail', resp.text)}"
        except ValueError:
            detail = resp.text
        raise CliError(f"gateway returned {resp.status_code} ({detail})")

    def emit(self, payload, text: Optional[str] = None) -> None:
        if self.output == "json":
            click.echo(json.dumps(payload, indent=2, sort_keys=True))
        else:
            click.echo(text if text is not None else json.dumps(payload, indent=2, sort_keys=True))


pass_settings = click.make_pass_decorator(Settings)


@click.group()
@click.option("--gateway-url", envvar="DONORCHAIN_GATEWAY", default=DEFAULT_GATEWAY, show_default=True)
@click.option("--identity", "identity_id", envvar="DONORCHAIN_IDENTITY", default=None, help="Identity to act as [default: admin-1; benchmarks pick a staff identity].")
@click.option("--topology", "topology_path", envvar="DONORCHAIN_TOPOLOGY", type=click.Path(exists=True, dir_okay=False), default=None, help="Topology file (YAML or JSON); built-in default if omitted.")
@click.option("--wallet", "wallet_path", envvar="DONORCHAIN_WALLET", default=DEFAULT_WALLET, show_default=True, help="Signing key file written by `network up`.")
@click.option("--output", type=click.Choice(["json", "text"]), default="text", show_default=True)
@click.pass_context
def main(ctx, gateway_url, identity_id, topology_path, wallet_path, output):
    """Organ donation network operations."""
    ctx.obj = Settings(gateway_url, identity_id, topology_path, wallet_path, output)


# -- network lifecycle ----------------------------------------------------------------


@main.group()
def network():
    """Start or stop the node process."""


@network.command("up")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8440, show_default=True)
@click.option("--seed", default=None, type=int, help="Ordering RNG seed (deterministic elections).")
@click.option("--console-dir", default="frontend/dist", show_default=True, help="Static console bundle; skipped when absent.")
@pass_settings
def network_up(settings, host, port, seed, console_dir):
    """Boot the network plus gateway in the foreground."""
    import uvicorn

    from .gateway import create_app
    from .topology import build_network, default_topology, load_topology

    topology = load_topology(settings.topology_path) if settings.topology_path else default_topology()
    running = build_network(topology, ordering_seed=seed)

    settings.wallet_path.parent.mkdir(parents=True, exist_ok=True)
    wallet = {
        "gateway_url": f"http://{host}:{port}",
        "identities": {
            identity_id: {
                "private_key": key.private_bytes().hex(),
                "org_id": running.registry.identity(identity_id).org_id,
                "role": running.registry.identity(identity_id).role.value,
            }
            for identity_id, key in running.wallet.items()
        },
    }
    settings.wallet_path.write_text(json.dumps(wallet, indent=2, sort_keys=True))
    os.chmod(settings.wallet_path, 0o600)
    click.echo(f"wallet written to {settings.wallet_path}", err=True)

    app = create_app(running, console_dir=console_dir)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        running.shutdown()


@network.command("down")
@pass_settings
def network_down(settings):
    """Ask the gateway process to shut down (administrator only)."""
    with settings.client() as client:
        settings.login(client)
        resp = client.post("/admin/shutdown")
        settings._check(resp)
        settings.emit(resp.json(), "shutdown requested")


# -- channel and chaincode management ----------------------------------------------------


@main.group()
def channel():
    """Channel management."""


@channel.command("create")
@click.argument("name")
@click.option("--member", "members", multiple=True, required=True, help="Member org (repeat).")
@click.option("--policy", required=True, help='Endorsement policy, e.g. "(and gov (submitter))".')
@click.option("--ordering-mode", type=click.Choice(["solo", "raft"]), default="raft", show_default=True)
@click.option("--chaincode", "chaincodes", multiple=True, help="Chaincode to install (repeat).")
@pass_settings
def channel_create(settings, name, members, policy, ordering_mode, chaincodes):
    with settings.client() as client:
        settings.login(client)
        resp = client.post(
            "/admin/channels",
            json={
                "name": name,
                "members": list(members),
                "policy": policy,
                "ordering": {"mode": ordering_mode},
                "chaincodes": list(chaincodes),
            },
        )
        settings._check(resp)
        settings.emit(resp.json(), f"channel {name} created")


@main.group()
def chaincode():
    """Chaincode management."""


@chaincode.command("deploy")
@click.option("--channel", "channel_name", required=True)
@click.option("--chaincode", "chaincode_id", default="donation", show_default=True)
@pass_settings
def chaincode_deploy(settings, channel_name, chaincode_id):
    with settings.client() as client:
        settings.login(client)
        resp = client.post("/admin/chaincode", json={"channel": channel_name, "chaincode": chaincode_id})
        settings._check(resp)
        settings.emit(resp.json(), f"{chaincode_id} deployed on {channel_name}")


# -- transactions ------------------------------------------------------------------------


@main.command()
@click.argument("method")
@click.argument("args", nargs=-1)
@pass_settings
def invoke(settings, method, args):
    """Submit a transaction and wait for commit."""
    with settings.client() as client:
        settings.login(client)
        resp = client.post("/invoke", json={"method": method, "args": list(args)})
        settings._check(resp)
        body = resp.json()
        if resp.status_code == 202:
            settings.emit(body, f"pending: poll /tx/{body['tx_id']}")
        else:
            settings.emit(body, f"committed tx {body['tx_id']} in block {body['block_number']} ({body['flag']})")


@main.command()
@click.argument("method")
@click.argument("args", nargs=-1)
@pass_settings
def query(settings, method, args):
    """Evaluate a read on current committed state."""
    with settings.client() as client:
        settings.login(client)
        resp = client.post("/query", json={"method": method, "args": list(args)})
        settings._check(resp)
        settings.emit(resp.json()["result"])


# -- state and chain inspection ------------------------------------------------------------


@main.group()
def state():
    """World state operations."""


@state.command("export")
@click.option("--channel", "channel_name", default="donation-system", show_default=True)
@click.option("--peer", default=None, help="Peer to export from; reference peer if omitted.")
@click.option("-o", "--out", "out_path", type=click.Path(dir_okay=False), default=None, help="Write to file instead of stdout.")
@pass_settings
def state_export(settings, channel_name, peer, out_path):
    """Dump a peer's committed world state as canonical bytes."""
    with settings.client() as client:
        settings.login(client)
        params = {"channel": channel_name}
        if peer:
            params["peer"] = peer
        resp = client.get("/admin/state-export", params=params)
        settings._check(resp)
        if out_path:
            Path(out_path).write_bytes(resp.content)
            click.echo(f"{len(resp.content)} bytes -> {out_path}", err=True)
        else:
            sys.stdout.buffer.write(resp.content)


@main.group()
def chain():
    """Block chain operations."""


@chain.command("verify")
@pass_settings
def chain_verify(settings):
    """Re-hash the chain and report the first bad block, if any."""
    with settings.client() as client:
        settings.login(client)
        resp = client.get("/chain/verify")
        settings._check(resp)
        body = resp.json()
        ok = body["ok"]
        text = f"chain ok at height {body['height']}" if ok else f"chain BROKEN at block {body['bad_block']}"
        settings.emit(body, text)
        if not ok:
            sys.exit(1)


# -- benchmarks -------------------------------------------------------------------------------


def _bench_identity(settings, roles_by_id: dict) -> str:
    """Benchmarks write donor records, so they need a staff identity
    unless the operator explicitly chose one."""
    if settings.identity_explicit:
        return settings.identity_id
    staff = sorted(i for i, role in roles_by_id.items() if role == "hospital_staff")
    return staff[0] if staff else settings.identity_id


@main.group()
def bench():
    """Workload benchmarks."""


@bench.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Workload file (YAML or JSON).")
@click.option("--target", type=click.Choice(["gateway", "local"]), default="local", show_default=True, help="gateway drives HTTP; local drives an in-process network.")
@click.option("--save", "save_path", type=click.Path(dir_okay=False), default=None, help="Also write the JSON report here.")
@click.option("--seed", default=None, type=int, help="Ordering RNG seed for --target local.")
@pass_settings
def bench_run(settings, config_path, target, save_path, seed):
    """Run the configured workloads and print the result table."""
    configs = benchlib.load_bench_config(config_path)
    reports = []
    if target == "local":
        from .topology import build_network, default_topology, load_topology

        topology = load_topology(settings.topology_path) if settings.topology_path else default_topology()
        running = build_network(topology, ordering_seed=seed)
        roles = {i: running.registry.identity(i).role.value for i in running.wallet}
        identity_id = _bench_identity(settings, roles)
        try:
            bench_target = benchlib.NetworkTarget(running, identity_id)
            for config in configs:
                click.echo(f"running {config.name} ({config.total_tx} tx) as {identity_id}...", err=True)
                reports.append(benchlib.run_workload(config, bench_target))
        finally:
            running.shutdown()
    else:
        wallet = settings.read_wallet()
        roles = {i: entry.get("role", "") for i, entry in wallet.get("identities", {}).items()}
        settings.identity_id = _bench_identity(settings, roles)
        with settings.client() as client:
            session = settings.login(client)
            bench_target = benchlib.GatewayTarget(settings.gateway_url, token=client.headers["Authorization"][7:])
            try:
                for config in configs:
                    click.echo(f"running {config.name} ({config.total_tx} tx) as {session['identity_id']}...", err=True)
                    reports.append(benchlib.run_workload(config, bench_target))
            finally:
                bench_target.close()

    rendered_json = benchlib.render_json(reports)
    if save_path:
        Path(save_path).write_text(rendered_json)
        click.echo(f"report saved to {save_path}", err=True)
    click.echo(rendered_json if settings.output == "json" else benchlib.render_text_table(reports))


@bench.command("report")
@click.argument("report_file", type=click.Path(exists=True, dir_okay=False))
@pass_settings
def bench_report(settings, report_file):
    """Re-render a saved benchmark report."""
    raw = json.loads(Path(report_file).read_text())
    reports = [benchlib.report_from_dict(entry) for entry in raw]
    click.echo(benchlib.render_json(reports) if settings.output == "json" else benchlib.render_text_table(reports))


if __name__ == "__main__":
    main()
