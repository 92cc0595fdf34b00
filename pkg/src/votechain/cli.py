"""Command-line wallet and election operator tool.

Secret keys never leave the process: transactions are signed locally and only
the signed wire bytes travel to the node. Exit codes are stable for
scripting: 0 success, 1 server-reported error, 2 local validation/IO error.
"""

from __future__ import annotations

import getpass
import json
import os
import sys
import time

import click
import httpx

from .crypto import b58decode, b58encode, decode_address
from .tx import (
    BLANK_ANSWER,
    MinBalance,
    PollCreationTx,
    TransferTx,
    TxValidationError,
    Whitelist,
    WeightModel,
    full_bytes,
    make_vote_tx,
    sign_tx,
    tx_id,
)
from .wallet import WalletError, create_wallet, load_wallet, wallet_address

EXIT_SERVER = 1
EXIT_LOCAL = 2

_MODELS = {
    "account": WeightModel.ACCOUNT,
    "account-balance": WeightModel.ACCOUNT_BALANCE,
    "asset-balance": WeightModel.ASSET_BALANCE,
    "currency-balance": WeightModel.CURRENCY_BALANCE,
}


def make_client(node_url: str) -> httpx.Client:
    return httpx.Client(base_url=node_url, timeout=10.0)


def _now_ms() -> int:
    return int(time.time() * 1000)


class Ctx:
    def __init__(self, node, wallet, passphrase_env, as_json):
        self.node_url = node
        self.wallet_path = wallet
        self.passphrase_env = passphrase_env
        self.as_json = as_json

    def client(self) -> httpx.Client:
        return make_client(self.node_url)

    def passphrase(self, confirm=False) -> str:
        if self.passphrase_env:
            value = os.environ.get(self.passphrase_env)
            if value is None:
                _fail_local(f"environment variable {self.passphrase_env} is not set")
            return value
        phrase = getpass.getpass("wallet passphrase: ")
        if confirm and getpass.getpass("repeat passphrase: ") != phrase:
            _fail_local("passphrases do not match")
        return phrase

    def keypair(self):
        if not self.wallet_path:
            _fail_local("--wallet is required for this command")
        try:
            return load_wallet(self.wallet_path, self.passphrase())
        except WalletError as exc:
            _fail_local(str(exc))

    def emit(self, doc: dict, text: str):
        click.echo(json.dumps(doc, indent=2) if self.as_json else text)


def _fail_local(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_LOCAL)


def _fail_server(doc, status: int):
    message = doc.get("message") or doc.get("error") or f"http {status}"
    click.echo(f"server error ({doc.get('error', status)}): {message}", err=True)
    sys.exit(EXIT_SERVER)


def _request(ctx: Ctx, method: str, path: str, **kw):
    try:
        with ctx.client() as client:
            response = client.request(method, path, **kw)
    except httpx.HTTPError as exc:
        _fail_local(f"cannot reach node at {ctx.node_url}: {exc}")
    try:
        doc = response.json()
    except ValueError:
        doc = {"error": response.status_code, "message": response.text}
    if response.status_code >= 400:
        _fail_server(doc, response.status_code)
    return doc


def _submit(ctx: Ctx, signed_tx) -> dict:
    return _request(ctx, "POST", "/transactions",
                    content=full_bytes(signed_tx).hex(),
                    headers=_auth_headers())


def _auth_headers() -> dict:
    token = os.environ.get("VOTECHAIN_API_TOKEN")
    return {"Authorization": f"Bearer {token}"} if token else {}


@click.group()
@click.option("--node", default="http://127.0.0.1:8645", show_default=True,
              help="node API base URL")
@click.option("--wallet", type=click.Path(), default=None,
              help="wallet file for signing commands")
@click.option("--passphrase-env", default=None,
              help="environment variable holding the wallet passphrase")
@click.option("--json", "as_json", is_flag=True, help="machine-readable output")
@click.pass_context
def main(ctx, node, wallet, passphrase_env, as_json):
    """Wallet and election operator CLI for a votechain node."""
    ctx.obj = Ctx(node, wallet, passphrase_env, as_json)


# --- wallet ---

@main.group("wallet")
def wallet_group():
    """Create and inspect wallet files."""


@wallet_group.command("new")
@click.option("--out", required=True, type=click.Path(), help="wallet file to write")
@click.pass_obj
def wallet_new(ctx: Ctx, out):
    """Generate a keypair and write an encrypted wallet file."""
    if os.path.exists(out):
        _fail_local(f"{out} already exists")
    keypair = create_wallet(out, ctx.passphrase(confirm=True))
    ctx.emit({"address": str(keypair.address),
              "publicKey": b58encode(keypair.public_key), "file": out},
             str(keypair.address))


@wallet_group.command("show")
@click.pass_obj
def wallet_show(ctx: Ctx):
    """Print the wallet's address (no passphrase needed)."""
    if not ctx.wallet_path:
        _fail_local("--wallet is required")
    try:
        address = wallet_address(ctx.wallet_path)
    except WalletError as exc:
        _fail_local(str(exc))
    ctx.emit({"address": address}, address)


# --- polls ---

@main.group("poll")
def poll_group():
    """Create polls and read their public state."""


@poll_group.command("create")
@click.option("--question", required=True)
@click.option("--answer", "answers", multiple=True, required=True,
              help="repeat once per answer")
@click.option("--range", "score_range", default="0:1", show_default=True,
              help="score range MIN:MAX")
@click.option("--model", type=click.Choice(sorted(_MODELS)), default="account",
              show_default=True)
@click.option("--weight-asset", default=None, help="asset id (base-58) for "
              "asset/currency weight models")
@click.option("--close-slot", type=int, required=True)
@click.option("--snapshot-height", type=int, default=0, show_default=True)
@click.option("--whitelist", default=None,
              help="comma-separated addresses; omit for min-balance eligibility")
@click.option("--min-balance", type=int, default=0, show_default=True)
@click.option("--min-balance-asset", default=None)
@click.option("--fee", type=int, default=1, show_default=True)
@click.pass_obj
def poll_create(ctx: Ctx, question, answers, score_range, model, weight_asset,
                close_slot, snapshot_height, whitelist, min_balance,
                min_balance_asset, fee):
    """Sign and broadcast a poll creation; prints the poll id."""
    keypair = ctx.keypair()
    try:
        lo, _, hi = score_range.partition(":")
        score_min, score_max = int(lo), int(hi or lo)
    except ValueError:
        _fail_local(f"bad --range {score_range!r}, expected MIN:MAX")
    if whitelist:
        try:
            eligibility = Whitelist(tuple(decode_address(a.strip())
                                          for a in whitelist.split(",")))
        except ValueError as exc:
            _fail_local(f"bad whitelist address: {exc}")
    else:
        asset = b58decode(min_balance_asset) if min_balance_asset else None
        eligibility = MinBalance(threshold=min_balance, asset_id=asset)
    tx = PollCreationTx(
        sender_pk=keypair.public_key,
        question=question.encode(),
        answers=tuple(a.encode() for a in answers),
        score_min=score_min,
        score_max=score_max,
        weight_model=_MODELS[model],
        eligibility=eligibility,
        snapshot_height=snapshot_height,
        close_slot=close_slot,
        fee=fee,
        timestamp=_now_ms(),
        weight_asset_id=b58decode(weight_asset) if weight_asset else None,
    )
    try:
        signed = sign_tx(keypair.secret_key, tx)
    except TxValidationError as exc:
        _fail_local(str(exc))
    doc = _submit(ctx, signed)
    poll_id = b58encode(tx_id(signed))
    ctx.emit({"pollId": poll_id, "txId": doc["tx_id"]}, poll_id)


@poll_group.command("show")
@click.option("--poll", "poll_id", required=True, help="poll id (base-58)")
@click.pass_obj
def poll_show(ctx: Ctx, poll_id):
    """Fetch the public poll descriptor."""
    doc = _request(ctx, "GET", f"/polls/{poll_id}")
    lines = [f"{doc['question']}  [{doc['status']}]",
             f"scores {doc['scoreMin']}..{doc['scoreMax']}, "
             f"closes after slot {doc['closeSlot']}"]
    lines += [f"  {a['index']}: {a['label']}  ({a['address']})"
              for a in doc["answers"]]
    ctx.emit(doc, "\n".join(lines))


@poll_group.command("results")
@click.option("--poll", "poll_id", required=True, help="poll id (base-58)")
@click.pass_obj
def poll_results(ctx: Ctx, poll_id):
    """Fetch the tally of a closed poll."""
    try:
        with ctx.client() as client:
            response = client.get(f"/polls/{poll_id}/results")
    except httpx.HTTPError as exc:
        _fail_local(f"cannot reach node: {exc}")
    doc = response.json()
    if response.status_code == 423:
        click.echo(f"results locked until slot {doc['closeSlot'] + 1} "
                   f"(now at slot {doc['currentSlot']})", err=True)
        sys.exit(EXIT_SERVER)
    if response.status_code >= 400:
        _fail_server(doc, response.status_code)
    lines = [f"{'answer':<30} {'total':>14} {'votes':>7}"]
    for a in doc["answers"]:
        lines.append(f"{a['label']:<30} {a['total']:>14} {a['countedVotes']:>7}")
    lines.append(f"blank votes: {doc['blankVotes']}")
    ctx.emit(doc, "\n".join(lines))


# --- votes ---

@main.group("vote")
def vote_group():
    """Cast votes and verify receipts."""


@vote_group.command("cast")
@click.option("--poll", "poll_id", required=True, help="poll id (base-58)")
@click.option("--answer", type=int, default=None, help="answer index")
@click.option("--score", type=int, default=1, show_default=True)
@click.option("--blank", is_flag=True, help="cast a blank (turnout-only) vote")
@click.option("--fee", type=int, default=1, show_default=True)
@click.pass_obj
def vote_cast(ctx: Ctx, poll_id, answer, score, blank, fee):
    """Sign and broadcast a vote; prints the receipt tx id."""
    keypair = ctx.keypair()
    if blank == (answer is not None):
        _fail_local("give exactly one of --answer or --blank")
    descriptor = _request(ctx, "GET", f"/polls/{poll_id}")
    if not blank:
        if not 0 <= answer < len(descriptor["answers"]):
            _fail_local(f"poll has answers 0..{len(descriptor['answers']) - 1}")
        if not descriptor["scoreMin"] <= score <= descriptor["scoreMax"]:
            _fail_local(f"score must be within {descriptor['scoreMin']}.."
                        f"{descriptor['scoreMax']}")
    try:
        pid = b58decode(poll_id)
    except ValueError as exc:
        _fail_local(f"bad poll id: {exc}")
    tx = make_vote_tx(keypair.public_key, pid,
                      BLANK_ANSWER if blank else answer, score,
                      fee=fee, timestamp=_now_ms())
    signed = sign_tx(keypair.secret_key, tx)
    doc = _submit(ctx, signed)
    ctx.emit(doc, doc["tx_id"])


@vote_group.command("verify")
@click.option("--tx", "txid", required=True, help="receipt tx id (base-58)")
@click.pass_obj
def vote_verify(ctx: Ctx, txid):
    """Check whether a receipt is on the canonical chain."""
    doc = _request(ctx, "GET", f"/transactions/{txid}")
    if doc.get("found"):
        text = (f"included at height {doc['height']} "
                f"({doc['confirmations']} confirmations)")
    elif doc.get("pooled"):
        text = "pending in the mempool, not yet in a block"
    else:
        text = "not found"
    ctx.emit(doc, text)


# --- misc ---

@main.command("send")
@click.option("--to", required=True, help="recipient address (base-58)")
@click.option("--amount", type=int, required=True)
@click.option("--asset", default=None, help="asset id (base-58); default native")
@click.option("--fee", type=int, default=1, show_default=True)
@click.pass_obj
def send(ctx: Ctx, to, amount, asset, fee):
    """Transfer tokens (plain transfer, no vote semantics)."""
    keypair = ctx.keypair()
    try:
        recipient = decode_address(to)
    except ValueError as exc:
        _fail_local(f"bad recipient: {exc}")
    tx = TransferTx(sender_pk=keypair.public_key, recipient=recipient,
                    amount=amount, fee=fee, timestamp=_now_ms(),
                    asset_id=b58decode(asset) if asset else None)
    try:
        signed = sign_tx(keypair.secret_key, tx)
    except TxValidationError as exc:
        _fail_local(str(exc))
    doc = _submit(ctx, signed)
    ctx.emit(doc, doc["tx_id"])


@main.command("account")
@click.argument("address", required=False)
@click.pass_obj
def account(ctx: Ctx, address):
    """Show balances for an address (default: the wallet's)."""
    if address is None:
        if not ctx.wallet_path:
            _fail_local("give an address or --wallet")
        try:
            address = wallet_address(ctx.wallet_path)
        except WalletError as exc:
            _fail_local(str(exc))
    doc = _request(ctx, "GET", f"/accounts/{address}")
    lines = [f"native: {doc['native']}"]
    lines += [f"{asset}: {amount}" for asset, amount in doc["assets"].items()]
    ctx.emit(doc, "\n".join(lines))


@main.command("status")
@click.pass_obj
def status(ctx: Ctx):
    """Node status: height, tip, slot, state root."""
    doc = _request(ctx, "GET", "/status")
    ctx.emit(doc, f"height {doc['height']} slot {doc['slot']} tip {doc['tip']}")


@main.group("node")
def node_group():
    """Run a node."""


@node_group.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def node_run(config_path):
    """Start the node service and HTTP API (blocks until interrupted)."""
    import threading

    import uvicorn

    from .api import create_app
    from .node import NodeConfig, NodeService

    config = NodeConfig.from_file(config_path)
    service = NodeService(config)
    app = create_app(service)

    def ticker():
        duration = config.consensus.slot_duration_ms / 1000.0
        base_slot = service.current_slot
        started = time.monotonic()
        while True:
            time.sleep(min(duration, 1.0))
            elapsed = time.monotonic() - started
            service.advance_to_slot(base_slot + int(elapsed / duration))

    threading.Thread(target=ticker, daemon=True).start()
    try:
        uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    finally:
        service.stop()


@main.group("sim")
def sim_group():
    """Run network simulator scenarios."""


@sim_group.command("run")
@click.argument("scenario", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None,
              help="also write the report to a file")
def sim_run(scenario, out):
    """Run a scenario file and print the deterministic report."""
    from .netsim import ConfigInvalid, SimConfig, run_scenario

    try:
        report = run_scenario(SimConfig.from_file(scenario))
    except ConfigInvalid as exc:
        _fail_local(f"invalid scenario: {exc}")
    text = report.to_text()
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    click.echo(text, nl=False)
    if report.violations:
        sys.exit(EXIT_SERVER)


if __name__ == "__main__":
    main()
