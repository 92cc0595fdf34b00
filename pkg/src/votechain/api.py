"""HTTP interface over one node: submission, polls, results, receipts, blocks.

The fairness gate is enforced at this boundary: no response carries a
per-answer total (or the stake deposits that would reveal one) until the
poll's close slot has strictly passed.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .chain import ChainError, ChainErrorCode, STATUS_CLOSED
from .crypto import b58decode, b58encode, is_valid_address
from .mempool import ExpiredTx
from .node import NodeService
from .tally import FairnessLocked, UnknownPoll, results_view, tally_json
from .tx import TxValidationError, to_json as tx_json


def _error(status: int, code: str, message: str = "") -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": code, "message": message})


_CHAIN_ERROR_STATUS = {
    ChainErrorCode.DOUBLE_VOTE: 409,
    ChainErrorCode.UNKNOWN_POLL: 400,
    ChainErrorCode.POLL_CLOSED: 400,
    ChainErrorCode.INELIGIBLE_VOTER: 400,
    ChainErrorCode.INSUFFICIENT_BALANCE: 400,
    ChainErrorCode.SCORE_OUT_OF_RANGE: 400,
    ChainErrorCode.MALFORMED_VOTE: 400,
    ChainErrorCode.TX_REPLAY: 400,
}


def poll_descriptor(service: NodeService, poll) -> dict:
    """Public descriptor; never includes counts or totals while OPEN."""
    state = service.state()
    doc = {
        "pollId": poll.poll_id,
        "creator": poll.creator,
        "question": poll.question.decode("utf-8", "replace"),
        "answers": [
            {"index": i, "label": label.decode("utf-8", "replace"),
             "address": poll.answer_addresses[i]}
            for i, label in enumerate(poll.answers)
        ],
        "pollAddress": poll.poll_address,
        "scoreMin": poll.score_min,
        "scoreMax": poll.score_max,
        "weightModel": poll.weight_model.name,
        "weightAssetId": poll.weight_asset_id,
        "snapshotHeight": poll.effective_snapshot_height,
        "closeSlot": poll.close_slot,
        "status": poll.status,
        "currentSlot": service.current_slot,
    }
    if poll.status == STATUS_CLOSED and poll.poll_id in state.results:
        doc["resultsUrl"] = f"/polls/{poll.poll_id}/results"
    return doc


def create_app(service: NodeService) -> FastAPI:
    app = FastAPI(title="votechain node", version="0.1.0")

    @app.middleware("http")
    async def check_token(request: Request, call_next):
        token = service.config.api_token
        if token and request.method == "POST":
            supplied = request.headers.get("authorization", "")
            if supplied != f"Bearer {token}":
                return _error(401, "UNAUTHORIZED", "missing or bad api token")
        return await call_next(request)

    @app.get("/status")
    def status():
        return service.status()

    @app.post("/transactions")
    async def submit(request: Request):
        body = (await request.body()).decode("utf-8", "replace")
        deadline = None
        try:
            doc = json.loads(body)
            if isinstance(doc, dict):
                deadline = doc.get("deadline_minutes")
                body = doc.get("tx", "")
        except json.JSONDecodeError:
            pass  # raw hex/base-58 body
        try:
            tx_id = service.submit_raw(body, deadline_minutes=deadline)
        except TxValidationError as exc:
            return _error(400, exc.code.value, str(exc))
        except ExpiredTx:
            return _error(410, "EXPIRED", "past timestamp + deadline")
        except ChainError as exc:
            return _error(_CHAIN_ERROR_STATUS.get(exc.code, 400),
                          exc.code.value, str(exc))
        except ValueError as exc:
            return _error(400, "MalformedBytes", str(exc))
        return {"tx_id": tx_id}

    @app.get("/polls/{poll_id}")
    def get_poll(poll_id: str):
        poll = service.state().polls.get(poll_id)
        if poll is None:
            return _error(404, "UNKNOWN_POLL", poll_id)
        return poll_descriptor(service, poll)

    @app.get("/polls/{poll_id}/results")
    def get_results(poll_id: str):
        state = service.state()
        try:
            tally = results_view(state, poll_id, service.current_slot)
        except UnknownPoll:
            return _error(404, "UNKNOWN_POLL", poll_id)
        except FairnessLocked as exc:
            return JSONResponse(status_code=423, content={
                "error": "FAIRNESS_LOCKED",
                "closeSlot": exc.close_slot,
                "currentSlot": service.current_slot,
                "message": f"results visible from slot {exc.close_slot + 1}",
            })
        return tally_json(tally, state.polls[poll_id])

    @app.get("/transactions/{tx_id}")
    def get_receipt(tx_id: str):
        receipt = service.chain.verify_receipt(tx_id)
        if receipt["found"]:
            return receipt
        if tx_id in service.mempool:
            return {"found": False, "pooled": True}
        return _error(404, "NOT_FOUND", tx_id)

    @app.get("/blocks/{ref}")
    def get_block(ref: str):
        if ref.isdigit():
            block = service.chain.block_at_height(int(ref))
        else:
            try:
                raw = b58decode(ref)
            except ValueError:
                return _error(400, "MALFORMED_HASH", ref)
            block = service.chain.blocks.get(raw)
            if block is not None and not service.chain.is_canonical(raw):
                block = None
        if block is None:
            return _error(404, "NOT_FOUND", ref)
        header = block.header
        txs = []
        for t in block.transactions:
            if hasattr(t, "pruned_tx_id"):
                txs.append({"id": b58encode(t.pruned_tx_id), "pruned": True})
            else:
                txs.append(tx_json(t))
        return {
            "hash": b58encode(block.block_hash()),
            "height": header.height,
            "slot": header.slot,
            "prevHash": b58encode(header.prev_hash),
            "generator": str(header.generator_id),
            "payloadRoot": b58encode(header.payload_root),
            "txCount": header.tx_count,
            "transactions": txs,
        }

    @app.get("/accounts/{address}")
    def get_account(address: str):
        if not is_valid_address(address):
            return _error(400, "MALFORMED_ADDRESS",
                          "bad base-58 address or checksum")
        state = service.state()
        target = state.vote_targets.get(address)
        if target is not None:
            poll = state.polls.get(target[0])
            if poll is not None and poll.status != STATUS_CLOSED:
                # stake deposits on answer addresses reveal per-answer turnout
                return JSONResponse(status_code=423, content={
                    "error": "FAIRNESS_LOCKED",
                    "closeSlot": poll.close_slot,
                    "currentSlot": service.current_slot,
                    "message": "balances of poll addresses are visible "
                               "after close",
                })
        assets = dict(state.balances.get(address, {}))
        native = assets.pop("native", 0)
        return {"address": address, "native": native, "assets": assets,
                "feesCredited": state.fees_credited.get(address, 0)}

    return app
