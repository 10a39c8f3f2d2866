"""Permissioned-ledger emulation: identities, ordering, hash-chained blocks.

One ordering context serializes all submissions. Chaincode validation runs
at submission time; invalid transactions are recorded with their reason
rather than dropped, so the full history stays auditable.

Persistence: ``blocks/<height>.json`` (canonical JSON, payloads base64)
plus ``identities.json``. block_hash covers the entire block content except
the block_hash field itself, so any byte change in a committed block file
is detectable.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

from .model import (
    ZERO_HASH_HEX,
    Identity,
    Role,
    canonical_json,
    digest_hex,
    format_ts,
    parse_ts,
)

BLOCK_TX_LIMIT = 12
GENESIS_EPOCH = parse_ts("2025-01-01T00:00:00Z")

VALID = "VALID"
INVALID = "INVALID"


class DuplicateName(ValueError):
    pass


class UnknownIdentity(KeyError):
    pass


@dataclass
class Transaction:
    sequence: int
    tx_id: str
    payload: bytes
    payload_digest: str
    submitter: str
    endorsement: str
    status: str
    reason: Optional[str] = None


@dataclass
class Block:
    height: int
    timestamp: str
    prev_hash: str
    transactions: List[Transaction]
    block_hash: str = ""


class ChainResult(NamedTuple):
    """Outcome of one chaincode invocation."""

    valid: bool
    reason: Optional[str]
    writes: Dict[str, bytes]
    touched: Tuple[str, ...]


class StateView:
    """Read-only world-state view handed to chaincode."""

    def __init__(self, state: Dict[str, Tuple[bytes, str]]):
        self._state = state

    def get(self, key: str) -> Optional[bytes]:
        entry = self._state.get(key)
        return entry[0] if entry else None

    def scan(self, prefix: str) -> Dict[str, bytes]:
        return {k: v[0] for k, v in self._state.items() if k.startswith(prefix)}


def _endorse(key_id: str, payload_digest: str) -> str:
    return hashlib.sha256(f"{key_id}:{payload_digest}".encode()).hexdigest()[:32]


def _tx_id(payload: bytes, submitter: str, sequence: int) -> str:
    return digest_hex(payload + submitter.encode() + str(sequence).encode())


def _tx_to_dict(tx: Transaction) -> dict:
    return {
        "sequence": tx.sequence,
        "tx_id": tx.tx_id,
        "payload_b64": base64.b64encode(tx.payload).decode("ascii"),
        "payload_digest": tx.payload_digest,
        "submitter": tx.submitter,
        "endorsement": tx.endorsement,
        "status": tx.status,
        "reason": tx.reason,
    }


def _block_content_dict(block: Block) -> dict:
    return {
        "height": block.height,
        "timestamp": block.timestamp,
        "prev_hash": block.prev_hash,
        "transactions": [_tx_to_dict(t) for t in block.transactions],
    }


def _block_hash(block: Block) -> str:
    return digest_hex(canonical_json(_block_content_dict(block)))


def _block_file_bytes(block: Block) -> bytes:
    content = _block_content_dict(block)
    content["block_hash"] = block.block_hash
    return canonical_json(content)


Chaincode = Callable[[dict, Identity, StateView], ChainResult]


class Ledger:
    """Single-organization channel emulation with file-backed persistence."""

    def __init__(self, root, chaincode: Chaincode):
        self.root = Path(root)
        self.chaincode = chaincode
        self.blocks_dir = self.root / "blocks"
        self.blocks_dir.mkdir(parents=True, exist_ok=True)
        self.identities: Dict[str, Identity] = {}
        self._state: Dict[str, Tuple[bytes, str]] = {}
        self._history: Dict[str, List[str]] = {}
        self._tx_index: Dict[str, Transaction] = {}
        self._pending: List[Transaction] = []
        self._blocks: List[Block] = []
        self._next_sequence = 0
        self._load()
        if not self._blocks:
            self._write_genesis()

    # -- membership ---------------------------------------------------------

    def register_identity(self, name: str, role: Role) -> Identity:
        if name in self.identities:
            raise DuplicateName(name)
        key_id = hashlib.sha256(f"cred:{name}:{role.value}".encode()).hexdigest()[:16]
        identity = Identity(name=name, role=role, key_id=key_id)
        self.identities[name] = identity
        self._save_identities()
        return identity

    def get_identity(self, name: str) -> Identity:
        try:
            return self.identities[name]
        except KeyError:
            raise UnknownIdentity(name) from None

    # -- ordering -----------------------------------------------------------

    def submit_tx(self, payload: bytes, submitter: str) -> str:
        identity = self.get_identity(submitter)
        sequence = self._next_sequence
        self._next_sequence += 1
        payload_digest = digest_hex(payload)
        tx_id = _tx_id(payload, submitter, sequence)
        try:
            op = json.loads(payload.decode("utf-8"))
            if not isinstance(op, dict):
                raise ValueError("payload must be a JSON object")
        except (ValueError, UnicodeDecodeError):
            result = ChainResult(False, "structure", {}, ())
        else:
            result = self.chaincode(op, identity, StateView(self._state))
        status = VALID if result.valid else INVALID
        tx = Transaction(
            sequence=sequence,
            tx_id=tx_id,
            payload=payload,
            payload_digest=payload_digest,
            submitter=submitter,
            endorsement=_endorse(identity.key_id, payload_digest),
            status=status,
            reason=result.reason,
        )
        if result.valid:
            for key, value in result.writes.items():
                self._state[key] = (value, tx_id)
        for key in result.touched:
            self._history.setdefault(key, []).append(tx_id)
        self._tx_index[tx_id] = tx
        self._pending.append(tx)
        return tx_id

    def cut_block(self) -> Optional[Block]:
        """Drain up to 12 pending transactions into a new block."""
        if not self._pending:
            return None
        txs, self._pending = self._pending[:BLOCK_TX_LIMIT], self._pending[BLOCK_TX_LIMIT:]
        tip = self._blocks[-1]
        block = Block(
            height=tip.height + 1,
            timestamp=format_ts(GENESIS_EPOCH + 60 * (tip.height + 1)),
            prev_hash=tip.block_hash,
            transactions=txs,
        )
        block.block_hash = _block_hash(block)
        self._write_block(block)
        self._blocks.append(block)
        return block

    def cut_all(self) -> List[Block]:
        out = []
        while True:
            block = self.cut_block()
            if block is None:
                return out
            out.append(block)

    # -- queries ------------------------------------------------------------

    @property
    def height(self) -> int:
        return self._blocks[-1].height

    @property
    def tip_hash(self) -> str:
        return self._blocks[-1].block_hash

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    def blocks(self) -> List[Block]:
        return list(self._blocks)

    def get_transaction(self, tx_id: str) -> Transaction:
        return self._tx_index[tx_id]

    def query_state(self, key: str) -> Optional[bytes]:
        entry = self._state.get(key)
        return entry[0] if entry else None

    def state_view(self) -> StateView:
        return StateView(self._state)

    def state_items(self, prefix: str = "") -> Dict[str, bytes]:
        return {k: v[0] for k, v in sorted(self._state.items()) if k.startswith(prefix)}

    def get_history(self, key: str) -> List[Transaction]:
        return [self._tx_index[t] for t in self._history.get(key, [])]

    def state_digest(self) -> str:
        payload = canonical_json(
            {k: base64.b64encode(v[0]).decode("ascii") for k, v in self._state.items()}
        )
        return digest_hex(payload)

    # -- verification and replay --------------------------------------------

    def verify_chain(self) -> Optional[int]:
        """Recompute every hash and linkage from the on-disk chain.

        Returns None when consistent, else the first bad height.
        """
        prev_hash = ZERO_HASH_HEX
        height = 0
        while True:
            path = self.blocks_dir / f"{height}.json"
            if not path.exists():
                if self._blocks and height <= self._blocks[-1].height:
                    return height  # committed block file deleted
                return None
            try:
                raw = path.read_bytes()
                content = json.loads(raw.decode("utf-8"))
                block = _block_from_dict(content)
            except (ValueError, KeyError, TypeError):
                return height
            if _block_file_bytes(block) != raw:
                return height
            if block.height != height or block.prev_hash != prev_hash:
                return height
            if height == 0 and (block.prev_hash != ZERO_HASH_HEX or block.transactions):
                return height
            if _block_hash(block) != block.block_hash:
                return height
            for tx in block.transactions:
                if tx.payload_digest != digest_hex(tx.payload):
                    return height
                if tx.tx_id != _tx_id(tx.payload, tx.submitter, tx.sequence):
                    return height
                identity = self.identities.get(tx.submitter)
                if identity is None:
                    return height
                if tx.endorsement != _endorse(identity.key_id, tx.payload_digest):
                    return height
            prev_hash = block.block_hash
            height += 1

    def rebuild_state(self) -> Dict[str, Tuple[bytes, str]]:
        """Replay oracle: re-execute chaincode over the committed chain from genesis."""
        state: Dict[str, Tuple[bytes, str]] = {}
        for block in self._blocks:
            for tx in block.transactions:
                try:
                    op = json.loads(tx.payload.decode("utf-8"))
                    if not isinstance(op, dict):
                        raise ValueError
                except (ValueError, UnicodeDecodeError):
                    continue
                identity = self.identities[tx.submitter]
                result = self.chaincode(op, identity, StateView(state))
                if result.valid:
                    for key, value in result.writes.items():
                        state[key] = (value, tx.tx_id)
        return state

    def rebuilt_state_digest(self) -> str:
        state = self.rebuild_state()
        payload = canonical_json(
            {k: base64.b64encode(v[0]).decode("ascii") for k, v in state.items()}
        )
        return digest_hex(payload)

    # -- persistence --------------------------------------------------------

    def _write_genesis(self):
        genesis = Block(
            height=0,
            timestamp=format_ts(GENESIS_EPOCH),
            prev_hash=ZERO_HASH_HEX,
            transactions=[],
        )
        genesis.block_hash = _block_hash(genesis)
        self._write_block(genesis)
        self._blocks.append(genesis)

    def _write_block(self, block: Block):
        (self.blocks_dir / f"{block.height}.json").write_bytes(_block_file_bytes(block))

    def _save_identities(self):
        payload = {
            name: {"role": ident.role.value, "key_id": ident.key_id}
            for name, ident in sorted(self.identities.items())
        }
        (self.root / "identities.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    def _load(self):
        reg = self.root / "identities.json"
        if reg.exists():
            raw = json.loads(reg.read_text(encoding="utf-8"))
            for name, info in raw.items():
                self.identities[name] = Identity(
                    name=name, role=Role(info["role"]), key_id=info["key_id"]
                )
        heights = sorted(
            int(p.stem) for p in self.blocks_dir.glob("*.json") if p.stem.isdigit()
        )
        for h in heights:
            try:
                content = json.loads((self.blocks_dir / f"{h}.json").read_text(encoding="utf-8"))
                block = _block_from_dict(content)
            except (ValueError, KeyError, TypeError):
                # unreadable block file: stop loading here and let verify_chain
                # report the damaged height instead of failing to open
                break
            self._blocks.append(block)
            for tx in block.transactions:
                self._tx_index[tx.tx_id] = tx
                self._next_sequence = max(self._next_sequence, tx.sequence + 1)
        if self._blocks:
            self._replay_into_live_state()

    def _replay_into_live_state(self):
        for block in self._blocks:
            for tx in block.transactions:
                try:
                    op = json.loads(tx.payload.decode("utf-8"))
                    if not isinstance(op, dict):
                        raise ValueError
                except (ValueError, UnicodeDecodeError):
                    continue
                identity = self.identities.get(tx.submitter)
                if identity is None:
                    continue
                result = self.chaincode(op, identity, StateView(self._state))
                if result.valid:
                    for key, value in result.writes.items():
                        self._state[key] = (value, tx.tx_id)
                for key in result.touched:
                    self._history.setdefault(key, []).append(tx.tx_id)


def _block_from_dict(content: dict) -> Block:
    txs = [
        Transaction(
            sequence=t["sequence"],
            tx_id=t["tx_id"],
            payload=base64.b64decode(t["payload_b64"], validate=True),
            payload_digest=t["payload_digest"],
            submitter=t["submitter"],
            endorsement=t["endorsement"],
            status=t["status"],
            reason=t["reason"],
        )
        for t in content["transactions"]
    ]
    return Block(
        height=content["height"],
        timestamp=content["timestamp"],
        prev_hash=content["prev_hash"],
        transactions=txs,
        block_hash=content["block_hash"],
    )
