"""Byzantine strategy catalog and an exhaustive small-instance enumerator.

A strategy controls everything the faulty processes transmit.  The engine
runs honest "shadow" programs for faulty processes and hands the strategy
their would-be sends each round, together with the full honest round
traffic (rushing adversary); the strategy returns the actual faulty
envelopes.  Strategies may sign as their own members but have no way to
mint signatures of honest processes.

Enumeration soundness: honest code is deterministic, so the execution is a
function of the faulty per-round, per-receiver payload choices.  Every
adaptive strategy therefore induces some fixed choice table, and running
all choice tables over the protocol-syntactic payload alphabet (plus
silence; arbitrary garbage is discarded by honest parsers, hence
equivalent to silence) covers every honest-observable execution.  When the
table space exceeds the bound, a deterministic sample is drawn and the
report marks the run as sampled, not exhaustive.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from .authtools import (
    MessageChain,
    assemble_committee_certificate,
    extend_chain,
    start_chain,
)
from .blocks import vote_content
from .errors import ConfigurationError
from .scenario import AdversarySpec

SILENT = "silent"


class _MemberSigner:
    """SignOracle-shaped adapter over the adversary signing capability."""

    __slots__ = ("_actx", "pid")

    def __init__(self, actx, member):
        self._actx = actx
        self.pid = member

    def sign(self, content):
        return self._actx.sign_as(self.pid, content)

    def verify(self, sig, signer, content):
        return self._actx.verify(sig, signer, content)


class Strategy:
    """Base: faulty processes replay their shadow (honest) behaviour."""

    name = "honest-shadow"

    def __init__(self, params: Optional[Dict[str, Any]] = None):
        self.params = dict(params or {})
        self._tag_round: Dict[str, int] = {}
        self.scenario = None

    # -- hooks ------------------------------------------------------------
    def prepare(self, scenario):
        self.scenario = scenario

    def member_program_inputs(self, member, value, prediction):
        return value, prediction

    def filter_member_inbox(self, member, inbox, rnd):
        return inbox

    def transform(self, member, sends, rnd, honest_traffic, actx):
        return sends

    def emit(self, rnd, honest_traffic, shadow_sends, actx):
        for tag in {env[2] for env in honest_traffic}:
            self._tag_round[tag] = self._tag_round.get(tag, 0) + 1
        out = []
        for member in sorted(shadow_sends):
            out.extend(self.transform(member, shadow_sends[member], rnd, honest_traffic, actx))
        return out

    # -- helpers ----------------------------------------------------------
    def tag_round(self, tag: str) -> int:
        """How many rounds of traffic tagged `tag` have been seen (1-based)."""
        return self._tag_round.get(tag, 0)

    @staticmethod
    def current_tags(honest_traffic) -> List[str]:
        return sorted({env[2] for env in honest_traffic})


class SilentStrategy(Strategy):
    name = "silent"

    def transform(self, member, sends, rnd, honest_traffic, actx):
        return []


class CrashStrategy(Strategy):
    """Honest behaviour until the configured round, then silence."""

    name = "crash"

    def transform(self, member, sends, rnd, honest_traffic, actx):
        return [] if rnd >= self.params.get("round", 2) else sends


class EquivocatorStrategy(Strategy):
    """Distinct per-receiver values in every broadcast step."""

    name = "equivocator"

    def transform(self, member, sends, rnd, honest_traffic, actx):
        return [
            (s, r, tag, _perturb(payload, member, r, rnd, tag, actx))
            for (s, r, tag, payload) in sends
        ]


def _rotate(value, salt, domain):
    if value in domain:
        return domain[(domain.index(value) + salt) % len(domain)]
    return domain[salt % len(domain)]


def _perturb(payload, member, receiver, rnd, tag, actx):
    domain = actx.value_domain
    salt = receiver + rnd
    if payload in domain:
        return _rotate(payload, salt, domain)
    if isinstance(payload, MessageChain):
        if len(payload) == 1 and payload.origin == member:
            value = _rotate(payload.value, salt, domain)
            key = ("eqv-chain", member, payload.context, value)
            chain = actx.memo.get(key)
            if chain is None:
                cert = payload.links[0][0]
                chain = start_chain(value, cert, _MemberSigner(actx, member))
                actx.memo[key] = chain
            return chain
        return payload
    if isinstance(payload, tuple):
        if len(payload) == actx.n and all(b in (0, 1) for b in payload):
            flip = receiver % actx.n
            return tuple(b ^ 1 if j < flip else b for j, b in enumerate(payload))
        if len(payload) == 2 and payload[0] in domain and isinstance(payload[1], tuple):
            return (_rotate(payload[0], salt, domain), payload[1])
        if len(payload) == 2 and payload[0] == "vote":
            v = _rotate(payload[1][1], salt, domain)
            key = ("eqv-vote", member, tag, v)
            entry = actx.memo.get(key)
            if entry is None:
                entry = ("vote", (member, v, actx.sign_as(member, vote_content(tag, v))))
                actx.memo[key] = entry
            return entry
        if len(payload) == 3 and payload[0] == "plur":
            return ("plur", _rotate(payload[1], salt, domain), payload[2])
    return payload


class VotePoisonerStrategy(Strategy):
    """Classification round: complement or per-receiver tailored vectors."""

    name = "vote-poisoner"

    def transform(self, member, sends, rnd, honest_traffic, actx):
        out = []
        for s, r, tag, payload in sends:
            if tag.endswith("classify"):
                flipped = tuple(1 - b for b in actx.truth)
                if self.params.get("mode", "complement") == "per-receiver":
                    flipped = tuple(
                        (1 - b) if (j + r) % 2 else b for j, b in enumerate(actx.truth)
                    )
                out.append((s, r, tag, flipped))
            else:
                out.append((s, r, tag, payload))
        return out


class SelectiveIgnorerStrategy(Strategy):
    """Drops the first floor(t/2) messages, then follows the protocol while
    pretending a prediction that trusts everyone and an input of the
    smallest domain value."""

    name = "selective-ignorer"

    def __init__(self, params=None):
        super().__init__(params)
        self._dropped: Dict[int, int] = {}

    def member_program_inputs(self, member, value, prediction):
        return self.scenario.value_domain[0], (1,) * self.scenario.n

    def filter_member_inbox(self, member, inbox, rnd):
        quota = self.params.get("ignore")
        if quota is None:
            quota = self.scenario.t // 2
        dropped = self._dropped.get(member, 0)
        if dropped >= quota:
            return inbox
        take = min(quota - dropped, len(inbox))
        self._dropped[member] = dropped + take
        return inbox[take:]


class ChainWithholderStrategy(Strategy):
    """Members behave honestly, but each certified faulty sender also builds
    a private chain for a second value, extended member-to-member without
    ever touching an honest process, and reveals it at the last round where
    its length is still acceptable."""

    name = "chain-withholder"

    def __init__(self, params=None):
        super().__init__(params)
        self._private: Dict[str, Dict[str, Any]] = {}

    def _member_cert(self, member, context, actx):
        sigs = []
        for _rnd, inbox in actx.member_inboxes.get(member, ()):
            for _src, _tag, payload in inbox:
                if isinstance(payload, tuple) and len(payload) == 2 and payload[0] == "cvote":
                    sigs.append(payload[1])
        return assemble_committee_certificate(member, context, sigs, actx.t, actx.verify)

    def transform(self, member, sends, rnd, honest_traffic, actx):
        out = list(sends)
        for env in sends:
            payload = env[3]
            if isinstance(payload, MessageChain) and len(payload) == 1 and payload.origin == member:
                key = (payload.context, member)
                if key not in self._private:
                    self._build_private(member, payload, env[2], actx)
        for (_context, owner), state in sorted(self._private.items()):
            if owner != member or state["sent"] or state["chain"] is None:
                continue
            chain = state["chain"]
            if self.tag_round(state["tag"]) == len(chain):
                honest = [p for p in range(1, actx.n + 1) if p not in actx.fault_set]
                out.extend((member, r, state["tag"], chain) for r in honest)
                state["sent"] = True
        return out

    def _build_private(self, member, public_chain, tag, actx):
        context = public_chain.context
        domain = actx.value_domain
        second = _rotate(public_chain.value, 1, domain)
        cert = self._member_cert(member, context, actx)
        state = {"chain": None, "sent": False, "tag": tag}
        self._private[(context, member)] = state
        if cert is None:
            return
        chain = start_chain(second, cert, _MemberSigner(actx, member))
        for other in sorted(actx.fault_set):
            if other == member or other in chain.signers:
                continue
            ocert = self._member_cert(other, context, actx)
            if ocert is not None:
                chain = extend_chain(chain, ocert, _MemberSigner(actx, other))
        state["chain"] = chain


class CertificateHoarderStrategy(Strategy):
    """Collects committee votes but stays silent through the broadcast
    rounds, spending the certificate only on a poisoned, per-receiver
    plurality message in the final round."""

    name = "certificate-hoarder"

    def transform(self, member, sends, rnd, honest_traffic, actx):
        out = []
        for s, r, tag, payload in sends:
            if isinstance(payload, MessageChain):
                continue  # withhold all chain traffic
            if isinstance(payload, tuple) and len(payload) == 3 and payload[0] == "plur":
                poison = _rotate(payload[1], r, actx.value_domain)
                out.append((s, r, tag, ("plur", poison, payload[2])))
            else:
                out.append((s, r, tag, payload))
        return out


class GradeSplitterStrategy(Strategy):
    """Staged attack on the wrapper's grade-0 adoption guards.

    Phase 1: the classification vote is poisoned (complement vectors) so
    misclassified faulty processes fill the first leader window.  Inside
    that window the faulty members hand (u, 1) to a late-position faction,
    which latches u as its conditional-BA decision while conciliation in
    the later, honest windows converges everyone else; the conditional BA
    thus legitimately returns divergent values.  At the phase's decision
    check the faction's value quorum (faction plus all faulty votes) pushes
    exactly one target to grade 1, so a single process decides u.

    Phase 2: the same window play hands out the rotated value instead, so
    the conditional BA output flips; a wrapper that adopts that output
    despite its grade-1 guard walks every undecided process to the other
    value and violates Agreement.  With the guards intact the adoption is
    skipped and every property holds, which the criterion-1 grid checks.
    """

    name = "grade-splitter"

    def __init__(self, params=None):
        super().__init__(params)
        self._votes_by_tag: Dict[str, List[Tuple[int, Any]]] = {}

    def emit(self, rnd, honest_traffic, shadow_sends, actx):
        domain = actx.value_domain
        self._votes_by_tag = {}
        for env in honest_traffic:
            if env[0] not in actx.fault_set and env[3] in domain:
                self._votes_by_tag.setdefault(env[2], []).append((env[0], env[3]))
        return super().emit(rnd, honest_traffic, shadow_sends, actx)

    @staticmethod
    def _phase_of(tag):
        head = tag.split("/", 1)[0]
        if head.startswith("ph") and head[2:].isdigit():
            return int(head[2:])
        return None

    def transform(self, member, sends, rnd, honest_traffic, actx):
        n, t, f = actx.n, actx.t, len(actx.fault_set)
        domain = actx.value_domain
        honest = [p for p in range(1, n + 1) if p not in actx.fault_set]
        if not honest or len(domain) < 2:
            return sends
        crowd = max(n - t - f, 1)
        push_value = domain[-1]
        flip_value = domain[0]
        faction_a = honest[-crowd:]
        target = faction_a[0]
        faction_c = [p for p in honest if p != target][:crowd]
        unauth = actx.scenario.variant == "unauthenticated"
        out = []
        done = set()
        for s, r, tag, payload in sends:
            if tag.endswith("classify"):
                out.append((s, r, tag, tuple(1 - b for b in actx.truth)))
                continue
            if tag in done:
                continue
            leaf = tag.rsplit("/", 1)[-1]
            phase = self._phase_of(tag)
            if unauth and leaf in ("gca", "gcb") and "/w1/" in tag and phase is not None:
                done.add(tag)
                value = push_value if phase == 1 else flip_value
                faction = faction_a if phase == 1 else faction_c
                # feeding the members too keeps their shadows voting, which
                # keeps the next round of this window visible to us
                targets = list(faction) + sorted(actx.fault_set)
                out.extend((member, rr, tag, value) for rr in targets)
                continue
            if unauth and leaf == "gc3" and phase == 1:
                done.add(tag)
                holders = sorted(
                    {p for p, v in self._votes_by_tag.get(tag, ()) if v == push_value}
                )
                if self.tag_round(tag) % 2 == 1:
                    if len(holders) + f >= n - t:
                        out.extend((member, rr, tag, push_value) for rr in holders)
                elif holders:
                    out.append((member, target, tag, push_value))
                continue
            if leaf in ("gc1", "gc2", "gc3", "gc", "king", "con", "gca", "gcb"):
                continue  # silent around every other guard site
            out.append((s, r, tag, _perturb(payload, member, r, rnd, tag, actx)))
        return out


class ForgerStrategy(Strategy):
    """Simulated forgery: replays honest signatures on altered content and
    fabricates tokens for honest signers; every artefact must be rejected."""

    name = "forger"

    def __init__(self, params=None):
        super().__init__(params)
        self._seen_sigs: List[Any] = []

    def transform(self, member, sends, rnd, honest_traffic, actx):
        from .signatures import Signature, digest as digest_of

        out = list(sends)
        for env in honest_traffic:
            payload = env[3]
            if isinstance(payload, tuple) and len(payload) == 2 and payload[0] == "cvote":
                self._seen_sigs.append(payload[1])
        honest = [p for p in range(1, actx.n + 1) if p not in actx.fault_set]
        if not honest:
            return out
        victim = honest[(rnd - 1) % len(honest)]
        for env in honest_traffic:
            if isinstance(env[3], MessageChain):
                chain = env[3]
                forged_value = _rotate(chain.value, 1, actx.value_domain)
                cert, _sig = chain.links[0]
                content = ("chain-start", chain.context, forged_value, cert.canonical())
                fake_sig = Signature(
                    signer=chain.origin, message_digest=digest_of(content), token="f" * 32
                )
                forged = MessageChain(
                    value=forged_value,
                    origin=chain.origin,
                    context=chain.context,
                    links=((cert, fake_sig),),
                )
                out.extend((member, r, env[2], forged) for r in honest)
                break
        if self._seen_sigs:
            # Replay an honest committee signature as a chain-link signature.
            sig = self._seen_sigs[0]
            out.append(
                (
                    member,
                    victim,
                    "forgery-probe",
                    ("replayed-sig", sig),
                )
            )
        return out


CATALOG: Dict[str, type] = {
    cls.name: cls
    for cls in (
        SilentStrategy,
        CrashStrategy,
        EquivocatorStrategy,
        VotePoisonerStrategy,
        SelectiveIgnorerStrategy,
        ChainWithholderStrategy,
        CertificateHoarderStrategy,
        GradeSplitterStrategy,
        ForgerStrategy,
    )
}
CATALOG["honest-shadow"] = Strategy
CATALOG["choice-table"] = None  # placeholder; set after class definition


def strategy_catalog() -> List[AdversarySpec]:
    """Default-parameter specs for every catalog strategy."""
    specs = [
        AdversarySpec.make("silent"),
        AdversarySpec.make("crash", {"round": 2}),
        AdversarySpec.make("equivocator"),
        AdversarySpec.make("vote-poisoner", {"mode": "complement"}),
        AdversarySpec.make("selective-ignorer"),
        AdversarySpec.make("chain-withholder"),
        AdversarySpec.make("certificate-hoarder"),
        AdversarySpec.make("grade-splitter"),
        AdversarySpec.make("forger"),
    ]
    return specs


def make_strategy(spec: AdversarySpec) -> Strategy:
    cls = CATALOG.get(spec.name)
    if cls is None:
        raise ConfigurationError(f"unknown adversary strategy {spec.name!r}")
    return cls(spec.param_dict())


# ---------------------------------------------------------------------------
# Exhaustive enumeration for small instances
# ---------------------------------------------------------------------------

class ChoiceTableStrategy(Strategy):
    """Pre-committed per-(round, member, receiver) payload choices.

    Entries are ((round, member, receiver), (tag, action)) pairs.  An action
    is a literal payload or one of the symbolic forms resolved at runtime
    against what the member legitimately knows:

        ("@chain", v)        start or extend a valid chain for value v
        ("@vote", v)         a signed graded-consensus vote for v
        ("@commit", v)       a commit for v with a proof assembled from
                             observed valid votes (dropped if impossible)
        ("@fwd", v | "*")    forward observed votes (for v, or all)
        ("@cfwd", "*")       forward observed commits
        ("@multi", a, b)     both actions in one round

    Unlisted slots stay silent.
    """

    name = "choice-table"

    def __init__(self, params=None):
        super().__init__(params)
        self.table = dict(self.params.get("table", ()))
        self._known_chains: Dict[Tuple[str, Any], MessageChain] = {}
        self._votes_seen: Dict[str, Dict[Tuple[int, Any], tuple]] = {}
        self._commits_seen: Dict[str, Dict[int, tuple]] = {}

    def _note_chain(self, chain):
        key = (chain.context, chain.value, len(chain))
        self._known_chains.setdefault(key, chain)

    def _observe(self, honest_traffic):
        for env in honest_traffic:
            payload = env[3]
            if isinstance(payload, MessageChain):
                self._note_chain(payload)
            elif isinstance(payload, tuple) and len(payload) == 2:
                if payload[0] == "vote" and isinstance(payload[1], tuple):
                    entry = payload[1]
                    self._votes_seen.setdefault(env[2], {}).setdefault(
                        (entry[0], entry[1]), entry
                    )
                elif payload[0] == "commit" and isinstance(payload[1], tuple):
                    entry = payload[1]
                    self._commits_seen.setdefault(env[2], {}).setdefault(entry[0], entry)

    def _resolve(self, action, member, rnd, actx, tag):
        if not (isinstance(action, tuple) and action and isinstance(action[0], str)):
            return [action]
        head = action[0]
        if head == "@multi":
            out = []
            for sub in action[1:]:
                out.extend(self._resolve(sub, member, rnd, actx, tag))
            return out
        if head == "@chain":
            chain = self._resolve_chain(action[1], member, actx)
            return [chain] if chain is not None else []
        if head == "@vote":
            from .blocks import vote_content

            v = action[1]
            entry = (member, v, actx.sign_as(member, vote_content(tag, v)))
            self._votes_seen.setdefault(tag, {}).setdefault((member, v), entry)
            return [("vote", entry)]
        if head == "@fwd":
            votes = self._votes_seen.get(tag, {})
            sel = action[1]
            entries = tuple(
                votes[k] for k in sorted(votes, key=repr) if sel == "*" or k[1] == sel
            )
            return [("fwd", entries)]
        if head == "@commit":
            from .blocks import commit_content, vote_content
            from .signatures import digest

            v = action[1]
            votes = self._votes_seen.setdefault(tag, {})
            if (member, v) not in votes:
                votes[(member, v)] = (member, v, actx.sign_as(member, vote_content(tag, v)))
            proof_entries = sorted(
                (votes[k] for k in votes if k[1] == v), key=lambda e: e[0]
            )[: actx.n - actx.t]
            if len({e[0] for e in proof_entries}) < actx.n - actx.t:
                return []
            proof = tuple(proof_entries)
            sig = actx.sign_as(member, commit_content(tag, v, digest(proof)))
            entry = (member, v, proof, sig)
            self._commits_seen.setdefault(tag, {}).setdefault(member, entry)
            return [("commit", entry)]
        if head == "@cfwd":
            commits = self._commits_seen.get(tag, {})
            return [("cfwd", tuple(commits[s] for s in sorted(commits)))]
        return [action]

    def _resolve_chain(self, value, member, actx):
        contexts = sorted({c for (c, _v, _l) in self._known_chains})
        context = contexts[0] if contexts else "bb-standalone"
        cert_sigs = []
        for _r, inbox in actx.member_inboxes.get(member, ()):
            for _src, _t, payload in inbox:
                if isinstance(payload, tuple) and len(payload) == 2 and payload[0] == "cvote":
                    cert_sigs.append(payload[1])
        cert = assemble_committee_certificate(member, context, cert_sigs, actx.t, actx.verify)
        if cert is None:
            return None
        existing = [
            chain
            for (c, v, _length), chain in sorted(
                self._known_chains.items(), key=lambda kv: str(kv[0])
            )
            if c == context and v == value and member not in chain.signers
        ]
        if existing:
            longest = max(existing, key=len)
            return extend_chain(longest, cert, _MemberSigner(actx, member))
        return start_chain(value, cert, _MemberSigner(actx, member))

    def emit(self, rnd, honest_traffic, shadow_sends, actx):
        self._observe(honest_traffic)
        out = []
        for member in sorted(actx.fault_set):
            for receiver in range(1, actx.n + 1):
                entry = self.table.get((rnd, member, receiver))
                if entry is None:
                    continue
                tag, action = entry
                for payload in self._resolve(action, member, rnd, actx, tag):
                    if payload is None:
                        continue
                    if isinstance(payload, MessageChain):
                        self._note_chain(payload)
                    out.append((member, receiver, tag, payload))
        return out


CATALOG["choice-table"] = ChoiceTableStrategy


@dataclass(frozen=True)
class EnumerationReport:
    total: int
    enumerated: int
    truncated: bool


def enumerate_choice_tables(
    slots: Sequence[Tuple[int, int, int]],
    alphabets: Dict[Tuple[int, int, int], Sequence[Any]],
    bound: Optional[int] = None,
    seed: int = 0,
) -> Tuple[Iterator[Tuple], EnumerationReport]:
    """All (or a deterministic sample of) choice tables over the slots.

    Each yielded table is a sorted tuple of ((round, member, receiver),
    entry) pairs with silent slots omitted, suitable for
    AdversarySpec.make("choice-table", {"table": table}).
    """
    slots = sorted(slots)
    sizes = [len(alphabets[s]) for s in slots]
    total = 1
    for size in sizes:
        total *= size
    truncated = bound is not None and total > bound

    def full() -> Iterator[Tuple]:
        for combo in itertools.product(*(alphabets[s] for s in slots)):
            yield tuple(
                (slot, entry)
                for slot, entry in zip(slots, combo)
                if entry is not None and entry != SILENT
            )

    def sampled() -> Iterator[Tuple]:
        rng = random.Random(seed)
        for _ in range(bound):
            combo = [rng.choice(list(alphabets[s])) for s in slots]
            yield tuple(
                (slot, entry)
                for slot, entry in zip(slots, combo)
                if entry is not None and entry != SILENT
            )

    report = EnumerationReport(
        total=total, enumerated=bound if truncated else total, truncated=truncated
    )
    return (sampled() if truncated else full()), report
