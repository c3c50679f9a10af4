"""Unauthenticated building blocks plus the wrapper's standard sub-protocols.

Contents:

* graded consensus with core set (two rounds, window-scoped),
* conciliation with core set (one round, leader graph),
* the standard n-wide graded consensus used by the wrapper — an
  unauthenticated echo protocol for t < n/3 (2 rounds) and an
  authenticated vote/forward/commit/forward protocol for t < n/2
  (4 rounds),
* a time-boxed early-stopping Byzantine agreement (phase-king loop).

All tallies count distinct senders: a sender's first well-formed payload
per round wins, duplicates are ignored.  Values are filtered against the
scenario's finite, totally ordered value domain; anything else is treated
as a malformed payload (equivalent to silence).

The authenticated standard graded consensus works as follows.  Round 1:
everyone broadcasts a signed vote for its input.  Round 2: everyone
forwards the valid votes it received, after which each process voids any
signer seen voting for two values and tallies the rest.  Round 3: a
process holding n-t non-voided votes for some value broadcasts a signed
commit carrying those votes as a proof.  Round 4: everyone forwards the
valid commits it received directly.  A process returns grade 1 for v only
if it received n-t distinct-signer non-voided commits for v directly and
saw no valid commit for any other value anywhere; otherwise it adopts the
value with the most direct non-voided commits (ties to the smallest), or
keeps its input if there were none.  Coherence rests on two facts: any
commit received directly by an honest process is re-broadcast, so a
grade-1 holder's "no conflict" view implies no honest process received a
conflicting commit; and any n-t commit quorum contains an honest,
unvoidable committer whose broadcast reaches everyone.
"""

from __future__ import annotations

from collections import Counter
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .engine import register_protocol
from .errors import ConfigurationError
from .signatures import Signature, digest

BOT = None

GC_ROUNDS = {"unauthenticated": 2, "authenticated": 4}
ES_PHASE_ROUNDS = {"unauthenticated": 3, "authenticated": 5}


def plurality_tiebreak(values: Sequence[Any]) -> Any:
    """Smallest value among those occurring the largest number of times."""
    if not values:
        raise ConfigurationError("plurality of an empty multiset")
    counts = Counter(values)
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


def distinct_by_sender(inbox, allowed=None) -> Dict[int, Any]:
    """First payload per sender, optionally restricted to allowed senders."""
    seen: Dict[int, Any] = {}
    for src, payload in inbox:
        if allowed is not None and src not in allowed:
            continue
        if src not in seen:
            seen[src] = payload
    return seen


def _domain_values(inbox, domain, allowed=None) -> Dict[int, Any]:
    return {
        src: val
        for src, val in distinct_by_sender(inbox, allowed).items()
        if val in domain
    }


def _support(votes: Dict[int, Any]) -> Counter:
    return Counter(votes.values())


# ---------------------------------------------------------------------------
# Graded consensus with core set (window-scoped, 2 rounds)
# ---------------------------------------------------------------------------

def graded_consensus_core_set(ctx, value, k: int, window: Sequence[int]):
    """Two-round graded consensus listening only to the `window` members.

    Guarantees unanimity and coherence when every honest window has size
    3k+1 and shares a core of 2k+1 honest members.
    """
    members = frozenset(window)
    domain = ctx.scenario.value_domain
    mine = ctx.pid in members

    inbox = yield from ctx.round(ctx.broadcast(value) if mine else [])
    votes = _domain_values(inbox, domain, members)
    support = _support(votes)
    b = BOT
    if support:
        best = support.most_common(1)[0]
        if best[1] >= 2 * k + 1:
            b = plurality_tiebreak(
                [v for v in votes.values() if support[v] >= 2 * k + 1]
            )

    sends = ctx.broadcast(b) if (mine and b is not BOT) else []
    inbox = yield from ctx.round(sends)
    echoes = _domain_values(inbox, domain, members)
    esupport = _support(echoes)
    if b is not BOT:
        if esupport.get(b, 0) >= 2 * k + 1:
            return b, 1
        return b, 0
    if esupport and max(esupport.values()) >= k + 1:
        return plurality_tiebreak(list(echoes.values())), 0
    return value, 0


# ---------------------------------------------------------------------------
# Conciliation with core set (1 round)
# ---------------------------------------------------------------------------

def conciliate(ctx, value, k: int, window: Sequence[int]):
    """One-round leader-graph conciliation.

    Returns the plurality over the per-leader minima of input values whose
    senders reach the leader in the declared-listening graph.
    """
    members = frozenset(window)
    domain = ctx.scenario.value_domain
    expected_size = len(members)

    payload = (value, tuple(sorted(members)))
    inbox = yield from ctx.round(ctx.broadcast(payload) if ctx.pid in members else [])

    heard: Dict[int, Tuple[Any, frozenset]] = {}
    for src, p in distinct_by_sender(inbox).items():
        if (
            isinstance(p, tuple)
            and len(p) == 2
            and p[0] in domain
            and isinstance(p[1], tuple)
            and len(p[1]) == expected_size
            and all(isinstance(x, int) and 1 <= x <= ctx.n for x in p[1])
        ):
            heard[src] = (p[0], frozenset(p[1]))

    vertices = set(heard)
    declared = {y for y in vertices if y in heard[y][1]}
    # Edge (y, z) iff y is in z's declared window; path search runs backwards
    # from each of my own leaders.
    preds = {z: [y for y in vertices if y != z and y in heard[z][1]] for z in vertices}

    minima: List[Any] = []
    for z in sorted(vertices & members):
        reach = {z}
        frontier = [z]
        while frontier:
            node = frontier.pop()
            for y in preds[node]:
                if y not in reach:
                    reach.add(y)
                    frontier.append(y)
        sources = [heard[y][0] for y in reach if y in declared]
        if sources:
            minima.append(min(sources))

    ctx.check(
        "conciliation-path-lemma",
        _path_lemma_holds(ctx, vertices, declared, preds),
        "a source outside the honest broadcaster set reaches an honest broadcaster",
    )
    if not minima:
        return value
    return plurality_tiebreak(minima)


def _path_lemma_holds(ctx, vertices, declared, preds) -> bool:
    # Oracle: any vertex with a path to an honest broadcaster is itself an
    # honest broadcaster (checked with ground truth the protocol cannot use).
    fault_set = ctx.scenario.fault_set
    honest_bcast = {y for y in declared if y not in fault_set}
    reaches_honest = set(honest_bcast)
    changed = True
    while changed:
        changed = False
        for z in vertices:
            if z in reaches_honest:
                for y in preds[z]:
                    if y not in reaches_honest:
                        reaches_honest.add(y)
                        changed = True
    return all(y in honest_bcast or y in fault_set for y in reaches_honest)


# ---------------------------------------------------------------------------
# Standard graded consensus (n-wide substitute)
# ---------------------------------------------------------------------------

def graded_consensus_standard(ctx, value):
    if ctx.variant == "authenticated":
        return (yield from _gc_standard_auth(ctx, value))
    return (yield from _gc_standard_unauth(ctx, value))


def _gc_standard_unauth(ctx, value):
    n, t = ctx.n, ctx.t
    domain = ctx.scenario.value_domain

    inbox = yield from ctx.round(ctx.broadcast(value))
    votes = _domain_values(inbox, domain)
    support = _support(votes)
    echo = BOT
    if support:
        v, c = support.most_common(1)[0]
        if c >= n - t:
            echo = plurality_tiebreak([w for w in votes.values() if support[w] >= n - t])

    inbox = yield from ctx.round(ctx.broadcast(echo) if echo is not BOT else [])
    echoes = _domain_values(inbox, domain)
    esupport = _support(echoes)
    if esupport:
        best = plurality_tiebreak(list(echoes.values()))
        if esupport[best] >= n - t:
            return best, 1
        if esupport[best] >= t + 1:
            return best, 0
    return value, 0


_MULTI = object()  # sentinel: signer seen voting for more than one value


def _note_vote(votes_value, vote_bank, entry):
    signer, val = entry[0], entry[1]
    known = votes_value.get(signer)
    if known is None:
        votes_value[signer] = val
        vote_bank[(signer, val)] = entry
    elif known is not _MULTI and known != val:
        votes_value[signer] = _MULTI
        vote_bank[(signer, val)] = entry


def vote_content(tag, value):
    return ("gc-vote", tag, value)


def commit_content(tag, value, proof_digest):
    return ("gc-commit", tag, value, proof_digest)


def _gc_standard_auth(ctx, value):
    n, t = ctx.n, ctx.t
    domain = ctx.scenario.value_domain
    tag = ctx.tag
    verify = ctx.signer.verify
    # Broadcast payloads are shared objects, so validation caches key on
    # object identity; the cache holds the reference, keeping ids stable.
    cache = ctx.memo.get(tag)
    if cache is None:
        cache = {"vote": {}, "fwd": {}, "commit": {}, "cfwd": {}, "vmerge": {}, "cmerge": {}}
        ctx.memo[tag] = cache
    vote_memo, fwd_memo = cache["vote"], cache["fwd"]
    commit_memo, cfwd_memo = cache["commit"], cache["cfwd"]

    def vote_ok(entry):
        hit = vote_memo.get(id(entry))
        if hit is not None:
            return hit[1]
        ok = (
            isinstance(entry, tuple)
            and len(entry) == 3
            and entry[1] in domain
            and isinstance(entry[2], Signature)
            and entry[2].signer == entry[0]
            and verify(entry[2], entry[0], vote_content(tag, entry[1]))
        )
        vote_memo[id(entry)] = (entry, ok)
        return ok

    def fwd_entries(payload):
        hit = fwd_memo.get(id(payload))
        if hit is not None:
            return hit[1]
        entries = tuple(e for e in payload if vote_ok(e))
        fwd_memo[id(payload)] = (payload, entries)
        return entries

    def commit_ok(entry):
        hit = commit_memo.get(id(entry))
        if hit is not None:
            return hit[1]
        ok = False
        if isinstance(entry, tuple) and len(entry) == 4:
            signer, val, proof, sig = entry
            ok = (
                val in domain
                and isinstance(proof, tuple)
                and isinstance(sig, Signature)
                and sig.signer == signer
                and verify(sig, signer, commit_content(tag, val, digest(proof)))
                and all(vote_ok(v) and v[1] == val for v in proof)
                and len({v[0] for v in proof}) >= n - t
            )
        commit_memo[id(entry)] = (entry, ok)
        return ok

    def cfwd_entries(payload):
        hit = cfwd_memo.get(id(payload))
        if hit is not None:
            return hit[1]
        entries = tuple(e for e in payload if commit_ok(e))
        cfwd_memo[id(payload)] = (payload, entries)
        return entries

    # Round 1: signed votes.
    my_vote = (ctx.pid, value, ctx.signer.sign(vote_content(tag, value)))
    inbox = yield from ctx.round(ctx.broadcast(("vote", my_vote)))
    direct_votes: List[tuple] = []
    for _src, p in inbox:
        if isinstance(p, tuple) and len(p) == 2 and p[0] == "vote" and vote_ok(p[1]):
            direct_votes.append(p[1])

    # Round 2: forward everything; void double-voters, tally the rest.
    # Receivers of the same forward set share one merged view (copied, then
    # patched with the receiver's own direct votes).
    inbox = yield from ctx.round(ctx.broadcast(("fwd", tuple(direct_votes))))
    fwd_payloads = [
        p[1]
        for _src, p in inbox
        if isinstance(p, tuple) and len(p) == 2 and p[0] == "fwd" and isinstance(p[1], tuple)
    ]
    merge_key = tuple(sorted(map(id, fwd_payloads)))
    merged = cache["vmerge"].get(merge_key)
    if merged is None:
        mv: Dict[int, Any] = {}
        mb: Dict[Tuple[int, Any], tuple] = {}
        for payload in fwd_payloads:
            for entry in fwd_entries(payload):
                _note_vote(mv, mb, entry)
        merged = (fwd_payloads, mv, mb)
        cache["vmerge"][merge_key] = merged
    votes_value = dict(merged[1])  # signer -> sole value, or _MULTI
    vote_bank = dict(merged[2])
    for entry in direct_votes:
        _note_vote(votes_value, vote_bank, entry)
    tally = Counter()
    for signer, val in votes_value.items():
        if val is not _MULTI:
            tally[val] += 1

    # Round 3: commit with proof when a non-voided quorum exists.
    sends = []
    if tally and max(tally.values()) >= n - t:
        w = plurality_tiebreak([v for v, c in tally.items() if c >= n - t])
        proof = tuple(
            sorted(
                (vote_bank[(s, w)] for s, v in votes_value.items() if v is not _MULTI and v == w),
                key=lambda e: e[0],
            )[: n - t]
        )
        sig = ctx.signer.sign(commit_content(tag, w, digest(proof)))
        sends = ctx.broadcast(("commit", (ctx.pid, w, proof, sig)))
    inbox = yield from ctx.round(sends)
    direct_commits: List[tuple] = []
    for src, p in inbox:
        if isinstance(p, tuple) and len(p) == 2 and p[0] == "commit" and commit_ok(p[1]):
            if p[1][0] == src:
                direct_commits.append(p[1])

    # Round 4: forward direct commits; void double-committers, then grade.
    inbox = yield from ctx.round(ctx.broadcast(("cfwd", tuple(direct_commits))))
    cfwd_payloads = [
        p[1]
        for _src, p in inbox
        if isinstance(p, tuple) and len(p) == 2 and p[0] == "cfwd" and isinstance(p[1], tuple)
    ]
    merge_key = tuple(sorted(map(id, cfwd_payloads)))
    cmerged = cache["cmerge"].get(merge_key)
    if cmerged is None:
        mcv: Dict[int, frozenset] = {}
        for payload in cfwd_payloads:
            for entry in cfwd_entries(payload):
                prev = mcv.get(entry[0], frozenset())
                if entry[1] not in prev:
                    mcv[entry[0]] = prev | {entry[1]}
        cmerged = (cfwd_payloads, mcv)
        cache["cmerge"][merge_key] = cmerged
    commit_values: Dict[int, set] = {s: set(vals) for s, vals in cmerged[1].items()}
    for entry in direct_commits:
        commit_values.setdefault(entry[0], set()).add(entry[1])
    all_commit_values = {v for vals in commit_values.values() for v in vals}
    cvoided = {s for s, vals in commit_values.items() if len(vals) > 1}
    per_value = Counter()
    for signer, val in {(e[0], e[1]) for e in direct_commits}:
        if signer not in cvoided:
            per_value[val] += 1

    if per_value:
        top = max(per_value.values())
        best = min(v for v, c in per_value.items() if c == top)
        if per_value[best] >= n - t and all_commit_values == {best}:
            return best, 1
        return best, 0
    return value, 0


# ---------------------------------------------------------------------------
# Early-stopping Byzantine agreement (phase-king, time-boxed)
# ---------------------------------------------------------------------------

def es_rounds_needed(variant: str, t: int, f: int) -> int:
    """Rounds within which every honest process returns given f actual faults."""
    return ES_PHASE_ROUNDS[variant] * min(f + 3, t + 2)


def ba_early_stopping(ctx, value, T: int):
    """Phase-king agreement truncated to exactly T rounds.

    Kings 1..t+2 lead one phase each (graded consensus + king broadcast);
    a process decides on grade 1, helps for one more phase, then stops.
    With f actual faults all honest processes return within
    es_rounds_needed(variant, t, f) rounds; beyond the budget the current
    estimate is returned and the caller's graded-consensus guards make
    that safe.
    """
    n, t = ctx.n, ctx.t
    domain = ctx.scenario.value_domain
    phase_rounds = ES_PHASE_ROUNDS[ctx.variant]
    start = ctx.rounds_used
    decision = None
    decided_phase = None

    for ph in range(1, t + 3):
        if ctx.rounds_used - start + phase_rounds > T:
            break
        if decided_phase is not None and ph > decided_phase + 1:
            break
        king = ((ph - 1) % n) + 1
        with ctx.scope(f"k{ph}"):
            with ctx.scope("gc"):
                value, grade = yield from graded_consensus_standard(ctx, value)
            with ctx.scope("king"):
                sends = ctx.broadcast(value) if ctx.pid == king else []
                inbox = yield from ctx.round(sends)
                king_value = _domain_values(inbox, domain, {king}).get(king)
            if grade == 0 and king_value is not None:
                value = king_value
            if grade == 1 and decision is None:
                decision = value
                decided_phase = ph

    yield from ctx.idle(T - (ctx.rounds_used - start))
    return decision if decision is not None else value


# ---------------------------------------------------------------------------
# Standalone protocol registrations
# ---------------------------------------------------------------------------

def _window_for(ctx, params) -> List[int]:
    windows = params.get("windows")
    if windows is not None:
        return list(windows[ctx.pid] if ctx.pid in windows else windows[str(ctx.pid)])
    return list(params["window"])


@register_protocol("graded-consensus-core")
def _gc_core_protocol(ctx, scenario, params):
    with ctx.scope("gc-core"):
        out = yield from graded_consensus_core_set(
            ctx, params["input"], params["k"], _window_for(ctx, params)
        )
    return out


@register_protocol("conciliate")
def _conciliate_protocol(ctx, scenario, params):
    with ctx.scope("conciliate"):
        out = yield from conciliate(ctx, params["input"], params["k"], _window_for(ctx, params))
    return out


@register_protocol("graded-consensus")
def _gc_standard_protocol(ctx, scenario, params):
    _require_variant_bound(scenario)
    with ctx.scope("gc"):
        out = yield from graded_consensus_standard(ctx, params["input"])
    return out


@register_protocol("ba-early-stopping")
def _es_protocol(ctx, scenario, params):
    _require_variant_bound(scenario)
    T = params.get("T")
    if T is None:
        T = es_rounds_needed(scenario.variant, scenario.t, scenario.t)
    with ctx.scope("es"):
        out = yield from ba_early_stopping(ctx, params["input"], T)
    return out


def _require_variant_bound(scenario):
    if scenario.variant == "unauthenticated" and scenario.t * 3 >= scenario.n:
        raise ConfigurationError(
            f"unauthenticated n-wide protocols need t < n/3, got n={scenario.n} t={scenario.t}"
        )
    if scenario.variant == "authenticated" and scenario.t * 2 >= scenario.n:
        raise ConfigurationError(
            f"authenticated protocols need t < n/2, got n={scenario.n} t={scenario.t}"
        )
