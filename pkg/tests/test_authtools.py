"""Committee certificates, message chains, broadcast with implicit committee."""

import pytest

from byzpred import harness
from byzpred.authtools import (
    ChainValidator,
    CommitteeCertificate,
    MessageChain,
    assemble_committee_certificate,
    committee_content,
    extend_chain,
    start_chain,
    validate_chain,
)
from byzpred.engine import run_execution
from byzpred.scenario import AdversarySpec, Scenario
from byzpred.signatures import Signature, SimTokenScheme, digest

CTX = "test-ctx"


class Signer:
    def __init__(self, scheme, pid):
        self._scheme = scheme
        self.pid = pid

    def sign(self, content):
        return self._scheme.sign(self.pid, content)


def make_cert(scheme, subject, signers, t, context=CTX):
    sigs = [scheme.sign(s, committee_content(context, subject)) for s in signers]
    return assemble_committee_certificate(subject, context, sigs, t, scheme.verify)


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

def test_certificate_threshold_met():
    scheme = SimTokenScheme(0)
    cert = make_cert(scheme, 9, [1, 2, 5], t=2)
    assert cert is not None
    assert cert.signers == (1, 2, 5)


def test_certificate_duplicate_signers_absent():
    scheme = SimTokenScheme(0)
    sigs = [scheme.sign(s, committee_content(CTX, 9)) for s in (1, 2, 2)]
    assert assemble_committee_certificate(9, CTX, sigs, 2, scheme.verify) is None


def test_certificate_keeps_smallest_identifiers():
    scheme = SimTokenScheme(0)
    cert = make_cert(scheme, 9, [5, 1, 4, 2], t=2)
    assert cert.signers == (1, 2, 4)


def test_certificate_ignores_invalid_signatures():
    scheme = SimTokenScheme(0)
    good = [scheme.sign(s, committee_content(CTX, 9)) for s in (1, 2)]
    bad = [Signature(signer=3, message_digest="00", token="00")]
    assert assemble_committee_certificate(9, CTX, good + bad, 2, scheme.verify) is None


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------

def chain_fixture(t=1, n=5):
    scheme = SimTokenScheme(0)
    certs = {p: make_cert(scheme, p, list(range(1, t + 2)), t) for p in range(1, n + 1)}
    return scheme, certs


def test_length_one_chain_valid():
    scheme, certs = chain_fixture()
    chain = start_chain(1, certs[3], Signer(scheme, 3))
    assert validate_chain(chain, 3, 2, 1, CTX, scheme.verify)
    assert not validate_chain(chain, 4, 2, 1, CTX, scheme.verify)  # wrong origin


def test_extension_and_duplicate_signer():
    scheme, certs = chain_fixture()
    chain = start_chain(0, certs[2], Signer(scheme, 2))
    longer = extend_chain(chain, certs[4], Signer(scheme, 4))
    assert validate_chain(longer, 2, 3, 1, CTX, scheme.verify)
    dup = extend_chain(longer, certs[2], Signer(scheme, 2))
    assert not validate_chain(dup, 2, 5, 1, CTX, scheme.verify)


def test_chain_max_length_enforced():
    scheme, certs = chain_fixture()
    chain = start_chain(0, certs[2], Signer(scheme, 2))
    longer = extend_chain(chain, certs[4], Signer(scheme, 4))
    assert not validate_chain(longer, 2, 1, 1, CTX, scheme.verify)


def test_tampered_value_invalid():
    scheme, certs = chain_fixture()
    chain = start_chain(0, certs[2], Signer(scheme, 2))
    forged = MessageChain(value=1, origin=2, context=CTX, links=chain.links)
    assert not validate_chain(forged, 2, 3, 1, CTX, scheme.verify)


def test_link_cert_must_match_link_signer():
    scheme, certs = chain_fixture()
    chain = start_chain(0, certs[2], Signer(scheme, 2))
    sig = scheme.sign(4, ("chain-extend", CTX, chain.canonical(), certs[3].canonical()))
    mismatched = MessageChain(
        value=0, origin=2, context=CTX, links=chain.links + ((certs[3], sig),)
    )
    assert not validate_chain(mismatched, 2, 3, 1, CTX, scheme.verify)


def test_replayed_committee_signature_rejected_as_link():
    # an honest committee vote cannot stand in for a chain-link signature
    scheme, certs = chain_fixture()
    vote_sig = scheme.sign(2, committee_content(CTX, 2))
    forged = MessageChain(value=1, origin=2, context=CTX, links=((certs[2], vote_sig),))
    assert not validate_chain(forged, 2, 3, 1, CTX, scheme.verify)


def test_wrong_context_rejected():
    scheme, certs = chain_fixture()
    chain = start_chain(0, certs[2], Signer(scheme, 2))
    assert not validate_chain(chain, 2, 3, 1, "other-ctx", scheme.verify)


def test_validator_caches_are_identity_safe():
    scheme, certs = chain_fixture()
    validator = ChainValidator(CTX, 1, scheme.verify)
    chain = start_chain(0, certs[2], Signer(scheme, 2))
    assert validator.chain_ok(chain, 2, 3)
    assert validator.chain_ok(chain, 2, 3)  # cached path
    other = start_chain(1, certs[2], Signer(scheme, 2))
    assert validator.chain_ok(other, 2, 3)


# ---------------------------------------------------------------------------
# broadcast with implicit committee (standalone protocol)
# ---------------------------------------------------------------------------

def bb_scenario(n=5, t=1, fault_set=(), inputs=None, adversary=None, seed=0):
    return Scenario(
        n=n,
        t=t,
        fault_set=frozenset(fault_set),
        inputs=tuple(inputs if inputs is not None else (1,) * n),
        seed=seed,
        variant="authenticated",
        adversary=adversary or AdversarySpec.make("silent"),
    )


def test_honest_certified_sender_delivers_input():
    s = bb_scenario(inputs=(0, 1, 0, 1, 1))
    r = run_execution(s, "bb-committee", {"sender": 2, "k": 1, "committee": [1, 2, 3]})
    assert r.decisions == {p: 1 for p in range(1, 6)}
    assert r.rounds_elapsed == 1 + (1 + 1)  # setup round, then k+1 rounds


def test_sender_without_certificate_defaults_bot():
    s = bb_scenario()
    r = run_execution(s, "bb-committee", {"sender": 4, "k": 1, "committee": [1, 2, 3]})
    assert all(v is None for v in r.decisions.values())
    assert r.honest_message_count("bb").count == 0  # nobody sends in the instance


def test_uncertified_processes_stay_silent():
    s = bb_scenario(inputs=(1, 0, 0, 0, 0))
    r = run_execution(s, "bb-committee", {"sender": 1, "k": 1, "committee": [1, 2, 3]})
    per_sender = r.honest_messages_by_sender.get("bb", {})
    assert set(per_sender) <= {1, 2, 3}
    assert r.decisions == {p: 1 for p in range(1, 6)}


def test_faulty_sender_withholder_keeps_committee_agreement():
    s = bb_scenario(
        fault_set={1},
        inputs=(0, 1, 1, 1, 1),
        adversary=AdversarySpec.make("chain-withholder"),
    )
    r = run_execution(s, "bb-committee", {"sender": 1, "k": 1, "committee": [1, 2, 3]})
    certified_honest = [2, 3]
    values = {repr(r.decisions[p]) for p in certified_honest}
    assert len(values) == 1
    assert not r.check_failures
