import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbit5gc import nas
from orbit5gc.nas import (Cause, IeTag, IeTooLong, InvalidMessage, MalformedMessage,
                          MessageType, MissingMandatoryIe, NasError, NasMessage)

from _gen import hand_encode, messages, random_message, tlv

SUPI = "001010000000001"
REG_HEX = "7e4101000f303031303130303030303030303031"


class TestEncode:
    def test_registration_request_bytes(self):
        msg = nas.make(MessageType.RegistrationRequest, supi=SUPI)
        assert nas.encode(msg).hex() == REG_HEX

    def test_type_codes_follow_enumeration_order(self):
        assert [int(t) for t in MessageType] == list(range(0x41, 0x4D))

    def test_minimal_message_is_header_only(self):
        assert nas.encode(NasMessage(MessageType.RegistrationComplete)) == b"\x7e\x45"

    def test_mandatory_only(self):
        msg = nas.make(MessageType.PduSessionReleaseRequest, pdu_session_id=3)
        assert nas.encode(msg) == b"\x7e\x4b" + tlv(6, b"\x03")
        assert nas.encoded_length(msg) == 2 + 3 + 1

    def test_ie_order_is_kept(self):
        a = nas.make(MessageType.PduSessionEstablishmentRequest, pdu_session_id=1, dnn="internet")
        b = nas.make(MessageType.PduSessionEstablishmentRequest, dnn="internet", pdu_session_id=1)
        assert nas.encode(a) != nas.encode(b)
        assert nas.decode(nas.encode(b)) == b

    def test_accept_fields(self):
        msg = nas.make(MessageType.PduSessionEstablishmentAccept, pdu_session_id=1,
                       session_ref=42, ue_ip="10.45.0.2", qos_class=9)
        assert nas.encode(msg) == (b"\x7e\x49" + tlv(6, b"\x01") + tlv(8, b"\x00\x00\x00\x2a")
                                   + tlv(9, bytes([10, 45, 0, 2])) + tlv(10, b"\x09"))

    def test_ie_too_long(self):
        msg = NasMessage(MessageType.PduSessionEstablishmentRequest,
                         ((IeTag.PDU_SESSION_ID, b"\x01"), (IeTag.DNN, b"a" * 70000)))
        with pytest.raises(IeTooLong):
            nas.encode(msg)

    @pytest.mark.parametrize("ies, why", [
        ((), "missing SUPI"),
        (((IeTag.SUPI, b"00101000000001"),), "short SUPI"),
        (((IeTag.SUPI, SUPI.encode()), (IeTag.SUPI, SUPI.encode())), "duplicate"),
        (((IeTag.SUPI, SUPI.encode()), (IeTag.CAUSE, b"\x01")), "IE not allowed"),
        (((IeTag.SUPI, SUPI.encode()), (0x33, b"")), "unknown tag"),
    ])
    def test_invalid_messages_refused(self, ies, why):
        with pytest.raises(InvalidMessage):
            nas.encode(NasMessage(MessageType.RegistrationRequest, ies))


class TestDecode:
    def test_registration_request(self):
        msg = nas.decode(bytes.fromhex(REG_HEX))
        assert msg.message_type is MessageType.RegistrationRequest
        assert msg.supi == SUPI

    @pytest.mark.parametrize("buf", [b"", b"\x7e", b"\x00\x41", b"\x7e\x40", b"\x7e\x4d"])
    def test_bad_header(self, buf):
        with pytest.raises(MalformedMessage):
            nas.decode(buf)

    def test_truncated_value(self):
        buf = bytes.fromhex(REG_HEX)
        for cut in range(3, len(buf)):
            with pytest.raises(MalformedMessage):
                nas.decode(buf[:cut])

    def test_missing_mandatory_is_typed(self):
        with pytest.raises(MissingMandatoryIe) as info:
            nas.decode(b"\x7e\x42" + tlv(2, bytes(16)))
        assert info.value.tag is IeTag.SEQUENCE

    def test_bad_dnn(self):
        with pytest.raises(MalformedMessage):
            nas.decode(b"\x7e\x48" + tlv(6, b"\x01") + tlv(7, b"bad dnn"))

    def test_frame_length_splits_stream(self):
        a = nas.encode(nas.make(MessageType.RegistrationRequest, supi=SUPI))
        b = nas.encode(nas.make(MessageType.RegistrationReject, cause=Cause.AUTH_FAILURE))
        stream = a + b
        n = nas.frame_length(stream)
        assert n == len(a)
        assert nas.decode(stream[n:]).message_type is MessageType.RegistrationReject


class TestRoundTrip:
    @settings(max_examples=500, deadline=None)
    @given(messages())
    def test_hypothesis_round_trip(self, msg):
        wire = nas.encode(msg)
        assert wire == hand_encode(msg)
        assert nas.decode(wire) == msg

    def test_seeded_round_trip(self):
        rng = np.random.default_rng(11)
        for _ in range(2000):
            msg = random_message(rng)
            wire = nas.encode(msg)
            assert wire == hand_encode(msg)
            assert nas.decode(wire) == msg

    @settings(max_examples=500, deadline=None)
    @given(messages())
    def test_text_round_trip(self, msg):
        assert nas.from_text(nas.to_text(msg)) == msg


class TestFuzz:
    @settings(max_examples=1000, deadline=None)
    @given(st.binary(max_size=96))
    def test_decode_is_total(self, buf):
        try:
            msg = nas.decode(buf)
        except NasError:
            return
        assert nas.encode(msg) == buf

    @settings(max_examples=300, deadline=None)
    @given(messages(), st.integers(0, 10_000), st.integers(0, 255))
    def test_single_byte_mutation(self, msg, pos, value):
        wire = bytearray(nas.encode(msg))
        wire[pos % len(wire)] = value
        try:
            out = nas.decode(bytes(wire))
        except NasError:
            return
        assert nas.encode(out) == bytes(wire)


class TestText:
    def test_canonical_form(self):
        msg = nas.make(MessageType.PduSessionEstablishmentAccept, pdu_session_id=1,
                       session_ref=42, ue_ip="10.45.0.2", qos_class=9)
        assert nas.to_text(msg) == ("PduSessionEstablishmentAccept{pdu_session_id=1, "
                                    "session_ref=42, ue_ip=10.45.0.2, qos_class=9}")

    def test_hex_fields(self):
        msg = nas.make(MessageType.AuthenticationRequest, nonce=bytes(range(16)), sequence=1)
        assert nas.to_text(msg) == ("AuthenticationRequest{nonce=0x000102030405060708090a0b0c0d"
                                    "0e0f, sequence=1}")

    def test_bad_text(self):
        with pytest.raises(ValueError):
            nas.from_text("NoSuchMessage{}")


class TestVectors:
    def test_shipped_vectors(self):
        from importlib import resources
        text = (resources.files("orbit5gc") / "data" / "nas_vectors.tsv").read_text()
        results = nas.check_vectors(text.splitlines())
        assert len(results) >= 25
        assert all(r.ok for r in results), [r for r in results if not r.ok]

    def test_mismatch_detected(self):
        bad = f"{REG_HEX}\tRegistrationRequest{{supi=\"001010000000002\"}}"
        assert not nas.check_vectors([bad])[0].ok

    def test_wrong_error_class_detected(self):
        assert not nas.check_vectors(["7e41\t!IeTooLong"])[0].ok
        assert nas.check_vectors(["7e41\t!MissingMandatoryIe"])[0].ok
        assert nas.check_vectors(["7e41\t!MalformedMessage"])[0].ok
