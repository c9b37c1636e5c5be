"""Codec tests: encode/decode round trips, recoding composition, headers."""

import numpy as np
import pytest

from cotag_sim import gf
from cotag_sim.rlnc import (CodedPacket, Decoder, Generation, GenerationMismatch,
                            InsertOutcome, Priority, encode, pack_packet,
                            pack_source_blocks, random_coeffs, recode,
                            unpack_packet, unpack_source_blocks)


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def make_gen(g=4, width=64, seed=1, flow=7, cohort=3):
    r = rng(seed)
    payloads = [r.integers(0, 256, size=width, dtype=np.uint8).tobytes()
                for _ in range(g)]
    return Generation.from_payloads(flow, cohort, payloads), payloads


class TestPacking:
    def test_round_trip_exact_lengths(self):
        payloads = [b"alpha", b"", b"a much longer payload than the others"]
        blocks = pack_source_blocks(payloads)
        assert blocks.shape == (3, 2 + len(payloads[2]))
        assert unpack_source_blocks(blocks) == payloads

    def test_empty_generation_rejected(self):
        with pytest.raises(ValueError):
            pack_source_blocks([])

    def test_oversized_payload_rejected(self):
        with pytest.raises(ValueError):
            pack_source_blocks([b"x" * 70000])


class TestEncode:
    def test_unit_vector_reproduces_source(self):
        gen, payloads = make_gen()
        e2 = np.zeros(4, dtype=np.uint8)
        e2[2] = 1
        pkt = encode(gen, e2)
        assert np.array_equal(pkt.payload, gen.blocks[2])

    def test_all_zero_coeffs_give_zero_payload(self):
        gen, _ = make_gen()
        pkt = encode(gen, np.zeros(4, dtype=np.uint8))
        assert not pkt.payload.any()

    def test_matches_naive_double_loop(self):
        gen, _ = make_gen(g=4, width=32, seed=9)
        coeffs = random_coeffs(4, rng(10))
        pkt = encode(gen, coeffs)
        expect = np.zeros(gen.width, dtype=np.uint8)
        for i in range(4):
            for j in range(gen.width):
                expect[j] ^= gf.gf_mul(int(coeffs[i]), int(gen.blocks[i, j]))
        assert np.array_equal(pkt.payload, expect)

    def test_length_mismatch_rejected(self):
        gen, _ = make_gen()
        with pytest.raises(ValueError):
            encode(gen, np.zeros(3, dtype=np.uint8))

    def test_random_coeffs_never_all_zero(self):
        r = rng(11)
        for _ in range(200):
            assert random_coeffs(2, r).any()


class TestDecoder:
    def test_duplicate_insert_is_redundant(self):
        gen, _ = make_gen()
        dec = Decoder(gen.flow_id, gen.cohort, gen.size, gen.width)
        pkt = encode(gen, random_coeffs(4, rng(2)))
        assert dec.insert(pkt) is InsertOutcome.INNOVATIVE
        assert dec.insert(pkt) is InsertOutcome.REDUNDANT

    def test_unit_vectors_reach_full_rank(self):
        gen, payloads = make_gen()
        dec = Decoder(gen.flow_id, gen.cohort, gen.size, gen.width)
        for i in range(4):
            e = np.zeros(4, dtype=np.uint8)
            e[i] = 1
            assert dec.insert(encode(gen, e)) is InsertOutcome.INNOVATIVE
        assert dec.rank == 4
        assert dec.extract_payloads() == payloads

    def test_rank_deficiency_returns_none(self):
        gen, _ = make_gen()
        dec = Decoder(gen.flow_id, gen.cohort, gen.size, gen.width)
        r = rng(3)
        for _ in range(3):
            dec.insert(encode(gen, random_coeffs(4, r)))
        assert dec.rank <= 3
        assert dec.extract_payloads() is None

    def test_generation_mismatch_rejected(self):
        gen, _ = make_gen()
        other, _ = make_gen(flow=8)
        dec = Decoder(gen.flow_id, gen.cohort, gen.size, gen.width)
        with pytest.raises(GenerationMismatch):
            dec.insert(encode(other, random_coeffs(4, rng(4))))

    def test_random_full_rank_probability(self):
        # over GF(256), g random rows are full rank with prob ~ 0.9961
        r = rng(5)
        for g in (4, 16, 64):
            ok = 0
            trials = 300
            for _ in range(trials):
                dec = Decoder(0, 0, g, 0)
                for _ in range(g):
                    dec.insert_row(random_coeffs(g, r))
                ok += dec.rank == g
            assert ok / trials >= 0.99, (g, ok)

    def test_round_trip_random_matrices(self):
        r = rng(6)
        for g in (1, 2, 8, 32, 128):
            gen, payloads = make_gen(g=g, width=50, seed=g)
            dec = Decoder(gen.flow_id, gen.cohort, g, gen.width)
            while dec.rank < g:
                dec.insert(encode(gen, random_coeffs(g, r)))
            assert dec.extract_payloads() == payloads

    def test_rank_invariant_under_permutation(self):
        gen, _ = make_gen(g=6)
        r = rng(7)
        pkts = [encode(gen, random_coeffs(6, r)) for _ in range(6)]
        ranks = []
        for order in (pkts, pkts[::-1], pkts[2:] + pkts[:2]):
            dec = Decoder(gen.flow_id, gen.cohort, 6, gen.width)
            for p in order:
                dec.insert(p)
            ranks.append(dec.rank)
        assert len(set(ranks)) == 1


class TestRecode:
    def test_composition_matches_direct_combination(self):
        # recoding coded packets must equal coding the sources with the
        # composed coefficient vector
        gen, _ = make_gen(g=4, width=30, seed=20)
        r = rng(21)
        firsts = [encode(gen, random_coeffs(4, r)) for _ in range(4)]
        mix = random_coeffs(4, r)
        recoded = recode(firsts, mix)
        composed = np.zeros(4, dtype=np.uint8)
        for i, p in enumerate(firsts):
            composed ^= gf.MUL_TABLE[mix[i]][p.coeffs]
        assert np.array_equal(recoded.coeffs, composed)
        assert np.array_equal(recoded.payload, encode(gen, composed).payload)

    def test_recoded_packets_still_decode(self):
        gen, payloads = make_gen(g=5, width=40, seed=22)
        r = rng(23)
        stage1 = [encode(gen, random_coeffs(5, r)) for _ in range(7)]
        stage2 = [recode(stage1, random_coeffs(7, r)) for _ in range(6)]
        dec = Decoder(gen.flow_id, gen.cohort, 5, gen.width)
        for p in stage2:
            dec.insert(p)
        assert dec.rank == 5
        assert dec.extract_payloads() == payloads

    def test_mixed_generation_recode_rejected(self):
        gen_a, _ = make_gen(flow=1)
        gen_b, _ = make_gen(flow=2)
        r = rng(24)
        with pytest.raises(GenerationMismatch):
            recode([encode(gen_a, random_coeffs(4, r)),
                    encode(gen_b, random_coeffs(4, r))], random_coeffs(2, r))

    def test_worked_example_six_packets(self):
        # four combinations of a 4-packet flow plus two of a 2-packet flow,
        # after one recoding stage, both decode completely
        r = rng(25)
        gen_a, pay_a = make_gen(g=4, width=48, seed=26, flow=1)
        gen_b, pay_b = make_gen(g=2, width=48, seed=27, flow=2)
        a_first = [encode(gen_a, random_coeffs(4, r)) for _ in range(8)]
        b_first = [encode(gen_b, random_coeffs(2, r)) for _ in range(4)]
        a_out = [recode(a_first[:4], random_coeffs(4, r)) for _ in range(2)] + \
                [recode(a_first[4:], random_coeffs(4, r)) for _ in range(2)]
        b_out = [recode(b_first[:2], random_coeffs(2, r)),
                 recode(b_first[2:], random_coeffs(2, r))]
        dec_a = Decoder(1, 3, 4, gen_a.width)
        dec_b = Decoder(2, 3, 2, gen_b.width)
        for p in a_out:
            dec_a.insert(p)
        for p in b_out:
            dec_b.insert(p)
        assert dec_a.extract_payloads() == pay_a
        assert dec_b.extract_payloads() == pay_b


class TestSymbolicMode:
    def test_symbolic_generation_tracks_rank_only(self):
        gen = Generation.symbolic(1, 0, sources=("s0", "s1", "s2"), width=100)
        r = rng(30)
        pkts = [encode(gen, random_coeffs(3, r)) for _ in range(3)]
        assert pkts[0].payload is None
        assert pkts[0].payload_len == 100
        assert pkts[0].wire_size_bytes == 15 + 3 + 100
        dec = Decoder(1, 0, 3, 0)
        for p in pkts:
            dec.insert_row(p.coeffs)
        assert dec.rank == 3

    def test_recode_symbolic(self):
        gen = Generation.symbolic(1, 0, sources=("a", "b"), width=10)
        r = rng(31)
        pkts = [encode(gen, random_coeffs(2, r)) for _ in range(3)]
        out = recode(pkts, random_coeffs(3, r))
        assert out.payload is None
        assert out.generation is gen


class TestWireFormat:
    def test_header_layout_golden(self):
        gen, _ = make_gen(g=2, width=4, seed=40, flow=0x01020304, cohort=0x0A)
        pkt = CodedPacket(flow_id=0x01020304, cohort=0x0A, priority=Priority.HIGH,
                          coeffs=np.array([0x11, 0x22], dtype=np.uint8),
                          payload=np.array([1, 2, 3, 4], dtype=np.uint8),
                          payload_len=4)
        data = pack_packet(pkt)
        assert data[:4] == bytes([1, 2, 3, 4])                  # flow id, BE
        assert data[4:12] == (0x0A).to_bytes(8, "big")          # label
        assert data[12:14] == (2).to_bytes(2, "big")            # generation size
        assert data[14] == 1                                    # priority High
        assert data[15:17] == bytes([0x11, 0x22])               # coefficients
        assert data[17:] == bytes([1, 2, 3, 4])                 # payload

    def test_pack_unpack_round_trip(self):
        gen, _ = make_gen(g=3, width=20, seed=41)
        pkt = encode(gen, random_coeffs(3, rng(42)), Priority.LOW)
        back = unpack_packet(pack_packet(pkt))
        assert (back.flow_id, back.cohort, back.priority) == \
            (pkt.flow_id, pkt.cohort, pkt.priority)
        assert np.array_equal(back.coeffs, pkt.coeffs)
        assert np.array_equal(back.payload, pkt.payload)

    def test_truncated_rejected(self):
        with pytest.raises(ValueError):
            unpack_packet(b"\x00" * 10)
