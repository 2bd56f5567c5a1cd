import os
import random

import pytest

from cubesat_ipu.csp.integrity import crc32_of
from cubesat_ipu.ground.client import LinkLost, RemoteError, TransferAborted
from cubesat_ipu.linksim import LinkConfig
from cubesat_ipu.services.ftp import (
    BITMAP_PAGE_CHUNKS,
    CHUNK_SIZE_MAX,
    PORT_FTP_DATA,
    ChunkCrcMismatch,
    Direction,
    FileCrcMismatch,
    MissingChunk,
    SessionStore,
    TransferManifest,
    TransferSession,
    decode_chunk,
    encode_chunk,
    ftp_join,
    ftp_split,
    pack_bitmap,
    unpack_bitmap,
)
from cubesat_ipu.csp.packet import MAX_PAYLOAD
from simhelp import link_pair


def test_split_arithmetic():
    data = os.urandom(1000)
    m, chunks = ftp_split(data, 256)
    assert [len(c) for c in chunks] == [256, 256, 256, 232]
    assert m.chunk_count == 4 and m.whole_file_crc32 == crc32_of(data)
    assert ftp_join(m, chunks) == data
    assert TransferManifest.from_json(m.to_json()) == m


def test_empty_file():
    m, chunks = ftp_split(b"")
    assert chunks == [] and m.whole_file_crc32 == 0 and ftp_join(m, []) == b""


def test_corrupt_and_missing_chunks():
    m, chunks = ftp_split(os.urandom(1000), 256)
    bad = list(chunks)
    bad[2] = bytes([bad[2][0] ^ 1]) + bad[2][1:]
    with pytest.raises(ChunkCrcMismatch) as ei:
        ftp_join(m, bad)
    assert ei.value.index == 2
    with pytest.raises(MissingChunk):
        ftp_join(m, {0: chunks[0]})
    forged = TransferManifest(m.file_name, m.total_bytes, m.chunk_size_bytes, m.chunk_count, m.per_chunk_crc32,
                              m.whole_file_crc32 ^ 1)
    with pytest.raises(FileCrcMismatch):
        ftp_join(forged, chunks)


def test_bitmap_msb_first():
    assert pack_bitmap([1, 0, 0, 0, 0, 0, 0, 0, 1]) == b"\x80\x80"
    rng = random.Random(0)
    bits = [rng.random() < 0.5 for _ in range(1234)]
    assert unpack_bitmap(pack_bitmap(bits), 1234) == bits
    assert len(pack_bitmap([1] * BITMAP_PAGE_CHUNKS)) == 1000


def test_chunk_wire_fits_max_payload():
    payload = encode_chunk(7, 123456, bytes(CHUNK_SIZE_MAX))
    assert len(payload) + 8 <= MAX_PAYLOAD + 8
    assert len(payload) <= MAX_PAYLOAD
    assert decode_chunk(payload)[:2] == (7, 123456)


def test_session_store_round_trip(tmp_path):
    data = os.urandom(5000)
    m, chunks = ftp_split(data, 300)
    s = TransferSession(3, m, Direction.DOWN, "x")
    for i in (0, 5, 16):
        assert s.accept(i, chunks[i])
    assert not s.accept(5, chunks[5])  # duplicate
    assert not s.accept(1, b"junk")
    store = SessionStore(tmp_path)
    store.save(s)
    back = store.load(3)
    assert back.missing() == s.missing() and back.remote_path == "x"
    # a torn write is not trusted on reload
    part = tmp_path / "00003" / "data.part"
    raw = bytearray(part.read_bytes())
    raw[5 * 300] ^= 0xFF
    part.write_bytes(bytes(raw))
    assert 5 in store.load(3).missing()
    store.delete(3)
    assert store.load(3) is None


def _data_drops(net, port=PORT_FTP_DATA):
    return sum(1 for e in net.events if e.dst_port == port and e.outcome == "Dropped")


def test_lossless_upload_each_chunk_once(tmp_path):
    client, sat, net = link_pair(tmp_path / "sat", LinkConfig())
    data = os.urandom(20_000)
    out = client.upload(data, "f.bin")
    assert out.state == "Complete" and sat.storage.read("f.bin") == data
    assert set(out.sent_counts.values()) == {1} and out.chunks_sent == out.chunk_count == 100


def test_lossy_upload_matches_event_log(tmp_path):
    data = random.Random(1).randbytes(60_000)
    runs = []
    for k in range(2):
        client, sat, net = link_pair(tmp_path / f"sat{k}", LinkConfig(loss_rate=0.1, seed=42))
        out = client.upload(data, "f.bin")
        assert sat.storage.read("f.bin") == data
        # every resend answers exactly one data frame lost on the link
        assert out.chunks_sent - out.chunk_count == _data_drops(net) > 0
        runs.append((out.chunks_sent, out.retries, net.link.log_jsonl()))
    assert runs[0] == runs[1]


def test_lossy_download(tmp_path):
    data = random.Random(2).randbytes(50_000)
    client, sat, net = link_pair(tmp_path / "sat", LinkConfig(loss_rate=0.1, seed=42))
    sat.storage.write("img.bin", data)
    out = client.download("img.bin", store=SessionStore(tmp_path / "ground"))
    assert out.data == data
    assert sum(sat.ftp.sent_counts[out.session_id].values()) - out.chunk_count == _data_drops(net)
    assert SessionStore(tmp_path / "ground").ids() == []


def test_upload_interrupted_then_resumed_without_redundancy(tmp_path):
    data = random.Random(3).randbytes(100_000)
    client, sat, net = link_pair(tmp_path / "sat", LinkConfig(contact_windows=[(0.0, 60.0)]))
    with pytest.raises(LinkLost):
        client.upload(data, "big.bin", session_id=5)
    session = sat.ftp.up[5]
    got_first = session.n_received
    assert 0 < got_first < session.manifest.chunk_count
    client2, _, net2 = link_pair(tmp_path / "sat", LinkConfig(), sat=sat)
    out = client2.upload(data, "big.bin", session_id=5)
    assert sat.storage.read("big.bin") == data
    assert out.chunks_sent == session.manifest.chunk_count - got_first
    assert max(session.receipts.values()) == 1


def test_upload_resume_across_restart(tmp_path):
    from cubesat_ipu.satellite import Satellite

    data = random.Random(4).randbytes(40_000)
    client, sat, net = link_pair(tmp_path / "sat", LinkConfig(contact_windows=[(0.0, 30.0)]))
    with pytest.raises(LinkLost):
        client.upload(data, "r.bin", session_id=9)
    sat.close()
    reborn = Satellite(1, tmp_path / "sat", b"test-key", clock=lambda: 0.0)
    have = reborn.ftp._up_session(9).n_received
    client2, _, _ = link_pair(tmp_path / "sat", LinkConfig(), sat=reborn)
    out = client2.upload(data, "r.bin", session_id=9)
    assert reborn.storage.read("r.bin") == data
    assert out.chunks_sent == 200 - have


def test_download_interrupted_then_resumed(tmp_path):
    data = random.Random(5).randbytes(100_000)
    store = SessionStore(tmp_path / "ground")
    client, sat, net = link_pair(tmp_path / "sat", LinkConfig(contact_windows=[(0.0, 60.0)]))
    sat.storage.write("d.bin", data)
    with pytest.raises(LinkLost):
        client.download("d.bin", session_id=11, store=store)
    have = store.load(11).n_received
    assert 0 < have < 500
    client2, _, _ = link_pair(tmp_path / "sat", LinkConfig(), sat=sat)
    out = client2.download("d.bin", session_id=11, store=store)
    assert out.data == data
    assert out.chunks_sent == 500 - have
    assert max(out.sent_counts.values()) == 1
    assert max(sat.ftp.sent_counts[11].values()) <= 2


def test_changed_file_restarts_session(tmp_path):
    client, sat, _ = link_pair(tmp_path / "sat", LinkConfig())
    store = SessionStore(tmp_path / "ground")
    sat.storage.write("v.bin", b"a" * 3000)
    client.download("v.bin", session_id=1, store=store)
    sat.storage.write("v.bin", b"b" * 3000)
    assert client.download("v.bin", session_id=1, store=store).data == b"b" * 3000


def test_commit_is_idempotent_and_missing_file_errors(tmp_path):
    client, sat, _ = link_pair(tmp_path / "sat", LinkConfig())
    client.upload(b"hello" * 100, "h.bin", session_id=4)
    from cubesat_ipu.services.ftp import Op
    assert client._ftp(Op.COMMIT, 4)  # retried commit after a lost reply
    with pytest.raises(RemoteError) as ei:
        client.download("nope.bin")
    assert ei.value.code == "NotFound"
    with pytest.raises(RemoteError) as ei:
        client.upload(b"x", "../escape")
    assert ei.value.code == "OutsideRoot"


def test_dead_link_aborts(tmp_path):
    client, sat, _ = link_pair(tmp_path / "sat", LinkConfig(loss_rate=1.0), timeout=0.5, retries=2)
    from cubesat_ipu.ground.client import LinkTimeout
    with pytest.raises(LinkTimeout):
        client.upload(b"x" * 1000, "x.bin")


def test_s_band_chunk_size(tmp_path):
    client, sat, _ = link_pair(tmp_path / "sat", LinkConfig(bandwidth_bps=10_000_000))
    data = os.urandom(200_000)
    out = client.upload(data, "s.bin", chunk_size=CHUNK_SIZE_MAX)
    assert sat.storage.read("s.bin") == data and out.chunk_count == -(-200_000 // CHUNK_SIZE_MAX)
    assert client.download("s.bin", chunk_size=CHUNK_SIZE_MAX).data == data


def test_transfer_spanning_several_passes(tmp_path):
    data = random.Random(6).randbytes(60_000)
    windows = [(0.0, 40.0), (600.0, 640.0), (1200.0, 1240.0), (1800.0, 1900.0), (2400.0, 2500.0)]
    client, sat, net = link_pair(tmp_path / "sat", LinkConfig(contact_windows=windows))
    out = client.upload(data, "p.bin")
    assert sat.storage.read("p.bin") == data
    assert set(out.sent_counts.values()) == {1}
    assert out.finished_s > 600.0
    back = client.download("p.bin", store=SessionStore(tmp_path / "g"))
    assert back.data == data and set(back.sent_counts.values()) == {1}
