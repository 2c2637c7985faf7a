"""A synthetic RAW10 frame, cut into CSI-2 packets and put back together."""

from sra.csi2 import dump_hex, encode_stream, iter_packets, reassemble, split_frame
from sra.sensor import generate_frame, pack_raw10

frame = generate_frame(seed=1, width=16, height=4, counter=1)
print(frame.samples)

# four 10-bit samples per five bytes
packed = pack_raw10(frame.samples.ravel())
print(len(packed), "bytes packed for", frame.samples.size, "samples")

packets = split_frame(frame)
print(dump_hex(packets))

# the wire is just concatenated packets; reassembly checks every CRC
stream = encode_stream(packets)
back = reassemble(iter_packets(stream))
print("round trip ok:", back.data == packed)

# one flipped payload bit in the first line and its CRC no longer matches
bad = bytearray(stream)
bad[4 + 4 + 2] ^= 0x01
print([p.crc_ok for p in iter_packets(bytes(bad))])
