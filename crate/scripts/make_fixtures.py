"""Writes the small binary fixtures used by the data loader tests.

Independent of the Rust code: bytes are assembled with struct from the
format descriptions alone.
"""
import struct
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures"

# two 3x2 images
PIXELS = [[0, 255, 128, 1, 64, 200], [10, 20, 30, 40, 50, 254]]
LABELS = [7, 3]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    img = struct.pack(">IIII", 0x00000803, 2, 3, 2) + bytes(sum(PIXELS, []))
    (OUT / "two_images.idx3").write_bytes(img)
    lab = struct.pack(">II", 0x00000801, 2) + bytes(LABELS)
    (OUT / "two_labels.idx1").write_bytes(lab)
    # one CIFAR record: label 6, plane c holds (c * 97 + y * 7 + x * 3) % 256
    rec = bytearray([6])
    for c in range(3):
        for y in range(32):
            for x in range(32):
                rec.append((c * 97 + y * 7 + x * 3) % 256)
    (OUT / "cifar_one.bin").write_bytes(bytes(rec))


if __name__ == "__main__":
    main()
