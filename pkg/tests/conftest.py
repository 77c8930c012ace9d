import hashlib
import random

import pytest

from mdstore import FileSpec, FolderSpec, StoreModel, StoreSpec


def make_spec(files=0, folders=0, seed=0, parent="/", with_attrs=False):
    folder_specs = tuple(FolderSpec(f"dir_{i:04d}") for i in range(folders))
    file_specs = tuple(
        FileSpec(
            f"file_{i:05d}",
            parent,
            {"kMDItemTitle": f"Title {i:05d}"} if with_attrs else {},
        )
        for i in range(files)
    )
    return StoreSpec(files=file_specs, folders=folder_specs, seed=seed)


def make_model(files=0, folders=0, seed=0, **kw) -> StoreModel:
    return StoreModel.from_spec(make_spec(files, folders, seed, **kw))


class ShakeStream:
    """Seeded high-entropy stream of a fixed length, read in chunks.

    Bounded memory: each read squeezes a fresh SHAKE block, so arbitrarily
    large "images" never exist in full.
    """

    def __init__(self, total: int, seed=0, block: int = 4 << 20):
        self.total = total
        self.seed = seed
        self.block = block
        self.pos = 0

    def read(self, n: int = -1) -> bytes:
        if n < 0:
            n = self.block
        n = min(n, self.total - self.pos)
        if n <= 0:
            return b""
        out = bytearray()
        while len(out) < n:
            index = (self.pos + len(out)) // self.block
            offset = (self.pos + len(out)) % self.block
            blk = hashlib.shake_256(f"{self.seed}:{index}".encode()).digest(self.block)
            out += blk[offset : offset + (n - len(out))]
        self.pos += n
        return bytes(out)


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)
