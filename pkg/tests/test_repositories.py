"""
Tests for RZDB database files and RZNW checkpoints
"""
import numpy as np
import pytest

from rzsr.core.error_handlers import FileFormatError
from rzsr.database.checkpoint_repository import get_checkpoint_repository
from rzsr.database.patch_repository import get_patch_repository
from rzsr.models.schemas import ModelMode, PatchDatabase, ScaleTag
from rzsr.network.model import RZSRNetwork
from rzsr.services.patch_database_service import assign_bins


@pytest.fixture
def database(rng):
    vectors = rng.normal(size=(5, 6))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    vectors = vectors.astype(np.float32).astype(np.float64)
    vectors[2] = 0.0
    zero_flags = np.zeros(5, dtype=bool)
    zero_flags[2] = True
    edges = np.linspace(0.0, 1.0, 4)
    depths = np.array([0.05, 0.3, 0.4, 0.7, 1.0], dtype=np.float32).astype(np.float64)
    return PatchDatabase(
        scale_tag=ScaleTag.HALF,
        patch_side=16,
        depth_bin_edges=edges,
        centers=np.array([[8, 8], [10, 8], [8, 12], [20, 14], [22, 22]]),
        depths=depths,
        descriptors=vectors,
        zero_flags=zero_flags,
        bins=assign_bins(depths, edges),
    )


class TestPatchRepository:
    def test_round_trip(self, tmp_path, database):
        repo = get_patch_repository()
        loaded = repo.load(repo.save(database, tmp_path / "theta_x2.rzdb"))
        assert loaded.scale_tag == ScaleTag.HALF
        assert loaded.patch_side == 16
        np.testing.assert_array_equal(loaded.depth_bin_edges, database.depth_bin_edges)
        np.testing.assert_array_equal(loaded.centers, database.centers)
        np.testing.assert_array_equal(loaded.depths, database.depths)
        np.testing.assert_array_equal(loaded.descriptors, database.descriptors)
        np.testing.assert_array_equal(loaded.zero_flags, database.zero_flags)
        np.testing.assert_array_equal(loaded.bins, database.bins)

    def test_empty_database(self, tmp_path, database):
        empty = PatchDatabase(
            scale_tag=ScaleTag.QUARTER, patch_side=16, depth_bin_edges=database.depth_bin_edges,
            centers=np.zeros((0, 2), dtype=np.int64), depths=np.zeros(0), descriptors=np.zeros((0, 6)),
            zero_flags=np.zeros(0, dtype=bool), bins=np.zeros(0, dtype=np.int64),
        )
        repo = get_patch_repository()
        loaded = repo.load(repo.save(empty, tmp_path / "empty.rzdb"))
        assert len(loaded) == 0
        assert loaded.descriptor_length == 6
        assert loaded.scale_tag == ScaleTag.QUARTER

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.rzdb"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FileFormatError):
            get_patch_repository().load(path)

    def test_truncated(self, tmp_path, database):
        path = get_patch_repository().save(database, tmp_path / "db.rzdb")
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FileFormatError):
            get_patch_repository().load(path)

    def test_missing(self, tmp_path):
        with pytest.raises(FileFormatError):
            get_patch_repository().load(tmp_path / "none.rzdb")


class TestCheckpointRepository:
    @pytest.mark.parametrize("mode", list(ModelMode))
    def test_round_trip(self, tmp_path, mode):
        net = RZSRNetwork(mode, image_channels=3, channels=4, embed_dim=2, seed=11)
        repo = get_checkpoint_repository()
        loaded = repo.load(repo.save(net, tmp_path / "model.rznw"))
        assert loaded.mode == mode
        assert (loaded.channels, loaded.embed_dim, loaded.image_channels) == (4, 2, 3)
        assert list(loaded.params) == list(net.params)
        for name, value in net.params.items():
            np.testing.assert_array_equal(loaded.params[name], value)

    def test_loaded_network_predicts_identically(self, tmp_path, rng):
        net = RZSRNetwork(ModelMode.FULL, channels=4, embed_dim=2, seed=2)
        for value in net.params.values():
            value[...] = rng.normal(scale=0.1, size=value.shape).astype(np.float32)
        loaded = get_checkpoint_repository().load(get_checkpoint_repository().save(net, tmp_path / "m.rznw"))
        son_up = rng.uniform(size=(3, 16, 16))
        cousin = rng.uniform(size=(3, 16, 16))
        np.testing.assert_array_equal(loaded.forward(son_up, cousin), net.forward(son_up, cousin))

    def test_trailing_bytes(self, tmp_path):
        net = RZSRNetwork(ModelMode.SINGLE_SCALE, channels=2, embed_dim=2)
        path = get_checkpoint_repository().save(net, tmp_path / "m.rznw")
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FileFormatError):
            get_checkpoint_repository().load(path)
