import json

import numpy as np
import pytest

from rocodec import BlockMatrixStore, InvalidParameterError, NumericalError, StorageError
from rocodec.ooc_blocks import (
    BlockView,
    accountant,
    add,
    copy_into,
    gemm,
    invert_recursive,
    matvec,
    sub,
)


def random_spd(n, rng, ridge=None):
    a = rng.standard_normal((2 * n, n))
    return a.T @ a + (ridge if ridge is not None else n) * np.eye(n)


class TestStore:
    def test_write_read_round_trip(self, tmp_path, rng):
        store = BlockMatrixStore.create(tmp_path / "s", 128, 128, 64)
        block = rng.standard_normal((64, 64))
        store.write_block(1, 0, block)
        np.testing.assert_array_equal(store.read_block(1, 0), block)

    def test_unwritten_blocks_read_as_zero(self, tmp_path):
        store = BlockMatrixStore.create(tmp_path / "s", 100, 60, 40)
        assert np.all(store.read_block(0, 1) == 0.0)

    def test_edge_block_shapes(self, tmp_path):
        store = BlockMatrixStore.create(tmp_path / "s", 100, 100, 40)
        assert store.block_rows == store.block_cols == 3
        assert store.block_shape(2, 1) == (20, 40)
        assert store.block_shape(1, 2) == (40, 20)
        assert store.block_shape(2, 2) == (20, 20)

    def test_reopen_from_disk(self, tmp_path, rng):
        a = rng.standard_normal((50, 70))
        BlockMatrixStore.from_array(tmp_path / "s", a, 32)
        reopened = BlockMatrixStore.open(tmp_path / "s")
        np.testing.assert_array_equal(reopened.to_array(), a)

    def test_wrong_shape_write_rejected(self, tmp_path):
        store = BlockMatrixStore.create(tmp_path / "s", 64, 64, 32)
        with pytest.raises(InvalidParameterError):
            store.write_block(0, 0, np.zeros((16, 16)))

    def test_out_of_grid_block_rejected(self, tmp_path):
        store = BlockMatrixStore.create(tmp_path / "s", 64, 64, 32)
        with pytest.raises(InvalidParameterError):
            store.read_block(2, 0)

    def test_corrupt_manifest_rejected(self, tmp_path):
        store = BlockMatrixStore.create(tmp_path / "s", 64, 64, 32)
        (store.path / "manifest.json").write_text("{not json")
        with pytest.raises(StorageError):
            BlockMatrixStore.open(store.path)

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(StorageError):
            BlockMatrixStore.open(tmp_path / "nowhere")

    def test_wrong_block_file_size_rejected(self, tmp_path, rng):
        store = BlockMatrixStore.create(tmp_path / "s", 64, 64, 32)
        store.write_block(0, 0, rng.standard_normal((32, 32)))
        (store.path / "blk_0_0.bin").write_bytes(b"short")
        reopened = BlockMatrixStore.open(store.path)
        with pytest.raises(StorageError):
            reopened.read_block(0, 0)

    def test_region_addressed_single_file(self, tmp_path, rng):
        """The reader also supports all blocks packed in one file."""
        a = rng.standard_normal((48, 48))
        store = BlockMatrixStore.from_array(tmp_path / "s", a, 32)
        packed = bytearray()
        locs = {}
        for (br, bc), loc in store.block_items():
            data = (store.path / loc["file"]).read_bytes()
            locs[f"{br},{bc}"] = {
                "file": "packed.bin", "offset": len(packed), "nbytes": len(data)
            }
            packed += data
        (store.path / "packed.bin").write_bytes(bytes(packed))
        manifest = json.loads((store.path / "manifest.json").read_text())
        manifest["blocks"] = locs
        (store.path / "manifest.json").write_text(json.dumps(manifest))
        reopened = BlockMatrixStore.open(store.path)
        np.testing.assert_array_equal(reopened.to_array(), a)

    def test_symmetric_store_mirrors_blocks(self, tmp_path, rng):
        a = rng.standard_normal((80, 80))
        a = a + a.T
        store = BlockMatrixStore.from_array(tmp_path / "s", a, 32, symmetric=True)
        # upper blocks are not on disk but read as mirrors
        assert all(bc <= br for (br, bc), _ in store.block_items())
        np.testing.assert_array_equal(store.to_array(), a)
        np.testing.assert_array_equal(
            store.read_block(0, 2), store.read_block(2, 0).T
        )


class TestGemm:
    def test_identity_multiplication(self, tmp_path, rng):
        a = rng.standard_normal((128, 128))
        sa = BlockMatrixStore.from_array(tmp_path / "a", a, 48)
        si = BlockMatrixStore.from_array(tmp_path / "i", np.eye(128), 48)
        out = BlockMatrixStore.create(tmp_path / "o", 128, 128, 48)
        gemm(sa, si, out)
        np.testing.assert_allclose(out.to_array(), a, rtol=0, atol=1e-14)

    def test_matches_dense_oracle(self, tmp_path, rng):
        a = rng.standard_normal((96, 96))
        b = rng.standard_normal((96, 96))
        sa = BlockMatrixStore.from_array(tmp_path / "a", a, 32)
        sb = BlockMatrixStore.from_array(tmp_path / "b", b, 32)
        out = BlockMatrixStore.create(tmp_path / "o", 96, 96, 32)
        gemm(sa, sb, out)
        dense = a @ b
        err = np.linalg.norm(out.to_array() - dense) / np.linalg.norm(dense)
        assert err <= 1e-12

    def test_rectangular_with_ragged_edges(self, tmp_path, rng):
        a = rng.standard_normal((70, 50))
        b = rng.standard_normal((50, 90))
        sa = BlockMatrixStore.from_array(tmp_path / "a", a, 32)
        sb = BlockMatrixStore.from_array(tmp_path / "b", b, 32)
        out = BlockMatrixStore.create(tmp_path / "o", 70, 90, 32)
        gemm(sa, sb, out, alpha=-2.5)
        np.testing.assert_allclose(out.to_array(), -2.5 * (a @ b), rtol=1e-12)

    def test_alpha_zero_beta_one_is_noop(self, tmp_path, rng):
        a = rng.standard_normal((64, 64))
        b = rng.standard_normal((64, 64))
        c = rng.standard_normal((64, 64))
        sa = BlockMatrixStore.from_array(tmp_path / "a", a, 32)
        sb = BlockMatrixStore.from_array(tmp_path / "b", b, 32)
        sc = BlockMatrixStore.from_array(tmp_path / "c", c, 32)
        gemm(sa, sb, sc, alpha=0.0, beta=1.0)
        np.testing.assert_array_equal(sc.to_array(), c)

    def test_accumulate_beta(self, tmp_path, rng):
        a = rng.standard_normal((64, 64))
        b = rng.standard_normal((64, 64))
        c = rng.standard_normal((64, 64))
        sa = BlockMatrixStore.from_array(tmp_path / "a", a, 32)
        sb = BlockMatrixStore.from_array(tmp_path / "b", b, 32)
        sc = BlockMatrixStore.from_array(tmp_path / "c", c, 32)
        gemm(sa, sb, sc, alpha=2.0, beta=-1.0)
        np.testing.assert_allclose(sc.to_array(), 2.0 * (a @ b) - c, rtol=1e-12)

    def test_dimension_mismatch(self, tmp_path, rng):
        sa = BlockMatrixStore.from_array(tmp_path / "a", np.eye(64), 32)
        sb = BlockMatrixStore.from_array(tmp_path / "b", np.eye(32), 32)
        out = BlockMatrixStore.create(tmp_path / "o", 64, 32, 32)
        with pytest.raises(InvalidParameterError):
            gemm(sa, sb, out)

    def test_block_size_mismatch(self, tmp_path):
        sa = BlockMatrixStore.from_array(tmp_path / "a", np.eye(64), 32)
        sb = BlockMatrixStore.from_array(tmp_path / "b", np.eye(64), 16)
        out = BlockMatrixStore.create(tmp_path / "o", 64, 64, 32)
        with pytest.raises(InvalidParameterError):
            gemm(sa, sb, out)

    def test_deterministic_across_thread_counts(self, tmp_path, rng):
        a = rng.standard_normal((100, 100))
        b = rng.standard_normal((100, 100))
        sa = BlockMatrixStore.from_array(tmp_path / "a", a, 32)
        sb = BlockMatrixStore.from_array(tmp_path / "b", b, 32)
        results = []
        for threads in (1, 2, 4):
            out = BlockMatrixStore.create(tmp_path / f"o{threads}", 100, 100, 32)
            gemm(sa, sb, out, threads=threads)
            results.append(out.to_array())
        np.testing.assert_array_equal(results[0], results[1])
        np.testing.assert_array_equal(results[0], results[2])


class TestElementwise:
    def test_a_minus_a_is_zero(self, tmp_path, rng):
        a = rng.standard_normal((80, 80))
        sa = BlockMatrixStore.from_array(tmp_path / "a", a, 32)
        out = BlockMatrixStore.create(tmp_path / "o", 80, 80, 32)
        sub(sa, sa, out)
        assert np.all(out.to_array() == 0.0)

    def test_add_then_sub_restores(self, tmp_path, rng):
        a = rng.standard_normal((64, 64))
        b = rng.standard_normal((64, 64))
        sa = BlockMatrixStore.from_array(tmp_path / "a", a, 32)
        sb = BlockMatrixStore.from_array(tmp_path / "b", b, 32)
        s1 = BlockMatrixStore.create(tmp_path / "s1", 64, 64, 32)
        add(sa, sb, s1)
        s2 = BlockMatrixStore.create(tmp_path / "s2", 64, 64, 32)
        sub(s1, sb, s2)
        np.testing.assert_allclose(s2.to_array(), a, rtol=0, atol=1e-15)

    def test_matches_dense_oracle_200(self, tmp_path, rng):
        a = rng.standard_normal((200, 200))
        b = rng.standard_normal((200, 200))
        sa = BlockMatrixStore.from_array(tmp_path / "a", a, 64)
        sb = BlockMatrixStore.from_array(tmp_path / "b", b, 64)
        out = BlockMatrixStore.create(tmp_path / "o", 200, 200, 64)
        add(sa, sb, out)
        np.testing.assert_array_equal(out.to_array(), a + b)


class TestMatvec:
    def test_matches_dense(self, tmp_path, rng):
        a = rng.standard_normal((90, 70))
        x = rng.standard_normal(70)
        sa = BlockMatrixStore.from_array(tmp_path / "a", a, 32)
        np.testing.assert_allclose(matvec(sa, x), a @ x, rtol=1e-12)

    def test_length_mismatch(self, tmp_path):
        sa = BlockMatrixStore.from_array(tmp_path / "a", np.eye(8), 4)
        with pytest.raises(InvalidParameterError):
            matvec(sa, np.zeros(9))


class TestBlockView:
    def test_view_reads_subrange(self, tmp_path, rng):
        a = rng.standard_normal((96, 96))
        sa = BlockMatrixStore.from_array(tmp_path / "a", a, 32)
        view = BlockView(sa, 1, 2, 2, 1)
        np.testing.assert_array_equal(view.to_array(), a[32:96, 64:96])

    def test_view_write_through(self, tmp_path, rng):
        sa = BlockMatrixStore.from_array(tmp_path / "a", np.zeros((64, 64)), 32)
        view = BlockView(sa, 1, 1, 1, 1)
        block = rng.standard_normal((32, 32))
        view.write_block(0, 0, block)
        np.testing.assert_array_equal(sa.to_array()[32:, 32:], block)

    def test_view_bounds_checked(self, tmp_path):
        sa = BlockMatrixStore.from_array(tmp_path / "a", np.zeros((64, 64)), 32)
        with pytest.raises(InvalidParameterError):
            BlockView(sa, 1, 1, 2, 1)


class TestInvertRecursive:
    def test_identity(self, tmp_path):
        si = BlockMatrixStore.from_array(tmp_path / "i", np.eye(100), 32)
        inv = invert_recursive(si, tmp_path / "inv")
        np.testing.assert_allclose(inv.to_array(), np.eye(100), rtol=0, atol=1e-12)

    def test_diagonal(self, tmp_path):
        d = np.diag(np.arange(1.0, 11.0))
        sd = BlockMatrixStore.from_array(tmp_path / "d", d, 3)
        inv = invert_recursive(sd, tmp_path / "inv")
        np.testing.assert_allclose(
            inv.to_array(), np.diag(1.0 / np.arange(1.0, 11.0)), rtol=1e-12
        )

    def test_spd_300_against_dense_oracle(self, tmp_path, rng):
        m = random_spd(300, rng)
        sm = BlockMatrixStore.from_array(tmp_path / "m", m, 64)
        inv = invert_recursive(sm, tmp_path / "inv")
        got = inv.to_array()
        residual = np.linalg.norm(m @ got - np.eye(300)) / np.linalg.norm(np.eye(300))
        assert residual <= 1e-8
        dense = np.linalg.inv(m)
        assert np.linalg.norm(got - dense) / np.linalg.norm(dense) <= 1e-8

    def test_symmetry_preserved(self, tmp_path, rng):
        m = random_spd(150, rng)
        sm = BlockMatrixStore.from_array(tmp_path / "m", m, 32)
        inv = invert_recursive(sm, tmp_path / "inv").to_array()
        assert np.linalg.norm(inv - inv.T) / np.linalg.norm(inv) <= 1e-8

    def test_block_size_invariance(self, tmp_path, rng):
        m = random_spd(130, rng)
        results = []
        for b in (32, 64, 128):
            sm = BlockMatrixStore.from_array(tmp_path / f"m{b}", m, b)
            results.append(invert_recursive(sm, tmp_path / f"inv{b}").to_array())
        for other in results[1:]:
            rel = np.linalg.norm(results[0] - other) / np.linalg.norm(results[0])
            assert rel <= 1e-10

    def test_symmetric_input_store(self, tmp_path, rng):
        m = random_spd(96, rng)
        sm = BlockMatrixStore.from_array(tmp_path / "m", m, 32, symmetric=True)
        inv = invert_recursive(sm, tmp_path / "inv").to_array()
        dense = np.linalg.inv(m)
        assert np.linalg.norm(inv - dense) / np.linalg.norm(dense) <= 1e-10

    def test_non_spd_leaf_raises_with_pivot(self, tmp_path):
        m = np.eye(40)
        m[25, 25] = -3.0  # indefinite
        sm = BlockMatrixStore.from_array(tmp_path / "m", m, 16)
        with pytest.raises(NumericalError) as err:
            invert_recursive(sm, tmp_path / "inv")
        assert "pivot" in str(err.value)

    def test_non_square_rejected(self, tmp_path):
        sm = BlockMatrixStore.from_array(tmp_path / "m", np.zeros((10, 12)), 4)
        with pytest.raises(InvalidParameterError):
            invert_recursive(sm, tmp_path / "inv")

    def test_memory_stays_blockwise(self, tmp_path, rng):
        """Peak tracked block memory <= 4 B^2 elements per worker."""
        m = random_spd(260, rng)
        b = 32
        sm = BlockMatrixStore.from_array(tmp_path / "m", m, b)
        workers = 2
        accountant.reset()
        invert_recursive(sm, tmp_path / "inv", threads=workers)
        limit = workers * 4 * b * b * 8
        assert accountant.peak <= limit
        assert accountant.current == 0  # every lease returned

    def test_copy_into_and_views_compose(self, tmp_path, rng):
        a = rng.standard_normal((64, 64))
        sa = BlockMatrixStore.from_array(tmp_path / "a", a, 32)
        dst = BlockMatrixStore.create(tmp_path / "d", 64, 64, 32)
        copy_into(sa, dst)
        np.testing.assert_array_equal(dst.to_array(), a)
