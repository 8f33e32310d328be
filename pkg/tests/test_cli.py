import numpy as np
import pytest

from nmk import cli, pipeline
from nmk.cli import analytic_compression_ratio, main


@pytest.fixture
def raw_pair(tmp_path):
    # positive drift keeps the per-element bound valid relative to both the
    # base and the current snapshot, so `verify` exits 0 after decompression
    rng = np.random.default_rng(7)
    base = rng.uniform(1.0, 2.0, 6000).astype(np.float32)
    curr = (base.astype(np.float64)
            * (1.0 + rng.uniform(0.002, 0.01, 6000))).astype(np.float32)
    prev_path = tmp_path / "prev.raw"
    curr_path = tmp_path / "curr.raw"
    base.tofile(prev_path)
    curr.tofile(curr_path)
    return prev_path, curr_path, base, curr


def run(capsys, *argv) -> tuple[int, str]:
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().out


class TestCompress:
    def test_defaults_write_nmk(self, tmp_path, raw_pair, capsys):
        prev, curr, *_ = raw_pair
        out = tmp_path / "out.nmk"
        code, text = run(capsys, "compress", prev, curr, out, "--workers", "2")
        assert code == 0
        assert out.exists()
        assert "n=6000" in text
        assert "bits=" in text
        assert "alpha=" in text
        assert "cr=" in text
        assert "timing.zlib=" in text
        assert "timing.io=" in text

    def test_mismatched_lengths_exit_2(self, tmp_path, raw_pair, capsys):
        prev, curr, base, _ = raw_pair
        short = tmp_path / "short.raw"
        base[:100].tofile(short)
        code, _ = run(capsys, "compress", prev, short, tmp_path / "x.nmk")
        assert code == 2

    def test_missing_input_exit_1(self, tmp_path, raw_pair, capsys):
        prev, *_ = raw_pair
        code, _ = run(capsys, "compress", tmp_path / "nope.raw", prev,
                      tmp_path / "x.nmk")
        assert code == 1

    def test_misaligned_file_exit_2(self, tmp_path, raw_pair, capsys):
        prev, *_ = raw_pair
        odd = tmp_path / "odd.raw"
        odd.write_bytes(b"\x00" * 7)
        code, _ = run(capsys, "compress", odd, prev, tmp_path / "x.nmk")
        assert code == 2

    def test_explicit_bits(self, tmp_path, raw_pair, capsys):
        prev, curr, *_ = raw_pair
        out = tmp_path / "b4.nmk"
        code, text = run(capsys, "compress", prev, curr, out, "--bits", "4")
        assert code == 0
        assert "bits=4" in text

    def test_idempotent_output(self, tmp_path, raw_pair, capsys):
        prev, curr, *_ = raw_pair
        a, b = tmp_path / "a.nmk", tmp_path / "b.nmk"
        run(capsys, "compress", prev, curr, a, "--workers", "1")
        run(capsys, "compress", prev, curr, b, "--workers", "4")
        assert a.read_bytes() == b.read_bytes()

    def test_workers_env_override(self, tmp_path, raw_pair, capsys, monkeypatch):
        prev, curr, *_ = raw_pair
        seen = []
        original = pipeline.compress_pair

        def spy(pair, config, name="var0"):
            seen.append(config.workers)
            return original(pair, config, name=name)

        monkeypatch.setattr(pipeline, "compress_pair", spy)
        monkeypatch.setattr(cli.pipeline, "compress_pair", spy)
        monkeypatch.setenv("NUMARCK_WORKERS", "3")
        code, _ = run(capsys, "compress", prev, curr, tmp_path / "w.nmk",
                      "--workers", "1")
        assert code == 0
        assert seen == [3]

    def test_workers_env_invalid_exit_2(self, tmp_path, raw_pair, capsys, monkeypatch):
        prev, curr, *_ = raw_pair
        monkeypatch.setenv("NUMARCK_WORKERS", "many")
        code, _ = run(capsys, "compress", prev, curr, tmp_path / "w.nmk")
        assert code == 2


class TestDecompressVerify:
    @pytest.fixture
    def compressed(self, tmp_path, raw_pair, capsys):
        prev, curr, base, orig = raw_pair
        out = tmp_path / "c.nmk"
        code, _ = run(capsys, "compress", prev, curr, out,
                      "--bits", "6", "--block-bytes", "4096")
        assert code == 0
        return prev, curr, out, base, orig

    def test_full_decompress_and_verify(self, tmp_path, compressed, capsys):
        prev, curr, nmk, base, orig = compressed
        rec = tmp_path / "rec.raw"
        code, text = run(capsys, "decompress", nmk, prev, rec)
        assert code == 0
        assert "blocks_touched=" in text
        out = np.fromfile(rec, dtype=np.float32)
        err = np.abs(out.astype(np.float64) - orig.astype(np.float64))
        assert (err <= 1e-3 * np.abs(base.astype(np.float64))).all()

        code, text = run(capsys, "verify", curr, rec, nmk)
        assert code == 0
        assert "max_rel_err=" in text
        assert "cr=" in text

    def test_range_matches_full_slice(self, tmp_path, compressed, capsys):
        prev, _, nmk, *_ = compressed
        full = tmp_path / "full.raw"
        part = tmp_path / "part.raw"
        run(capsys, "decompress", nmk, prev, full)
        code, text = run(capsys, "decompress", nmk, prev, part,
                         "--range", "1500:2000")
        assert code == 0
        full_bytes = full.read_bytes()
        assert part.read_bytes() == full_bytes[1500 * 4:(1500 + 2000) * 4]
        touched = int(text.split("blocks_touched=")[1].split()[0])
        assert touched >= 1

    def test_range_beyond_n_exit_2(self, tmp_path, compressed, capsys):
        prev, _, nmk, *_ = compressed
        code, _ = run(capsys, "decompress", nmk, prev, tmp_path / "x.raw",
                      "--range", "5999:2")
        assert code == 2

    def test_verify_rejects_perturbed(self, tmp_path, compressed, capsys):
        prev, curr, nmk, base, orig = compressed
        rec = tmp_path / "rec.raw"
        run(capsys, "decompress", nmk, prev, rec)
        bad = np.fromfile(rec, dtype=np.float32)
        bad[17] *= np.float32(1.0 + 2e-3)  # one element past the bound
        bad_path = tmp_path / "bad.raw"
        bad.tofile(bad_path)
        code, _ = run(capsys, "verify", curr, bad_path, nmk)
        assert code != 0

    def test_decompress_missing_nmk_exit_1(self, tmp_path, compressed, capsys):
        prev, *_ = compressed
        code, _ = run(capsys, "decompress", tmp_path / "none.nmk", prev,
                      tmp_path / "o.raw")
        assert code == 1


class TestDescribe:
    def test_describe_output(self, tmp_path, raw_pair, capsys):
        prev, curr, *_ = raw_pair
        nmk = tmp_path / "d.nmk"
        run(capsys, "compress", prev, curr, nmk, "--name", "wind")
        code, text = run(capsys, "describe", nmk)
        assert code == 0
        assert "wind" in text
        assert "n=6000" in text

    def test_describe_bad_magic_exit_2(self, tmp_path, capsys):
        p = tmp_path / "junk.nmk"
        p.write_bytes(b"JUNKJUNKJUNK")
        code, _ = run(capsys, "describe", p)
        assert code == 2


class TestAnalyticCr:
    def test_function_value(self):
        cr = analytic_compression_ratio(32, 12, 2.2, 0.02)
        assert cr == pytest.approx(5.1402, abs=5e-4)

    def test_no_deflate_no_outliers(self):
        # plain index coding: 32-bit floats to 8-bit ids is exactly 4x
        assert analytic_compression_ratio(32, 8, 1.0, 0.0) == pytest.approx(4.0)

    def test_command(self, capsys):
        code, text = run(capsys, "analytic-cr", "--bits-per-element", "32",
                         "--index-bits", "12", "--deflate-ratio", "2.2",
                         "--alpha", "0.02")
        assert code == 0
        assert text.startswith("analytic_cr=5.14")


class TestBench:
    def test_small_sweep(self, capsys):
        code, text = run(capsys, "bench", "--elements", "20000",
                         "--max-workers", "2", "--strategy-sample", "1500",
                         "--strategy-bits", "4")
        assert code == 0
        assert "bench.workers=1" in text
        assert "bench.workers=2" in text
        assert "strategy.top_k.compressible=" in text
        assert "strategy.dp.compressible=" in text
        # oracle never loses to any strategy
        dp = int(text.split("strategy.dp.compressible=")[1].split()[0])
        for tag in ("top_k", "kmeans", "log_scale", "equal_width"):
            val = int(text.split(f"strategy.{tag}.compressible=")[1].split()[0])
            assert val <= dp
