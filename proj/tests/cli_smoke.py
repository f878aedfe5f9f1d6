"""End-to-end checks of the dcn command-line tool."""

import csv
import pathlib
import subprocess
import sys
import tempfile
import wave

DCN = sys.argv[1]


def run(*args, expect=0):
    proc = subprocess.run([DCN, *map(str, args)], capture_output=True, text=True)
    if proc.returncode != expect:
        sys.exit(f"{args}: exit {proc.returncode}, wanted {expect}\n{proc.stdout}\n{proc.stderr}")
    return proc


def read_pgm(path):
    data = pathlib.Path(path).read_bytes()
    fields = data.split(maxsplit=4)
    assert fields[0] == b"P5", fields[0]
    width, height = int(fields[1]), int(fields[2])
    pixels = fields[4]
    assert len(pixels) == width * height
    return width, height, pixels


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        run("--help")
        run(expect=1)
        run("train", "--bogus-flag", expect=1)
        run("enhance", "--ckpt", tmp / "missing", "--in", "x", "--out", "y", expect=1)

        run("synth-data", "--seed", 3, "--count", 3, "--duration", 0.25, "--out-dir", tmp / "data")
        rows = list(csv.DictReader(open(tmp / "data" / "manifest.csv")))
        assert len(rows) == 3
        assert {float(r["snr_db"]) for r in rows} <= {-5.0, 0.0, 5.0}
        noisy = tmp / "data" / rows[0]["path_y"]

        out = run("spectrogram", "--in", noisy, "--frame-ms", 64, "--out", tmp / "s64.pgm").stdout
        assert "513 bins" in out, out
        assert read_pgm(tmp / "s64.pgm")[1] == 513
        assert (tmp / "s64.csv").exists()
        run("spectrogram", "--in", noisy, "--frame-ms", 48, "--out", tmp / "bad.pgm", expect=1)

        cfg = tmp / "tiny.cfg"
        cfg.write_text(
            "frame_len = 64\nframe_shift = 32\nchannels = 4\nencoder_depth = 2\n"
            "attn_q_channels = 2\nattn_v_channels = 2\ndense_depth = 2\n"
            "batch_size = 2\nepochs = 2\nsteps_per_epoch = 2\nlr_schedule = 1-2:1e-3\n"
            "train_count = 4\nvalid_count = 2\nduration_s = 0.1\nseed = 4\n"
        )
        out = run("train", "--config", cfg, "--out-dir", tmp / "ckpt").stdout
        assert out.count("epoch ") == 2, out
        ckpt = tmp / "ckpt" / "epoch_002.ckpt"
        assert ckpt.exists()
        log = list(csv.DictReader(open(tmp / "ckpt" / "train_log.csv")))
        assert len(log) == 2

        run("enhance", "--ckpt", ckpt, "--in", noisy, "--out", tmp / "enh.wav")
        with wave.open(str(noisy)) as a, wave.open(str(tmp / "enh.wav")) as b:
            assert a.getnframes() == b.getnframes()
            assert a.getframerate() == b.getframerate()

        run("eval", "--ckpt", ckpt, "--manifest", tmp / "data" / "manifest.csv", "--out-csv", tmp / "eval.csv")
        table = list(csv.DictReader(open(tmp / "eval.csv")))
        assert sum(r["kind"] == "row" for r in table) == 3, table

        run("attention-map", "--ckpt", ckpt, "--in", noisy, "--layer", 1, "--out", tmp / "att.pgm")
        width, height, pixels = read_pgm(tmp / "att.pgm")
        assert width == height > 1
        for i in range(height):
            for j in range(i + 1, width):
                assert pixels[i * width + j] == 0, (i, j)
        run("attention-map", "--ckpt", ckpt, "--in", noisy, "--layer", 99, "--out", tmp / "x.pgm", expect=2)

        run("ablate", "--config", cfg, "--grid", "m,attention", "--steps", 2, "--out-csv", tmp / "abl.csv")
        assert len(list(csv.DictReader(open(tmp / "abl.csv")))) == 6
        run("ablate", "--grid", "colour", "--out-csv", tmp / "abl2.csv", expect=1)

        bad = tmp / "bad.cfg"
        bad.write_text("loss = XYZ\n")
        run("train", "--config", bad, expect=2)
    print("cli smoke ok")


if __name__ == "__main__":
    main()
