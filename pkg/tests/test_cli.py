import csv
import io
import json
import math

import pytest
from click.testing import CliRunner

from unipolar import codec as cd
from unipolar import slowstage as ss
from unipolar.cli import cli, config_hash, load_model


@pytest.fixture
def run():
    runner = CliRunner()

    def go(*args):
        return runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)

    return go


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestModels:
    def test_builtins(self):
        assert load_model("bsc:0.2").n_states == 1
        assert load_model("gilbert_elliott:0.1,0.2,0.0,0.3").n_states == 2
        assert load_model("kaijser:observation_symbol").ny == 1

    def test_json_path(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps(load_model("bsc:0.3").to_json()))
        assert load_model(str(p)).emission[0, 0, 1] == pytest.approx(0.15)

    def test_unknown(self, run):
        r = run("forget", "--model", "nope")
        assert r.exit_code == 2 and "unknown model" in r.output


class TestForget:
    def test_gilbert_elliott(self, run):
        r = run("forget", "--model", "gilbert_elliott", "--mi-k", 3)
        assert r.exit_code == 0
        assert "eps,recollection" in r.output and "k,exact_state_mi_y" in r.output

    def test_kaijser(self, run):
        r = run("forget", "--model", "kaijser")
        assert r.exit_code == 3 and "not forgetful (Y-side)" in r.output

    def test_iid_minimal(self, run):
        r = run("forget", "--model", "iid:0.1", "--mi-k", 0)
        table = r.output.split("eps,recollection\n")[1].split()
        recs = {int(line.split(",")[1]) for line in table}
        assert r.exit_code == 0 and len(recs) == 1


class TestBst:
    def test_info(self, run):
        r = run("bst", "info", "--L0", 3, "--M0", 6, "--n", 3, "--index", 35)
        assert "N=96" in r.output and "absolute=[6, 17, 29, 40, 53, 64, 77, 88]" in r.output

    def test_envelope(self, run):
        r = run("bst", "envelope", "--H0", 0.2, "--levels", 10, "--xi", 0.004)
        assert r.exit_code == 0 and "nth_refined=10" in r.output
        table = [row for row in rows(r.output.split("#")[0]) if row["level"] == "9"]
        assert float(table[0]["med_plus_hi"]) == pytest.approx(0.0041, abs=5e-5)

    def test_certify(self, run):
        r = run("bst", "envelope", "--certify", "bsc:0.11", "--L0", 4, "--levels", 2)
        assert r.exit_code == 0
        table = rows(r.output.split("#")[-1].split("\n", 1)[1])
        assert float(table[0]["bracket_lo"]) == pytest.approx(float(table[0]["bracket_hi"]))


class TestDesign:
    def test_degenerate_ge_matches_bsc(self, run, tmp_path):
        out = {}
        for name, model in (("ge", "gilbert_elliott:0.49,0.49,0.05,0.05"), ("bsc", "bsc:0.05")):
            path = tmp_path / f"{name}.json"
            r = run("design", "--model", model, "--L0", 6, "--xi", 0.01, "--nhat", 3, "--allow-short", "--out", path)
            assert r.exit_code == 0, r.output
            out[name] = json.loads(path.read_text())
        assert out["ge"]["plan"] == out["bsc"]["plan"]
        assert out["ge"]["meta"]["H0"] == pytest.approx(out["bsc"]["meta"]["H0"])

    def test_low_target_needs_bracket(self, run):
        r = run("design", "--model", "bsc:0.2", "--L0", 4, "--nhat", 2, "--allow-short")
        assert r.exit_code == 2 and "below 1/2" in r.output
        r = run("design", "--model", "bsc:0.2", "--target", "high", "--L0", 4, "--xi", 0.05, "--nhat", 2, "--allow-short")
        assert r.exit_code == 0

    def test_rate_printed(self, run, tmp_path):
        path = tmp_path / "s.json"
        r = run("design", "--model", "bsc:0.05", "--L0", 4, "--xi", 0.05, "--nhat", 3, "--allow-short", "--out", path)
        spec = cd.CodeSpec.from_json(json.loads(path.read_text()))
        count = len(spec.plan.index_set(ss.MED_PLUS))
        per = len(next(iter(spec.unfrozen.values())))
        assert spec.rate == pytest.approx(per * count / (spec.N * spec.Nhat))
        assert f"rate: {spec.rate}" in r.output

    def test_short_refused(self, run):
        r = run("design", "--model", "bsc:0.05", "--L0", 4, "--xi", 0.05, "--nhat", 3)
        assert r.exit_code == 2 and "below n_a" in r.output


@pytest.fixture
def spec_file(tmp_path):
    s = cd.uniform_spec(ss.make_plan(1, 6, 1), 2, [1, 2, 3])
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(s.to_json()))
    return path, s


class TestCodec:
    def test_noiseless_roundtrip(self, run, spec_file):
        path, s = spec_file
        msg = "".join("01"[(i * 7) % 3 == 0] for i in range(s.k))
        x = run("codec", "encode", "--spec", path, "--message", msg).output.strip()
        assert len(x) == s.length
        dec = run("codec", "decode", "--spec", path, "--model", "gilbert_elliott:0.1,0.1,0,0", "--y", x)
        assert dec.output.strip() == msg

    def test_bad_message(self, run, spec_file):
        path, _ = spec_file
        r = run("codec", "encode", "--spec", path, "--message", "0101")
        assert r.exit_code == 2


class TestSimulate:
    def test_ber_noiseless_and_deterministic(self, run, spec_file, tmp_path):
        path, _ = spec_file
        args = ("simulate", "ber", "--spec", path, "--model", "gilbert_elliott:0.1,0.1,0,0", "--model", "bsc:0.05", "--trials", 100, "--seed", 4)
        a, b = run(*args), run(*args)
        assert a.output == b.output
        table = rows(a.output)
        assert table[0]["block_errors"] == "0"
        assert len({row["config_hash"] for row in table}) == 1

    def test_seed_required(self, run, spec_file):
        path, _ = spec_file
        r = run("simulate", "ber", "--spec", path, "--model", "bsc:0.1", "--trials", 10)
        assert r.exit_code == 2 and "seed" in r.output

    def test_entropy_inside_envelope(self, run):
        r = run("simulate", "entropy", "--L0", 0, "--M0", 4, "--n", 2, "--model", "bsc:0.11", "--trials", 2000, "--seed", 1)
        assert r.exit_code == 0
        for row in rows(r.output):
            if row["set"].startswith("med"):
                h, se = float(row["entropy"]), float(row["se"])
                assert float(row["env_lo"]) - 3 * se <= h <= float(row["env_hi"]) + 3 * se

    def test_config_override(self, run, tmp_path, spec_file):
        path, _ = spec_file
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"spec": str(path), "model": "bsc:0.3", "trials": 20, "seed": 1}))
        a = run("simulate", "ber", "--config", cfg)
        b = run("simulate", "ber", "--config", cfg, "--trials", 30)
        assert rows(a.output)[0]["trials"] == "20" and rows(b.output)[0]["trials"] == "30"
        assert rows(a.output)[0]["config_hash"] != rows(b.output)[0]["config_hash"]


class TestContraction:
    def test_birkhoff(self, run):
        r = run("contraction", "birkhoff", "--matrix", "[[2, 1], [1, 2]]")
        assert "phi: 0.25" in r.output
        beta = float(r.output.split("beta:")[1])
        assert beta == pytest.approx(1 / 3)

    def test_not_subrectangular(self, run):
        r = run("contraction", "birkhoff", "--matrix", "[[1, 0], [1, 1]]")
        assert "subrectangular: False" in r.output and "beta: 1" in r.output


def test_config_hash_stable():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert len(config_hash({})) == 16 and not math.isnan(len(config_hash({"x": 0.1})))
