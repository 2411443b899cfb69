import json

import pytest

from ensemble_oc.config import SCHEMA, config_from_header, load_config, validate
from ensemble_oc.errors import ConfigError

BASE = """\
[problem]
name = linear2d

[measure]
kind = quantile
N = 5

[optimize]
beta = 1e-3
"""


def cfg_of(text, command="optimize"):
    return validate(load_config(text=text), command)


class TestParse:
    def test_defaults(self):
        cfg = validate(load_config(), "simulate")
        assert cfg["problem"]["name"] == "linear2d"
        assert cfg["optimize"]["beta"] is None
        assert cfg["optimize"]["test_seed"] == cfg["measure"]["seed"] + 1

    def test_types(self):
        text = BASE + "correction = no\n\n[sweep]\nN_list = 3, 9\n\n[discretization]\nM = 8\n"
        cfg = cfg_of(text)
        assert cfg["optimize"]["correction"] is False
        assert cfg["sweep"]["N_list"] == [3, 9]
        assert cfg["discretization"]["M"] == 8

    def test_matrix_rows(self):
        text = ("[problem]\nname = generic-lti\nA0 = 0, 1; -1, 0\nA1 = 0, 0; 1, 0\nB0 = 0; 1\n"
                "x0 = 1, 0\ny_tar = 0, 0\n")
        cfg = validate(load_config(text=text), "simulate")
        assert cfg["problem"]["A0"] == [[0.0, 1.0], [-1.0, 0.0]]
        assert cfg["problem"]["B0"] == [[0.0], [1.0]]

    def test_unknown_key_has_line(self):
        with pytest.raises(ConfigError) as info:
            load_config(text=BASE + "gamma = 3\n")
        assert info.value.line == BASE.count("\n") + 1
        assert "gamma" in str(info.value) and "line" in str(info.value)

    def test_unknown_section_has_line(self):
        with pytest.raises(ConfigError) as info:
            load_config(text="[problem]\nname = linear2d\n[solver]\nx = 1\n")
        assert info.value.line == 3

    def test_bad_value_has_line(self):
        with pytest.raises(ConfigError) as info:
            load_config(text=BASE.replace("N = 5", "N = five"))
        assert info.value.line == 6
        assert "five" in str(info.value)

    def test_seed_range(self):
        with pytest.raises(ConfigError):
            load_config(text="[measure]\nseed = -1\n")
        cfg = load_config(text=f"[measure]\nseed = {2**64 - 1}\n")
        assert cfg["measure"]["seed"] == 2**64 - 1


class TestValidate:
    def test_missing_beta_named(self):
        with pytest.raises(ConfigError, match="beta") as info:
            cfg_of(BASE.replace("beta = 1e-3\n", "method = pmp\n"))
        assert info.value.key == "beta"

    @pytest.mark.parametrize("command", ["optimize", "oracle", "check", "check-grad", "residual"])
    def test_beta_required_by(self, command):
        with pytest.raises(ConfigError, match="beta"):
            validate(load_config(text="[measure]\nN = 4\n"), command)

    @pytest.mark.parametrize("beta", ["0", "-1e-3"])
    def test_beta_positive(self, beta):
        with pytest.raises(ConfigError, match="beta") as info:
            cfg_of(BASE.replace("1e-3", beta))
        assert info.value.line == 9

    @pytest.mark.parametrize("extra,key", [
        ("[discretization]\nM = 0\n", "M"),
        ("[discretization]\nS = 0\n", "S"),
        ("tau = 1.5\n", "tau"),
        ("c = 0\n", "c"),
        ("gamma0 = 0\n", "gamma0"),
        ("max_iter = -2\n", "max_iter"),
        ("method = newton\n", "method"),
        ("[check]\nfd_epsilon = 0\n", "fd_epsilon"),
        ("[sweep]\nN_list = 0\n", "N_list"),
    ])
    def test_ranges(self, extra, key):
        with pytest.raises(ConfigError) as info:
            cfg_of(BASE + extra)
        assert info.value.key == key

    def test_explicit_measure(self):
        text = "[measure]\nkind = explicit\nthetas = -0.1, 0.2\nweights = 0.25, 0.75\n"
        cfg = validate(load_config(text=text), "simulate")
        assert cfg["measure"]["thetas"] == [-0.1, 0.2]
        with pytest.raises(ConfigError, match="weights"):
            validate(load_config(text=text.replace("0.75", "0.5")), "simulate")
        with pytest.raises(ConfigError, match="thetas"):
            validate(load_config(text="[measure]\nkind = explicit\n"), "simulate")

    def test_oracle_needs_linear(self):
        with pytest.raises(ConfigError, match="linear"):
            cfg_of(BASE.replace("linear2d", "logistic1d"), "oracle")

    def test_sweep_rejects_explicit(self):
        text = BASE + "[sweep]\nN_list = 1\n"
        text = text.replace("kind = quantile\nN = 5", "kind = explicit\nthetas = 0.0")
        with pytest.raises(ConfigError):
            cfg_of(text, "sweep-n")

    def test_control_width(self):
        with pytest.raises(ConfigError, match="components"):
            cfg_of(BASE + "[control]\nvalue = 1, 2, 3\n", "simulate")


class TestHeader:
    def test_round_trip(self):
        cfg = cfg_of(BASE + "[output]\ndir = somewhere\n")
        line = "# " + cfg.header()
        again = validate(config_from_header(line), "optimize")
        assert again.header() == cfg.header()
        assert again.computational() == cfg.computational()

    def test_output_dir_not_recorded(self):
        a = cfg_of(BASE + "[output]\ndir = a\n")
        b = cfg_of(BASE + "[output]\ndir = b\n")
        assert a.header() == b.header()
        assert "dir" not in json.loads(a.header()[len("config "):])["output"]

    def test_header_lists_every_key(self):
        data = json.loads(cfg_of(BASE).header()[len("config "):])
        for section, keys in SCHEMA.items():
            for key in keys:
                if (section, key) != ("output", "dir"):
                    assert key in data[section]

    def test_load_from_output_file(self, tmp_path):
        cfg = cfg_of(BASE)
        f = tmp_path / "x.csv"
        f.write_text("# " + cfg.header() + "\nt,u1\n")
        assert validate(load_config(f), "optimize").header() == cfg.header()

    def test_header_rejects_unknown(self):
        with pytest.raises(ConfigError):
            config_from_header('# config {"solver": {}}')

    def test_overrides(self):
        cfg = cfg_of(BASE).with_overrides(**{"measure.seed": 7, "optimize.method": "pmp"})
        assert cfg["measure"]["seed"] == 7 and cfg["optimize"]["method"] == "pmp"
