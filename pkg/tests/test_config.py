from fractions import Fraction

import pytest

from fracop.exactlin import validate_family
from fracop.oplab.config import ConfigError, ExperimentConfig, load_config, parse_config_text

GOOD = """\
# uniform run
family = canonical
n = 2
r = 1/2          # exact
p = 1, 3/4
atoms = 5
dilations = 0.25, 1, 4
output = out.csv
"""


def test_parse_good_config():
    entries = parse_config_text(GOOD)
    assert entries["r"] == ("1/2", 4)
    cfg = ExperimentConfig.from_entries(entries)
    assert cfg.r == Fraction(1, 2)
    assert cfg.p == (Fraction(1), Fraction(3, 4))
    assert cfg.dilations == (Fraction(1, 4), Fraction(1), Fraction(4))
    assert cfg.partition == (1, 1)
    assert cfg.output == "out.csv"


def test_load_config_from_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(GOOD)
    assert load_config(path).atoms == 5


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.atoms == 20 and cfg.threshold == 10.0
    assert cfg.q_for(Fraction(1)) == 2
    assert cfg.q_for(Fraction(3, 4)) == Fraction(6, 5)


def test_decimal_and_fraction_agree():
    a = ExperimentConfig.from_mapping({"r": "0.5"})
    b = ExperimentConfig.from_mapping({"r": "1/2"})
    assert a.r == b.r


@pytest.mark.parametrize("text,line,key", [
    ("n = 2\nr = 1.5\n", 2, "r"),
    ("n = 2\n\np = 3\n", 3, "p"),
    ("r = 1/2\nbogus = 1\n", 2, "bogus"),
    ("n = 2\nn = 3\n", 2, "n"),
    ("n = two\n", 1, "n"),
    ("n = 3\npartition = 1,1\n", 2, "partition"),
    ("family = mystery\n", 1, "family"),
])
def test_errors_name_line_and_field(text, line, key):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_entries(parse_config_text(text, "run.cfg"), source="run.cfg")
    assert info.value.line == line
    assert info.value.key == key
    assert str(info.value).startswith(f"run.cfg:{line}: field '{key}'")


def test_malformed_line():
    with pytest.raises(ConfigError) as info:
        parse_config_text("n = 2\njust words\n")
    assert info.value.line == 2


def test_inline_family():
    text = "A1 = 1,0; 0,0\nA2 = 0,0; 0,1\nr = 1/3\n"
    cfg = ExperimentConfig.from_entries(parse_config_text(text))
    assert cfg.family == "inline" and cfg.n == 2
    assert validate_family(cfg.family_spec()).ok


def test_inline_matrix_gap():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_entries(parse_config_text("A1 = 1,0; 0,0\nA3 = 0,0; 0,1\n"))


def test_worked_example_forces_dimension():
    cfg = ExperimentConfig.from_mapping({"family": "worked-example"})
    assert cfg.n == 3 and cfg.partition == (1, 1, 1)


def test_random_family_is_valid_and_replayable():
    cfg = ExperimentConfig.from_mapping({"family": "random", "n": "3", "partition": "1,2",
                                         "family_seed": "4"})
    assert validate_family(cfg.family_spec()).ok
    assert cfg.family_spec() == cfg.family_spec()
    assert cfg.params()["partition"] == "1,2"
