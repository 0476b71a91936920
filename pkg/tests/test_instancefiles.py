"""Test module for instancefiles"""

import json
from pathlib import Path

import pytest

from bamc import instancefiles
from bamc.bamccli import main
from bamc.common import InstanceFileError
from bamc.instancefiles import InstanceFile

TESTDIR = Path(__file__).absolute().parent
DATADIR = TESTDIR / "data"


def test_instancefile():
    """Test parsing of the test data files"""
    instfile = InstanceFile(DATADIR / "lazy.json")
    assert instfile.get_path() == DATADIR
    assert instfile.get_filename().name == "lazy.json"
    instance = instfile.get_instance()
    assert instance.num_chains == 2
    assert instance.num_states == 2
    assert instance.lambda_total == pytest.approx(1.18)
    assert instance.initial_dists[0].tolist() == [1, 0]
    # Cached:
    assert instfile.get_instance() is instance

    instance = InstanceFile(DATADIR / "fast_mixing.json").get_instance()
    assert instance.num_chains == 3
    assert instance.num_states == 3
    assert instance.lambda_total == pytest.approx(2 + 1.68 + 1.395)
    assert instance.initial_dists[1] == pytest.approx([1 / 3] * 3)

    instance = InstanceFile(DATADIR / "two_scales.json").get_instance()
    assert instance.eta == pytest.approx([0.25, 0.75])


def test_bad_rowsum():
    with pytest.raises(InstanceFileError) as excinfo:
        InstanceFile(DATADIR / "bad_rowsum.json").get_instance()
    assert excinfo.value.line == 6
    assert "bad_rowsum.json:6" in str(excinfo.value)


def test_periodic():
    with pytest.raises(InstanceFileError) as excinfo:
        InstanceFile(DATADIR / "periodic.json").get_instance()
    assert "Chain 2" in str(excinfo.value)
    assert excinfo.value.line == 5

    # Accepted, but not analyzed, in permissive mode
    instance = InstanceFile(DATADIR / "periodic.json").get_instance(permissive=True)
    assert not instance.analyzed


def test_nonexisting(caplog):
    instfile = InstanceFile(DATADIR / "nonexisting.json")
    assert "does not exist" in caplog.text
    with pytest.raises(InstanceFileError, match="Cannot read"):
        instfile.get_instance()


def test_str2instance():
    instance = InstanceFile.str2instance(
        json.dumps({"chains": [[[0.5, 0.5], [0.5, 0.5]]]})
    )
    assert instance.num_chains == 1
    assert instance.lambda_total == pytest.approx(1)

    instance = InstanceFile.str2instance(
        json.dumps(
            {
                "name": "named",
                "description": "State names instead of a count",
                "states": ["rain", "sun"],
                "chains": [[[0.5, 0.5], [0.5, 0.5]]],
            }
        )
    )
    assert instance.num_states == 2


@pytest.mark.parametrize(
    "text, line, message",
    [
        ('{\n  "chains": [\n', 3, "Expecting value"),
        ("[1, 2]", 1, "JSON object"),
        ('{\n  "chain": []\n}', 2, "Unknown key 'chain'"),
        ('{\n  "states": 2\n}', 1, "Missing required key"),
        ('{\n  "chains": []\n}', 2, "non-empty"),
        ('{\n  "states": "two",\n  "chains": [[[1]]]\n}', 2, "'states'"),
        (
            '{\n  "states": 3,\n  "chains": [\n    [[0.5, 0.5], [0.5, 0.5]]\n  ]\n}',
            4,
            "expected 3 states",
        ),
        (
            '{\n  "chains": [\n    [["a", "b"], [0.5, 0.5]]\n  ]\n}',
            3,
            "not a numeric matrix",
        ),
        (
            '{\n  "chains": [\n    [[0.5, 0.5],\n     [-0.5, 1.5]]\n  ]\n}',
            4,
            "outside [0, 1]",
        ),
        (
            '{\n  "chains": [[[0.5, 0.5], [0.5, 0.5]]],\n'
            '  "initial_dists": [[0.5, 0.5], [0.5, 0.5]]\n}',
            3,
            "one initial distribution per chain",
        ),
        (
            '{\n  "chains": [[[0.5, 0.5], [0.5, 0.5]]],\n'
            '  "initial_dists": [\n    [0.2, 0.2]\n  ]\n}',
            4,
            "not a probability vector",
        ),
    ],
)
def test_parse_errors(text, line, message):
    with pytest.raises(InstanceFileError) as excinfo:
        instancefiles.parse_instance(text, filename="inst.json")
    assert excinfo.value.line == line
    assert message in str(excinfo.value)
    assert str(excinfo.value).startswith("inst.json")


def test_deterministic_chain():
    text = json.dumps(
        {"chains": [[[0.5, 0.5], [0.5, 0.5]], [[0.0, 1.0], [1.0, 0.0]]]}
    )
    with pytest.raises(InstanceFileError):
        instancefiles.parse_instance(text)
    with pytest.raises(InstanceFileError, match="deterministic"):
        instancefiles.parse_instance(text, permissive=True)


def test_node_line():
    text = '{\n  "a": [\n    1,\n    [2, 3]\n  ]\n}'
    root = instancefiles._compose(text)
    assert instancefiles.node_line(root, "a") == 2
    assert instancefiles.node_line(root, "a", 1) == 4
    assert instancefiles.node_line(root, "a", 5) is None
    assert instancefiles.node_line(root, "b") is None
    assert instancefiles.node_line(None, "a") is None


def test_write_instance(tmp_path):
    instance = InstanceFile(DATADIR / "lazy.json").get_instance()
    instancefiles.write_instance(instance, tmp_path / "copy.json")
    copied = InstanceFile(tmp_path / "copy.json").get_instance()
    assert copied.lambda_total == instance.lambda_total
    assert copied.initial_dists[0].tolist() == [1, 0]
    assert instancefiles.instance_to_dict(copied) == instancefiles.instance_to_dict(
        instance
    )


def test_main(capsys, mocker):
    """Test command line interface"""
    mocker.patch(
        "sys.argv", ["bamc", "validate", "--instance", str(DATADIR / "lazy.json")]
    )
    main()
    stdout = capsys.readouterr().out
    assert "valid instance with K=2 chains on S=2 states" in stdout
    assert "Lambda=1.18" in stdout


def test_main_invalid(mocker):
    mocker.patch(
        "sys.argv",
        ["bamc", "validate", "--instance", str(DATADIR / "nonexisting.json")],
    )
    with pytest.raises(SystemExit) as excinfo:
        main()
    assert excinfo.value.code == 2

    mocker.patch(
        "sys.argv",
        ["bamc", "validate", "--instance", str(DATADIR / "bad_rowsum.json")],
    )
    with pytest.raises(SystemExit) as excinfo:
        main()
    assert excinfo.value.code == 2

    mocker.patch(
        "sys.argv",
        [
            "bamc",
            "validate",
            "--permissive",
            "--instance",
            str(DATADIR / "periodic.json"),
        ],
    )
    main()
