from __future__ import annotations

import json
from fractions import Fraction

import pytest

from conftest import WEEKDAY
from objguard.backend import FileBackend
from objguard.cli import _size, main
from objguard.crypto import HomKeyPair, hom_encrypt
from objguard.crypto.group import from_b64
from objguard.engine import MetadataStore
from objguard.gateway import GatewayConfig, make_server

TOKENS = {"admintok": {"user": "admin", "admin": True}, "alicetok": "Alice", "tinatok": "tina", "umatok": "uma"}


@pytest.fixture
def gateway(tmp_path):
    config = GatewayConfig(listen="127.0.0.1:0", tokens=TOKENS, test_mode=True)
    server = make_server(config, store=MetadataStore(), backend=FileBackend(str(tmp_path / "objects"))).start_background()
    yield server
    server.stop()


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_keygen_is_deterministic_with_seed(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "keygen", "--user", "Alice", "--seed", "3", "--dir", str(tmp_path / d))[0] == 0
    for name in ("Alice.hom.key", "Alice.hom.pub", "Alice.peks.key", "Alice.peks.pub"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    pair = HomKeyPair.from_bytes(from_b64((tmp_path / "a" / "Alice.hom.key").read_text().strip()))
    assert pair.pk.to_b64() == (tmp_path / "a" / "Alice.hom.pub").read_text().strip()


def test_decrypt_prints_exact_average(tmp_path, capsys):
    run(capsys, "keygen", "--user", "t", "--kind", "hom", "--seed", "1", "--dir", str(tmp_path))
    pair = HomKeyPair.from_bytes(from_b64((tmp_path / "t.hom.key").read_text().strip()))
    view = tmp_path / "view.json"
    view.write_text(json.dumps({"average_salary": {"sum": hom_encrypt(pair.pk, 60).to_b64(), "count": 3}}))
    code, out, _ = run(capsys, "decrypt", "--key", str(tmp_path / "t.hom.key"), str(view))
    assert code == 0 and out.strip() == "average_salary: sum=60 count=3 average=20"
    view.write_text(json.dumps({"average_salary": {"sum": hom_encrypt(pair.pk, 7).to_b64(), "count": 2}}))
    assert "average=3.500000 (7/2)" in run(capsys, "decrypt", "--key", str(tmp_path / "t.hom.key"), str(view))[1]
    view.write_text(json.dumps({"average_salary": {"count": 0}}))
    assert "nothing summed" in run(capsys, "decrypt", "--key", str(tmp_path / "t.hom.key"), str(view))[1]
    view.write_text("{}")
    assert run(capsys, "decrypt", "--key", str(tmp_path / "t.hom.key"), str(view))[0] == 1


def test_bad_token_exits_1(gateway, tmp_path, capsys):
    f = tmp_path / "x.json"
    f.write_text("{}")
    code, _, err = run(capsys, "--url", gateway.url, "--token", "nope", "put", str(f), "/a/c/x.json")
    assert code == 1 and "401" in err


def test_missing_url():
    with pytest.raises(SystemExit):
        main(["--url", "", "label", "u", "user"])


def test_size_parser():
    assert _size("10KB") == 10 * 1024
    assert _size("1M") == 1024 * 1024
    assert _size("512") == 512


def test_end_to_end_employee_flow(gateway, tmp_path, capsys):
    url = ("--url", gateway.url)
    keys = str(tmp_path / "keys")
    assert run(capsys, *url, "--token", "alicetok", "keygen", "--user", "Alice", "--kind", "hom", "--seed", "1", "--dir", keys, "--publish")[0] == 0
    assert run(capsys, "keygen", "--user", "tina", "--kind", "hom", "--seed", "2", "--dir", keys)[0] == 0
    for user, label in (("tina", "treasurer"), ("uma", "user")):
        assert run(capsys, *url, "--token", "admintok", "label", user, label)[0] == 0

    data_dir = str(tmp_path / "data")
    code, out, _ = run(capsys, "gen-data", "employees", "--records", "5", "--owner-pub", f"{keys}/Alice.hom.pub", "--out-dir", data_dir, "--seed", "4")
    assert code == 0
    truth = json.load(open(f"{data_dir}/employees.json.truth.json"))

    alice = (*url, "--token", "alicetok")
    assert run(capsys, *alice, "put", f"{data_dir}/employees.json", "/acct/cont/employees.json")[0] == 0
    code, out, _ = run(capsys, *alice, "policy", "put", f"{data_dir}/employees.json.policy.json")
    assert code == 0 and json.loads(out)["id"] == "employee.policy"
    assert run(capsys, *alice, "policy", "list")[1].split() == ["employee.policy"]

    token_file = tmp_path / "tina.token"
    assert run(capsys, "token", "--owner-key", f"{keys}/Alice.hom.key", "--receiver-pub", f"{keys}/tina.hom.pub", "-o", str(token_file))[0] == 0

    view = tmp_path / "view.json"
    clock = ("-H", f"X-Test-Clock: {WEEKDAY.isoformat()}")
    code, _, err = run(capsys, *url, "--token", "tinatok", "get", "/acct/cont/employees.json", "--reenc-token", f"@{token_file}", *clock, "-o", str(view))
    assert code == 0, err
    assert "salary\"" not in view.read_text().replace("average_salary", "")
    code, out, _ = run(capsys, "decrypt", "--key", f"{keys}/tina.hom.key", str(view))
    assert code == 0
    avg = Fraction(truth["average"])
    shown = f"{avg.numerator}" if avg.denominator == 1 else f"{float(avg):.6f} ({avg})"
    assert out.strip() == f"average_salary: sum={truth['sum']} count=5 average={shown}"

    code, out, _ = run(capsys, *url, "--token", "umatok", "get", "/acct/cont/employees.json", *clock)
    assert code == 0 and "average_salary" not in out and out.count("Employee") == 5

    code, _, err = run(capsys, *url, "--token", "tinatok", "get", "/acct/cont/employees.json", "-H", "X-Test-Clock: 2024-05-18T10:00:00+00:00")
    assert code == 1 and "403" in err

    assert run(capsys, *alice, "policy", "del", "employee.policy")[0] == 0
    assert run(capsys, *alice, "policy", "list")[1].strip() == ""


def test_trapdoor_and_search_flow(gateway, tmp_path, capsys):
    url = ("--url", gateway.url)
    keys = str(tmp_path / "keys")
    run(capsys, *url, "--token", "tinatok", "keygen", "--user", "tina", "--kind", "peks", "--seed", "5", "--dir", keys, "--publish")
    run(capsys, *url, "--token", "admintok", "label", "tina", "HR manager")
    data_dir = str(tmp_path / "data")
    run(capsys, "gen-data", "adult", "--records", "12", "--search-pub", f"{keys}/tina.peks.pub", "--out-dir", data_dir, "--seed", "1")
    truth = json.load(open(f"{data_dir}/adult.csv.truth.json"))
    tina = (*url, "--token", "tinatok")
    run(capsys, *tina, "put", f"{data_dir}/adult.csv", "/acct/cont/adult.csv")
    run(capsys, *tina, "policy", "put", f"{data_dir}/adult.csv.policy.json")
    word = truth["occupations"][0]
    code, trapdoor, _ = run(capsys, "trapdoor", "--key", f"{keys}/tina.peks.key", word)
    assert code == 0
    code, out, _ = run(capsys, *tina, "get", "/acct/cont/adult.csv", "--trapdoor", trapdoor.strip())
    assert code == 0
    rows = out.strip().splitlines()
    assert len(rows) - 1 == truth["occupations"].count(word)
    assert [int(r.split(",")[0]) for r in rows[1:]] == [i for i, o in enumerate(truth["occupations"]) if o == word]
