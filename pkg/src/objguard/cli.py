"""Command-line entry point: ``objguard <subcommand>`` (or ``python -m objguard``).

The gateway URL and auth token come from ``--url``/``--token`` or the
``OBJGUARD_URL``/``OBJGUARD_TOKEN`` environment variables. Key files hold
base64 text: ``<user>.<kind>.key`` (key pair, keep private) and
``<user>.<kind>.pub`` (public key).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from fractions import Fraction
from typing import Any, Sequence

from objguard.errors import ObjguardError

logger = logging.getLogger("objguard")

KINDS = ("hom", "peks")


def _read_text_arg(value: str | None) -> str | None:
    """``@path`` reads the value from a file; anything else is literal."""
    if value is None:
        return None
    if value.startswith("@"):
        with open(value[1:], encoding="utf-8") as fh:
            return fh.read().strip()
    return value


def _read_key_file(path: str) -> bytes:
    from objguard.crypto.group import from_b64

    with open(path, "rb") as fh:
        return from_b64(fh.read().strip())


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def _client(args: argparse.Namespace):
    from objguard.client import GatewayClient

    if not args.url:
        raise SystemExit("error: no gateway URL (use --url or OBJGUARD_URL)")
    return GatewayClient(args.url, args.token)


# -- key and token tools -----------------------------------------------------


def cmd_keygen(args: argparse.Namespace) -> int:
    from objguard.crypto.hom import hom_keygen
    from objguard.crypto.peks import peks_keygen

    rng = random.Random(args.seed) if args.seed is not None else None
    os.makedirs(args.dir, exist_ok=True)
    kinds = KINDS if args.kind == "all" else (args.kind,)
    client = _client(args) if args.publish else None
    for kind in kinds:
        pair = hom_keygen(rng) if kind == "hom" else peks_keygen(rng)
        base = os.path.join(args.dir, f"{args.user}.{kind}")
        _write(base + ".key", pair.to_b64())
        os.chmod(base + ".key", 0o600)
        _write(base + ".pub", pair.pk.to_b64())
        print(f"{base}.key  {base}.pub  id={pair.key_id}")
        if client is not None:
            from objguard.engine import key_paths

            for key in key_paths(args.user, kind):
                client.put_meta(key, pair.pk.to_bytes())
            print(f"published {kind} key of {args.user}")
    return 0


def cmd_label(args: argparse.Namespace) -> int:
    with _client(args) as client:
        client.put_meta(f"labels/{args.user}", args.ulabel)
    print(f"{args.user}: {args.ulabel}")
    return 0


def cmd_publish(args: argparse.Namespace) -> int:
    from objguard.engine import key_paths

    data = _read_key_file(args.pub)
    with _client(args) as client:
        for key in key_paths(args.user, args.kind):
            client.put_meta(key, data)
    print(f"published {args.kind} key of {args.user}")
    return 0


def cmd_token(args: argparse.Namespace) -> int:
    from objguard.crypto.hom import HomKeyPair, HomPublicKey, pre_token

    owner = HomKeyPair.from_bytes(_read_key_file(args.owner_key))
    receiver = HomPublicKey.from_bytes(_read_key_file(args.receiver_pub))
    text = pre_token(owner, receiver).to_b64()
    if args.out:
        _write(args.out, text)
    else:
        print(text)
    return 0


def cmd_trapdoor(args: argparse.Namespace) -> int:
    from objguard.crypto.peks import PeksKeyPair, peks_trapdoor

    key = PeksKeyPair.from_bytes(_read_key_file(args.key))
    text = peks_trapdoor(key, args.words).to_b64()
    if args.out:
        _write(args.out, text)
    else:
        print(text)
    return 0


def _find_sums(doc: Any, field: str | None) -> list[tuple[str, dict]]:
    found = []
    if isinstance(doc, dict):
        for k, v in doc.items():
            if isinstance(v, dict) and "count" in v and (field is None or k == field):
                found.append((k, v))
    return found


def cmd_decrypt(args: argparse.Namespace) -> int:
    from objguard.crypto.hom import HomCiphertext, HomKeyPair, decrypt_any

    key = HomKeyPair.from_bytes(_read_key_file(args.key))
    if args.ciphertext:
        print(decrypt_any(key, HomCiphertext.from_b64(_read_text_arg(args.ciphertext)), args.bound))
        return 0
    raw = sys.stdin.buffer.read() if args.view in (None, "-") else open(args.view, "rb").read()
    sums = _find_sums(json.loads(raw), args.field)
    if not sums:
        print("error: the view carries no {sum, count} field", file=sys.stderr)
        return 1
    for name, value in sums:
        count = int(value["count"])
        if "sum" not in value:
            print(f"{name}: count={count} (nothing summed)")
            continue
        total = decrypt_any(key, HomCiphertext.from_b64(value["sum"]), args.bound)
        line = f"{name}: sum={total} count={count}"
        if count:
            avg = Fraction(total, count)
            line += f" average={avg.numerator}" if avg.denominator == 1 else f" average={float(avg):.6f} ({avg})"
        print(line)
    return 0


# -- gateway operations ------------------------------------------------------


def cmd_policy(args: argparse.Namespace) -> int:
    with _client(args) as client:
        if args.action == "put":
            with open(args.target, "rb") as fh:
                print(json.dumps(client.put_policy(fh.read())))
        elif args.action == "get":
            print(client.get_policy(args.target))
        elif args.action == "del":
            client.delete_policy(args.target)
            print(f"deleted {args.target}")
        else:
            for pid in client.list_policies():
                print(pid)
    return 0


def cmd_put(args: argparse.Namespace) -> int:
    with _client(args) as client, open(args.file, "rb") as fh:
        print(json.dumps(client.put_object(args.path, fh)))
    return 0


def cmd_get(args: argparse.Namespace) -> int:
    headers = {}
    token = _read_text_arg(args.reenc_token)
    if token:
        headers["X-ReEnc-Token"] = token
    trapdoor = _read_text_arg(args.trapdoor)
    if trapdoor:
        headers["X-Search-Trapdoor"] = trapdoor
    for item in args.header or ():
        name, _, value = item.partition(":")
        headers[name.strip()] = value.strip()
    with _client(args) as client:
        result = client.get_object(args.path, headers=headers)
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(result.body or b"")
    else:
        sys.stdout.buffer.write(result.body or b"")
        sys.stdout.flush()
    logger.info("%d bytes, ttfb %.2f ms, total %.2f ms", result.size, result.ttfb * 1e3, result.elapsed * 1e3)
    return 0


def cmd_gen_data(args: argparse.Namespace) -> int:
    from objguard.crypto.hom import HomPublicKey
    from objguard.crypto.peks import PeksPublicKey
    from objguard.datasets import DatasetKeys, gen_dataset

    keys = DatasetKeys(
        owner=HomPublicKey.from_bytes(_read_key_file(args.owner_pub)) if args.owner_pub else None,
        searchers=tuple(PeksPublicKey.from_bytes(_read_key_file(p)) for p in args.search_pub or ()),
        owner_name=args.owner,
    )
    files = gen_dataset(args.kind, args.records, keys, args.out_dir, seed=args.seed, name=args.name)
    print(f"{files.data} ({files.size} bytes)\n{files.truth}\n{files.policy}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from objguard.gateway import GatewayConfig, make_server

    overrides = {
        "listen": args.listen,
        "backend_root": args.backend_root,
        "tokens": args.tokens,
        "metadata": args.metadata,
        "cache_capacity": args.cache_capacity,
        "test_mode": True if args.test_mode else None,
    }
    if args.config:
        config = GatewayConfig.load(args.config, **overrides)
    else:
        config = GatewayConfig(**{k: v for k, v in overrides.items() if v is not None})
    server = make_server(config)
    print(f"listening on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# -- benchmarks --------------------------------------------------------------


def cmd_bench(args: argparse.Namespace) -> int:
    from objguard import bench

    if args.bench == "crypto":
        reports = bench.bench_crypto(trials=args.trials, seed=args.seed)
    else:
        if not args.url:
            raise SystemExit("error: no gateway URL (use --url or OBJGUARD_URL)")
        if args.bench == "ttfb":
            reports = bench.bench_ttfb(args.url, args.token, sizes=args.sizes, trials=args.trials, clients=args.clients)
        elif args.bench == "chain":
            reports = bench.bench_chain(args.url, args.token, max_len=args.max_len, size=args.size, trials=args.trials, clients=args.clients)
        else:
            reports = bench.bench_usecase(
                args.url, args.token, profile=args.profile, usecase=args.usecase, trials=args.trials, records=args.records, seed=args.seed
            )
    print(bench.format_reports(reports))
    if args.out:
        bench.write_reports(reports, args.out)
        print(f"report written to {args.out}")
    return 0


# -- parser --------------------------------------------------------------------


def _size(text: str) -> int:
    text = text.strip().upper()
    for suffix, mult in (("KB", 1024), ("MB", 1024 * 1024), ("K", 1024), ("M", 1024 * 1024), ("B", 1)):
        if text.endswith(suffix):
            return int(float(text[: -len(suffix)]) * mult)
    return int(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="objguard", description="Policy-enforcing object gateway tools.")
    p.add_argument("--url", default=os.environ.get("OBJGUARD_URL"), help="gateway base URL")
    p.add_argument("--token", default=os.environ.get("OBJGUARD_TOKEN"), help="X-Auth-Token value")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("keygen", help="generate a hom and/or peks key pair")
    s.add_argument("--user", required=True)
    s.add_argument("--kind", choices=KINDS + ("all",), default="all")
    s.add_argument("--dir", default="keys")
    s.add_argument("--seed", type=int, help="deterministic keys (testing only)")
    s.add_argument("--publish", action="store_true", help="upload the public key(s) to the gateway")
    s.set_defaults(func=cmd_keygen)

    s = sub.add_parser("publish", help="upload a public key file to the metadata store")
    s.add_argument("--user", required=True)
    s.add_argument("--kind", choices=KINDS, required=True)
    s.add_argument("pub")
    s.set_defaults(func=cmd_publish)

    s = sub.add_parser("label", help="assign a user label (admin)")
    s.add_argument("user")
    s.add_argument("ulabel")
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("token", help="issue a re-encryption token owner -> receiver")
    s.add_argument("--owner-key", required=True)
    s.add_argument("--receiver-pub", required=True)
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_token)

    s = sub.add_parser("trapdoor", help="make a search trapdoor for keywords")
    s.add_argument("--key", required=True)
    s.add_argument("words", nargs="+")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_trapdoor)

    s = sub.add_parser("policy", help="manage policies")
    s.add_argument("action", choices=("put", "get", "del", "list"))
    s.add_argument("target", nargs="?", help="policy file (put) or id (get/del)")
    s.set_defaults(func=cmd_policy)

    s = sub.add_parser("put", help="upload an object")
    s.add_argument("file")
    s.add_argument("path", help="/account/container/object")
    s.set_defaults(func=cmd_put)

    s = sub.add_parser("get", help="download the view of an object")
    s.add_argument("path")
    s.add_argument("-o", "--out")
    s.add_argument("--reenc-token", help="token text or @file")
    s.add_argument("--trapdoor", help="trapdoor text or @file")
    s.add_argument("-H", "--header", action="append", help="extra header 'Name: value'")
    s.set_defaults(func=cmd_get)

    s = sub.add_parser("decrypt", help="decrypt the {sum, count} fields of a view")
    s.add_argument("--key", required=True, help="hom key pair file")
    s.add_argument("view", nargs="?", help="view file (default stdin)")
    s.add_argument("--field")
    s.add_argument("--ciphertext", help="decrypt one ciphertext (text or @file) instead")
    s.add_argument("--bound", type=int, default=1 << 32)
    s.set_defaults(func=cmd_decrypt)

    s = sub.add_parser("gen-data", help="generate a dataset with sidecar and policy")
    s.add_argument("kind", choices=("employees", "covid", "adult"))
    s.add_argument("--records", type=int, default=100)
    s.add_argument("--out-dir", default="data")
    s.add_argument("--name")
    s.add_argument("--owner", default="Alice", help="owner name used in meta:// key references")
    s.add_argument("--owner-pub", help="owner's hom public key file")
    s.add_argument("--search-pub", action="append", help="searcher's peks public key file (repeatable)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("serve", help="run the gateway")
    s.add_argument("--config", help="JSON config file")
    s.add_argument("--listen")
    s.add_argument("--backend-root")
    s.add_argument("--tokens", help="JSON token table")
    s.add_argument("--metadata", help="metadata snapshot file")
    s.add_argument("--cache-capacity", type=int)
    s.add_argument("--test-mode", action="store_true", help="honour X-User-Label and X-Test-Clock headers")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("bench", help="run a benchmark")
    bsub = s.add_subparsers(dest="bench", required=True)
    for name in ("ttfb", "chain", "usecase", "crypto"):
        b = bsub.add_parser(name)
        b.add_argument("--out", help="CSV report path")
        b.add_argument("--seed", type=int, default=0)
        b.add_argument("--clients", type=int, default=1)
        b.set_defaults(func=cmd_bench)
        if name == "ttfb":
            b.add_argument("--sizes", type=_size, nargs="+", default=[10 * 1024, 100 * 1024, 1024 * 1024])
            b.add_argument("--trials", type=int, default=100)
        elif name == "chain":
            b.add_argument("--max-len", type=int, default=10)
            b.add_argument("--size", type=_size, default=1024 * 1024)
            b.add_argument("--trials", type=int, default=20)
        elif name == "usecase":
            b.add_argument("--profile", choices=("4g", "fiber", "lan"), default="4g")
            b.add_argument("--usecase", choices=("covid", "adult"), default="covid")
            b.add_argument("--records", type=int)
            b.add_argument("--trials", type=int, default=3)
        else:
            b.add_argument("--trials", type=int, default=200)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "policy" and args.action != "list" and not args.target:
        parser.error(f"policy {args.action} needs a target")
    try:
        return args.func(args)
    except ObjguardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
