"""Command-line front end: ``entropy-forge <command> [options]``.

Exit codes: 0 when every check passes, 1 when a check fails, 2 on usage or
parse errors (including missing input files).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import socket
import sys
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .entropy_oracle import LEMMAS, Distribution, JointDistribution, verify_lemma
from .errors import ConsistencyError, EntropyForgeError, ParameterError, ProtocolError, RegimeError
from .generators import (
    MEASURE_KINDS,
    brute_force_resampler,
    builtin_function,
    deterministic_generator,
    generator_from_json,
    honest_wrapper,
    measure,
    owf_generator,
    resolve_function,
)
from .hashing import HashFamilySpec, exact_collision_probability, is_jointly_uniform
from .owf_attacks import AttackReport, exact_inversion_probability, owf_success_probability
from .protocol import (
    PRESETS,
    CommitReceiver,
    CommitSender,
    Commitment,
    ExhaustiveCheater,
    LazyCheater,
    Opening,
    ProtocolParams,
    binding_attack_harness,
    preset,
    remote_commit,
    reveal_verify,
    run_commit,
    serve_receiver,
)
from .rng import SeedStream

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    params: str | None
    seed: int
    budget: int | None
    out: str | None
    fmt: str


# ---------------------------------------------------------------------------
# I/O helpers


def _load_json(path: str) -> Any:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from exc


def _render(report: Mapping, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report, sort_keys=True, indent=2, default=_json_default) + "\n"
    lines = []
    for k in sorted(report):
        v = report[k]
        text = v if isinstance(v, str) else json.dumps(v, sort_keys=True, default=_json_default)
        lines.append(f"{k:<24} {text}")
    return "\n".join(lines) + "\n"


def _json_default(v: Any) -> Any:
    if isinstance(v, Fraction):
        return float(v)
    if isinstance(v, (set, frozenset, tuple)):
        return list(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _emit(cfg: RunConfig, report: Mapping) -> None:
    text = _render(report, cfg.fmt)
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)


def _protocol_params(ref: str | None) -> ProtocolParams:
    if ref is None:
        raise UsageError("--params is required")
    if ref.startswith("preset:"):
        return preset(ref.split(":", 1)[1])
    if ref in PRESETS and not Path(ref).exists():
        return preset(ref)
    return ProtocolParams.from_json(_load_json(ref))


# ---------------------------------------------------------------------------
# measure

ADVERSARIES: dict[str, Callable] = {
    "honest": honest_wrapper,
    "resampler": brute_force_resampler,
    "deterministic": deterministic_generator,
}


def cmd_measure(cfg: RunConfig, args: argparse.Namespace) -> int:
    if cfg.params is None:
        raise UsageError("--params is required")
    obj = _load_json(cfg.params)
    if not isinstance(obj, dict) or "generator" not in obj:
        raise UsageError("measurement file needs a 'generator' entry")
    g = generator_from_json(obj["generator"])
    kind = args.kind or obj.get("kind", "real-shannon")
    if kind not in MEASURE_KINDS:
        raise UsageError(f"unknown kind {kind!r}; known: {', '.join(MEASURE_KINDS)}")
    target: Any = g
    adv = obj.get("adversary", "honest")
    if kind.startswith("accessible"):
        if adv not in ADVERSARIES:
            raise UsageError(f"unknown adversary {adv!r}; known: {', '.join(ADVERSARIES)}")
        target = ADVERSARIES[adv](g)
    res = measure(target, kind, budget=cfg.budget, rng=SeedStream(cfg.seed, "measure"), threshold=obj.get("threshold"), preprocessing=bool(obj.get("preprocessing", True)))
    report = {"generator": g.name, "adversary": adv if kind.startswith("accessible") else None, **res.to_json()}
    expect = obj.get("expect")
    status = EXIT_OK
    if expect is not None:
        ok = abs(res.value - float(expect)) <= float(obj.get("tolerance", 1e-6))
        report["expect"] = expect
        report["pass"] = ok
        status = EXIT_OK if ok else EXIT_FAIL
    _emit(cfg, report)
    return status


# ---------------------------------------------------------------------------
# verify-lemmas


def default_corpus() -> list[tuple[str, Distribution]]:
    """Small built-in distributions covering uniform, skewed and correlated pairs."""
    corpus: list[tuple[str, Distribution]] = []
    corpus.append(("uniform-pairs-8", JointDistribution({(a, b): 1 for a in range(4) for b in range(2)}, 8, arity=2)))
    corpus.append(("skewed-pairs", JointDistribution({(0, 0): 8, (0, 1): 4, (1, 0): 2, (1, 1): 1, (2, 2): 1}, 16, arity=2)))
    corpus.append(("correlated-pairs", JointDistribution({(0, 0): 3, (1, 1): 3, (2, 2): 1, (3, 0): 1}, 8, arity=2)))
    corpus.append(("triples", JointDistribution({(a, b, a ^ b): 1 for a in range(2) for b in range(4)} | {(3, 3, 3): 8}, 16, arity=3)))
    return corpus


def _corpus_from_file(path: str) -> list[tuple[str, Distribution]]:
    obj = _load_json(path)
    entries = obj.get("distributions") if isinstance(obj, dict) else obj
    if not isinstance(entries, list) or not entries:
        raise UsageError("corpus file needs a non-empty 'distributions' list")
    out = []
    for k, e in enumerate(entries):
        if not isinstance(e, dict):
            raise UsageError(f"corpus entry {k} is not an object")
        name = str(e.get("name", f"d{k}"))
        try:
            if "outcomes_hex" in e:
                d = Distribution.from_json(e)
            else:
                rows = e["weights"]
                den = int(e["denominator"])
                weights = {tuple(r["outcome"]) if isinstance(r["outcome"], list) else r["outcome"]: int(r["weight"]) for r in rows}
                arity = e.get("arity")
                d = JointDistribution(weights, den, arity=int(arity)) if arity else Distribution(weights, den)
        except ParameterError as exc:
            raise UsageError(f"corpus entry {name!r} failed validation: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"corpus entry {name!r}: {exc}") from exc
        out.append((name, d))
    return out


def cmd_verify_lemmas(cfg: RunConfig, args: argparse.Namespace) -> int:
    corpus = _corpus_from_file(cfg.params) if cfg.params else default_corpus()
    tags = args.lemma or sorted(LEMMAS)
    for t in tags:
        if t not in LEMMAS:
            raise UsageError(f"unknown lemma {t!r}")
    results = []
    all_ok = True
    root = SeedStream(cfg.seed, "verify-lemmas")
    for name, d in corpus:
        for tag in tags:
            joint = isinstance(d, JointDistribution)
            if tag in ("short-conditioning", "flattening-conditional") and not (joint and d.arity == 2):
                continue
            if (tag.startswith("block-") or tag == "subadditivity") and not joint:
                continue
            try:
                rep = verify_lemma(tag, d, budget=cfg.budget, rng=root.spawn(f"{name}/{tag}"))
            except RegimeError as exc:
                results.append({"distribution": name, "lemma": tag, "skipped": str(exc)})
                continue
            row = {"distribution": name, **rep.to_json()}
            results.append(row)
            all_ok = all_ok and rep.passed
    _emit(cfg, {"mode": "sampled" if cfg.budget else "exact", "results": results, "pass": all_ok})
    return EXIT_OK if all_ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# attack


def _attack_resampler_identity(rng: SeedStream, budget: int | None) -> tuple[AttackReport, float]:
    f = builtin_function("identity", 4)
    a = brute_force_resampler(owf_generator(f))
    targets = list(range(1 << f.n))
    trials = budget or len(targets)
    return owf_success_probability(f, a, trials, rng, retry_limit=64, targets=targets), 1.0


def _attack_binding(cheater: str) -> Callable[[SeedStream, int | None], tuple[AttackReport, float | None]]:
    def run(rng: SeedStream, budget: int | None) -> tuple[AttackReport, float | None]:
        p = preset("support2-m2")
        cls = {"exhaustive": ExhaustiveCheater, "lazy": LazyCheater}[cheater]
        return binding_attack_harness(lambda c: cls(p, c), p, budget or 1000, rng), None

    return run


ATTACKS: dict[str, Callable[[SeedStream, int | None], tuple[AttackReport, float | None]]] = {
    "resampler-vs-identity-n4": _attack_resampler_identity,
    "exhaustive-vs-support2": _attack_binding("exhaustive"),
    "lazy-vs-support2": _attack_binding("lazy"),
}


def _attack_owf(cfg: RunConfig, args: argparse.Namespace) -> int:
    try:
        f = resolve_function(args.owf)
    except OSError as exc:
        raise UsageError(f"cannot read {args.owf}: {exc}") from exc
    if args.adversary not in ADVERSARIES:
        raise UsageError(f"unknown adversary {args.adversary!r}; known: {', '.join(ADVERSARIES)}")
    a = ADVERSARIES[args.adversary](owf_generator(f))
    trials = args.trials or cfg.budget or (1 << f.n)
    rng = SeedStream(cfg.seed, f"attack/owf/{f.name}/{args.adversary}")
    rep = owf_success_probability(f, a, trials, rng, retry_limit=args.retries)
    report = {"owf": f.name, "adversary": args.adversary, "retry_limit": args.retries, **rep.to_json()}
    expected = float(exact_inversion_probability(a, args.retries))
    lo, hi = rep.ci
    report["exact_success_probability"] = expected
    report["pass"] = lo <= expected <= hi
    _emit(cfg, report)
    return EXIT_OK if report["pass"] else EXIT_FAIL


def cmd_attack(cfg: RunConfig, args: argparse.Namespace) -> int:
    if args.owf is not None:
        if args.preset is not None:
            raise UsageError("--owf and --preset are exclusive")
        return _attack_owf(cfg, args)
    name = args.preset
    if name is None and cfg.params:
        obj = _load_json(cfg.params)
        name = obj.get("preset") if isinstance(obj, dict) else None
    if name not in ATTACKS:
        raise UsageError(f"unknown attack preset {name!r}; known: {', '.join(ATTACKS)}")
    rep, expected = ATTACKS[name](SeedStream(cfg.seed, f"attack/{name}"), cfg.budget)
    report = {"preset": name, **rep.to_json()}
    ok = True
    if expected is not None:
        ok = rep.success_rate == expected
        report["expected_success_rate"] = expected
    report["pass"] = ok
    _emit(cfg, report)
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# commit / receive / verify


def _parse_hostport(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise UsageError(f"expected host:port, got {text!r}")
    return host, int(port)


def _write_artifacts(args: argparse.Namespace, params: ProtocolParams, c: Commitment, o: Opening) -> dict:
    written = {}
    if args.commitment_out:
        Path(args.commitment_out).write_bytes(c.to_bytes())
        written["commitment"] = args.commitment_out
    if args.opening_out:
        Path(args.opening_out).write_text(json.dumps({**o.to_json(), "params": params.to_json()}, sort_keys=True, indent=2) + "\n")
        written["opening"] = args.opening_out
    if args.transcript_out:
        Path(args.transcript_out).write_text(json.dumps(c.to_json(), indent=2) + "\n")
        written["transcript"] = args.transcript_out
    return written


def cmd_commit(cfg: RunConfig, args: argparse.Namespace) -> int:
    params = _protocol_params(cfg.params)
    if args.bit not in (0, 1):
        raise UsageError("--bit must be 0 or 1")
    root = SeedStream(cfg.seed, "commit")
    sender = CommitSender(params, args.bit, root.spawn("sender"))
    transport = args.transport
    if transport == "inproc":
        c = run_commit(sender, CommitReceiver(params, root.spawn("receiver")))
    elif transport.startswith("tcp:"):
        host, port = _parse_hostport(transport[4:])
        with socket.create_connection((host, port), timeout=30) as sock:
            c = remote_commit(sock, sender)
    else:
        raise UsageError(f"unknown transport {transport!r}")
    o = sender.opening()
    accepted = reveal_verify(c, o, params)
    report = {
        "params": params.name,
        "bit": args.bit,
        "accepted": accepted,
        "transport": transport.split(":", 1)[0],
        "frames": len(c.frames),
        "commitment_sha256": hashlib.sha256(c.to_bytes()).hexdigest(),
        "files": _write_artifacts(args, params, c, o),
        "pass": accepted == args.bit,
    }
    _emit(cfg, report)
    return EXIT_OK if accepted == args.bit else EXIT_FAIL


def cmd_receive(cfg: RunConfig, args: argparse.Namespace) -> int:
    params = _protocol_params(cfg.params)
    host, port = _parse_hostport(args.listen)
    with socket.create_server((host, port)) as srv:
        if args.ready_file:
            Path(args.ready_file).write_text(str(srv.getsockname()[1]))
        conn, _ = srv.accept()
        with conn:
            c = serve_receiver(conn, params, SeedStream(cfg.seed, "commit").spawn("receiver"))
    if args.commitment_out:
        Path(args.commitment_out).write_bytes(c.to_bytes())
    _emit(cfg, {"params": params.name, "frames": len(c.frames), "commitment": args.commitment_out})
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args: argparse.Namespace) -> int:
    p = Path(args.commitment)
    if not p.is_file():
        raise UsageError(f"no such file: {args.commitment}")
    obj = _load_json(args.opening)
    if not isinstance(obj, dict):
        raise UsageError("opening file must hold an object")
    if cfg.params:
        params = _protocol_params(cfg.params)
    elif "params" in obj:
        params = ProtocolParams.from_json(obj["params"])
    else:
        raise UsageError("no parameters: pass --params or embed them in the opening")
    try:
        c = Commitment.from_bytes(p.read_bytes())
        bit = reveal_verify(c, Opening.from_json(obj), params)
    except (ProtocolError, ParameterError):
        bit = None
    _emit(cfg, {"accepted": bit is not None, "bit": bit})
    return EXIT_OK if bit is not None else EXIT_FAIL


# ---------------------------------------------------------------------------
# audit-hash


def _audit_families(s: int) -> list[HashFamilySpec]:
    fams = []
    for r in range(1, s + 1):
        fams.append(HashFamilySpec("boolean-matrix", s, r))
        fams.append(HashFamilySpec("field-multiply-truncate", s, r))
        fams.append(HashFamilySpec("poly-ell-wise", s, r, ell=2))
    fams.append(HashFamilySpec("inner-product-bit", s, 1))
    return fams


def cmd_audit_hash(cfg: RunConfig, args: argparse.Namespace) -> int:
    obj = _load_json(cfg.params) if cfg.params else {}
    s = int(args.s if args.s is not None else obj.get("s", 3))
    ell = int(obj.get("ell", 3))
    if not 1 <= s <= 4:
        raise UsageError("exhaustive audit covers 1 <= s <= 4")
    checks = []
    ok_all = True
    for fam in _audit_families(s):
        worst = max(exact_collision_probability(fam, a, b) for a, b in combinations(range(1 << s), 2))
        bound = Fraction(1, 1 << fam.range_bits)
        ok = worst <= bound
        ok_all = ok_all and ok
        checks.append({"family": fam.to_json(), "check": "collision", "max_collision": f"{worst.numerator}/{worst.denominator}", "bound": f"1/{bound.denominator}", "pass": ok})
    if s <= 3:
        fam = HashFamilySpec("poly-ell-wise", s, s, ell=ell)
        ok = all(is_jointly_uniform(fam, xs) for xs in combinations(range(1 << s), ell))
        ok_all = ok_all and ok
        checks.append({"family": fam.to_json(), "check": f"{ell}-wise joint uniformity", "pass": ok})
    _emit(cfg, {"s": s, "checks": checks, "pass": ok_all})
    return EXIT_OK if ok_all else EXIT_FAIL


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--params", help="parameter file (JSON); protocol commands also accept preset:<name>")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--budget", type=int, default=None, help="sampling budget (omit for exact mode)")
    common.add_argument("--out", help="report path (default: stdout)")
    common.add_argument("--format", dest="fmt", choices=("json", "table"), default="json")

    parser = argparse.ArgumentParser(prog="entropy-forge", description="Entropy accounting, inversion and commitment experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("measure", parents=[common], help="measure real or accessible entropy of a generator")
    p.add_argument("--kind", choices=MEASURE_KINDS)
    p.add_argument("--gen", dest="params", help="alias for --params")

    p = sub.add_parser("verify-lemmas", parents=[common], help="check entropy lemmas on a distribution corpus")
    p.add_argument("--lemma", action="append", help="restrict to a lemma tag (repeatable)")

    p = sub.add_parser("attack", parents=[common], help="run an attack preset")
    p.add_argument("--preset", choices=sorted(ATTACKS))
    p.add_argument("--owf", help="builtin:name[:n] or a function table JSON; runs the entropy-based inverter against it")
    p.add_argument("--adversary", default="resampler", help="online generator driving the inverter: " + ", ".join(ADVERSARIES))
    p.add_argument("--retries", type=int, default=64, help="rewind limit per block")
    p.add_argument("--trials", type=int, help="number of random targets (default: --budget, else 2^n)")

    for name in ("commit", "receive"):
        p = sub.add_parser(name, parents=[common], help="commit to a bit" if name == "commit" else "serve one receiver session over TCP")
        if name == "commit":
            p.add_argument("--bit", type=int, required=True)
            p.add_argument("--transport", default="inproc", help="inproc or tcp:host:port")
            p.add_argument("--opening-out")
            p.add_argument("--transcript-out")
        else:
            p.add_argument("--listen", required=True, help="host:port (port 0 picks a free port)")
            p.add_argument("--ready-file", help="write the bound port here once listening")
        p.add_argument("--commitment-out")

    p = sub.add_parser("verify", parents=[common], help="check an opening against a commitment")
    p.add_argument("--commitment", required=True)
    p.add_argument("--opening", required=True)

    p = sub.add_parser("audit-hash", parents=[common], help="exact audit of the hash families")
    p.add_argument("--s", type=int)
    return parser


COMMANDS = {
    "measure": cmd_measure,
    "verify-lemmas": cmd_verify_lemmas,
    "attack": cmd_attack,
    "commit": cmd_commit,
    "receive": cmd_receive,
    "verify": cmd_verify,
    "audit-hash": cmd_audit_hash,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    cfg = RunConfig(args.command, args.params, args.seed, args.budget, args.out, args.fmt)
    try:
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"entropy-forge: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParameterError as exc:
        print(f"entropy-forge: invalid parameters: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RegimeError, ConsistencyError, ProtocolError, EntropyForgeError) as exc:
        print(f"entropy-forge: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
