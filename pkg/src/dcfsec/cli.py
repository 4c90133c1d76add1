"""``dcfsec`` command line.

Each subcommand builds a request payload, sends it to the handlers (in-process
by default, or to a running service with ``--server``) and writes the JSON or
CSV outputs.  Exit codes: 0 ok/secure, 1 usage/IO/validation error,
2 vulnerabilities found, 3 allocation infeasible.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

EXIT_OK, EXIT_ERROR, EXIT_VULNERABLE, EXIT_INFEASIBLE = 0, 1, 2, 3

log = logging.getLogger("dcfsec")


class CliError(Exception):
    pass


# -- inputs ----------------------------------------------------------------

def read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if 0 < exc.lineno <= len(text.splitlines()) else ""
        raise CliError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line}") from None


def scenario_arg(value: str) -> dict:
    """A scenario file, or ``paper`` / ``paper:SEED`` for the built-in network."""
    if value == "paper" or value.startswith("paper:"):
        seed = value.partition(":")[2] or "0"
        try:
            return {"builtin": "paper", "seed": int(seed)}
        except ValueError:
            raise CliError(f"bad built-in scenario seed {seed!r}") from None
    return read_json(value)


def parse_edges(text: str) -> list[list[int]]:
    """``"14,2;2,10"`` -> ``[[14, 2], [2, 10]]``."""
    out = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        try:
            i, j = (int(v) for v in part.split(","))
        except ValueError:
            raise CliError(f"bad channel {part!r}; expected RECEIVER,SENDER") from None
        out.append([i, j])
    return out


def tolerance_overrides(args) -> dict:
    keys = ("rank_tol_factor", "fixpoint_tol", "fixpoint_max_iters", "subspace_tol")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


# -- transport ---------------------------------------------------------------

def call(args, endpoint: str, payload: dict) -> dict:
    if args.server:
        import httpx

        url = args.server.rstrip("/") + endpoint
        try:
            resp = httpx.post(url, json=payload, timeout=None)
        except httpx.HTTPError as exc:
            raise CliError(f"request to {url} failed: {exc}") from None
        body = resp.json() if resp.headers.get("content-type", "").startswith("application/json") else {}
        if resp.status_code >= 400:
            raise CliError(f"server error {resp.status_code}: {body.get('detail', resp.text)}")
        return body
    return _local(endpoint, payload)


def _local(endpoint: str, p: dict) -> dict:
    from .service import handlers as h

    tol = p.get("tolerances") or None
    if endpoint == "/analyze":
        return h.handle_analyze(p["scenario"], p.get("attack_sets"), tol, p.get("steady_state", True),
                                p.get("theorem2_cap", 600))
    if endpoint == "/allocate":
        return h.handle_allocate(p["scenario"], p.get("exact_limit", 15), p.get("interrupt", True), tol)
    if endpoint == "/design-codes":
        kw = {k: p[k] for k in ("channels", "seed", "dwell", "mode", "policy", "perturbation", "steps") if k in p}
        return h.handle_design_codes(p["scenario"], tolerances=tol, **kw)
    if endpoint == "/simulate":
        return h.handle_simulate(p["scenario"], p.get("experiment", {}), p.get("runs"), p.get("seed"),
                                 p.get("horizon"), p.get("threads"))
    if endpoint.startswith("/reproduce/"):
        kw = {k: p[k] for k in ("runs", "seed", "horizon", "scenario_seed", "coding_seed", "threads") if k in p}
        return h.handle_reproduce(int(endpoint.rsplit("/", 1)[1]), **kw)
    if endpoint == "/thresholds":
        return h.handle_thresholds(p["dfs"], p.get("confidences", [0.95]), p.get("window", 1))
    if endpoint == "/validate":
        return h.handle_validate(p["scenario"], tol)
    raise CliError(f"unknown endpoint {endpoint}")


# -- outputs -----------------------------------------------------------------

def emit_json(obj, path: str | None):
    text = json.dumps(obj, indent=2, sort_keys=False)
    if path:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        log.info("wrote %s", path)
    else:
        sys.stdout.write(text + "\n")


def write_bundle(outdir: str, stem: str, payload: dict, provenance: dict) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for key, suffix in (("alarms_csv", "alarms.csv"), ("error_csv", "error.csv")):
        if key in payload:
            p = os.path.join(outdir, f"{stem}_{suffix}")
            with open(p, "w", encoding="utf-8", newline="") as fh:
                fh.write(payload[key])
            paths.append(p)
    p = os.path.join(outdir, f"{stem}_summary.json")
    body = {k: v for k, v in payload.items() if not k.endswith("_csv")}
    body["provenance"] = provenance
    with open(p, "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2)
        fh.write("\n")
    paths.append(p)
    return paths


# -- subcommands -------------------------------------------------------------

def cmd_analyze(args) -> int:
    payload = {"scenario": scenario_arg(args.scenario), "tolerances": tolerance_overrides(args),
               "attack_sets": [parse_edges(s) for s in args.attack_set or []],
               "steady_state": not args.no_steady_state}
    out = call(args, "/analyze", payload)
    emit_json(out, args.output)
    log.warning("vulnerable nodes: %s", out["vulnerable_nodes"] or "none")
    return EXIT_VULNERABLE if out["status"] == "vulnerable" else EXIT_OK


def cmd_allocate(args) -> int:
    payload = {"scenario": scenario_arg(args.scenario), "tolerances": tolerance_overrides(args),
               "exact_limit": args.exact_limit, "interrupt": not args.no_interrupt}
    out = call(args, "/allocate", payload)
    emit_json(out, args.output)
    chans = ", ".join(f"({i},{j})" for i, j in out["channels"]) or "none"
    log.warning("encoded channels: %s (count %d)", chans, out["count"])
    if out["status"] == "infeasible":
        log.error("%s", out.get("message", "allocation infeasible"))
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_design_codes(args) -> int:
    payload = {"scenario": scenario_arg(args.scenario), "tolerances": tolerance_overrides(args),
               "seed": args.seed, "dwell": args.dwell, "mode": args.mode, "policy": args.policy,
               "perturbation": args.perturbation, "steps": args.steps}
    if args.channels:
        payload["channels"] = parse_edges(args.channels)
    elif args.allocation:
        payload["channels"] = read_json(args.allocation)["channels"]
    out = call(args, "/design-codes", payload)
    emit_json(out, args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    payload = {"scenario": scenario_arg(args.scenario), "experiment": read_json(args.experiment),
               "runs": args.runs, "seed": args.seed, "horizon": args.horizon, "threads": args.threads}
    out = call(args, "/simulate", payload)
    stem = out["experiment"].get("label") or "simulate"
    paths = write_bundle(args.out_dir, stem, out, {"inputs": out["inputs"], "experiment": out["experiment"]})
    for p in paths:
        log.info("wrote %s", p)
    log.warning("first 99%% alarm (steps after onset): %s", out["first_alarm"])
    return EXIT_OK


def cmd_reproduce(args) -> int:
    payload = {"runs": args.runs or 1000, "seed": args.seed or 0, "horizon": args.horizon or 400,
               "scenario_seed": args.scenario_seed, "coding_seed": args.coding_seed, "threads": args.threads}
    out = call(args, f"/reproduce/{args.figure}", payload)
    for name, exp in out["experiments"].items():
        prov = {"inputs": out["inputs"], "figure": args.figure, "experiment": exp["summary"]["spec"]}
        for p in write_bundle(args.out_dir, f"fig{args.figure}_{name}", exp, prov):
            log.info("wrote %s", p)
        log.warning("fig %s %s: first 99%% alarm %s", args.figure, name, exp["first_alarm"])
    return EXIT_OK


def cmd_thresholds(args) -> int:
    out = call(args, "/thresholds", {"dfs": args.df, "confidences": args.confidence, "window": args.window})
    if args.json:
        emit_json(out, args.output)
    else:
        lines = ["df\twindow\tconfidence\tthreshold"]
        lines += [f"{r['df']}\t{r['window']}\t{r['confidence']}\t{r['threshold']:.4f}" for r in out["thresholds"]]
        sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_validate(args) -> int:
    out = call(args, "/validate", {"scenario": scenario_arg(args.scenario), "tolerances": tolerance_overrides(args)})
    emit_json(out, args.output)
    for c in out["checks"]:
        level = logging.INFO if c["ok"] else logging.ERROR
        log.log(level, "%s %s (%s): %s", "PASS" if c["ok"] else "FAIL", c["check"], c["assumption"], c["detail"])
    return EXIT_OK if out["ok"] else EXIT_ERROR


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("dcfsec.service.app:app", host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def cmd_scenario(args) -> int:
    from .netmodel import build_paper_scenario, build_random_scenario

    if args.random is not None:
        sc = build_random_scenario(args.random, N=args.nodes)
    else:
        sc = build_paper_scenario(args.paper)
    emit_json(sc.to_dict() | {"digest": sc.digest()}, args.output)
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _env_threads() -> int | None:
    v = os.environ.get("DCFSEC_THREADS")
    return int(v) if v else None


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; exit code 2 is reserved for findings."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dcfsec", description=__doc__.splitlines()[0])
    p.add_argument("--server", metavar="URL", help="send requests to a running service instead of computing locally")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    tol = argparse.ArgumentParser(add_help=False)
    g = tol.add_argument_group("tolerances")
    g.add_argument("--rank-tol-factor", type=float, help="multiplier on the SVD rank cutoff (default 1.0)")
    g.add_argument("--fixpoint-tol", type=float, help="relative stopping tolerance of the covariance iteration (default 1e-10)")
    g.add_argument("--fixpoint-max-iters", type=int, help="iteration cap of the covariance iteration (default 100000)")
    g.add_argument("--subspace-tol", type=float, help="cutoff on principal-angle sines (default 1e-9)")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--runs", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--horizon", type=int)
    run.add_argument("--threads", type=int, default=_env_threads(),
                     help="worker threads (default: $DCFSEC_THREADS or 1)")
    run.add_argument("-o", "--out-dir", default="dcfsec-out")

    s = sub.add_parser("analyze", parents=[tol], help="vulnerability report")
    s.add_argument("scenario", help="scenario.json, or paper[:SEED]")
    s.add_argument("--attack-set", action="append", metavar="I,J;I,J", help="attacked channel set (repeatable)")
    s.add_argument("--no-steady-state", action="store_true", help="skip the covariance fixpoint")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("allocate", parents=[tol], help="minimal encoded-channel allocation")
    s.add_argument("scenario")
    s.add_argument("--exact-limit", type=int, default=15, help="largest candidate count searched exhaustively")
    s.add_argument("--no-interrupt", action="store_true", help="continue past infeasible nodes")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_allocate)

    s = sub.add_parser("design-codes", parents=[tol], help="coding schedule for encoded channels")
    s.add_argument("scenario")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--channels", metavar="I,J;I,J")
    src.add_argument("--allocation", metavar="allocation.json")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dwell", type=int, default=1)
    s.add_argument("--mode", choices=("theorem4", "lemma4"), default="theorem4")
    s.add_argument("--policy", choices=("perturbed", "iid"), default="perturbed")
    s.add_argument("--perturbation", type=float, default=0.1)
    s.add_argument("--steps", type=int, default=0, help="also list the matrices of the first STEPS steps")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_design_codes)

    s = sub.add_parser("simulate", parents=[run], help="Monte Carlo experiment")
    s.add_argument("scenario")
    s.add_argument("experiment", help="experiment.json")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reproduce", parents=[run], help="figure data (CSV + JSON)")
    s.add_argument("figure", type=int, choices=(3, 4, 5, 6))
    s.add_argument("--scenario-seed", type=int, default=0)
    s.add_argument("--coding-seed", type=int, default=7)
    s.set_defaults(func=cmd_reproduce)

    s = sub.add_parser("thresholds", help="chi-square alarm thresholds")
    s.add_argument("--df", type=int, nargs="+", required=True)
    s.add_argument("--confidence", type=float, nargs="+", default=[0.95])
    s.add_argument("--window", type=int, default=1)
    s.add_argument("--json", action="store_true")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_thresholds)

    s = sub.add_parser("validate", parents=[tol], help="check modelling assumptions")
    s.add_argument("scenario")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("scenario", help="write a built-in scenario as JSON")
    s.add_argument("--paper", type=int, default=0, metavar="SEED")
    s.add_argument("--random", type=int, metavar="SEED")
    s.add_argument("--nodes", type=int, default=6)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_scenario)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.ERROR if args.quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        log.error("error: %s", exc)
        return EXIT_ERROR
    except (ValueError, KeyError, TypeError, ArithmeticError, RuntimeError, OSError) as exc:
        log.error("error: %s: %s", type(exc).__name__, exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
