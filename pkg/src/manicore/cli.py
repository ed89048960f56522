"""Command-line driver: ``manicore <subcommand> CONFIG [flags]``.

Subcommands write their outputs to ``$MANICORE_OUT`` (default
``./manicore_out``), one file per artifact, each starting with a header
line that echoes the artifact version and the SHA-256 of the config file.
A ``manifest.json`` lists the files of the run.  Exit status: 0 ok,
2 config error, 3 infeasible constants, 4 numerical failure (including no
convergence), 5 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .aposteriori import certify
from .constants import ledger_for_problem
from .errors import ManicoreError, VerificationFailed
from .funcspace import TaylorRep
from .linmodel import ProblemInstance, load_problem
from .taylor import taylor_pipeline
from .theta import solve_derivative_fixed_point, solve_fixed_point
from .verify import derivative_agreement, run_suite

EXIT_CODES = {"config": 2, "infeasible": 3, "numerical": 4, "verification": 5}


class Run:
    """Output bookkeeping for one invocation."""

    def __init__(self, problem: ProblemInstance, command: str, flags: dict, out_dir: Path):
        self.problem = problem
        self.command = command
        self.flags = flags
        self.out_dir = out_dir
        self.files: list[str] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    @property
    def header(self) -> str:
        return f"# manicore {__version__} config-sha256 {self.problem.source_hash}\n"

    def write(self, name: str, body: str) -> Path:
        path = self.out_dir / name
        path.write_text(self.header + body)
        self.files.append(name)
        return path

    def write_json(self, name: str, data: dict) -> Path:
        """JSON outputs carry the header as an ``_artifact`` entry."""
        payload = {"_artifact": {"version": __version__, "config_sha256": self.problem.source_hash}, **data}
        path = self.out_dir / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        self.files.append(name)
        return path

    def manifest(self, status: int) -> None:
        data = {
            "artifact_version": __version__,
            "config_sha256": self.problem.source_hash,
            "problem": self.problem.name,
            "command": self.command,
            "flags": self.flags,
            "files": self.files,
            "exit_status": status,
        }
        (self.out_dir / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _echo(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------
def cmd_ledger(run: Run, args) -> int:
    ledger = ledger_for_problem(run.problem)
    text = ledger.to_text()
    verdict = f"feasible = {'true' if ledger.feasible else 'false'}\n"
    run.write("ledger.txt", text + verdict)
    run.write_json("ledger.json", json.loads(ledger.to_json()))
    _echo(text + verdict)
    return 0


def cmd_taylor(run: Run, args) -> int:
    res = taylor_pipeline(run.problem, args.degree)
    run.write_json("taylor_coefficients.json", res.coefficient_tables())
    run.write("defect.txt", res.defect_table())
    _echo(json.dumps(res.coefficient_tables(), indent=2, sort_keys=True))
    _echo(res.defect_table())
    return 0


def _triple_columns(triple) -> str:
    grid = triple.grid
    cols = [grid.nodes] + [f.grid.flat_values for f in triple.components]
    names = [f"x{j}" for j in range(grid.dim)]
    for f in triple.components:
        names += [f"{f.label}{c}" for c in range(f.codomain_dim)]
    data = np.hstack(cols)
    rows = "\n".join(" ".join(f"{v:.17g}" for v in row) for row in data)
    return "# " + " ".join(names) + "\n" + rows + "\n"


def _solve(run: Run, args):
    return solve_fixed_point(run.problem, tol=args.tol, max_iter=args.max_iter)


def cmd_solve(run: Run, args) -> int:
    res = _solve(run, args)
    head = f"# sweeps {res.sweeps} max_ratio {res.max_ratio:.6f} theta0 {res.ledger.theta0:.6f} scale {res.scale:.6g}\n"
    run.write("trace.txt", head + res.trace_table())
    run.write("triple.txt", _triple_columns(res.triple))
    tables = {}
    for f in res.triple.components:
        block = {}
        for alpha, vec in f.taylor.to_dict(tol=1e-14).items():
            for c, v in enumerate(vec):
                if v != 0.0:
                    block.setdefault(str(c), {})[",".join(map(str, alpha))] = float(v)
        tables[f.label] = block
    run.write_json("solve_coefficients.json", tables)
    _echo(head + res.trace_table())
    if args.bootstrap:
        lines = ["# order sweeps gap_to_fd stencil_estimate (smooth region)"]
        lower = {}
        for m in range(1, args.bootstrap + 1):
            dres = solve_derivative_fixed_point(res.triple, run.problem, m, lower=lower or None)
            gap, est = derivative_agreement(run.problem, res.triple, dres.triple)
            lines.append(f"{m} {dres.sweeps} {gap:.6e} {est:.6e}")
            lower[m] = dres.triple
        body = "\n".join(lines) + "\n"
        run.write("bootstrap.txt", body)
        _echo(body)
    return 0


def _pair_from_file(problem: ProblemInstance, path: str):
    data = json.loads(Path(path).read_text())
    data.pop("_artifact", None)
    dc, du, ds = problem.dim_c, problem.dim_u, problem.dim_s

    def table(block: dict, p: int) -> TaylorRep:
        out: dict[tuple[int, ...], np.ndarray] = {}
        for comp, entries in (block or {}).items():
            for key, val in entries.items():
                alpha = tuple(int(t) for t in key.split(","))
                out.setdefault(alpha, np.zeros(p))[int(comp)] = float(val)
        cap = max([sum(a) for a in out] + [2])
        return TaylorRep.from_dict(out, dc, p, cap=cap)

    r0 = table(data.get("r"), dc)
    ku, ks = table(data.get("k_u"), du), table(data.get("k_s"), ds)
    cap = max(ku.degree_cap, ks.degree_cap)
    return ku.with_cap(cap).stack(ks.with_cap(cap)), r0


def cmd_certify(run: Run, args) -> int:
    problem = run.problem
    if args.pair:
        k0, r0 = _pair_from_file(problem, args.pair)
    else:
        tp = taylor_pipeline(problem, args.degree)
        dc = problem.dim_c
        k0, r0 = tp.table.component(slice(dc, None)), tp.table.component(slice(0, dc))
    reference = _solve(run, args).triple
    rep = certify(problem, k0, r0, args.order, args.M, reference=reference)
    run.write("certify.txt", rep.to_text())
    run.write_json("certify.json", rep.as_dict())
    _echo(rep.to_text())
    if not rep.passed:
        raise VerificationFailed("measured distance exceeds the certified bound")
    return 0


def cmd_verify(run: Run, args) -> int:
    res = _solve(run, args)
    suite = run_suite(run.problem, res.triple, tol=args.tol, seed=args.seed)
    run.write("verify.txt", suite.table())
    _echo(suite.table())
    suite.raise_on_failure()
    return 0


def cmd_sample(run: Run, args) -> int:
    res = _solve(run, args)
    dc = run.problem.dim_c
    rng = np.random.default_rng(args.seed)
    radius = args.radius if args.radius is not None else 0.5 * run.problem.cutoff.inner_radius
    v = rng.normal(size=(args.count, dc))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    x = v * radius * rng.uniform(size=(args.count, 1)) ** (1.0 / dc)
    K, R = res.triple.K(x), res.triple.R(x)
    names = [f"x{j}" for j in range(dc)] + [f"K{j}" for j in range(K.shape[1])] + [f"R{j}" for j in range(dc)]
    rows = "\n".join(" ".join(f"{val:.17g}" for val in row) for row in np.hstack([x, K, R]))
    run.write("samples.txt", "# " + " ".join(names) + "\n" + rows + "\n")
    _echo(f"wrote {args.count} samples")
    return 0


COMMANDS = {
    "ledger": cmd_ledger,
    "taylor": cmd_taylor,
    "solve": cmd_solve,
    "certify": cmd_certify,
    "verify": cmd_verify,
    "sample": cmd_sample,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manicore", description="Center manifolds by the parameterization method.")
    parser.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
    parser.add_argument("--seed", type=int, default=0, help="seed for random sampling (default 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="problem file (JSON)")
        return p

    add("ledger", "print the constants ledger with feasibility verdicts")
    p = add("taylor", "solve the Taylor expansion order by order")
    p.add_argument("--degree", type=int, default=4)
    solver_cmds = []
    p = add("solve", "iterate the fixed-point operator")
    solver_cmds.append(p)
    p.add_argument("--bootstrap", type=int, default=0, metavar="m", help="also iterate the derivative operators through order m")
    p = add("certify", "a-posteriori bound for an approximate pair")
    solver_cmds.append(p)
    p.add_argument("--order", type=int, default=0, help="derivative order m of the bound")
    p.add_argument("--M", type=float, default=None, help="bound on the C^{m+1} norm of the pair (default: sampled)")
    p.add_argument("--degree", type=int, default=4, help="Taylor degree of the computed pair")
    p.add_argument("--pair", default=None, help="JSON coefficient tables {r, k_u, k_s} instead of the Taylor pair")
    solver_cmds.append(add("verify", "solve and run the oracle suite"))
    p = add("sample", "export points (x, K(x), R(x))")
    solver_cmds.append(p)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--radius", type=float, default=None)
    for p in solver_cmds:
        p.add_argument("--tol", type=float, default=1e-11)
        p.add_argument("--max-iter", type=int, default=500)
    return parser


def _limit_threads(n: int | None):
    if n is None:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "config")}
    out_dir = Path(os.environ.get("MANICORE_OUT", "manicore_out"))
    limiter = _limit_threads(args.threads)
    run = None
    try:
        problem = load_problem(args.config)
        run = Run(problem, args.command, flags, out_dir)
        status = COMMANDS[args.command](run, args)
    except ManicoreError as exc:
        sys.stderr.write(f"error [{exc.family}]: {exc}\n")
        status = EXIT_CODES.get(exc.family, 1)
    finally:
        if limiter is not None:
            limiter.unregister()
    if run is not None:
        run.manifest(status)
    return status


if __name__ == "__main__":
    raise SystemExit(main())
