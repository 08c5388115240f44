"""Command-line surface: ``unipolar <command>``.

Every command accepts ``--config FILE`` (JSON); explicit flags override the
config fields. Stochastic commands require ``--seed``. CSV output carries a
``config_hash`` column identifying the resolved configuration.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from unipolar import codec as cd
from unipolar import contraction as ct
from unipolar import faststage as fs
from unipolar import hmm
from unipolar import process as pr
from unipolar import slowstage as ss
from unipolar.errors import DomainError, SizeLimitError, UnipolarError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_INDETERMINATE, EXIT_SIZE = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# Config plumbing


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def load_model(ref) -> pr.FaimModel:
    """Resolve a builtin model name or a JSON path (or an already parsed dict).

    Builtins: ``bsc:p``, ``gilbert_elliott[:p,q,gamma,beta]``,
    ``kaijser[:state_symbol|observation_symbol]`` and ``iid``.
    """
    if isinstance(ref, dict):
        return pr.FaimModel.from_json(ref)
    ref = str(ref)
    name, _, arg = ref.partition(":")
    try:
        if name == "bsc":
            return pr.bsc(float(arg or 0.11))
        if name == "gilbert_elliott":
            p = _floats(arg) if arg else [0.1, 0.1, 0.01, 0.3]
            if len(p) != 4:
                raise ValidationError("gilbert_elliott takes p,q,gamma,beta")
            return pr.gilbert_elliott(*p)
        if name == "kaijser":
            return pr.kaijser_faim(arg or "state_symbol")
        if name == "iid":
            return pr.bsc(float(arg or 0.11))
    except ValueError as exc:
        if isinstance(exc, UnipolarError):
            raise
        raise ValidationError(f"bad model argument in {ref!r}: {exc}") from None
    path = Path(ref)
    if not path.exists():
        raise ValidationError(f"unknown model {ref!r}")
    return pr.FaimModel.from_json(_read_json(path))


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def resolve(config_path, **flags) -> dict:
    """Config file values overridden by flags that were given."""
    cfg = dict(_read_json(config_path)) if config_path else {}
    for k, v in flags.items():
        if v is not None and v != ():
            cfg[k] = v
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _need(cfg: dict, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ValidationError("missing required option(s): " + ", ".join(missing))
    return [cfg[k] for k in keys]


def _plan(cfg: dict) -> ss.BstPlan:
    L0, M0, n = _need(cfg, "L0", "M0", "n")
    return ss.make_plan(L0, M0, n)


def _spec(cfg: dict) -> cd.CodeSpec:
    (path,) = _need(cfg, "spec")
    return cd.CodeSpec.from_json(_read_json(path))


class _CsvOut:
    """Rows are buffered and written once so output is byte-identical per config."""

    def __init__(self, header: list[str], h: str):
        self.header = ["config_hash"] + header
        self.h = h
        self.rows = []

    def add(self, *row):
        self.rows.append([self.h] + [_fmt(v) for v in row])

    def write(self, out):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        if out:
            Path(out).write_text(buf.getvalue())
        else:
            click.echo(buf.getvalue(), nl=False)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _bits(text: str) -> np.ndarray:
    text = "".join(text.split())
    if text.strip("01"):
        raise ValidationError("bit strings may contain only 0 and 1")
    return np.frombuffer(text.encode(), dtype=np.uint8) - ord("0")


def _bitstr(a) -> str:
    return "".join(str(int(b)) for b in np.asarray(a).reshape(-1))


def _read_bits(value: str) -> np.ndarray:
    if value == "-":
        return _bits(sys.stdin.read())
    p = Path(value)
    return _bits(p.read_text() if p.exists() else value)


# ---------------------------------------------------------------------------
# Root group


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except UnipolarError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(exc.exit_code)


config_opt = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON config file.")


@click.group(cls=_Group)
@click.version_option(package_name="artifact")
def cli():
    """Universal polar codes for binary processes with memory."""


# ---------------------------------------------------------------------------
# forget


@cli.command()
@config_opt
@click.option("--model", help="Builtin model name or JSON path.")
@click.option("--eps", "eps_list", help="Comma-separated epsilons for the recollection table.")
@click.option("--mi-k", type=int, help="Largest k of the exact mutual-information curve (0 disables).")
@click.option("--budget", type=int, help="Search budget for Condition K.")
def forget(config_path, model, eps_list, mi_k, budget):
    """Certify forgetfulness and print the recollection table."""
    cfg = resolve(config_path, model=model, eps=eps_list, mi_k=mi_k, budget=budget)
    m = load_model(_need(cfg, "model")[0])
    eps_values = _floats(str(cfg.get("eps", "1e-1,1e-2,1e-3,1e-6,1e-9")))
    rep = pr.forgetfulness_report(m, eps_values[0], int(cfg.get("budget", 100000)))
    sides = {"xy": rep.xy_params, "y": rep.y_params}
    click.echo(f"model: {m.name}  states: {rep.state_count}")
    for side, k in sides.items():
        if k is None:
            click.echo(f"{side}: no witness word")
        else:
            click.echo(f"{side}: n*={k.n_star} delta*={k.delta_star:.6g} tau*={k.tau_star:.6g} word={list(k.witness_word)}")
    if not rep.certified:
        label = "+".join(s.upper() if s == "xy" else "Y" for s in rep.failed_sides)
        click.echo(f"not forgetful ({label}-side)")
        sys.exit(EXIT_INDETERMINATE)
    click.echo("eps,recollection")
    for e in eps_values:
        click.echo(f"{e:g},{pr.forgetfulness_report(m, e, int(cfg.get('budget', 100000))).recollection}")
    kmax = int(cfg.get("mi_k", 6))
    if kmax > 0:
        click.echo("k,exact_state_mi_y")
        hy = m.hmm_y()
        for k in range(1, kmax + 1):
            try:
                v = hmm.exact_state_mi(hy, k, observed_ends=True)
            except SizeLimitError:
                break
            click.echo(f"{k},{v:.6g}")


# ---------------------------------------------------------------------------
# bst


@cli.group()
def bst():
    """Slow-stage plan reports."""


@bst.command("info")
@config_opt
@click.option("--L0", "L0", type=int)
@click.option("--M0", "M0", type=int)
@click.option("--n", type=int)
@click.option("--index", "indices", type=int, multiple=True, help="Medial index to show base vectors for.")
def bst_info(config_path, L0, M0, n, indices):
    """Sizes, index-set counts and base vectors of a plan."""
    cfg = resolve(config_path, L0=L0, M0=M0, n=n, indices=list(indices) or None)
    plan = _plan(cfg)
    click.echo(f"N={plan.N()} N0={plan.N0} L={plan.L()} M={plan.M()} medial_fraction={plan.medial_fraction:.6g}")
    for kind in (ss.LAT_TOP, ss.MED_MINUS, ss.MED_PLUS, ss.LAT_BOT):
        click.echo(f"{kind}: {len(plan.index_set(kind))}")
    for i in cfg.get("indices", []):
        bv = ss.base_vector(plan, int(i))
        click.echo(f"index {i} ({plan.classify(int(i))}): absolute={list(bv.absolute)} modulo={list(bv.modulo)}")


@bst.command("envelope")
@config_opt
@click.option("--H0", "H0", type=float, help="Window entropy; computed from --certify when omitted.")
@click.option("--levels", type=int)
@click.option("--xi", type=float, help="Threshold for the level counts.")
@click.option("--certify", "certify", help="Model whose certified bracket is reported.")
@click.option("--L0", "L0", type=int, help="Window for --certify.")
@click.option("--out", type=click.Path(dir_okay=False))
def bst_envelope(config_path, H0, levels, xi, certify, L0, out):
    """Per-level entropy brackets of the medial sets (CSV)."""
    cfg = resolve(config_path, H0=H0, levels=levels, xi=xi, certify=certify, L0=L0, out=out)
    lo = hi = None
    if cfg.get("certify") is not None:
        m = load_model(cfg["certify"])
        (l0,) = _need(cfg, "L0")
        rep = pr.forgetfulness_for_l0(m, int(l0))
        if not rep.certified:
            click.echo(f"error: not forgetful ({','.join(rep.failed_sides)})", err=True)
            sys.exit(EXIT_INDETERMINATE)
        h0 = cfg.get("H0")
        h0 = pr.window_entropy(m, int(l0)) if h0 is None else float(h0)
        lo, hi = pr.entropy_rate_bracket(m, int(l0), rep, h0)
        cfg["H0"] = h0
        click.echo(f"# certified eps={rep.epsilon:.6g} bracket=[{lo:.6g}, {hi:.6g}]", err=True)
    h0, lv = _need(cfg, "H0", "levels")
    env = ss.envelope(float(h0), int(lv))
    table = _CsvOut(["level", "med_plus_lo", "med_plus_hi", "med_minus_lo", "med_minus_hi", "bracket_lo", "bracket_hi"], config_hash(cfg))
    for k in range(int(lv) + 1):
        p, q = env.med_plus[k], env.med_minus[k]
        table.add(k, p[0], p[1], q[0], q[1], "" if lo is None else lo, "" if hi is None else hi)
    table.write(cfg.get("out"))
    if cfg.get("xi") is not None:
        x = float(cfg["xi"])
        click.echo(f"# nth_refined={ss.nth_refined(float(h0), x)} nth_crude={ss.nth_crude(float(h0), x)}", err=True)


# ---------------------------------------------------------------------------
# design


@cli.command()
@config_opt
@click.option("--model")
@click.option("--target", type=click.Choice(sorted(cd.TARGETS)))
@click.option("--xi", type=float, help="Slow-stage threshold.")
@click.option("--alpha", type=float, help="Minimum medial fraction.")
@click.option("--L0", "L0", type=int, help="Window size; defaults to the certified recollection.")
@click.option("--eps", type=float, help="Forgetfulness epsilon when --L0 is omitted.")
@click.option("--delta-prime", type=float)
@click.option("--eps-a", type=float)
@click.option("--nhat", type=int, help="Fast-stage exponent; defaults to n_a.")
@click.option("--threshold", type=float, help="Bound threshold; defaults to 2^-(2^(nhat beta)).")
@click.option("--beta", type=float)
@click.option("--max-levels", type=int, help="Refuse designs needing more BST levels.")
@click.option("--H0", "H0", type=float, help="Window entropy estimate used when exact enumeration is too large.")
@click.option("--allow-short", is_flag=True, default=None, help="Accept nhat below n_a (no fast-polarization guarantee).")
@click.option("--out", type=click.Path(dir_okay=False))
def design(config_path, model, target, xi, alpha, L0, eps, delta_prime, eps_a, nhat, threshold, beta, max_levels, H0, allow_short, out):
    """Run the design pipeline and write a CodeSpec JSON."""
    cfg = resolve(
        config_path, model=model, target=target, xi=xi, alpha=alpha, L0=L0, eps=eps,
        delta_prime=delta_prime, eps_a=eps_a, nhat=nhat, threshold=threshold, beta=beta,
        max_levels=max_levels, H0=H0, allow_short=allow_short, out=out,
    )
    spec, report = design_pipeline(cfg)
    for k, v in report.items():
        click.echo(f"{k}: {v}")
    text = json.dumps(spec.to_json(), indent=1)
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text)
    else:
        click.echo(text)


def design_pipeline(cfg: dict) -> tuple[cd.CodeSpec, dict]:
    """Forgetfulness, plan sizing, envelope levels, universal constants and frozen sets."""
    m = load_model(_need(cfg, "model")[0])
    target = cfg.get("target", "low")
    xi = float(cfg.get("xi", 1e-3))
    alpha = float(cfg.get("alpha", 0.5))
    dp = float(cfg.get("delta_prime", 0.1))
    ea = float(cfg.get("eps_a", 1e-6))
    beta = float(cfg.get("beta", 0.3))
    if cfg.get("L0") is not None:
        l0 = int(cfg["L0"])
        rep = pr.forgetfulness_for_l0(m, l0)
    else:
        rep = pr.forgetfulness_report(m, float(cfg.get("eps", 1e-3)))
        l0 = rep.recollection
    if not rep.certified:
        raise DomainError(f"model is not forgetful ({','.join(rep.failed_sides)} side)")
    h0 = pr.window_entropy(m, l0) if cfg.get("H0") is None else float(cfg["H0"])
    lo, hi = pr.entropy_rate_bracket(m, l0, rep, h0)
    cap = min(h0, 1 - h0)
    if target == "low" and hi > 0.5:
        raise DomainError(f"low target needs the entropy bracket below 1/2, got [{lo:.4g}, {hi:.4g}]")
    if target == "high" and lo < 0.5:
        raise DomainError(f"high target needs the entropy bracket above 1/2, got [{lo:.4g}, {hi:.4g}]")
    if not xi < cap:
        raise DomainError(f"H0 = {h0:.4g} leaves margin {cap:.4g}, not above xi = {xi:g}")
    M0 = ss.medial_fraction_min_M0(l0, alpha)
    n = ss.nth_refined(h0, xi)
    if cfg.get("max_levels") is not None and n > int(cfg["max_levels"]):
        raise DomainError(f"design needs {n} BST levels, above the limit {cfg['max_levels']}")
    plan = ss.make_plan(l0, M0, n)
    kappa = 2.0 * float(hmm.mixing_sequences(m.chain, 1).psi[0])
    up = fs.universal_params(kappa, dp, ea)
    nh = int(cfg.get("nhat", up.n_a))
    short = nh < up.n_a
    if short and not cfg.get("allow_short"):
        raise DomainError(f"nhat {nh} is below n_a {up.n_a}")
    thr = cfg.get("threshold")
    thr = 2.0 ** -(2.0 ** (nh * beta)) if thr is None else float(thr)
    z0 = xi if target == "low" else 1 - xi
    sets = fs.select_frozen(fs.z_evolution(min(z0, up.eta), kappa, nh), thr)
    spec = cd.uniform_spec(plan, nh, sets.unfrozen, target)
    meta = {"H0": h0, "bracket": [lo, hi], "eps": rep.epsilon, "kappa": kappa, "threshold": thr, "short": short, **up.to_json()}
    object.__setattr__(spec, "meta", meta)
    report = {
        "L0": l0, "M0": M0, "n": n, "H0": round(h0, 6), "bracket": [round(lo, 6), round(hi, 6)],
        "kappa": kappa, "r": round(up.r, 6), "eta": up.eta, "n_a": up.n_a, "nhat": nh,
        "unfrozen_per_index": len(sets.unfrozen), "rate": spec.rate,
    }
    return spec, report


# ---------------------------------------------------------------------------
# codec


@cli.group()
def codec():
    """Encode and decode with a CodeSpec JSON file."""


@codec.command("encode")
@config_opt
@click.option("--spec", type=click.Path(exists=True, dir_okay=False))
@click.option("--message", help="Bit string, file path or '-' for stdin.")
@click.option("--seed", type=int, help="Draw a random message instead of reading one.")
def codec_encode(config_path, spec, message, seed):
    """Print the channel input for a message."""
    cfg = resolve(config_path, spec=spec, message=message, seed=seed)
    s = _spec(cfg)
    if cfg.get("message") is not None:
        msg = _read_bits(cfg["message"])
    elif cfg.get("seed") is not None:
        msg = np.random.default_rng(int(cfg["seed"])).integers(0, 2, s.k, dtype=np.uint8)
    else:
        raise ValidationError("give --message or --seed")
    if msg.size != s.k:
        raise ValidationError(f"message has {msg.size} bits, spec carries {s.k}")
    click.echo(_bitstr(cd.encode(s, msg)))


@codec.command("decode")
@config_opt
@click.option("--spec", type=click.Path(exists=True, dir_okay=False))
@click.option("--model")
@click.option("--y", "y", help="Observation bit string, file path or '-' for stdin.")
def codec_decode(config_path, spec, model, y):
    """Successive-cancellation decode of a binary observation."""
    cfg = resolve(config_path, spec=spec, model=model, y=y)
    s = _spec(cfg)
    m = load_model(_need(cfg, "model")[0])
    obs = _read_bits(_need(cfg, "y")[0])
    if obs.size != s.length:
        raise ValidationError(f"observation has {obs.size} symbols, code length is {s.length}")
    click.echo(_bitstr(cd.sc_decode(s, m, obs).message))


# ---------------------------------------------------------------------------
# simulate


@cli.group()
def simulate():
    """Monte-Carlo experiments with CSV output."""


def _spec_or_plan(cfg: dict) -> cd.CodeSpec:
    if cfg.get("spec") is not None:
        return _spec(cfg)
    return cd.frozen_spec(_plan(cfg), int(cfg.get("nhat", 0)))


@simulate.command("entropy")
@config_opt
@click.option("--spec", type=click.Path(exists=True, dir_okay=False))
@click.option("--L0", "L0", type=int)
@click.option("--M0", "M0", type=int)
@click.option("--n", type=int)
@click.option("--model")
@click.option("--H0", "H0", type=float, help="Envelope centre; defaults to the exact window entropy.")
@click.option("--trials", type=int)
@click.option("--seed", type=int)
@click.option("--out", type=click.Path(dir_okay=False))
def simulate_entropy(config_path, spec, L0, M0, n, model, H0, trials, seed, out):
    """Genie-aided entropy per slow index with the envelope of its set."""
    cfg = resolve(config_path, spec=spec, L0=L0, M0=M0, n=n, model=model, H0=H0, trials=trials, seed=seed, out=out)
    s = _spec_or_plan(cfg)
    m = load_model(_need(cfg, "model")[0])
    tr, sd = _need(cfg, "trials", "seed")
    h0 = cfg.get("H0")
    if h0 is None:
        h0 = pr.window_entropy(m, s.plan.L0)
    env = ss.envelope(float(h0), s.plan.n)
    est = cd.genie_estimates(s, m, int(tr), int(sd))
    table = _CsvOut(["index", "set", "entropy", "se", "env_lo", "env_hi"], config_hash(cfg))
    for i in range(1, s.N + 1):
        kind = s.plan.classify(i)
        row = {ss.MED_PLUS: env.med_plus, ss.MED_MINUS: env.med_minus}.get(kind)
        lo, hi = ("", "") if row is None else row[s.plan.n]
        h = est.entropy[i - 1].mean()
        se = math.sqrt(float(np.sum(est.entropy_se[i - 1] ** 2))) / s.Nhat
        table.add(i, kind, h, se, lo, hi)
    table.write(cfg.get("out"))


@simulate.command("ber")
@config_opt
@click.option("--spec", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "models", multiple=True, help="Channel set member (repeatable).")
@click.option("--trials", type=int)
@click.option("--seed", type=int)
@click.option("--batch", type=int)
@click.option("--out", type=click.Path(dir_okay=False))
def simulate_ber(config_path, spec, models, trials, seed, batch, out):
    """Block and bit error rates of one code over a channel set."""
    cfg = resolve(config_path, spec=spec, models=list(models) or None, trials=trials, seed=seed, batch=batch, out=out)
    s = _spec(cfg)
    refs = cfg.get("models") or _need(cfg, "model")
    tr, sd = _need(cfg, "trials", "seed")
    chans = [load_model(r) for r in (refs if isinstance(refs, list) else [refs])]
    table = _CsvOut(["model", "trials", "block_errors", "bler", "bler_se", "ber"], config_hash(cfg))
    for ci, m in enumerate(chans):
        st = ber_run(s, m, int(tr), int(sd), int(cfg.get("batch", 200)), ci)
        table.add(m.name, st["trials"], st["block_errors"], st["bler"], st["bler_se"], st["ber"])
    table.write(cfg.get("out"))


def ber_run(spec: cd.CodeSpec, model: pr.FaimModel, trials: int, seed: int, batch: int = 200, stream: int = 0) -> dict:
    """Encode random messages, pass them through ``model`` and decode."""
    if trials < 1:
        raise ValidationError("trials must be at least 1")
    blocks = bits = done = chunk = 0
    while done < trials:
        b = min(batch, trials - done)
        rng = np.random.default_rng([seed, stream, chunk])
        msg = rng.integers(0, 2, (b, spec.k), dtype=np.uint8)
        y = pr.transmit(model, cd.encode(spec, msg), rng)
        dec = cd.sc_decode(spec, model, y).message
        wrong = dec != msg
        blocks += int(wrong.any(axis=1).sum())
        bits += int(wrong.sum())
        done += b
        chunk += 1
    p = blocks / trials
    return {
        "trials": trials,
        "block_errors": blocks,
        "bler": p,
        "bler_se": math.sqrt(p * (1 - p) / trials),
        "ber": bits / (trials * max(spec.k, 1)),
    }


# ---------------------------------------------------------------------------
# contraction


@cli.group()
def contraction():
    """Projective-metric utilities."""


@contraction.command("birkhoff")
@click.option("--matrix", "matrix", required=True, help="JSON matrix or a path to one.")
def contraction_birkhoff(matrix):
    """Birkhoff coefficient and phi of a nonnegative matrix."""
    p = Path(matrix)
    text = p.read_text() if p.exists() else matrix
    try:
        m = np.asarray(json.loads(text), dtype=float)
    except (json.JSONDecodeError, ValueError) as exc:
        raise ValidationError(f"bad matrix: {exc}") from None
    sub = ct.is_subrectangular(m)
    click.echo(f"subrectangular: {sub}")
    click.echo(f"phi: {ct.phi(m) if sub else 0.0:.12g}")
    click.echo(f"beta: {ct.birkhoff(m):.12g}")


def main(argv=None):
    cli.main(args=argv, prog_name="unipolar")


if __name__ == "__main__":
    main()
