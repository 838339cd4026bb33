"""Command-line entry point: ``anyvariate <command> [options]``.

Exit codes: 0 ok, 2 configuration, 3 data/protocol, 4 numeric, 5 contract.
Randomized commands take ``--seed``; ``ARTIFACT_SEED`` is the fallback.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import archive as arch
from . import synthetic
from .autodiff import ContractError, NumericError, ShapeError
from .diagnostics import CONTEXT_GRID, pack_stats, tune
from .encoder import preset
from .evaluation import DEFAULT_PROTOCOL, evaluate_archive
from .forecast import DEFAULT_SAMPLES, forecast, forecast_records, model_forecaster
from .metrics import ProtocolError, UndefinedMetric
from .patching import ConfigError, DataError, Frequency, Role, TimeSeries
from .sampler import SamplingConfig
from .trainer import load_model, make_config, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_CONTRACT = 0, 2, 3, 4, 5


@dataclass
class RunConfig:
    """Every field has a default; a JSON config file overrides them and
    command-line flags override the file."""

    preset: str = "tiny"
    model: dict = field(default_factory=dict)
    profile: str = "desk"
    schedule: dict = field(default_factory=dict)
    sampling: dict = field(default_factory=dict)
    batch_size: int | None = None
    seed: int = 0
    archive: str | None = None
    checkpoints: str | None = None
    reports: str | None = None
    n_samples: int = DEFAULT_SAMPLES
    context_length: int | None = None
    patch_size: int | None = None

    @classmethod
    def resolve(cls, config_file=None, **flags) -> RunConfig:
        """defaults < $ARTIFACT_SEED < config file < flags"""
        cfg = cls()
        env = os.environ.get("ARTIFACT_SEED")
        if env is not None:
            try:
                cfg.seed = int(env)
            except ValueError:
                raise ConfigError(f"ARTIFACT_SEED must be an integer, got {env!r}") from None
        if config_file:
            path = Path(config_file)
            try:
                data = json.loads(path.read_text())
            except FileNotFoundError:
                raise ConfigError(f"config file {path} not found") from None
            except json.JSONDecodeError as err:
                raise ConfigError(f"{path}: invalid JSON ({err})") from None
            unknown = set(data) - {f.name for f in fields(cls)}
            if unknown:
                raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
            for k, v in data.items():
                setattr(cfg, k, v)
        for k, v in flags.items():
            if v is not None:
                setattr(cfg, k, v)
        return cfg

    def train_config(self):
        model = asdict(preset(self.preset))
        model.update(self.model)
        overrides = {"model": model, "seed": self.seed, "schedule": dict(self.schedule)}
        if self.sampling:
            overrides["sampling"] = self.sampling
        if self.batch_size is not None:
            overrides["batch_size"] = self.batch_size
        return make_config(self.profile, **overrides)


def _parse_roles(items) -> dict[str, str]:
    roles = {}
    for item in items or []:
        name, _, role = item.partition("=")
        if not role:
            raise ConfigError(f"role spec {item!r} must look like name=role")
        try:
            roles[name] = Role(role).value
        except ValueError:
            raise ConfigError(f"unknown role {role!r}; use one of {[r.value for r in Role]}") from None
    return roles


def _dump(obj, path) -> None:
    text = json.dumps(obj, indent=2)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        print(text)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    kinds = {"desk": synthetic.desk_archive, "holdout": synthetic.holdout_archive, "peaky": synthetic.peaky_archive}
    a = kinds[args.kind](seed=args.seed)
    arch.save_archive(args.out, a)
    print(f"wrote {len(a)} sub-datasets to {args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    sd = arch.ingest(args.csv, args.out, args.id, args.frequency, _parse_roles(args.role), args.multiplier)
    print(json.dumps({"id": sd.id, "series": len(sd.series), "total_obs": sd.total_obs}))
    return EXIT_OK


def cmd_export(args) -> int:
    sd = arch.load_subdataset(Path(args.archive) / args.id)
    for p in arch.export(sd, args.out):
        print(p)
    return EXIT_OK


def cmd_train(args) -> int:
    rc = RunConfig.resolve(args.config, seed=args.seed, preset=args.preset, profile=args.profile,
                           batch_size=args.batch_size, archive=args.archive, checkpoints=args.out)
    if args.steps is not None:
        rc.schedule = {**rc.schedule, "total_steps": args.steps}
    if args.warmup is not None:
        rc.schedule = {**rc.schedule, "warmup_steps": args.warmup}
    cfg = rc.train_config()
    if args.components:
        cfg.model = type(cfg.model)(**{**asdict(cfg.model), "components": tuple(args.components)})
    if rc.archive is None or rc.checkpoints is None:
        raise ConfigError("train needs --archive and --out (or config keys archive/checkpoints)")
    data = arch.load_archive(rc.archive)
    every = max(1, cfg.schedule.total_steps // 20)

    def log(rec):
        if rec["step"] % every == 0:
            print(json.dumps(rec), flush=True)

    res = train(data, cfg, rc.checkpoints, resume=args.resume, log=log)
    print(json.dumps({"steps": res.optimizer.step, "final_nll": res.losses[-1], "seconds": round(res.seconds, 2),
                      "checkpoint": str(Path(rc.checkpoints) / "final.ckpt")}))
    return EXIT_OK


def _load_series(args) -> TimeSeries:
    names, _, values = arch.read_csv(args.csv, args.frequency, args.multiplier)
    roles = _parse_roles(args.role)
    return TimeSeries(values, [roles.get(n, Role.TARGET) for n in names], args.frequency, Path(args.csv).stem,
                      args.multiplier, names)


def cmd_forecast(args) -> int:
    rc = RunConfig.resolve(args.config, seed=args.seed, n_samples=args.samples,
                           context_length=args.context, patch_size=args.patch_size)
    model, _, _ = load_model(args.checkpoint)
    series = _load_series(args)
    fut = None
    if args.future_covariates:
        _, _, fut = arch.read_csv(args.future_covariates, args.frequency, args.multiplier)
        known = [i for i, r in enumerate(series.roles) if r is Role.KNOWN_COVARIATE]
        fut = fut[: len(known)]
    fc = forecast(model, series, args.horizon, rc.context_length, rc.patch_size, rc.n_samples, rc.seed, fut)
    out = Path(args.out) if args.out else None
    lines = []
    for j, v in enumerate(fc.targets):
        for rec in forecast_records(fc, j):
            if len(fc.targets) > 1:
                rec = {"variate": series.names[v] if series.names else v, **rec}
            lines.append(json.dumps(rec))
    text = "\n".join(lines) + "\n"
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _protocol(args) -> dict | None:
    if args.horizon is None and args.windows is None:
        return None
    if args.horizon is None or args.windows is None:
        raise ConfigError("--horizon and --windows go together")
    return {f: (args.horizon, args.windows) for f in Frequency}


def cmd_evaluate(args) -> int:
    rc = RunConfig.resolve(args.config, seed=args.seed, n_samples=args.samples,
                           context_length=args.context, patch_size=args.patch_size)
    model, _, _ = load_model(args.checkpoint)
    data = arch.load_archive(args.archive)
    fc = model_forecaster(model, rc.context_length, rc.patch_size, rc.n_samples, rc.seed)
    report = evaluate_archive(fc, data, _protocol(args))
    path = report.write(args.out)
    print(json.dumps(report.to_dict()["aggregate"]))
    print(f"report: {path}")
    return EXIT_OK


def cmd_pack_stats(args) -> int:
    rc = RunConfig.resolve(args.config, seed=args.seed)
    data = arch.load_archive(args.archive)
    sampling = SamplingConfig(**rc.sampling) if rc.sampling else None
    rep = pack_stats(data, sampling, args.iterations, args.batch_samples, rc.seed)
    _dump(rep.to_dict(), args.out)
    print(json.dumps({"packed_padding": rep.packed_padding, "unpacked_padding": rep.unpacked_padding}))
    return EXIT_OK


def cmd_tune(args) -> int:
    rc = RunConfig.resolve(args.config, seed=args.seed, n_samples=args.samples)
    model, _, _ = load_model(args.checkpoint)
    data = arch.load_archive(args.archive)
    protocol = _protocol(args) or DEFAULT_PROTOCOL
    chosen = tune(model, data, protocol, tuple(args.contexts), rc.n_samples, rc.seed)
    _dump(chosen, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anyvariate", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON run-config file")
        if seed:
            sp.add_argument("--seed", type=int, help="RNG seed (fallback: $ARTIFACT_SEED, then 0)")

    sp = sub.add_parser("synth", help="write a synthetic archive")
    sp.add_argument("--kind", choices=["desk", "holdout", "peaky"], default="desk")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("ingest", help="validate CSVs into an archive sub-dataset")
    sp.add_argument("csv", nargs="+")
    sp.add_argument("--out", required=True, help="archive root")
    sp.add_argument("--id", required=True, help="sub-dataset id")
    sp.add_argument("--frequency", required=True)
    sp.add_argument("--multiplier", type=int, default=1)
    sp.add_argument("--role", action="append", metavar="NAME=ROLE")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("export", help="write a sub-dataset back to CSV")
    sp.add_argument("--archive", required=True)
    sp.add_argument("--id", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("train", help="train a model on an archive")
    common(sp)
    sp.add_argument("--archive")
    sp.add_argument("--out", help="checkpoint directory")
    sp.add_argument("--preset", choices=["tiny", "small", "base", "large"])
    sp.add_argument("--profile", choices=["desk", "paper"])
    sp.add_argument("--steps", type=int)
    sp.add_argument("--warmup", type=int)
    sp.add_argument("--batch-size", type=int, help="packed rows per step")
    sp.add_argument("--components", nargs="+", help="mixture components to keep (ablation)")
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    def inference(sp):
        common(sp)
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--samples", type=int)
        sp.add_argument("--context", type=int, help="context length")
        sp.add_argument("--patch-size", type=int)

    sp = sub.add_parser("forecast", help="forecast one CSV series")
    inference(sp)
    sp.add_argument("--csv", required=True)
    sp.add_argument("--frequency", required=True)
    sp.add_argument("--multiplier", type=int, default=1)
    sp.add_argument("--role", action="append", metavar="NAME=ROLE")
    sp.add_argument("--future-covariates", help="CSV with horizon values of known covariates")
    sp.add_argument("--horizon", type=int, required=True)
    sp.add_argument("--out", help="JSON-lines output (default stdout)")
    sp.set_defaults(func=cmd_forecast)

    sp = sub.add_parser("evaluate", help="rolling evaluation against seasonal naive")
    inference(sp)
    sp.add_argument("--archive", required=True)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--windows", type=int)
    sp.add_argument("--out", required=True, help="report directory")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("pack-stats", help="packed vs unpacked padding")
    common(sp)
    sp.add_argument("--archive", required=True)
    sp.add_argument("--iterations", type=int, default=1000)
    sp.add_argument("--batch-samples", type=int, default=256)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_pack_stats)

    sp = sub.add_parser("tune", help="choose context length and patch size on validation CRPS")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--archive", required=True)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--contexts", type=int, nargs="+", default=list(CONTEXT_GRID))
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--windows", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_tune)
    return p


_EXIT_CODES = (
    ((ConfigError,), EXIT_CONFIG, "configuration"),
    ((DataError, ProtocolError, UndefinedMetric), EXIT_DATA, "data"),
    ((NumericError,), EXIT_NUMERIC, "numeric"),
    ((ContractError, ShapeError), EXIT_CONTRACT, "contract"),
)
_HANDLED = tuple(t for types, _, _ in _EXIT_CODES for t in types)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _HANDLED as err:
        code, kind = next((c, k) for t, c, k in _EXIT_CODES if isinstance(err, t))
        print(f"error ({kind}): {err}", file=sys.stderr)
        return code

if __name__ == "__main__":
    sys.exit(main())
