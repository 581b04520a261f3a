"""Command-line interface: ``timelens design|eval|presets|selftest``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import __version__, jobs, selftest
from .fileio import FormatError


def _load_spec(path: str, args) -> jobs.JobSpec:
    spec = jobs.JobSpec.load(path)
    return _apply_overrides(spec, args)


def _apply_overrides(spec: jobs.JobSpec, args) -> jobs.JobSpec:
    if getattr(args, "threads", None):
        spec = spec.replace(threads=args.threads)
    if getattr(args, "no_figures", False):
        spec = spec.replace(output=dataclasses.replace(spec.output, figures=False))
    return spec


def _report(manifest: jobs.RunManifest) -> None:
    print(f"wrote {len(manifest.files)} files to {manifest.out_dir}")
    for key, value in manifest.metrics.items():
        print(f"  {key}: {value}")
    if manifest.converged is False:
        print(f"  optimizer did not converge within {manifest.iterations} sweeps", file=sys.stderr)


def cmd_design(args) -> int:
    spec = _load_spec(args.spec, args)
    manifest = jobs.run_design(spec, args.out)
    _report(manifest)
    return manifest.exit_code


def cmd_eval(args) -> int:
    spec = _load_spec(args.spec, args)
    manifest = jobs.run_eval(args.design, spec, args.waveform, args.out)
    _report(manifest)
    return manifest.exit_code


def cmd_presets(args) -> int:
    if args.action == "list":
        for name in jobs.preset_names():
            print(name)
        return jobs.EXIT_OK
    if args.name is None:
        raise jobs.ValidationError(f"'presets {args.action}' needs a preset name")
    spec = jobs.load_preset(args.name)
    if args.action == "show":
        sys.stdout.write(spec.to_json())
        return jobs.EXIT_OK
    manifest = jobs.run_design(_apply_overrides(spec, args), args.out)
    _report(manifest)
    return manifest.exit_code


def cmd_selftest(args) -> int:
    return jobs.EXIT_OK if selftest.run() else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="timelens", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log optimizer progress")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="optimize a cascade for a job spec and write all artifacts")
    d.add_argument("spec", help="job spec JSON")
    d.add_argument("--out", help="output directory (default: spec output.directory, $TLF_OUT/<name>)")
    d.add_argument("--threads", type=int, help="FFT worker threads")
    d.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    d.set_defaults(func=cmd_design)

    e = sub.add_parser("eval", help="re-evaluate a stored design without optimizing")
    e.add_argument("design", help="design.json written by 'design'")
    e.add_argument("spec", help="job spec JSON (targets, impairments, metrics)")
    e.add_argument("--waveform", help="TLF1 input waveform replacing the synthesized input")
    e.add_argument("--out", help="output directory")
    e.add_argument("--threads", type=int, help="FFT worker threads")
    e.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("presets", help="list, show or run the bundled configurations")
    r.add_argument("action", choices=("list", "show", "run"))
    r.add_argument("name", nargs="?")
    r.add_argument("--out", help="output directory")
    r.add_argument("--threads", type=int, help="FFT worker threads")
    r.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    r.set_defaults(func=cmd_presets)

    s = sub.add_parser("selftest", help="run quick built-in sanity checks")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (jobs.ValidationError, ValueError) as exc:
        if isinstance(exc, FormatError):
            print(f"error: {exc}", file=sys.stderr)
            return jobs.EXIT_IO
        print(f"invalid job: {exc}", file=sys.stderr)
        return jobs.EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return jobs.EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
