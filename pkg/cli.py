import logging
import functools
from dataclasses import dataclass, fields, replace

import click
import numpy as np
import pandas as pd

from config_utils import CODE_VERSION, load_settings, setup_logging
from errors import HBError, PreconditionError
from kpm import DOSCurve, KPMParams
from lattices import BUILTINS, builtin_lattice
from oracle import MAX_HARPER_Q, farey_fluxes, harper_spectrum_honeycomb, harper_spectrum_square
from plaquette import (FLUX_QUANTA, STRONGEST_CONTINUOUS_FIELD, beat_periods, enumerate_faces,
                       flux_quantum, plaquette_classes)
from spectrum_io import (read_manifest, staged_outputs, write_binary, write_csv, write_dos_csv,
                         write_manifest, write_pgm)
from structure import (DEFAULT_RULES, HoppingConfig, Lattice, assign_hoppings, build_flake,
                       read_hopping_config, read_structure)
from sweep import SweepPlan, center_energies, run_sweep

logger = logging.getLogger(__name__)

WRITERS = {"csv": write_csv, "bin": write_binary, "pgm": write_pgm}
# sweep default upper field, as a multiple of the largest plaquette's (shortest) period
DEFAULT_SWEEP_SPAN = 1.1


@dataclass(frozen=True)
class RunConfig:
    command: str = "butterfly"
    structure_path: str | None = None
    builtin: str | None = None
    hopping_config_path: str | None = None
    seed: int = 0
    out: str = "butterfly"
    flux_quantum: str = "h_over_e"
    nx: int = 50
    ny: int = 50
    b_min: float = 0.0
    b_max: float | None = None
    b_points: int = 128
    moments: int = 512
    random_vectors: int = 3
    energy_points: int = 512
    rescale_margin: float = 0.01
    formats: tuple[str, ...] = ("bin",)
    center: bool = False

    def kpm_params(self) -> KPMParams:
        return KPMParams(num_moments=self.moments, num_random_vectors=self.random_vectors,
                         energy_points=self.energy_points, rescale_margin=self.rescale_margin,
                         rng_seed=self.seed)

    def to_manifest(self) -> dict[str, str]:
        entries = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                value = ""
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            elif isinstance(value, tuple):
                value = ",".join(value)
            entries[f.name] = str(value)
        entries["code_version"] = CODE_VERSION
        return entries

    @classmethod
    def from_manifest(cls, entries: dict[str, str]) -> "RunConfig":
        if entries.get("code_version", CODE_VERSION) != CODE_VERSION:
            logger.warning(f"   [WARN] Manifest was written by version {entries['code_version']}, "
                           f"running {CODE_VERSION}; outputs may differ.")
        values = {}
        for f in fields(cls):
            if f.name not in entries:
                continue
            raw = entries[f.name]
            default = f.default
            try:
                if f.name in ("structure_path", "builtin", "hopping_config_path", "b_max"):
                    values[f.name] = None if raw == "" else (float(raw) if f.name == "b_max" else raw)
                elif isinstance(default, bool):
                    values[f.name] = raw.lower() == "true"
                elif isinstance(default, int):
                    values[f.name] = int(raw)
                elif isinstance(default, float):
                    values[f.name] = float(raw)
                elif isinstance(default, tuple):
                    values[f.name] = tuple(v for v in raw.split(",") if v)
                else:
                    values[f.name] = raw
            except ValueError:
                raise PreconditionError(f"Manifest entry {f.name} = {raw!r} is malformed.")
        return cls(**values)


def reports_errors(command):
    """Turns library errors into the documented exit codes."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except HBError as e:
            logger.error(f" ❌  [ERROR] {e}", exc_info=logger.isEnabledFor(logging.DEBUG))
            click.echo(f"error: {e}", err=True)
            click.get_current_context().exit(e.exit_code)
    return wrapper


def lattice_options(command):
    options = [
        click.option("--structure", "structure_path", type=click.Path(exists=True, dir_okay=False),
                     help="Extended-XYZ structure file."),
        click.option("--builtin", help=f"Built-in lattice: {', '.join(sorted(BUILTINS))}, "
                                       "optionally with arguments, e.g. 'porous-honeycomb(1.42,1.5)'."),
        click.option("--hoppings", "hopping_config_path", type=click.Path(exists=True, dir_okay=False),
                     help="Hopping/on-site config file."),
        click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), help="Global random seed."),
        click.option("--out", help="Output path prefix."),
        click.option("--flux-quantum", "flux_name", type=click.Choice(sorted(FLUX_QUANTA)),
                     help="Flux quantum used for periods and Peierls phases."),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def load_lattice(cfg: RunConfig) -> tuple[Lattice, HoppingConfig]:
    if bool(cfg.structure_path) == bool(cfg.builtin):
        raise click.UsageError("Give exactly one of --structure or --builtin.")
    lattice = builtin_lattice(cfg.builtin) if cfg.builtin else read_structure(cfg.structure_path)
    hop = read_hopping_config(cfg.hopping_config_path) if cfg.hopping_config_path else None
    if hop is not None and hop.rules:
        rules = hop.rules
    elif cfg.builtin:
        rules = lattice.hopping_rules
    else:
        rules = DEFAULT_RULES
    lattice = assign_hoppings(lattice, rules)
    if hop is None:
        hop = HoppingConfig(rules=rules)
    return lattice, hop


def resolve(cfg: RunConfig, hop: HoppingConfig, flux_flag: str | None, seed_flag: int | None) -> RunConfig:
    """Flag > hopping config file > environment > default."""
    settings = load_settings()
    flux = flux_flag or hop.flux_quantum or settings.flux_quantum
    flux_quantum(flux)  # validates the name
    seed = seed_flag if seed_flag is not None else settings.seed
    return replace(cfg, flux_quantum=flux, seed=seed)


@click.group()
@click.option("--log-level", help="Logging level (overrides HB_LOG_LEVEL).")
@click.version_option(CODE_VERSION)
def cli(log_level):
    """Hofstadter butterfly spectra of 2D lattices."""
    setup_logging(log_level)


@cli.command()
@lattice_options
@click.option("--tolerance", default=0.02, show_default=True, type=float,
              help="Relative tolerance for beat periods.")
@reports_errors
def plaquettes(structure_path, builtin, hopping_config_path, seed, out, flux_name, tolerance):
    """Faces of the lattice graph with their field periods."""
    cfg = RunConfig(command="plaquettes", structure_path=structure_path, builtin=builtin,
                    hopping_config_path=hopping_config_path)
    lattice, hop = load_lattice(cfg)
    cfg = resolve(cfg, hop, flux_name, seed)
    phi0 = flux_quantum(cfg.flux_quantum)

    classes = plaquette_classes(enumerate_faces(lattice, phi0))
    if not classes:
        click.echo("No bounded faces: the bond graph encloses no plaquette.")
        return
    table = pd.DataFrame([{
        "face": k + 1,
        "vertices": c.representative.size,
        "per_cell": c.multiplicity,
        "area_A2": round(c.area, 4),
        "B_p_T": float(f"{c.period:.6g}"),
        "lab_fraction": float(f"{STRONGEST_CONTINUOUS_FIELD / c.period:.3g}"),
        "resolvable": c.period / 2 <= STRONGEST_CONTINUOUS_FIELD,
    } for k, c in enumerate(classes)])
    click.echo(table.to_string(index=False))

    if len(classes) > 1:
        beats = beat_periods([c.period for c in classes], tolerance)
        click.echo(f"\nBeat periods (tolerance {tolerance}):")
        if not beats:
            click.echo("  none")
        for beat in beats:
            terms = " ~ ".join(f"{k}*B_p[{m + 1}]" for m, k in zip(beat.members, beat.multiplicities))
            click.echo(f"  {beat.period:.6g} T  ({terms})")


def _sweep_and_write(cfg: RunConfig, workers: int | None, single_curve: bool = False):
    lattice, hop = load_lattice(cfg)
    phi0 = flux_quantum(cfg.flux_quantum)
    if cfg.b_max is None:
        faces = enumerate_faces(lattice, phi0)
        if not faces:
            raise PreconditionError("The lattice has no plaquette; pass --b-max explicitly.")
        cfg = replace(cfg, b_max=DEFAULT_SWEEP_SPAN * faces[0].period)

    flake = build_flake(lattice, cfg.nx, cfg.ny, load_settings().max_sites)
    plan = SweepPlan(cfg.b_min, cfg.b_max, cfg.b_points, cfg.kpm_params(), (cfg.nx, cfg.ny))
    spectrum = run_sweep(flake, plan, onsite=hop.onsite_table(set(lattice.species)),
                         flux_quantum=phi0, workers=workers)
    if cfg.center:
        spectrum = center_energies(spectrum)

    with staged_outputs() as stage:
        if single_curve:
            write_dos_csv(DOSCurve(spectrum.energies, spectrum.dos[0]), stage(f"{cfg.out}.csv"))
        else:
            for fmt in cfg.formats:
                WRITERS[fmt](spectrum, stage(f"{cfg.out}.{fmt}"))
        manifest = cfg.to_manifest()
        manifest["sites"] = str(flake.num_sites)
        write_manifest(stage(f"{cfg.out}.manifest"), manifest)
    logger.info(f"   [SUCCESS] Outputs written with prefix {cfg.out}")
    return spectrum


def kpm_options(command):
    options = [
        click.option("--nx", default=50, show_default=True, type=click.IntRange(min=1)),
        click.option("--ny", default=50, show_default=True, type=click.IntRange(min=1)),
        click.option("--moments", default=512, show_default=True, type=click.IntRange(min=2)),
        click.option("--random-vectors", default=3, show_default=True, type=click.IntRange(min=1)),
        click.option("--energy-points", default=512, show_default=True, type=click.IntRange(min=2)),
        click.option("--center", is_flag=True, help="Center the energy axis on the spectrum support."),
    ]
    for option in reversed(options):
        command = option(command)
    return command


@cli.command()
@lattice_options
@kpm_options
@click.option("--b-min", default=0.0, show_default=True, type=float, help="Lowest field (T).")
@click.option("--b-max", default=None, type=float,
              help="Highest field (T); defaults to 1.1 x the period of the largest plaquette.")
@click.option("--b-points", default=128, show_default=True, type=click.IntRange(min=1))
@click.option("--format", "formats", multiple=True, type=click.Choice(sorted(WRITERS)),
              help="Output format, repeatable (default: bin).")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False),
              help="Rerun exactly from a previous run manifest.")
@click.option("--workers", type=click.IntRange(min=1), help="Sweep worker processes (overrides HB_WORKERS).")
@reports_errors
def butterfly(structure_path, builtin, hopping_config_path, seed, out, flux_name, nx, ny, moments,
              random_vectors, energy_points, center, b_min, b_max, b_points, formats, manifest_path, workers):
    """DOS(E, B) over a field sweep, written as CSV / binary / PGM."""
    if manifest_path:
        cfg = RunConfig.from_manifest(read_manifest(manifest_path))
        if out:
            cfg = replace(cfg, out=out)
        logger.info(f"   [INFO] Rerunning from manifest {manifest_path}")
    else:
        cfg = RunConfig(command="butterfly", structure_path=structure_path, builtin=builtin,
                        hopping_config_path=hopping_config_path, out=out or "butterfly",
                        nx=nx, ny=ny, b_min=b_min, b_max=b_max, b_points=b_points, moments=moments,
                        random_vectors=random_vectors, energy_points=energy_points,
                        formats=tuple(dict.fromkeys(formats)) or ("bin",), center=center)
        hop = read_hopping_config(hopping_config_path) if hopping_config_path else HoppingConfig()
        cfg = resolve(cfg, hop, flux_name, seed)
    _sweep_and_write(cfg, workers)


@cli.command()
@lattice_options
@kpm_options
@click.option("--b", "field", default=0.0, show_default=True, type=float, help="Field (T).")
@reports_errors
def dos(structure_path, builtin, hopping_config_path, seed, out, flux_name, nx, ny, moments,
        random_vectors, energy_points, center, field):
    """Density of states at a single field, as CSV E_ev,dos."""
    cfg = RunConfig(command="dos", structure_path=structure_path, builtin=builtin,
                    hopping_config_path=hopping_config_path, out=out or "dos", nx=nx, ny=ny,
                    b_min=field, b_max=field, b_points=1, moments=moments,
                    random_vectors=random_vectors, energy_points=energy_points,
                    formats=("csv",), center=center)
    hop = read_hopping_config(hopping_config_path) if hopping_config_path else HoppingConfig()
    cfg = resolve(cfg, hop, flux_name, seed)
    _sweep_and_write(cfg, workers=1, single_curve=True)


@cli.command()
@click.option("--lattice", "lattice_name", type=click.Choice(["square", "honeycomb"]), required=True)
@click.option("--q-max", default=12, show_default=True, type=click.IntRange(1, MAX_HARPER_Q))
@click.option("--t", "hopping", default=-1.0, show_default=True, type=float, help="Hopping (eV).")
@click.option("--k-grid", default=32, show_default=True, type=click.IntRange(min=1))
@click.option("--out", help="CSV path; standard output when omitted.")
@reports_errors
def oracle(lattice_name, q_max, hopping, k_grid, out):
    """Harper spectra at every reduced flux p/q with q <= q_max."""
    solve = harper_spectrum_square if lattice_name == "square" else harper_spectrum_honeycomb
    frames = []
    for flux in farey_fluxes(q_max):
        values = np.unique(np.round(solve(flux, hopping, k_grid).values(), 9))
        frames.append(pd.DataFrame({"p": flux.p, "q": flux.q, "flux": flux.value, "eigenvalue": values}))
    table = pd.concat(frames, ignore_index=True)
    if out:
        with staged_outputs() as stage:
            table.to_csv(stage(out), index=False, float_format="%.10g")
        logger.info(f"   [SUCCESS] Wrote {len(table)} oracle rows to {out}")
    else:
        click.echo(table.to_csv(index=False, float_format="%.10g"), nl=False)


@cli.command()
@lattice_options
@click.option("--nx", type=click.IntRange(min=1), help="Also report a flake of nx x ny cells.")
@click.option("--ny", type=click.IntRange(min=1))
@reports_errors
def info(structure_path, builtin, hopping_config_path, seed, out, flux_name, nx, ny):
    """Sites, bonds, species and cell area of a lattice."""
    lattice, _ = load_lattice(RunConfig(command="info", structure_path=structure_path, builtin=builtin,
                                        hopping_config_path=hopping_config_path))
    species = sorted(set(lattice.species))
    click.echo(f"sites per cell:  {len(lattice.sites)}")
    click.echo(f"bonds per cell:  {len(lattice.bonds)}")
    click.echo(f"species:         {', '.join(species)}")
    click.echo(f"cell area:       {lattice.cell_area:.6f} A^2")
    if not lattice.bonds:
        click.echo("warning: 0 bonds; no hopping rule matches any site pair.", err=True)
    if nx or ny:
        flake = build_flake(lattice, nx or 1, ny or 1, load_settings().max_sites)
        click.echo(f"flake {nx or 1}x{ny or 1}:      {flake.num_sites} sites, {flake.num_edges} edges")


if __name__ == "__main__":
    cli()
