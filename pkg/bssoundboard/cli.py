"""
Punto de entrada ``bssoundboard``: una suborden por etapa, comunicadas solo por ficheros.

Códigos de salida: 0 éxito, 1 error de validación (argumentos, ficheros o configuración), 2 fallo de
ejecución. Cada directorio de salida recibe un ``fingerprint.json`` con los argumentos normalizados.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Sequence

from joblib import Parallel, delayed

from bssoundboard import __version__
from bssoundboard.exceptions import BSConfigError, BSSoundboardError, BSValidationError
from bssoundboard.geometry.contours import DEFAULT_LEVEL_STEP, profile_from_map
from bssoundboard.geometry.elevation import (
    DEFAULT_SPACING,
    RESAMPLE_MODES,
    RESAMPLE_PRESETS,
    BSResampleSpec,
    compute_elevation_map,
    crop_zone_of_interest,
    flatten,
    global_box,
    normalize_heights,
    resample,
)
from bssoundboard.geometry.mesh_io import load_mesh
from bssoundboard.learning.evaluation import BSExperimentConfig, run_experiment_matrix
from bssoundboard.learning.features import FEATURE_SETS, compose_feature_set, describe_feature_sets
from bssoundboard.learning.matrix import BSFeatureMatrix
from bssoundboard.learning.pca import RELATIVE_ONLY_MESSAGE, pca_fit, pca_project
from bssoundboard.learning.report import load_report_frame, report_header, write_report, write_tables
from bssoundboard.synth.synthgen import generate_corpus, write_corpus
from bssoundboard.utils.fingerprint import FINGERPRINT_FILE, write_fingerprint
from bssoundboard.utils.logger import configure_logging, get_logger
from bssoundboard.utils.persistence import (
    load_map,
    load_profile_csv,
    read_json,
    read_manifest,
    save_feature_matrix_csv,
    save_map_csv,
    save_map_json,
    save_profile_csv,
    write_json,
    write_jsonl,
)

logger = get_logger(__name__)

MAPS_INDEX = "maps.json"
PROFILES_INDEX = "profiles.json"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class BSArgumentParser(argparse.ArgumentParser):
    """Los errores de uso salen con código 1 (validación) en lugar del 2 de argparse."""

    def error(self, message: str):  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class BSRunConfig:
    """Argumentos normalizados de una suborden; su ``asdict`` es lo que se guarda en la huella."""

    subcommand: str
    inputs: tuple[str, ...] = ()
    output: str = ""
    grid: str | None = None
    mode: str = "relative"
    normalize: bool = False
    feature_set: str | None = None
    pca_k: int | None = None
    seed: int | None = None
    jobs: int = -1

    def __post_init__(self):
        if self.grid is not None and self.grid not in RESAMPLE_PRESETS:
            raise BSConfigError(f"rejilla desconocida: {self.grid!r} (disponibles: {', '.join(RESAMPLE_PRESETS)})")
        if self.mode not in RESAMPLE_MODES:
            raise BSConfigError(f"modo de remuestreo desconocido: {self.mode!r}")
        if self.pca_k is not None and self.mode != "relative":
            raise BSConfigError(RELATIVE_ONLY_MESSAGE)
        if self.normalize and self.grid is None:
            raise BSConfigError("--normalize requiere --grid: se normaliza el mapa remuestreado")
        if self.feature_set is not None and self.feature_set not in FEATURE_SETS:
            raise BSConfigError(f"conjunto de características desconocido: {self.feature_set!r}")

    def arguments(self) -> dict[str, Any]:
        """Argumentos que determinan la salida (sin paralelismo ni rutas de salida)."""
        out = asdict(self)
        out.pop("jobs")
        out.pop("output")
        out["inputs"] = [str(Path(p).resolve()) for p in self.inputs]
        return out


# ========== Utilidades ==========

def _entries_from_inputs(inputs: Sequence[str]) -> list[dict[str, Any]]:
    """Mallas sueltas o directorios/manifiestos de corpus; las mallas sueltas no llevan etiqueta."""
    entries: list[dict[str, Any]] = []
    for item in inputs:
        path = Path(item)
        if path.is_dir() or path.suffix.lower() == ".json":
            entries.extend(read_manifest(path))
        else:
            entries.append({"instrument_id": path.stem, "label": None, "path": str(path)})
    ids = [e["instrument_id"] for e in entries]
    if len(set(ids)) != len(ids):
        raise BSValidationError("identificadores de instrumento repetidos en la entrada")
    return entries


def _read_index(directory: str | Path, name: str) -> list[dict[str, Any]]:
    directory = Path(directory)
    path = directory / name if directory.is_dir() else directory
    if not path.exists():
        raise FileNotFoundError(f"no existe el índice {path}")
    return read_json(path)


def _fine_map(entry: dict[str, Any], spacing: float):
    mesh = load_mesh(entry["path"], instrument_id=entry["instrument_id"])
    return crop_zone_of_interest(compute_elevation_map(mesh, spacing))


def _resampled_maps(index: list[dict[str, Any]], base: Path, run: BSRunConfig) -> list:
    fine = [load_map(base / item["map"]) for item in index]
    box = global_box(fine) if run.mode == "absolute" else None
    spec = BSResampleSpec.from_preset(run.grid, run.mode, box)  # type: ignore[arg-type]
    maps = [resample(m, spec) for m in fine]
    return [normalize_heights(m) for m in maps] if run.normalize else maps


# ========== Subórdenes ==========

def cmd_synth(args: argparse.Namespace) -> int:
    run = BSRunConfig("synth", output=args.output, seed=args.seed, jobs=args.jobs)
    corpus = generate_corpus(
        args.reduced, args.unreduced, args.seed, noise_mm=args.noise, n_jobs=args.jobs, fmt=args.format
    )
    write_corpus(corpus, args.output, args.format)
    arguments = run.arguments() | {
        "reduced": args.reduced,
        "unreduced": args.unreduced,
        "noise": args.noise,
        "format": args.format,
    }
    write_fingerprint(args.output, "synth", arguments)
    return EXIT_OK


def cmd_elevmap(args: argparse.Namespace) -> int:
    run = BSRunConfig(
        "elevmap", tuple(args.inputs), args.output, args.grid, args.mode, args.normalize, jobs=args.jobs
    )
    entries = _entries_from_inputs(args.inputs)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save = save_map_json if args.map_format == "json" else save_map_csv

    fine = Parallel(n_jobs=args.jobs)(delayed(_fine_map)(e, args.spacing) for e in entries)
    index = []
    for entry, elevation_map in zip(entries, fine):
        name = f"{entry['instrument_id']}.{args.map_format}"
        save(elevation_map, out / name)
        index.append({"instrument_id": entry["instrument_id"], "label": entry.get("label"), "map": name})

    if args.grid is not None:
        for item, resampled in zip(index, _resampled_maps(index, out, run)):
            suffix = "_norm" if args.normalize else ""
            name = f"{item['instrument_id']}_{args.grid}_{args.mode}{suffix}.{args.map_format}"
            save(resampled, out / name)
            item["resampled"] = name

    write_json(index, out / MAPS_INDEX)
    write_fingerprint(out, "elevmap", run.arguments() | {"spacing": args.spacing, "map_format": args.map_format})
    logger.info(f"{len(index)} mapas en {out}")
    return EXIT_OK


def cmd_contours(args: argparse.Namespace) -> int:
    run = BSRunConfig("contours", (args.maps,), args.output, jobs=args.jobs)
    base = Path(args.maps)
    index = _read_index(base, MAPS_INDEX)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    profiles_index = []
    skipped_log = []
    failures = 0
    for item in index:
        elevation_map = load_map(base / item["map"])
        record: dict[str, Any] = {"instrument_id": item["instrument_id"], "label": item.get("label")}
        try:
            profile, skipped = profile_from_map(elevation_map, args.level_step)
        except BSSoundboardError as e:
            logger.error(f"{item['instrument_id']}: {e}")
            record["error"] = str(e)
            failures += 1
        else:
            name = f"{item['instrument_id']}.csv"
            save_profile_csv(profile, out / name)
            record.update(profile=name, levels=len(profile), gaps=list(profile.gaps))
            skipped_log += [
                {"instrument_id": item["instrument_id"], "level": s.level, "reason": s.reason} for s in skipped
            ]
        profiles_index.append(record)

    write_json(profiles_index, out / PROFILES_INDEX)
    write_jsonl(skipped_log, out / "skipped.jsonl")
    write_fingerprint(out, "contours", run.arguments() | {"level_step": args.level_step})
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_features(args: argparse.Namespace) -> int:
    if args.list_feature_sets:
        print(describe_feature_sets())
        return EXIT_OK
    if (args.profiles is None) == (args.maps is None):
        raise BSConfigError("indica exactamente uno de --profiles o --maps")
    if args.output is None:
        raise BSConfigError("falta -o/--output")

    if args.profiles is not None:
        if args.feature_set is None:
            raise BSConfigError("--profiles requiere --feature-set")
        run = BSRunConfig("features", (args.profiles,), args.output, feature_set=args.feature_set, jobs=args.jobs)
        base = Path(args.profiles)
        index = [item for item in _read_index(base, PROFILES_INDEX) if "profile" in item]
        rows = [
            compose_feature_set(load_profile_csv(base / item["profile"], item["instrument_id"]), args.feature_set)
            .with_identity(item["instrument_id"], item.get("label"))
            for item in index
        ]
    else:
        if args.grid is None:
            raise BSConfigError("--maps requiere --grid")
        run = BSRunConfig("features", (args.maps,), args.output, args.grid, args.mode, args.normalize, jobs=args.jobs)
        base = Path(args.maps)
        index = _read_index(base, MAPS_INDEX)
        rows = [
            flatten(m).with_identity(item["instrument_id"], item.get("label"))
            for item, m in zip(index, _resampled_maps(index, base, run))
        ]

    out = Path(args.output)
    save_feature_matrix_csv(BSFeatureMatrix(rows), out / "features.csv")
    write_fingerprint(out, "features", run.arguments())
    return EXIT_OK


def cmd_pca(args: argparse.Namespace) -> int:
    run = BSRunConfig(
        "pca", (args.maps,), args.output, args.grid, args.mode, args.normalize, pca_k=args.k, jobs=args.jobs
    )
    base = Path(args.maps)
    index = _read_index(base, MAPS_INDEX)
    maps = _resampled_maps(index, base, run)
    model = pca_fit(maps, args.k)
    rows = [
        pca_project(model, flatten(m)).with_identity(item["instrument_id"], item.get("label"))
        for item, m in zip(index, maps)
    ]

    out = Path(args.output)
    save_feature_matrix_csv(BSFeatureMatrix(rows), out / "projections.csv")
    write_json(
        {
            "k": model.k,
            "grid_shape": list(model.grid_shape or ()),
            "mask": model.mask.astype(int).tolist(),
            "mean": model.mean.tolist(),
            "components": model.components.tolist(),
            "explained_variance": model.explained_variance.tolist(),
            "explained_variance_ratio": model.explained_variance_ratio.tolist(),
        },
        out / "pca_model.json",
    )
    write_fingerprint(out, "pca", run.arguments())
    return EXIT_OK


def _experiment_from_flags(args: argparse.Namespace) -> dict[str, Any]:
    if args.dataset is None:
        raise BSConfigError("eval necesita un fichero de experimento o --dataset")
    data: dict[str, Any] = {"dataset": str(Path(args.dataset).resolve())}
    if args.feature_set:
        data["feature_sets"] = args.feature_set
    if args.pca:
        if args.mode != "relative":
            raise BSConfigError(RELATIVE_ONLY_MESSAGE)
        data["pca"] = {"grid": (args.grid or ["5x10"])[0], "ks": args.pca, "normalize": [args.normalize]}
    elif args.grid:
        data["maps"] = {"grids": args.grid, "modes": [args.mode], "normalize": [args.normalize]}
    if args.family == "svm":
        data["models"] = [{"family": "svm", "kernel": k} for k in (args.kernel or ["linear"])]
    else:
        data["models"] = [{"family": "tree", "criterion": c} for c in (args.criterion or ["gini"])]
    if args.tie_break:
        data["tie_breaks"] = args.tie_break
    if args.sweep:
        data["sensitivity_sweep"] = True
    return data


def cmd_eval(args: argparse.Namespace) -> int:
    if args.config is not None:
        config = BSExperimentConfig.from_json(args.config)
    else:
        config = BSExperimentConfig.from_dict(_experiment_from_flags(args))
    config = replace(config, n_jobs=args.jobs)

    cells = run_experiment_matrix(config)
    out = Path(args.output)
    config_dict = config.to_dict()
    write_report(cells, out, config_dict)
    write_fingerprint(out, "eval", config_dict)
    failed = [c.cell_id for c in cells if c.error]
    if failed:
        logger.warning(f"{len(failed)} celdas con error: {', '.join(failed)}")
    if not any(c.report is not None for c in cells):
        logger.error("ninguna celda produjo un informe")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    source = Path(args.report)
    csv_path = source / "report.csv" if source.is_dir() else source
    if not csv_path.exists():
        raise FileNotFoundError(f"no existe {csv_path}")
    out = Path(args.output) if args.output else csv_path.parent

    config_dict: dict[str, Any] = {}
    fingerprint_path = csv_path.parent / FINGERPRINT_FILE
    if fingerprint_path.exists():
        config_dict = read_json(fingerprint_path).get("arguments", {})
    write_tables(load_report_frame(csv_path), out, report_header(config_dict))
    write_fingerprint(out, "report", {"report": str(csv_path.resolve())})
    return EXIT_OK


# ========== Parser ==========

def _epilog() -> str:
    return (
        "conjuntos de características (--feature-set):\n"
        + "\n".join(f"  {line}" for line in describe_feature_sets().splitlines())
        + "\n\nrejillas de remuestreo (--grid, celdas a lo ancho x a lo largo):\n  "
        + ", ".join(RESAMPLE_PRESETS)
    )


def _add_grid_options(parser: argparse.ArgumentParser, repeatable: bool = False) -> None:
    if repeatable:
        parser.add_argument("--grid", action="append", choices=list(RESAMPLE_PRESETS), help="rejilla (repetible)")
    else:
        parser.add_argument("--grid", choices=list(RESAMPLE_PRESETS), help="rejilla de remuestreo")
    parser.add_argument("--mode", choices=list(RESAMPLE_MODES), default="relative", help="modo de remuestreo")
    parser.add_argument("--normalize", action="store_true", help="normaliza las alturas tras remuestrear")


def build_parser() -> BSArgumentParser:
    common = BSArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="más detalle en el log")
    common.add_argument("-q", "--quiet", action="store_true", help="solo avisos y errores")
    common.add_argument("-j", "--jobs", type=int, default=-1, help="procesos en paralelo (-1 = todos los núcleos)")

    parser = BSArgumentParser(
        prog="bssoundboard",
        description="Detección de tapas de violín reducidas en anchura a partir de mallas 3D.",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="genera un corpus sintético")
    p.add_argument("--reduced", type=int, default=20)
    p.add_argument("--unreduced", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05, help="amplitud del ruido superficial (mm)")
    p.add_argument("--format", choices=["obj", "ply"], default="obj")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("elevmap", parents=[common], help="mallas → mapas de elevación")
    p.add_argument("inputs", nargs="+", help="mallas, directorios de corpus o manifiestos")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--spacing", type=float, default=DEFAULT_SPACING, help="paso de la rejilla fina (mm)")
    p.add_argument("--map-format", choices=["csv", "json"], default="csv")
    _add_grid_options(p)
    p.set_defaults(handler=cmd_elevmap)

    p = sub.add_parser("contours", parents=[common], help="mapas → perfiles de parámetros")
    p.add_argument("maps", help="directorio de salida de elevmap")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--level-step", type=float, default=DEFAULT_LEVEL_STEP)
    p.set_defaults(handler=cmd_contours)

    p = sub.add_parser(
        "features",
        parents=[common],
        help="perfiles o mapas → matriz de características",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--list-feature-sets", action="store_true", help="lista los conjuntos predefinidos y sale")
    p.add_argument("--profiles", help="directorio de salida de contours")
    p.add_argument("--maps", help="directorio de salida de elevmap")
    p.add_argument("--feature-set", choices=list(FEATURE_SETS))
    p.add_argument("-o", "--output")
    _add_grid_options(p)
    p.set_defaults(handler=cmd_features)

    p = sub.add_parser("pca", parents=[common], help="PCA con máscara común sobre mapas remuestreados")
    p.add_argument("--maps", required=True, help="directorio de salida de elevmap")
    p.add_argument("-k", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    _add_grid_options(p)
    p.set_defaults(handler=cmd_pca, grid="5x10")

    p = sub.add_parser(
        "eval",
        parents=[common],
        help="validación cruzada anidada sobre una matriz de experimentos",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("config", nargs="?", help="fichero JSON del experimento")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--dataset", help="corpus (directorio o manifest.json) si no hay fichero de experimento")
    p.add_argument("--feature-set", action="append", choices=list(FEATURE_SETS))
    p.add_argument("--pca", action="append", type=int, metavar="K")
    p.add_argument("--family", choices=["svm", "tree"], default="svm")
    p.add_argument("--kernel", action="append", choices=["linear", "rbf"])
    p.add_argument("--criterion", action="append", choices=["gini", "entropy"])
    p.add_argument("--tie-break", action="append", choices=["min", "max"])
    p.add_argument("--sweep", action="store_true", help="añade la curva leave-one-out por valor de la rejilla")
    _add_grid_options(p, repeatable=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="vuelve a generar las tablas desde report.csv")
    p.add_argument("report", help="report.csv o su directorio")
    p.add_argument("-o", "--output")
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging(-1 if args.quiet else args.verbose)
    try:
        return args.handler(args)
    except BSValidationError as e:
        logger.error(str(e))
        print(f"bssoundboard: error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BSSoundboardError, OSError) as e:
        logger.error(str(e))
        print(f"bssoundboard: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
