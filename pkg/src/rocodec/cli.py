"""Command-line codec: encode, decode, build-dual, analyze, psnr.

Exit codes: 0 success, 2 usage or invalid parameters, 3 format errors,
4 numerical errors, 5 resource or storage errors.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dual as dual_mod
from . import metrics, pgm, roc
from .analysis import (
    BOUNDARY_ZERO,
    AnalysisOperator,
    Image,
    build_analysis_operator,
    forward,
)
from .errors import (
    CacheMissingError,
    CodecError,
    FormatError,
    InvalidParameterError,
    NumericalError,
    ResourceError,
    StorageError,
)
from .frame_bounds import verify_frame_condition
from .pyramid import DoGParams, grid_spec

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_NUMERICAL = 4
EXIT_RESOURCE = 5

MIN_BLOCK_SIZE = 16


@dataclass
class CliConfig:
    """Validated knobs shared by the compute commands."""

    layers: int | None = None
    fraction: float = 1.0
    block_size: int = 64
    cache_dir: Path | None = None
    mode: str = "straightforward"
    threads: int | None = None

    def __post_init__(self):
        if not (0.0 < self.fraction <= 1.0):
            raise InvalidParameterError(
                f"--fraction must lie in (0, 1], got {self.fraction}"
            )
        if self.block_size < MIN_BLOCK_SIZE:
            raise InvalidParameterError(
                f"--block-size must be >= {MIN_BLOCK_SIZE}, got {self.block_size}"
            )
        if self.mode not in ("straightforward", "dual"):
            raise InvalidParameterError(f"unknown --mode {self.mode}")
        if self.threads is not None and self.threads < 1:
            raise InvalidParameterError(f"--threads must be >= 1, got {self.threads}")


def _read_square_image(path) -> Image:
    raw = pgm.read_pgm(path)
    if raw.shape[0] != raw.shape[1]:
        raise FormatError(
            f"{path}: only square images are supported, got "
            f"{raw.shape[1]}x{raw.shape[0]}"
        )
    # 8-bit values used as reals without rescaling, so PSNR keeps MAX = 255
    return Image.from_array(raw.astype(np.float64))


def _to_uint8(image: Image) -> np.ndarray:
    return np.clip(np.rint(image.samples), 0.0, 255.0).astype(np.uint8)


def _operator_for_header(header: roc.CodeHeader) -> AnalysisOperator:
    grid = grid_spec(header.image_side, header.layer_count, header.params)
    return build_analysis_operator(grid, header.params, boundary=header.boundary)


def cmd_encode(args) -> int:
    CliConfig(layers=args.layers)
    image = _read_square_image(args.input)
    params = DoGParams()
    grid = grid_spec(image.side, args.layers, params)
    op = build_analysis_operator(grid, params, boundary=BOUNDARY_ZERO)
    code = roc.encode(forward(op, image), roc.header_for_operator(op))
    stream = roc.serialize(code)
    Path(args.output).write_bytes(stream)
    print(
        f"encoded {args.input}: side={image.side} layers={grid.layer_count} "
        f"cells={grid.total_cells} bytes={len(stream)}"
    )
    return EXIT_OK


def cmd_decode(args) -> int:
    config = CliConfig(
        fraction=args.fraction,
        block_size=args.block_size,
        cache_dir=Path(args.cache) if args.cache else None,
        mode=args.mode,
        threads=args.threads,
    )
    code = roc.deserialize(Path(args.input).read_bytes())
    op = _operator_for_header(code.header)
    code = roc.truncate(code, config.fraction)
    if config.mode == "dual":
        try:
            cache = dual_mod.load_dual(op, cache_root=config.cache_dir)
        except CacheMissingError:
            if not args.build_dual:
                raise
            cache = dual_mod.build_dual(
                op, block_size=config.block_size,
                cache_root=config.cache_dir, threads=config.threads,
            )
        decoded = dual_mod.dual_decode(op, cache, code, threads=config.threads)
    else:
        decoded = roc.straightforward_decode(op, code)
    pgm.write_pgm(args.output, _to_uint8(decoded))
    line = (
        f"decoded mode={config.mode} fraction={config.fraction:g} "
        f"N_s={code.n_retained}"
    )
    if args.reference:
        reference = _read_square_image(args.reference)
        raw_psnr = metrics.psnr(reference, decoded)
        if config.mode == "dual":
            normalized = decoded
        else:
            normalized = roc.straightforward_decode(op, code, weighting="matched")
        norm_psnr = metrics.psnr_aligned(reference, normalized)
        line += f" psnr={_fmt_db(raw_psnr)} psnr_normalized={_fmt_db(norm_psnr)}"
    print(line)
    return EXIT_OK


def _fmt_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.2f}"


def cmd_build_dual(args) -> int:
    config = CliConfig(
        layers=args.layers,
        block_size=args.block_size,
        cache_dir=Path(args.cache) if args.cache else None,
        threads=args.threads,
    )
    if args.from_code:
        header = roc.deserialize(Path(args.from_code).read_bytes()).header
        op = _operator_for_header(header)
    else:
        if args.size is None:
            raise InvalidParameterError("build-dual needs --size or --from-code")
        params = DoGParams()
        grid = grid_spec(args.size, config.layers, params)
        op = build_analysis_operator(grid, params, boundary=BOUNDARY_ZERO)
    cache = dual_mod.build_dual(
        op, block_size=config.block_size,
        cache_root=config.cache_dir, threads=config.threads,
        force=args.force,
    )
    print(f"dual cache ready: {cache.path} residual={cache.residual:.3e}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    CliConfig(layers=args.layers)
    params = DoGParams()
    grid = grid_spec(args.size, args.layers, params)
    op = build_analysis_operator(grid, params, boundary=BOUNDARY_ZERO)
    report = verify_frame_condition(op, args.trials, seed=args.seed)
    sys.stdout.write(report.as_table())
    if args.output:
        Path(args.output).write_text(report.as_key_values())
        print(f"report written to {args.output}")
    return EXIT_OK


def cmd_psnr(args) -> int:
    a = pgm.read_pgm(args.image_a)
    b = pgm.read_pgm(args.image_b)
    if a.shape != b.shape:
        raise InvalidParameterError(
            f"dimension mismatch: {a.shape} vs {b.shape}"
        )
    value = metrics.psnr(a.astype(np.float64), b.astype(np.float64))
    print("inf" if math.isinf(value) else f"{value:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rocodec",
        description="Rank-order-coding retina codec with exact dual-frame decoding",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="image -> rank order code stream")
    p.add_argument("input", help="square 8-bit binary PGM")
    p.add_argument("output", help="output .roc stream")
    p.add_argument("--layers", type=int, default=None,
                   help="dyadic layer count K (default: maximal for the image)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="code stream -> reconstructed image")
    p.add_argument("input", help="input .roc stream")
    p.add_argument("output", help="output PGM")
    p.add_argument("--mode", choices=("straightforward", "dual"),
                   default="straightforward")
    p.add_argument("--fraction", type=float, default=1.0,
                   help="fraction of cells to keep, in (0, 1]")
    p.add_argument("--block-size", type=int, default=64)
    p.add_argument("--cache", default=None,
                   help=f"dual cache dir (default ${dual_mod.CACHE_ENV_VAR} "
                        f"or ~/.cache/rocodec)")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--reference", default=None,
                   help="reference PGM; prints PSNR metrics when given")
    p.add_argument("--build-dual", action="store_true",
                   help="build the dual cache if missing")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("build-dual", help="precompute the inverse frame operator")
    p.add_argument("--size", type=int, default=None, help="image side in pixels")
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--from-code", default=None,
                   help="take geometry from an existing .roc stream")
    p.add_argument("--block-size", type=int, default=64)
    p.add_argument("--cache", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--force", action="store_true", help="rebuild even on cache hit")
    p.set_defaults(func=cmd_build_dual)

    p = sub.add_parser("analyze", help="frame bounds and conditioning report")
    p.add_argument("--size", type=int, default=33)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=20240901)
    p.add_argument("--output", default=None, help="write key-value report here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("psnr", help="PSNR between two PGM images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.set_defaults(func=cmd_psnr)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidParameterError as exc:
        print(f"rocodec: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"rocodec: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericalError as exc:
        print(f"rocodec: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ResourceError, StorageError) as exc:
        print(f"rocodec: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except CodecError as exc:  # safety net for future error classes
        print(f"rocodec: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except OSError as exc:
        print(f"rocodec: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
