"""Command line driver.

Subcommands build meshes, assemble precision matrices, draw samples, fit
latent models, predict, and serve the HTTP API. Every artifact-writing run
also writes a manifest JSON (content hashes, parameters, seed, versions) so
stochastic outputs are reproducible bit for bit. Errors leave a one-line
JSON object on stderr: exit 2 for usage, 3 for invalid input, 4 for
numerical failure.
"""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

import numpy as np
import scipy.sparse as sp

from . import fem, io, report, stencil
from .areal import (
    besag_precision,
    bym2_precision,
    kronecker_precision,
    parse_graph,
    scale_besag,
    temporal_precision,
)
from .errors import InputError, NumericalError
from .gmrf import GMRF, Constraints
from .inference import (
    Component,
    GridConfig,
    LatentModel,
    fit as fit_model,
    fixed_effects_component,
    predict as predict_model,
    restore_fit,
)
from .mesh import MeshConfig, build_mesh, projection_matrix, read_mesh, write_mesh
from .priors import (
    PcPrecisionPrior,
    PcRangeSigmaPrior,
    pc_precision_logdensity,
    pc_range_sigma_logdensity,
)

__all__ = ["main"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as machine-parsable JSON."""

    def error(self, message):
        raise _UsageError(message)


def _emit_error(kind, message, code):
    print(json.dumps({"error": kind, "message": str(message)}), file=sys.stderr)
    return code


def _manifest_path(output):
    output = pathlib.Path(output)
    return output.with_name(output.stem + ".manifest.json")


def _finish(subcommand, inputs, parameters, outputs, seed=None):
    """Write the manifest next to the primary output and echo a result line."""
    primary = next(iter(outputs.values()))
    manifest = io.build_manifest(subcommand, inputs, parameters, outputs, seed=seed)
    path = _manifest_path(primary)
    io.write_manifest(path, manifest)
    print(
        json.dumps(
            {
                "written": {name: str(p) for name, p in outputs.items()},
                "manifest": str(path),
            }
        )
    )
    return 0


def _parse_pair(text, flag):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise InputError(f"{flag} expects 'value,probability'")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise InputError(f"{flag}: non-numeric entry") from exc


# ---------------------------------------------------------------------------
# mesh


def cmd_mesh_build(args):
    points, _ = io.read_points_csv(args.points)
    boundary = None
    if args.boundary:
        boundary, _ = io.read_points_csv(args.boundary)
    config = MeshConfig(
        max_edge_inner=args.max_edge,
        max_edge_outer=args.max_edge_outer,
        extension_distance=args.extend,
        min_angle=args.min_angle,
    )
    mesh = build_mesh(points, config, boundary=boundary)
    write_mesh(mesh, args.output)
    outputs = {"mesh": args.output}
    if args.figure:
        figure = pathlib.Path(args.output).with_suffix(".png")
        report.mesh_figure(mesh, figure)
        outputs["figure"] = figure
    inputs = {"points": args.points}
    if args.boundary:
        inputs["boundary"] = args.boundary
    parameters = {
        "max_edge_inner": config.max_edge_inner,
        "max_edge_outer": config.max_edge_outer,
        "extension_distance": config.extension_distance,
        "min_angle": config.min_angle,
        "stats": mesh.stats(),
    }
    return _finish("mesh build", inputs, parameters, outputs)


def cmd_mesh_info(args):
    mesh = read_mesh(args.mesh)
    print(json.dumps(mesh.stats(), sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# assemble


def _spde_parameters(args):
    """Resolve range/sigma or kappa/tau flags to SPDE coefficients."""
    has_matern = args.range is not None or args.sigma is not None
    has_raw = getattr(args, "kappa", None) is not None or getattr(args, "tau", None) is not None
    if has_matern and has_raw:
        raise InputError("give either --range/--sigma or --kappa/--tau, not both")
    if has_matern:
        if args.range is None or args.sigma is None:
            raise InputError("--range and --sigma must be given together")
        kappa, tau = fem.matern_to_spde(args.range, args.sigma, alpha=args.alpha)
        resolved = {"range": args.range, "sigma": args.sigma}
    else:
        if getattr(args, "kappa", None) is None or getattr(args, "tau", None) is None:
            raise InputError("give --range/--sigma or --kappa/--tau")
        kappa, tau = args.kappa, args.tau
        resolved = {}
    resolved.update({"kappa": kappa, "tau": tau, "alpha": args.alpha})
    return kappa, tau, resolved


def _write_precision(args, model_or_Q, subcommand, inputs, parameters):
    """Write Q plus a constraint sidecar when the model is intrinsic."""
    if isinstance(model_or_Q, GMRF):
        Q = model_or_Q.Q
        constraints = model_or_Q.constraints
    else:
        Q = model_or_Q
        constraints = None
    io.write_matrix(args.output, Q)
    outputs = {"Q": args.output}
    if constraints is not None:
        sidecar = _constraints_path(args.output)
        io.write_matrix(sidecar, constraints.C, symmetric=False)
        outputs["constraints"] = sidecar
        if np.any(constraints.e != 0):
            raise InputError("constraint sidecar supports zero-valued e only")
    return _finish(subcommand, inputs, parameters, outputs)


def _constraints_path(q_path):
    q_path = pathlib.Path(q_path)
    return q_path.with_name(q_path.stem + ".constraints.mtx")


def cmd_assemble_spde(args):
    mesh = read_mesh(args.mesh)
    kappa, tau, resolved = _spde_parameters(args)
    Q = fem.spde_precision(mesh, args.alpha, kappa, tau)
    return _write_precision(
        args, Q, "assemble spde", {"mesh": args.mesh}, resolved
    )


def cmd_assemble_barrier(args):
    mesh = read_mesh(args.mesh)
    if (args.barrier_box is None) == (args.barrier_triangles is None):
        raise InputError("give exactly one of --barrier-box or --barrier-triangles")
    if args.barrier_box is not None:
        parts = [p.strip() for p in args.barrier_box.split(",")]
        if len(parts) != 4:
            raise InputError("--barrier-box expects xmin,ymin,xmax,ymax")
        try:
            xmin, ymin, xmax, ymax = (float(p) for p in parts)
        except ValueError as exc:
            raise InputError("--barrier-box: non-numeric entry") from exc
        centroids = mesh.vertices[mesh.triangles].mean(axis=1)
        in_box = (
            (centroids[:, 0] >= xmin)
            & (centroids[:, 0] <= xmax)
            & (centroids[:, 1] >= ymin)
            & (centroids[:, 1] <= ymax)
        )
        barrier = np.nonzero(in_box)[0]
        barrier_spec = {"barrier_box": [xmin, ymin, xmax, ymax]}
        inputs = {"mesh": args.mesh}
    else:
        text = pathlib.Path(args.barrier_triangles).read_text()
        try:
            barrier = np.asarray(
                [int(tok) for tok in text.split()], dtype=np.int64
            )
        except ValueError as exc:
            raise InputError("--barrier-triangles: non-integer entry") from exc
        barrier_spec = {"barrier_triangles": str(args.barrier_triangles)}
        inputs = {"mesh": args.mesh, "barrier_triangles": args.barrier_triangles}
    Q = fem.barrier_precision(
        mesh, barrier, args.range, args.sigma, range_fraction=args.range_fraction
    )
    parameters = {
        "range": args.range,
        "sigma": args.sigma,
        "range_fraction": args.range_fraction,
        "n_barrier_triangles": int(len(barrier)),
        **barrier_spec,
    }
    return _write_precision(args, Q, "assemble barrier", inputs, parameters)


def _read_graph_arg(path, zero_based):
    return parse_graph(pathlib.Path(path).read_text(), zero_based=zero_based)


def cmd_assemble_besag(args):
    graph = _read_graph_arg(args.graph, args.zero_based)
    model = besag_precision(graph)
    if args.scaled:
        model = scale_besag(model)
    parameters = {"scaled": bool(args.scaled), "n": graph.n}
    return _write_precision(
        args, model, "assemble besag", {"graph": args.graph}, parameters
    )


def cmd_assemble_bym2(args):
    graph = _read_graph_arg(args.graph, args.zero_based)
    model = bym2_precision(graph, args.tau, args.w)
    parameters = {"tau": args.tau, "w": args.w, "n": graph.n}
    return _write_precision(
        args, model, "assemble bym2", {"graph": args.graph}, parameters
    )


def cmd_assemble_kron(args):
    time_model = temporal_precision(args.time_kind, args.T, rho=args.rho)
    if (args.graph is None) == (args.mesh is None):
        raise InputError("give exactly one of --graph or --mesh for the space model")
    if args.graph is not None:
        graph = _read_graph_arg(args.graph, args.zero_based)
        space_model = scale_besag(besag_precision(graph))
        inputs = {"graph": args.graph}
        space_spec = {"space": "besag_scaled", "n": graph.n}
    else:
        mesh = read_mesh(args.mesh)
        kappa, tau, resolved = _spde_parameters(args)
        Q_space = fem.spde_precision(mesh, args.alpha, kappa, tau)
        space_model = GMRF(Q_space, label="spde")
        inputs = {"mesh": args.mesh}
        space_spec = {"space": "spde", **resolved}
    model = kronecker_precision(time_model, space_model)
    parameters = {
        "time_kind": args.time_kind,
        "T": args.T,
        "rho": args.rho,
        **space_spec,
    }
    return _write_precision(args, model, "assemble kron", inputs, parameters)


def cmd_assemble_grid_stencil(args):
    Q = stencil.grid_precision(args.rows, args.cols, h=args.h, kappa=args.kappa)
    parameters = {
        "rows": args.rows,
        "cols": args.cols,
        "h": args.h,
        "kappa": args.kappa,
    }
    return _write_precision(args, Q, "assemble grid-stencil", {}, parameters)


# ---------------------------------------------------------------------------
# sample


def cmd_sample(args):
    Q = io.read_matrix(args.Q)
    inputs = {"Q": args.Q}
    constraints = None
    constraints_path = (
        pathlib.Path(args.constraints)
        if args.constraints
        else _constraints_path(args.Q)
    )
    if constraints_path.exists():
        C = io.read_matrix(constraints_path)
        constraints = Constraints(C, np.zeros(C.shape[0]))
        inputs["constraints"] = constraints_path
    elif args.constraints:
        raise InputError(f"constraints file not found: {args.constraints}")
    model = GMRF(Q, constraints=constraints)
    draws = model.sample(args.n, rng=args.seed)
    io.write_samples_csv(args.output, draws)
    outputs = {"samples": args.output}
    if not args.no_figure:
        figure = pathlib.Path(args.output).with_suffix(".png")
        if args.mesh:
            mesh = read_mesh(args.mesh)
            if mesh.n_vertices != model.n:
                raise InputError(
                    f"mesh has {mesh.n_vertices} vertices, Q has {model.n} nodes"
                )
            inputs["mesh"] = args.mesh
            report.field_figure(mesh, draws[0], figure, title="sample 0")
        else:
            report.samples_figure(draws, figure)
        outputs["figure"] = figure
    parameters = {"n": args.n, "constrained": constraints is not None}
    return _finish("sample", inputs, parameters, outputs, seed=args.seed)


# ---------------------------------------------------------------------------
# fit / predict model construction


def _spde_component(mesh, points, alpha, prior_range, prior_sigma):
    """Matern field on a mesh with theta = (log range, log sigma) and the
    range-sigma complexity prior (Jacobian included)."""
    A, inside = projection_matrix(mesh, points)
    if not np.all(inside):
        raise InputError(
            f"{int((~inside).sum())} observation locations fall outside the mesh"
        )
    prior = PcRangeSigmaPrior(
        prior_range[0], prior_range[1], prior_sigma[0], prior_sigma[1]
    )

    def builder(theta):
        kappa, tau = fem.matern_to_spde(
            float(np.exp(theta[0])), float(np.exp(theta[1])), alpha=alpha
        )
        return GMRF(fem.spde_precision(mesh, alpha, kappa, tau), label="spde")

    def log_prior(theta):
        return (
            pc_range_sigma_logdensity(
                float(np.exp(theta[0])), float(np.exp(theta[1])), prior
            )
            + theta[0]
            + theta[1]
        )

    return Component("spde", A, builder, n_theta=2, log_prior=log_prior)


def _besag_component(graph, regions, prior_precision):
    """Scaled structured field with theta = log precision and the
    complexity prior on the precision (Jacobian included)."""
    scaled = scale_besag(besag_precision(graph))
    regions = np.asarray(regions)
    if np.any(regions != np.round(regions)):
        raise InputError("region column must hold integer indices")
    regions = regions.astype(np.int64)
    if regions.min() < 0 or regions.max() >= graph.n:
        raise InputError(
            f"region indices must lie in [0, {graph.n - 1}] (zero-based)"
        )
    m = len(regions)
    A = sp.csr_matrix(
        (np.ones(m), (np.arange(m), regions)), shape=(m, graph.n)
    )
    prior = PcPrecisionPrior(prior_precision[0], prior_precision[1])

    def builder(theta):
        precision = float(np.exp(theta[0]))
        return GMRF(
            sp.csc_matrix(scaled.Q * precision),
            constraints=scaled.constraints,
            label="besag_scaled",
        )

    def log_prior(theta):
        tau = float(np.exp(theta[0]))
        return pc_precision_logdensity(tau, prior) + theta[0]

    return Component("besag", A, builder, n_theta=1, log_prior=log_prior)


def _resolve_fit_model(args, data_columns, points=None, graph=None, mesh=None):
    """Shared fit/predict model assembly; returns (model, spec dict)."""
    y = data_columns.get("value")
    if y is None:
        raise InputError("data file needs a 'value' column")
    offset = None
    if args.likelihood == "poisson" and "expected" in data_columns:
        expected = data_columns["expected"]
        if np.any(expected <= 0):
            raise InputError("'expected' column must be positive")
        offset = np.log(expected)
    components = []
    spec = {"likelihood": args.likelihood, "intercept": not args.no_intercept}
    if points is not None:
        prior_range = _parse_pair(args.prior_range, "--prior-range") if args.prior_range else None
        if prior_range is None:
            extent = float(np.linalg.norm(np.ptp(points, axis=0)))
            prior_range = (0.2 * extent, 0.05)
        prior_sigma = (
            _parse_pair(args.prior_sigma, "--prior-sigma")
            if args.prior_sigma
            else (1.0, 0.05)
        )
        components.append(
            _spde_component(mesh, points, args.alpha, prior_range, prior_sigma)
        )
        spec.update(
            {
                "field": "spde",
                "alpha": args.alpha,
                "prior_range": list(prior_range),
                "prior_sigma": list(prior_sigma),
            }
        )
    else:
        prior_precision = (
            _parse_pair(args.prior_precision, "--prior-precision")
            if args.prior_precision
            else (1.0, 0.01)
        )
        components.append(
            _besag_component(graph, data_columns["region"], prior_precision)
        )
        spec.update(
            {"field": "besag_scaled", "prior_precision": list(prior_precision)}
        )
    if not args.no_intercept:
        components.append(fixed_effects_component(np.ones((len(y), 1))))
    noise_log_prior = None
    if args.likelihood == "gaussian":
        pair = (
            _parse_pair(args.prior_noise, "--prior-noise")
            if args.prior_noise
            else (max(float(np.std(y)), 1e-6), 0.01)
        )
        noise_prior = PcPrecisionPrior(pair[0], pair[1])
        spec["prior_noise"] = list(pair)

        def noise_log_prior(log_tau):
            return pc_precision_logdensity(float(np.exp(log_tau)), noise_prior) + log_tau

    model = LatentModel(
        y,
        components,
        likelihood=args.likelihood,
        offset=offset,
        noise_log_prior=noise_log_prior,
    )
    return model, spec


def _load_fit_inputs(args):
    """Returns (model, spec, mesh or None, graph or None)."""
    if (args.mesh is None) == (args.graph is None):
        raise InputError("give exactly one of --mesh or --graph")
    data_columns = io.read_csv_columns(args.data)
    if args.mesh is not None:
        if "x" not in data_columns or "y" not in data_columns:
            raise InputError("mesh-based data needs 'x' and 'y' columns")
        points = np.column_stack([data_columns["x"], data_columns["y"]])
        mesh = read_mesh(args.mesh)
        model, spec = _resolve_fit_model(
            args, data_columns, points=points, mesh=mesh
        )
        return model, spec, mesh, None
    if "region" not in data_columns:
        raise InputError("graph-based data needs a 'region' column")
    graph = _read_graph_arg(args.graph, args.zero_based)
    model, spec = _resolve_fit_model(args, data_columns, graph=graph)
    return model, spec, None, graph


def cmd_fit(args):
    model, spec, mesh, graph = _load_fit_inputs(args)
    config = GridConfig(step=args.grid_step, drop=args.grid_drop)
    theta0 = None
    if args.theta0:
        theta0 = np.asarray(
            [float(v) for v in args.theta0.split(",")], dtype=np.float64
        )
    result = fit_model(
        model, strategy=args.strategy, grid_config=config, theta0=theta0,
        seed=args.seed,
    )
    payload = result.to_dict()
    payload["model"] = spec
    payload["data_sha256"] = io.sha256_file(args.data)
    output = pathlib.Path(args.output)
    with open(output, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs = {"fit": output}

    latent_csv = output.with_name(output.stem + ".latent.csv")
    n_field = model.components[0].n_latent
    columns = {}
    if graph is not None:
        columns["region"] = np.arange(n_field, dtype=np.float64)
    columns["mean"] = result.latent_mean[:n_field]
    columns["sd"] = result.latent_sd[:n_field]
    io.write_csv(latent_csv, columns)
    outputs["latent"] = latent_csv

    if not args.no_figure:
        figure = output.with_suffix(".png")
        if mesh is not None:
            report.mean_sd_figure(
                mesh,
                result.latent_mean[:n_field],
                result.latent_sd[:n_field],
                figure,
                title="latent field",
            )
        else:
            report.curve_figure(
                np.arange(n_field),
                {
                    "mean": result.latent_mean[:n_field],
                    "sd": result.latent_sd[:n_field],
                },
                figure,
                title="latent field",
                xlabel="region",
            )
        outputs["figure"] = figure

    inputs = {"data": args.data}
    inputs["mesh" if args.mesh else "graph"] = args.mesh or args.graph
    parameters = {
        "strategy": args.strategy,
        "grid_step": args.grid_step,
        "grid_drop": args.grid_drop,
        "model": spec,
        "theta_mode": [float(v) for v in result.theta_mode],
    }
    return _finish("fit", inputs, parameters, outputs, seed=args.seed)


def cmd_predict(args):
    fit_payload = json.loads(pathlib.Path(args.fit).read_text())
    stored_sha = fit_payload.get("data_sha256")
    if stored_sha and stored_sha != io.sha256_file(args.data):
        raise InputError("data file does not match the one used for the fit")
    spec = fit_payload.get("model", {})
    args.likelihood = spec.get("likelihood", args.likelihood)
    args.no_intercept = not spec.get("intercept", True)
    if "alpha" in spec:
        args.alpha = spec["alpha"]
    if "prior_range" in spec:
        args.prior_range = ",".join(str(v) for v in spec["prior_range"])
    if "prior_sigma" in spec:
        args.prior_sigma = ",".join(str(v) for v in spec["prior_sigma"])
    if "prior_precision" in spec:
        args.prior_precision = ",".join(str(v) for v in spec["prior_precision"])
    if "prior_noise" in spec:
        args.prior_noise = ",".join(str(v) for v in spec["prior_noise"])
    model, _, mesh, graph = _load_fit_inputs(args)

    grid = fit_payload.get("theta_grid")
    if not grid:
        raise InputError("fit file has no theta grid")
    result = restore_fit(
        model,
        [entry["theta"] for entry in grid],
        [entry["log_posterior"] for entry in grid],
        [entry["weight"] for entry in grid],
        seed=args.seed,
    )

    # projection rows at the prediction targets, intercept column appended
    if mesh is not None:
        if not args.at:
            raise InputError("mesh-based prediction needs --at locations")
        new_points, _ = io.read_points_csv(args.at)
        A_new, inside = projection_matrix(mesh, new_points)
        if not np.all(inside):
            raise InputError(
                f"{int((~inside).sum())} prediction locations fall outside the mesh"
            )
        location_columns = {"x": new_points[:, 0], "y": new_points[:, 1]}
        at_input = {"at": args.at}
    else:
        if args.at_regions:
            columns = io.read_csv_columns(args.at_regions)
            if "region" not in columns:
                raise InputError("--at-regions file needs a 'region' column")
            raw = columns["region"]
            if np.any(raw != np.round(raw)):
                raise InputError("region column must hold integer indices")
            regions = raw.astype(np.int64)
            at_input = {"at_regions": args.at_regions}
        else:
            regions = np.arange(graph.n)
            at_input = {}
        if regions.min() < 0 or regions.max() >= graph.n:
            raise InputError(f"region indices must lie in [0, {graph.n - 1}]")
        A_new = sp.csr_matrix(
            (np.ones(len(regions)), (np.arange(len(regions)), regions)),
            shape=(len(regions), graph.n),
        )
        location_columns = {"region": regions.astype(np.float64)}
    if not args.no_intercept:
        ones = sp.csr_matrix(np.ones((A_new.shape[0], 1)))
        A_new = sp.hstack([A_new, ones], format="csr")

    summary = predict_model(result, A_new, n_draws=args.n_draws, rng=args.seed)
    columns = dict(location_columns)
    for key in ("mean", "sd", "q025", "q25", "q50", "q75", "q975"):
        columns[key] = summary[key]
    io.write_csv(args.output, columns)
    outputs = {"predictions": args.output}
    if not args.no_figure:
        figure = pathlib.Path(args.output).with_suffix(".png")
        order = np.arange(A_new.shape[0])
        report.curve_figure(
            order,
            {k: summary[k] for k in ("q025", "q50", "q975")},
            figure,
            title="predictive quantiles",
            xlabel="target index",
        )
        outputs["figure"] = figure
    inputs = {"fit": args.fit, "data": args.data, **at_input}
    inputs["mesh" if args.mesh else "graph"] = args.mesh or args.graph
    parameters = {"n_draws": args.n_draws, "model": spec}
    return _finish("predict", inputs, parameters, outputs, seed=args.seed)


def cmd_serve(args):
    from .service import run_server

    run_server(host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_fit_model_flags(p):
    p.add_argument("--data", required=True, help="CSV with x,y,value or region,value")
    p.add_argument("--mesh", help="mesh JSON for a continuous field")
    p.add_argument("--graph", help="adjacency file for an areal field")
    p.add_argument("--zero-based", action="store_true",
                   help="graph file uses zero-based ids")
    p.add_argument("--likelihood", choices=("gaussian", "poisson"),
                   default="gaussian")
    p.add_argument("--alpha", type=int, default=2, choices=(2, 3, 4))
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--prior-range", help="'r0,alpha': P(range < r0) = alpha")
    p.add_argument("--prior-sigma", help="'s0,alpha': P(sigma > s0) = alpha")
    p.add_argument("--prior-precision",
                   help="'U,alpha': P(1/sqrt(tau) > U) = alpha for the areal field")
    p.add_argument("--prior-noise",
                   help="'U,alpha': complexity prior on the noise precision")
    p.add_argument("--no-figure", action="store_true")


def build_parser():
    parser = _Parser(prog="spdefield", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_mesh = sub.add_parser("mesh", help="build or inspect meshes")
    mesh_sub = p_mesh.add_subparsers(dest="mesh_command", required=True)
    p_build = mesh_sub.add_parser("build")
    p_build.add_argument("--points", required=True)
    p_build.add_argument("--boundary")
    p_build.add_argument("--max-edge", type=float, required=True)
    p_build.add_argument("--max-edge-outer", type=float)
    p_build.add_argument("--extend", type=float, default=0.0)
    p_build.add_argument("--min-angle", type=float, default=21.0)
    p_build.add_argument("-o", "--output", required=True)
    p_build.add_argument("--figure", action="store_true")
    p_build.set_defaults(func=cmd_mesh_build)
    p_info = mesh_sub.add_parser("info")
    p_info.add_argument("--mesh", required=True)
    p_info.set_defaults(func=cmd_mesh_info)

    p_assemble = sub.add_parser("assemble", help="assemble precision matrices")
    asm = p_assemble.add_subparsers(dest="assemble_command", required=True)

    p_spde = asm.add_parser("spde")
    p_spde.add_argument("--mesh", required=True)
    p_spde.add_argument("--range", type=float)
    p_spde.add_argument("--sigma", type=float)
    p_spde.add_argument("--kappa", type=float)
    p_spde.add_argument("--tau", type=float)
    p_spde.add_argument("--alpha", type=int, default=2, choices=(1, 2, 3, 4))
    p_spde.add_argument("-o", "--output", required=True)
    p_spde.set_defaults(func=cmd_assemble_spde)

    p_barrier = asm.add_parser("barrier")
    p_barrier.add_argument("--mesh", required=True)
    p_barrier.add_argument("--range", type=float, required=True)
    p_barrier.add_argument("--sigma", type=float, required=True)
    p_barrier.add_argument("--range-fraction", type=float, default=0.2)
    p_barrier.add_argument("--barrier-box")
    p_barrier.add_argument("--barrier-triangles")
    p_barrier.add_argument("-o", "--output", required=True)
    p_barrier.set_defaults(func=cmd_assemble_barrier)

    p_besag = asm.add_parser("besag")
    p_besag.add_argument("--graph", required=True)
    p_besag.add_argument("--zero-based", action="store_true")
    p_besag.add_argument("--scaled", action="store_true")
    p_besag.add_argument("-o", "--output", required=True)
    p_besag.set_defaults(func=cmd_assemble_besag)

    p_bym2 = asm.add_parser("bym2")
    p_bym2.add_argument("--graph", required=True)
    p_bym2.add_argument("--zero-based", action="store_true")
    p_bym2.add_argument("--tau", type=float, required=True)
    p_bym2.add_argument("--w", type=float, required=True)
    p_bym2.add_argument("-o", "--output", required=True)
    p_bym2.set_defaults(func=cmd_assemble_bym2)

    p_kron = asm.add_parser("kron")
    p_kron.add_argument("--time-kind", required=True,
                        choices=("iid", "ar1", "rw1", "rw2"))
    p_kron.add_argument("--T", type=int, required=True)
    p_kron.add_argument("--rho", type=float)
    p_kron.add_argument("--graph")
    p_kron.add_argument("--zero-based", action="store_true")
    p_kron.add_argument("--mesh")
    p_kron.add_argument("--range", type=float)
    p_kron.add_argument("--sigma", type=float)
    p_kron.add_argument("--kappa", type=float)
    p_kron.add_argument("--tau", type=float)
    p_kron.add_argument("--alpha", type=int, default=2, choices=(1, 2, 3, 4))
    p_kron.add_argument("-o", "--output", required=True)
    p_kron.set_defaults(func=cmd_assemble_kron)

    p_grid = asm.add_parser("grid-stencil")
    p_grid.add_argument("--rows", type=int, required=True)
    p_grid.add_argument("--cols", type=int, required=True)
    p_grid.add_argument("--h", type=float, default=1.0)
    p_grid.add_argument("--kappa", type=float, default=0.0)
    p_grid.add_argument("-o", "--output", required=True)
    p_grid.set_defaults(func=cmd_assemble_grid_stencil)

    p_sample = sub.add_parser("sample", help="draw field realizations")
    p_sample.add_argument("--Q", required=True)
    p_sample.add_argument("--constraints")
    p_sample.add_argument("--n", type=int, required=True)
    p_sample.add_argument("--seed", type=int, required=True)
    p_sample.add_argument("--mesh")
    p_sample.add_argument("--no-figure", action="store_true")
    p_sample.add_argument("-o", "--output", default="samples.csv")
    p_sample.set_defaults(func=cmd_sample)

    p_fit = sub.add_parser("fit", help="explore the hyperparameter posterior")
    _add_fit_model_flags(p_fit)
    p_fit.add_argument("--strategy", choices=("eb", "grid"), default="eb")
    p_fit.add_argument("--grid-step", type=float, default=0.5)
    p_fit.add_argument("--grid-drop", type=float, default=2.5)
    p_fit.add_argument("--theta0", help="comma-separated starting point")
    p_fit.add_argument("--seed", type=int, required=True)
    p_fit.add_argument("-o", "--output", required=True)
    p_fit.set_defaults(func=cmd_fit)

    p_predict = sub.add_parser("predict", help="predictive summaries from a fit")
    _add_fit_model_flags(p_predict)
    p_predict.add_argument("--fit", required=True)
    p_predict.add_argument("--at", help="CSV of x,y prediction locations")
    p_predict.add_argument("--at-regions", help="CSV with a region column")
    p_predict.add_argument("--n-draws", type=int, default=1000)
    p_predict.add_argument("--seed", type=int, required=True)
    p_predict.add_argument("-o", "--output", required=True)
    p_predict.set_defaults(func=cmd_predict)

    p_serve = sub.add_parser("serve", help="run the local HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8731)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return _emit_error("UsageError", exc, 2)
    try:
        return args.func(args)
    except InputError as exc:
        return _emit_error(type(exc).__name__, exc, 3)
    except NumericalError as exc:
        return _emit_error(type(exc).__name__, exc, 4)


if __name__ == "__main__":
    sys.exit(main())
