//! `surfvor`: surface Voronoi diagrams from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use surface_voronoi::fixtures::{icosphere, planar_fixture, random_sites, thin_sheet, torus};
use surface_voronoi::io::{load_mesh, parse_breaklines, parse_sites, write_sites, MeshFormat};
use surface_voronoi::{
    compute_diagram, BreaklineSet, DensityField, SiteSet, SiteSpec, Solver, SurfaceVoronoiDiagram, TriangleMesh,
    Vec3,
};

const COVERAGE_TOL: f64 = 1e-6;
const PLANAR_TOL: f64 = 1e-9;
const BENCH_REPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverKind {
    Euclidean,
    Fmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Voronoi,
    Power,
    Remesh,
    Validate,
    Bench,
}

#[derive(Debug, Parser)]
#[command(name = "surfvor", version, about = "Voronoi diagrams on triangle-mesh surfaces")]
struct Cli {
    /// Input mesh (.obj or .off).
    #[arg(long, conflicts_with = "fixture", required_unless_present = "fixture")]
    mesh: Option<PathBuf>,
    /// Built-in mesh: planar:FACES, icosphere:LEVEL, torus:NU:NV or sheet:LEVEL:THICKNESS.
    #[arg(long)]
    fixture: Option<String>,
    /// Sites file with `p face b1 b2 b3 [w]` and `c x1 y1 z1 ... [w]` records.
    #[arg(long, conflicts_with = "random_sites")]
    sites: Option<PathBuf>,
    /// Sample N area-uniform point sites instead of reading a file.
    #[arg(long, value_name = "N")]
    random_sites: Option<usize>,
    #[arg(long, value_enum, default_value_t = SolverKind::Euclidean)]
    solver: SolverKind,
    #[arg(long, value_enum, default_value_t = Mode::Voronoi)]
    mode: Mode,
    /// constant:C, linear:AXIS:A:B or radial:X,Y,Z:A:B (Euclidean solver only).
    #[arg(long)]
    density: Option<String>,
    /// Breakline polylines, one `c x1 y1 z1 x2 y2 z2 ...` record per line.
    #[arg(long)]
    breaklines: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for the per-face stage; 0 uses all cores.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Site counts for `--mode bench`.
    #[arg(long, value_delimiter = ',', default_value = "100,300,500,700,900")]
    site_counts: Vec<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let (mesh, mesh_name) = load_input_mesh(cli, &mut rng)?;
    let density = cli.density.as_deref().map(parse_density).transpose()?;
    if density.is_some() && cli.solver != SolverKind::Euclidean {
        bail!("--density works only with --solver euclidean");
    }
    let breaklines = match &cli.breaklines {
        Some(path) => {
            let text = read(path, "breaklines")?;
            let lines = parse_breaklines(&text).with_context(|| format!("parsing {}", path.display()))?;
            BreaklineSet::trace(&mesh, &lines).context("tracing breaklines on the mesh")?
        }
        None => BreaklineSet::empty(),
    };
    if cli.mode == Mode::Bench {
        return bench(cli, &mesh, &mesh_name, density, &breaklines, &mut rng);
    }

    let (specs, generated) = match (&cli.sites, cli.random_sites) {
        (Some(path), _) => {
            let text = read(path, "sites")?;
            (parse_sites(&text).with_context(|| format!("parsing {}", path.display()))?, false)
        }
        (None, Some(n)) => (random_sites(&mesh, n, &mut rng), true),
        (None, None) => bail!("no sites given; pass --sites FILE or --random-sites N"),
    };
    let sites = SiteSet::new(&mesh, specs.clone()).context("placing sites on the mesh")?;
    let power = match cli.mode {
        Mode::Power => {
            if !sites.has_weights() {
                bail!("power mode needs at least one site with a nonzero weight");
            }
            true
        }
        Mode::Validate => sites.has_weights(),
        _ => false,
    };
    let solver = make_solver(cli.solver, density, power);
    let vd = compute_diagram(&mesh, &sites, &solver, &breaklines, cli.threads)?;
    report_stats(&vd);

    vd.write_outputs(&mesh, &cli.out)
        .with_context(|| format!("writing outputs to {}", cli.out.display()))?;
    if generated {
        write_file(&cli.out.join("sites.txt"), &write_sites(&specs))?;
    }
    match cli.mode {
        Mode::Remesh => {
            let dual = vd.extract_dual(&mesh, &sites);
            write_file(&cli.out.join("dual.obj"), &dual.to_obj())?;
            let m = dual.manifold_report();
            eprintln!(
                "dual: {} vertices, {} faces, manifold {}, boundary edges {}, non-generic junctions {}",
                dual.vertices.len(),
                dual.faces.len(),
                m.is_manifold(),
                m.boundary_edges,
                dual.non_generic().count()
            );
            Ok(true)
        }
        Mode::Validate => Ok(validate(&vd, &mesh, &sites, power)),
        _ => Ok(true),
    }
}

fn read(path: &Path, what: &str) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {what} file {}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_input_mesh(cli: &Cli, rng: &mut ChaCha8Rng) -> Result<(TriangleMesh, String)> {
    if let Some(spec) = &cli.fixture {
        return Ok((parse_fixture(spec, rng)?, spec.clone()));
    }
    let path = cli.mesh.as_ref().context("pass --mesh FILE or --fixture SPEC")?;
    let format = MeshFormat::from_path(path)
        .with_context(|| format!("{}: unknown mesh format, expected .obj or .off", path.display()))?;
    let mesh = load_mesh(path, format).with_context(|| format!("loading mesh {}", path.display()))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok((mesh, name))
}

fn parse_fixture(spec: &str, rng: &mut ChaCha8Rng) -> Result<TriangleMesh> {
    let parts: Vec<&str> = spec.split(':').collect();
    let int = |s: &str| {
        s.parse::<usize>()
            .with_context(|| format!("bad integer `{s}` in fixture `{spec}`"))
    };
    Ok(match parts.as_slice() {
        ["planar", faces] => planar_fixture(int(faces)?.max(2), rng),
        ["icosphere", level] => icosphere(int(level)?.min(7)),
        ["torus", nu, nv] => torus(1.0, 0.4, int(nu)?.max(3), int(nv)?.max(3)),
        ["sheet", level, t] => {
            let t: f64 = t
                .parse()
                .with_context(|| format!("bad thickness `{t}` in fixture `{spec}`"))?;
            thin_sheet(int(level)?.min(7), 1.0, 0.7, t)
        }
        _ => bail!("unknown fixture `{spec}`; expected planar:FACES, icosphere:LEVEL, torus:NU:NV or sheet:LEVEL:THICKNESS"),
    })
}

fn parse_density(spec: &str) -> Result<DensityField> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| {
        s.parse::<f64>()
            .with_context(|| format!("bad number `{s}` in density `{spec}`"))
    };
    Ok(match parts.as_slice() {
        ["constant", c] => DensityField::constant(num(c)?),
        ["linear", axis, a, b] => {
            let axis = match *axis {
                "x" | "0" => 0,
                "y" | "1" => 1,
                "z" | "2" => 2,
                other => bail!("bad axis `{other}` in density `{spec}`; expected x, y or z"),
            };
            DensityField::linear_axis(axis, num(a)?, num(b)?)
        }
        ["radial", center, a, b] => {
            let c = center.split(',').map(num).collect::<Result<Vec<f64>>>()?;
            if c.len() != 3 {
                bail!("radial density center needs three coordinates, got `{center}`");
            }
            DensityField::radial(Vec3::new(c[0], c[1], c[2]), num(a)?, num(b)?)
        }
        _ => bail!("unknown density `{spec}`; expected constant:C, linear:AXIS:A:B or radial:X,Y,Z:A:B"),
    })
}

fn make_solver(kind: SolverKind, density: Option<DensityField>, power: bool) -> Solver {
    let solver = match kind {
        SolverKind::Euclidean => Solver::euclidean(),
        SolverKind::Fmm => Solver::fast_marching(),
    };
    let solver = match density {
        Some(d) => solver.with_density(d),
        None => solver,
    };
    solver.with_power(power)
}

fn report_stats(vd: &SurfaceVoronoiDiagram) {
    eprintln!(
        "sweep: {} events popped, {} dominated, max survivors per face {}; envelope operations {}",
        vd.sweep.events_popped, vd.sweep.dominated, vd.sweep.max_survivors, vd.envelope_operations
    );
}

fn validate(vd: &SurfaceVoronoiDiagram, mesh: &TriangleMesh, sites: &SiteSet, power: bool) -> bool {
    let cons = vd.check_consistence();
    println!(
        "consistence: {} (max edge mismatch {:.3e}, {} breakpoints, eps {:.3e})",
        verdict(cons.ok),
        cons.max_mismatch,
        cons.breakpoints.len(),
        vd.stitch_eps
    );
    let conn = vd.check_connectedness(mesh);
    let conn_ok = conn.ok(COVERAGE_TOL);
    let split = conn.components_per_site.iter().filter(|&&c| c > 1).count();
    let empty = conn.components_per_site.iter().filter(|&&c| c == 0).count();
    println!(
        "connectedness: {} (coverage error {:.3e}, {split} split cells, {empty} empty cells)",
        verdict(conn_ok),
        conn.coverage_rel_err
    );
    let compat_ok = if mesh.planar_basis().is_some() && sites.iter().all(|s| s.is_point()) {
        match vd.check_compatibility(mesh, sites, power) {
            Ok(r) => {
                let ok = r.relative < PLANAR_TOL;
                println!(
                    "compatibility: {} (disagreement {:.3e} relative, {:.3e} absolute)",
                    verdict(ok),
                    r.relative,
                    r.disagreement_area
                );
                ok
            }
            Err(e) => {
                println!("compatibility: FAIL ({e})");
                false
            }
        }
    } else {
        println!("compatibility: skipped (needs a planar mesh with point sites)");
        true
    };
    cons.ok && conn_ok && compat_ok
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn bench(
    cli: &Cli,
    mesh: &TriangleMesh,
    mesh_name: &str,
    density: Option<DensityField>,
    breaklines: &BreaklineSet,
    rng: &mut ChaCha8Rng,
) -> Result<bool> {
    let solver = make_solver(cli.solver, density, false);
    let solver_name = match cli.solver {
        SolverKind::Euclidean => "euclidean",
        SolverKind::Fmm => "fmm",
    };
    let mut csv = String::from("mesh,faces,sites,solver,wall_ms,peak_survivors\n");
    print!("{csv}");
    let mut last = None;
    for &n in &cli.site_counts {
        let specs: Vec<SiteSpec> = random_sites(mesh, n, rng);
        let sites = SiteSet::new(mesh, specs)?;
        let mut times = Vec::with_capacity(BENCH_REPS);
        let mut vd = None;
        for _ in 0..BENCH_REPS {
            let t = Instant::now();
            let d = compute_diagram(mesh, &sites, &solver, breaklines, cli.threads)?;
            times.push(t.elapsed());
            vd = Some(d);
        }
        let vd = vd.expect("at least one repetition");
        let line = format!(
            "{mesh_name},{},{n},{solver_name},{:.3},{}\n",
            mesh.num_faces(),
            median(times).as_secs_f64() * 1e3,
            vd.sweep.max_survivors
        );
        print!("{line}");
        csv.push_str(&line);
        last = Some(vd);
    }
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    write_file(&cli.out.join("bench.csv"), &csv)?;
    if let Some(vd) = last {
        vd.write_outputs(mesh, &cli.out)
            .with_context(|| format!("writing outputs to {}", cli.out.display()))?;
    }
    Ok(true)
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort_unstable();
    v[v.len() / 2]
}
