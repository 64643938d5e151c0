use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fracsurf::geometry::builtin::builtin_mesh;
use fracsurf::geometry::io::{load_mesh, MeshFormat};
use fracsurf::harness::{emit_report, oracle_suite, run, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fracsurf", about = "Fractional Sobolev norms and extension operators on simplicial manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the study described by a TOML config file.
    Run {
        config: PathBuf,
        /// Output directory; defaults to the config's out_dir, then $FRACSURF_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Force deterministic emission.
        #[arg(long)]
        deterministic: bool,
    },
    /// Recompute all derived reference values and diff them against the
    /// fixtures file (bootstraps it on first run).
    Oracle {
        /// Fixtures file path.
        #[arg(long, default_value = "fixtures/derived.json")]
        fixtures: PathBuf,
    },
    /// Print basic facts about a mesh file or builtin.
    MeshInfo {
        /// File path, or a builtin name (circle-polygon, square-boundary,
        /// icosphere, cube-surface).
        mesh: String,
        /// Resolution for builtin meshes.
        #[arg(long, default_value_t = 64)]
        resolution: usize,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(pass) => {
            if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> anyhow::Result<bool> {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            deterministic,
        } => {
            let mut config = ExperimentConfig::from_file(&config)?;
            if let Some(dir) = out {
                config.out_dir = Some(dir);
            } else if config.out_dir.is_none() {
                if let Ok(dir) = std::env::var("FRACSURF_OUT") {
                    config.out_dir = Some(PathBuf::from(dir));
                }
            }
            config.deterministic |= deterministic;
            let outcome = run(&config)?;
            for line in &outcome.report.summary {
                println!("{line}");
            }
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            if outcome.files.is_empty() {
                // No output directory: still surface the table.
                if let Some(dir) = &config.out_dir {
                    emit_report(&outcome.report, dir)?;
                }
            }
            println!("{}", if outcome.report.pass { "PASS" } else { "FAIL" });
            Ok(outcome.report.pass)
        }
        Command::Oracle { fixtures } => {
            let outcome = oracle_suite(&fixtures)?;
            for row in &outcome.rows {
                let status = if row.ok { "ok" } else { "DRIFT" };
                match row.stored {
                    Some(stored) => println!(
                        "{status:>6}  {}  current {:.12e}  stored {:.12e}  tol {:.0e}",
                        row.name, row.value, stored, row.tol
                    ),
                    None => println!(
                        "{status:>6}  {}  current {:.12e}  (new)",
                        row.name, row.value
                    ),
                }
            }
            if outcome.bootstrapped {
                println!("fixtures written to {}", fixtures.display());
            }
            println!("{}", if outcome.pass { "PASS" } else { "FAIL" });
            Ok(outcome.pass)
        }
        Command::MeshInfo { mesh, resolution } => {
            let path = PathBuf::from(&mesh);
            let m = if path.exists() {
                load_mesh(&path, MeshFormat::from_path(&path)?)?
            } else {
                builtin_mesh(&mesh, resolution)?
            };
            println!("intrinsic dim:   {}", m.intrinsic_dim());
            println!("ambient dim:     {}", m.ambient_dim());
            println!("vertices:        {}", m.vertices().len());
            println!("cells:           {}", m.num_cells());
            println!("total measure:   {}", m.total_measure());
            println!("bbox diameter:   {}", m.bbox_diameter());
            println!("euler char:      {}", m.euler_characteristic());
            Ok(true)
        }
    }
}
