use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use nirpcc_core::metrics::{bpp, LumaMatrix, RDPoint};
use nirpcc_core::nn::NetworkConfig;
use nirpcc_core::pipeline::{self, EncodeOptions, Profile};
use nirpcc_core::pointset::{devoxelize, read_ply, write_ply_as, PlyFormat};
use nirpcc_core::training::{TraceRow, TrainError};
use nirpcc_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "nirpcc", version, about = "Neural implicit point cloud codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a PLY cloud into a .nirp stream
    Encode {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        opts: EncodeArgs,
    },
    /// Reconstruct a PLY cloud from a .nirp stream
    Decode {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Write ASCII instead of binary PLY
        #[arg(long)]
        ascii: bool,
    },
    /// Compare two PLY clouds and print one CSV row
    Eval {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(short = 'n', long, default_value_t = 10)]
        resolution_bits: u32,
        /// Stream whose size fills the bpp column
        #[arg(long)]
        stream: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Luma::Bt709)]
        luma: Luma,
    },
    /// Encode once per sparsity pair and print an RD curve as CSV
    Sweep {
        #[arg(short, long)]
        input: PathBuf,
        /// `lambda_f,lambda_g`; repeat for more points
        #[arg(long = "pair", required = true, value_parser = parse_pair)]
        pairs: Vec<(f64, f64)>,
        /// Write the CSV here instead of standard output
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        opts: EncodeArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Luma {
    Bt709,
    Bt601,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Toy,
    Paper,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long, value_enum, default_value_t = ProfileArg::Toy)]
    profile: ProfileArg,
    #[arg(short = 'n', long)]
    resolution_bits: Option<u32>,
    #[arg(short = 't', long)]
    cube_bits: Option<u32>,
    #[arg(long, default_value_t = 0.0)]
    lambda_f: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda_g: f64,
    #[arg(long)]
    steps_geometry: Option<u64>,
    #[arg(long)]
    steps_attribute: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    geometry_only: bool,
    /// Positional encoding frequencies for both networks
    #[arg(long)]
    frequencies: Option<usize>,
    #[arg(long)]
    geometry_blocks: Option<usize>,
    #[arg(long)]
    attribute_blocks: Option<usize>,
    #[arg(long)]
    outer_width: Option<usize>,
    #[arg(long)]
    inner_width: Option<usize>,
    #[arg(long)]
    geometry_step_exponent: Option<u8>,
    #[arg(long)]
    attribute_step_exponent: Option<u8>,
    /// Comma-separated candidate thresholds
    #[arg(long, value_delimiter = ',')]
    tau_grid: Option<Vec<f64>>,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LAMBDA_F,LAMBDA_G")?;
    let f = a.trim().parse().map_err(|e| format!("lambda_f: {e}"))?;
    let g = b.trim().parse().map_err(|e| format!("lambda_g: {e}"))?;
    Ok((f, g))
}

impl EncodeArgs {
    fn options(&self) -> Result<EncodeOptions, Error> {
        let mut o = EncodeOptions::profile(match self.profile {
            ProfileArg::Toy => Profile::Toy,
            ProfileArg::Paper => Profile::Paper,
        });
        o.resolution_bits = self.resolution_bits.unwrap_or(o.resolution_bits);
        o.cube_bits = self.cube_bits.unwrap_or(o.cube_bits);
        o.train.lambda_f = self.lambda_f;
        o.train.lambda_g = self.lambda_g;
        o.train.steps_geometry = self.steps_geometry.unwrap_or(o.train.steps_geometry);
        o.train.steps_attribute = self.steps_attribute.unwrap_or(o.train.steps_attribute);
        o.train.batch_size = self.batch_size.unwrap_or(o.train.batch_size);
        o.train.beta = self.beta.unwrap_or(o.train.beta);
        o.train.seed = self.seed;
        o.train.validate()?;
        o.geometry_only = self.geometry_only;
        let reshape = |net: NetworkConfig, blocks: Option<usize>| {
            NetworkConfig::new(
                net.out_channels,
                self.frequencies.unwrap_or(net.num_frequencies),
                blocks.unwrap_or(net.num_resblocks),
                self.outer_width.unwrap_or(net.outer_width),
                self.inner_width.unwrap_or(net.inner_width),
            )
        };
        o.geometry_net = reshape(o.geometry_net, self.geometry_blocks)?;
        o.attribute_net = reshape(o.attribute_net, self.attribute_blocks)?;
        o.geometry_step_exponent = self.geometry_step_exponent.unwrap_or(o.geometry_step_exponent);
        o.attribute_step_exponent = self.attribute_step_exponent.unwrap_or(o.attribute_step_exponent);
        if let Some(grid) = &self.tau_grid {
            o.tau_grid = grid.clone();
        }
        Ok(o)
    }
}

fn sidecar(output: &Path, suffix: &str) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn write_trace(path: &Path, trace: &[TraceRow]) -> anyhow::Result<()> {
    let mut csv = String::from("step,loss,lr\n");
    for r in trace {
        csv.push_str(&format!("{},{},{}\n", r.step, r.loss, r.lr));
    }
    fs::write(path, csv).with_context(|| format!("writing {}", path.display()))
}

fn threads() -> usize {
    match std::env::var("NIRPCC_THREADS") {
        Ok(v) => v.trim().parse().ok().filter(|&n| n > 0).unwrap_or_else(|| {
            warn!("ignoring NIRPCC_THREADS={v:?}");
            1
        }),
        Err(_) => 1,
    }
}

fn csv(points: &[RDPoint]) -> String {
    let mut s = format!("{}\n", RDPoint::CSV_HEADER);
    for p in points {
        s.push_str(&p.to_csv_row());
        s.push('\n');
    }
    s
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Encode { input, output, opts } => {
            let opts = opts.options()?;
            let cloud = read_ply(&input).with_context(|| format!("reading {}", input.display()))?;
            let enc = pipeline::encode(&cloud, &opts)?;
            fs::write(&output, &enc.bytes).with_context(|| format!("writing {}", output.display()))?;
            write_trace(&sidecar(&output, ".geometry.csv"), &enc.geometry_trace)?;
            if !enc.attribute_trace.is_empty() {
                write_trace(&sidecar(&output, ".attribute.csv"), &enc.attribute_trace)?;
            }
            let rd = &enc.rd;
            println!(
                "{} points, {} bytes, {:.4} bpp, tau {:.4}, D1 {:.3} dB{}, ratio {:.4}",
                enc.input_points,
                enc.bytes.len(),
                rd.bpp.unwrap_or(f64::NAN),
                enc.stream.tau(),
                rd.d1_psnr,
                rd.y_psnr.map(|y| format!(", Y {y:.3} dB")).unwrap_or_default(),
                rd.scaling_ratio,
            );
        }
        Command::Decode { input, output, ascii } => {
            let bytes = fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let vox = pipeline::decode(&bytes)?;
            info!("decoded {} voxels", vox.len());
            let format = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
            write_ply_as(&devoxelize(&vox), &output, format)
                .with_context(|| format!("writing {}", output.display()))?;
        }
        Command::Eval { reference, test, resolution_bits, stream, luma } => {
            let r = read_ply(&reference).with_context(|| format!("reading {}", reference.display()))?;
            let t = read_ply(&test).with_context(|| format!("reading {}", test.display()))?;
            let luma = match luma {
                Luma::Bt709 => LumaMatrix::Bt709,
                Luma::Bt601 => LumaMatrix::Bt601,
            };
            let mut rd = pipeline::evaluate(&r, &t, resolution_bits, luma)?;
            if let Some(s) = stream {
                let len = fs::metadata(&s).with_context(|| format!("reading {}", s.display()))?.len();
                rd.bpp = Some(bpp(len * 8, r.len()));
            }
            print!("{}", csv(&[rd]));
        }
        Command::Sweep { input, pairs, output, opts } => {
            let opts = opts.options()?;
            let cloud = read_ply(&input).with_context(|| format!("reading {}", input.display()))?;
            let points = pipeline::sweep(&cloud, &opts, &pairs, threads());
            let mut ok = Vec::new();
            let mut first_err = None;
            for p in points {
                match p.outcome {
                    Ok(rd) => ok.push(rd),
                    Err(e) => {
                        eprintln!("error: point ({}, {}): {e}", p.lambda_f, p.lambda_g);
                        first_err.get_or_insert(e);
                    }
                }
            }
            let text = csv(&ok);
            match &output {
                Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
            if ok.is_empty() {
                if let Some(e) = first_err {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Options(_)
                | Error::Training(TrainError::Config(_))
                | Error::Training(TrainError::InvalidTau(_))
                | Error::Network(nirpcc_core::nn::NnError::Config(_)) => EXIT_USAGE,
                e if e.is_data_error() => EXIT_DATA,
                Error::Training(TrainError::EmptyCloud | TrainError::MissingColors | TrainError::NoReconstruction) => {
                    EXIT_DATA
                }
                _ => EXIT_INTERNAL,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_INTERNAL
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
