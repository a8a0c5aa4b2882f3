//! The `hetoc` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use hetoc_core::crypto::HashAlg;
use hetoc_core::hir::{HirModule, Opcode, ScalarKind};
use hetoc_core::interp::Data;
use hetoc_core::passes::{PassContext, PassManager, DEFAULT_PIPELINE};
use hetoc_core::text::{parse_unverified, print};
use hetoc_core::{verify, DeviceTable};

use crate::detect::detect_hardware;
use crate::runtime::{execute_with, ExecOptions, Overlap};
use crate::sweep::{argmin, sweep, write_csv, SweepConfig};
use crate::workload::{compile, hash_batch_module, hash_inputs, random_inputs, split};

#[derive(Parser, Debug)]
#[command(name = "hetoc", version, about = "Compiler and runtime for heterogeneous data-parallel loops")]
struct Cli {
    /// Device config file; defaults to $HETOC_DEVICES.
    #[arg(long, global = true)]
    devices: Option<PathBuf>,
    /// Use the generic SHA-1 kernel even when the host has SHA extensions.
    #[arg(long, global = true)]
    no_sha_accel: bool,
    /// Override the host worker count.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a module and print its diagnostics.
    Verify { file: PathBuf },
    /// Run a pass pipeline and print the result.
    Opt {
        file: PathBuf,
        #[arg(long, default_value = DEFAULT_PIPELINE)]
        passes: String,
    },
    /// Run the default pipeline and print the result.
    Lower { file: PathBuf },
    /// Lower (if needed) and execute `main` on generated inputs.
    Run {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Split launches that do not fit in an accelerator arena.
        #[arg(long)]
        batching: bool,
    },
    /// Time one hashing configuration.
    Bench {
        #[arg(long, value_parser = parse_alg)]
        alg: HashAlg,
        #[arg(long)]
        count: u64,
        /// Host share of the messages; the rest go to the first accelerator.
        #[arg(long, default_value_t = 1.0, value_parser = parse_ratio)]
        ratio: f64,
        #[arg(long, default_value_t = 1)]
        repeat: u32,
    },
    /// Time the hashing workload across host shares and write a CSV.
    Sweep {
        #[arg(long, value_parser = parse_alg)]
        alg: HashAlg,
        #[arg(long)]
        count: u64,
        #[arg(long, default_value_t = 0.02, value_parser = parse_step)]
        step: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        repeat: u32,
        /// Let devices run at the same time instead of one after another.
        #[arg(long)]
        concurrent: bool,
    },
    /// Print the device table as JSON.
    Detect,
}

fn parse_alg(s: &str) -> Result<HashAlg, String> {
    HashAlg::from_name(s).ok_or_else(|| format!("unknown algorithm `{s}` (expected sha1, md5 or sm3)"))
}

fn parse_ratio(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("ratio must lie in [0, 1], got {x}"))
    }
}

fn parse_step(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if x > 0.0 && x <= 1.0 {
        Ok(x)
    } else {
        Err(format!("step must lie in (0, 1], got {x}"))
    }
}

/// Runs the command line and returns the process exit code: 0 on
/// success, 1 on diagnostics or runtime errors, 2 on usage errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(msg) => {
            eprintln!("{}", msg.trim_end());
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<String, String> {
    let devices = || device_table(cli.devices.as_deref(), cli.threads);
    match cli.command {
        Command::Verify { file } => {
            let m = read_module(&file)?;
            let diags = verify(&m);
            if diags.is_empty() {
                Ok(String::new())
            } else {
                Err(join_lines(&diags))
            }
        }
        Command::Opt { file, passes } => {
            let pm = PassManager::from_spec(&passes).map_err(|e| e.to_string())?;
            let m = checked_module(&file)?;
            let devices = devices()?;
            let mut m = m;
            let ctx = PassContext {
                devices: &devices,
                no_sha_accel: cli.no_sha_accel,
            };
            pm.run(&mut m, &ctx).map_err(|e| e.to_string())?;
            Ok(print(&m))
        }
        Command::Lower { file } => {
            let m = checked_module(&file)?;
            let m = compile(&m, &devices()?, cli.no_sha_accel).map_err(|e| e.to_string())?;
            Ok(print(&m))
        }
        Command::Run { file, seed, batching } => {
            let m = checked_module(&file)?;
            let devices = devices()?;
            let lowered = if needs_lowering(&m) {
                compile(&m, &devices, cli.no_sha_accel).map_err(|e| e.to_string())?
            } else {
                m.clone()
            };
            let inputs = random_inputs(&lowered, seed);
            let opts = ExecOptions {
                batching,
                overlap: Overlap::Concurrent,
            };
            let report = execute_with(&lowered, &devices, &inputs, opts).map_err(|e| e.to_string())?;
            let mut out = String::new();
            for (i, d) in report.outputs.returns.iter().enumerate() {
                let _ = writeln!(out, "return {i}: {}", render(d));
            }
            for (name, d) in &report.outputs.args {
                let _ = writeln!(out, "%{name}: {}", render(d));
            }
            out.push_str(&to_json(&report)?);
            out.push('\n');
            Ok(out)
        }
        Command::Bench { alg, count, ratio, repeat } => {
            let devices = devices()?;
            let accel = devices.accels.first().map(|d| d.id.as_str());
            if accel.is_none() && ratio < 1.0 {
                return Err("bench with --ratio below 1 needs an accelerator in the device config".to_string());
            }
            let module = hash_batch_module(alg, count, split(&devices, accel, ratio));
            let lowered = compile(&module, &devices, cli.no_sha_accel).map_err(|e| e.to_string())?;
            let inputs = hash_inputs(alg, count);
            let opts = ExecOptions {
                batching: true,
                overlap: Overlap::Concurrent,
            };
            let mut best = None;
            for _ in 0..repeat.max(1) {
                let r = execute_with(&lowered, &devices, &inputs, opts).map_err(|e| e.to_string())?;
                if best.as_ref().is_none_or(|b: &crate::runtime::ExecReport| r.elapsed_s < b.elapsed_s) {
                    best = Some(r);
                }
            }
            #[derive(Serialize)]
            struct Bench<'a> {
                alg: &'a str,
                count: u64,
                ratio_cpu: f64,
                report: crate::runtime::ExecReport,
            }
            let out = Bench {
                alg: alg.name(),
                count,
                ratio_cpu: ratio,
                report: best.expect("one run"),
            };
            Ok(to_json(&out)? + "\n")
        }
        Command::Sweep {
            alg,
            count,
            step,
            csv,
            repeat,
            concurrent,
        } => {
            let devices = devices()?;
            let mut cfg = SweepConfig::new(alg, count);
            cfg.step = step;
            cfg.repeat = repeat;
            cfg.no_sha_accel = cli.no_sha_accel;
            if concurrent {
                cfg.exec.overlap = Overlap::Concurrent;
            }
            let records = sweep(&cfg, &devices).map_err(|e| e.to_string())?;
            for r in &records {
                if let Some(e) = &r.error {
                    eprintln!("ratio {}: {e}", r.ratio_cpu);
                }
            }
            let mut out = String::new();
            match csv {
                Some(path) => {
                    let f = fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                    write_csv(&records, f).map_err(|e| format!("{}: {e}", path.display()))?;
                }
                None => {
                    let mut buf = Vec::new();
                    write_csv(&records, &mut buf).map_err(|e| e.to_string())?;
                    out.push_str(&String::from_utf8(buf).expect("csv is utf-8"));
                }
            }
            match argmin(&records) {
                Some(best) => eprintln!("fastest: ratio_cpu={} wall_s={}", best.ratio_cpu, best.wall_s),
                None => return Err("every sweep point failed".to_string()),
            }
            Ok(out)
        }
        Command::Detect => to_json(&devices()?).map(|s| s + "\n"),
    }
}

fn device_table(path: Option<&Path>, threads: Option<u32>) -> Result<DeviceTable, String> {
    let mut table = detect_hardware(path).map_err(|e| e.to_string())?;
    if let Some(t) = threads {
        table.host.threads = t;
    }
    table.validate().map_err(|e| e.to_string())?;
    Ok(table)
}

fn read_module(path: &Path) -> Result<HirModule, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_unverified(&text).map_err(|e| format!("{}:{e}", path.display()))
}

fn checked_module(path: &Path) -> Result<HirModule, String> {
    let m = read_module(path)?;
    let diags = verify(&m);
    if diags.is_empty() {
        Ok(m)
    } else {
        Err(join_lines(&diags))
    }
}

fn needs_lowering(m: &HirModule) -> bool {
    let mut found = false;
    for f in &m.functions {
        f.body.walk(&mut |op| {
            found |= matches!(op.opcode, Opcode::HyperFor | Opcode::HyperReduce | Opcode::CryptoHashBatch);
        });
    }
    found
}

fn render(d: &Data) -> String {
    match d {
        Data::Scalar(ScalarKind::F64, v) => f64::from_bits(*v as u64).to_string(),
        Data::Scalar(_, v) => v.to_string(),
        Data::Buffer(b) if b.elem == ScalarKind::I8 => b.data.iter().map(|v| format!("{:02x}", *v as u8)).collect(),
        Data::Buffer(b) => {
            let items: Vec<String> = b.data.iter().map(|v| v.to_string()).collect();
            format!("[{}]", items.join(", "))
        }
    }
}

fn join_lines<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|d| format!("{d}\n")).collect()
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string_pretty(v).map_err(|e| e.to_string())
}
