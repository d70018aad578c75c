//! Command-line front end: generate instances, build and query indexes,
//! verify against the brute-force oracle, benchmark, and report space.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use rmax::format::{
    format_answer, load_index, parse_points, parse_queries, save_index, write_points, SpaceReport,
};
use rmax::points::{Coord, PointSet, QueryRect, OPEN_HI, OPEN_LO};
use rmax::tree::{BuildConfig, RangeMaxIndex};
use rmax::brute_force_max;

#[derive(Parser)]
#[command(name = "rmax", version, about = "Orthogonal range-maximum queries over rank-space points")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a random instance: a count line, then "x y priority" lines.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Preprocess a points file into a binary index.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// Fixed lambda for every 2-sided structure.
        #[arg(long)]
        lambda_override: Option<usize>,
        /// Largest problem size kept as a plain leaf.
        #[arg(long)]
        base_threshold: Option<usize>,
    },
    /// Answer queries ("x1 y1 x2 y2", inclusive, "*" = open side), one
    /// "x y priority" or "NONE" line each.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build and query an instance, comparing every answer with the
    /// brute-force oracle; exits nonzero on any mismatch.
    Verify {
        /// Instance size when generating; ignored with --input.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random queries to run when no --queries file is given.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        lambda_override: Option<usize>,
        #[arg(long)]
        base_threshold: Option<usize>,
    },
    /// Build doubling sizes and print timing and candidate counts as CSV.
    Bench {
        /// Comma-separated instance sizes.
        #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 2048, 4096, 8192])]
        sizes: Vec<usize>,
        /// Queries per size.
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the space report for an index file.
    Space {
        #[arg(long)]
        index: PathBuf,
        /// "text" for CSV, "jsonl" for JSON lines.
        #[arg(long, default_value = "text")]
        format: String,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Gen { n, seed, out } => gen(n, seed, out),
        Cmd::Build { input, index, lambda_override, base_threshold } => {
            build(input, index, lambda_override, base_threshold)
        }
        Cmd::Query { index, queries, out } => query(index, queries, out),
        Cmd::Verify { n, seed, trials, input, queries, lambda_override, base_threshold } => {
            verify(n, seed, trials, input, queries, lambda_override, base_threshold)
        }
        Cmd::Bench { sizes, trials, seed } => bench(sizes, trials, seed),
        Cmd::Space { index, format } => space(index, format),
    }
}

fn random_instance(n: usize, rng: &mut impl Rng) -> PointSet {
    let mut upsilon: Vec<Coord> = (0..n as Coord).collect();
    let mut pi: Vec<Coord> = (0..n as Coord).collect();
    upsilon.shuffle(rng);
    pi.shuffle(rng);
    PointSet::new(upsilon, pi).expect("shuffled permutations")
}

fn random_query(n: usize, rng: &mut impl Rng) -> QueryRect {
    let n = n as Coord;
    let x_lo = rng.random_range(0..n);
    let x_hi = rng.random_range(x_lo..n);
    let y_lo = rng.random_range(0..n);
    let y_hi = rng.random_range(y_lo..n);
    let mut rect = QueryRect::closed(x_lo, x_hi, y_lo, y_hi);
    for _ in 0..rng.random_range(0..3) {
        match rng.random_range(0..4) {
            0 => rect.x_lo = OPEN_LO,
            1 => rect.x_hi = OPEN_HI,
            2 => rect.y_lo = OPEN_LO,
            _ => rect.y_hi = OPEN_HI,
        }
    }
    rect
}

fn emit(out: Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(&path, text).with_context(|| format!("writing {path:?}")),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen(n: usize, seed: u64, out: Option<PathBuf>) -> Result<()> {
    if n == 0 {
        bail!("--n must be positive");
    }
    let ps = random_instance(n, &mut ChaCha8Rng::seed_from_u64(seed));
    emit(out, &write_points(&ps))
}

fn build(
    input: PathBuf,
    index: PathBuf,
    lambda_override: Option<usize>,
    base_threshold: Option<usize>,
) -> Result<()> {
    let text = fs::read_to_string(&input).with_context(|| format!("reading {input:?}"))?;
    let ps = parse_points(&text)?;
    let cfg = BuildConfig::with_overrides(ps.len(), lambda_override, base_threshold);
    let idx = RangeMaxIndex::build(&ps, cfg);
    let bytes = save_index(&idx);
    fs::write(&index, &bytes).with_context(|| format!("writing {index:?}"))?;
    eprintln!(
        "built n={} (padded {}) depth={} -> {} bytes",
        cfg.n_original,
        cfg.n_padded,
        idx.depth(),
        bytes.len()
    );
    Ok(())
}

fn query(index: PathBuf, queries: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let bytes = fs::read(&index).with_context(|| format!("reading {index:?}"))?;
    let idx = load_index(&bytes)?;
    let qtext = fs::read_to_string(&queries).with_context(|| format!("reading {queries:?}"))?;
    let rects = parse_queries(&qtext)?;
    let mut output = String::new();
    for rect in &rects {
        output.push_str(&format_answer(idx.query(rect)));
        output.push('\n');
    }
    emit(out, &output)
}

#[allow(clippy::too_many_arguments)]
fn verify(
    n: Option<usize>,
    seed: u64,
    trials: usize,
    input: Option<PathBuf>,
    queries: Option<PathBuf>,
    lambda_override: Option<usize>,
    base_threshold: Option<usize>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ps = match &input {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {path:?}"))?;
            parse_points(&text)?
        }
        None => {
            let n = n.context("either --input or --n is required")?;
            random_instance(n, &mut rng)
        }
    };
    let cfg = BuildConfig::with_overrides(ps.len(), lambda_override, base_threshold);
    let idx = RangeMaxIndex::build(&ps, cfg);
    // round-trip through the file format so serialization is covered too
    let idx = load_index(&save_index(&idx))?;
    let rects: Vec<QueryRect> = match &queries {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {path:?}"))?;
            parse_queries(&text)?
        }
        None => (0..trials).map(|_| random_query(ps.len(), &mut rng)).collect(),
    };
    let mut mismatches = 0usize;
    for rect in &rects {
        let got = idx.query(rect);
        let want = brute_force_max(&ps, rect);
        if got != want {
            mismatches += 1;
            if mismatches <= 10 {
                eprintln!("mismatch on {rect:?}: index {got:?}, oracle {want:?}");
            }
        }
    }
    println!("{} queries, {} mismatches", rects.len(), mismatches);
    if mismatches > 0 {
        std::process::exit(1);
    }
    Ok(())
}

fn bench(sizes: Vec<usize>, trials: usize, seed: u64) -> Result<()> {
    println!("n,build_ms,index_bytes,mean_query_us,mean_candidates,max_candidates");
    for n in sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = random_instance(n, &mut rng);
        let t0 = Instant::now();
        let idx = RangeMaxIndex::build(&ps, BuildConfig::new(n));
        let build_ms = t0.elapsed().as_secs_f64() * 1e3;
        let bytes = save_index(&idx).len();
        let rects: Vec<QueryRect> = (0..trials).map(|_| random_query(n, &mut rng)).collect();
        let mut candidates = 0usize;
        let mut max_candidates = 0usize;
        let t0 = Instant::now();
        for rect in &rects {
            let (_, stats) = idx.query_with_stats(rect);
            candidates += stats.candidates;
            max_candidates = max_candidates.max(stats.candidates);
        }
        let mean_us = t0.elapsed().as_secs_f64() * 1e6 / rects.len().max(1) as f64;
        println!(
            "{n},{build_ms:.1},{bytes},{mean_us:.2},{:.2},{max_candidates}",
            candidates as f64 / rects.len().max(1) as f64
        );
    }
    Ok(())
}

fn space(index: PathBuf, format: String) -> Result<()> {
    let bytes = fs::read(&index).with_context(|| format!("reading {index:?}"))?;
    let idx = load_index(&bytes)?;
    let report = SpaceReport::new(&idx, &bytes)?;
    match format.as_str() {
        "text" => print!("{}", report.to_csv()),
        "jsonl" => print!("{}", report.to_jsonl()),
        other => bail!("unknown format {other:?} (expected text or jsonl)"),
    }
    if !report.all_checks_pass() {
        std::process::exit(1);
    }
    Ok(())
}
