//! Command-line front end. The binary is a thin wrapper around [`run`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::cost_model::{comparison_csv, CompareInputs};
use crate::error::{Error, Result};
use crate::profiles::{
    load_hardware_profile, load_model_profile, synthesize_transformer_profile, HardwareProfile,
    ModelProfile, PrecisionSpec, TransformerShape,
};
use crate::rcache_sim::{simulate, CachePolicyInput, SimReport};
use crate::search::{
    build_plan, load_plan, prepare_layout, sweep_chunk_lengths, Action, Plan, PlanOptions,
    DEFAULT_F_ALLOC, DEFAULT_F_FRAG, DEFAULT_GRID_POINTS,
};
use crate::units::parse_count;

/// Exit status for input and validation errors.
pub const EXIT_ERROR: i32 = 1;
/// Exit status when no configuration fits in GPU memory.
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "chunkplan",
    version,
    about = "Plan chunked parameter placement for partitioned training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic GPT-2 style model profile.
    GenProfile(GenProfileArgs),
    /// Search chunk length, rCache size and chunk placement.
    Plan(PlanArgs),
    /// Replay one training step of a plan and report traffic.
    Simulate(SimulateArgs),
    /// Print per-GPU memory and communication of every strategy as CSV.
    Compare(CompareArgs),
    /// Print the chunk-length sweep the planner evaluates as CSV.
    Sweep(SweepArgs),
}

fn count(s: &str) -> std::result::Result<u64, String> {
    parse_count(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, Args)]
pub struct PrecisionArgs {
    /// Bytes per element of parameters and gradients used in compute.
    #[arg(long, default_value_t = 2, value_parser = count)]
    pub compute_bytes: u64,
    /// Bytes per element of each optimizer state.
    #[arg(long, default_value_t = 4, value_parser = count)]
    pub optimizer_bytes: u64,
    /// Optimizer states per element (master weights, momentum, variance).
    #[arg(long, default_value_t = 3, value_parser = count)]
    pub optimizer_factor: u64,
}

impl PrecisionArgs {
    fn spec(&self) -> Result<PrecisionSpec> {
        PrecisionSpec::new(
            self.compute_bytes,
            self.optimizer_bytes,
            self.optimizer_factor,
        )
    }
}

#[derive(Debug, Args)]
pub struct GenProfileArgs {
    /// Named shape: gpt2-4b, gpt2-10b, gpt2-15b or gpt2-20b.
    #[arg(long, conflicts_with_all = ["hidden", "layers", "heads"])]
    pub preset: Option<String>,
    #[arg(long, value_parser = count, requires_all = ["layers", "heads"])]
    pub hidden: Option<u64>,
    #[arg(long, value_parser = count)]
    pub layers: Option<u64>,
    #[arg(long, value_parser = count)]
    pub heads: Option<u64>,
    #[arg(long, value_parser = count)]
    pub vocab: Option<u64>,
    #[arg(long, value_parser = count)]
    pub seq_len: Option<u64>,
    #[arg(long, value_parser = count)]
    pub batch: Option<u64>,
    /// Output path; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    /// GPU count; defaults to the one recorded in the hardware profile.
    #[arg(long, value_parser = count)]
    pub gpus: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_F_ALLOC)]
    pub f_alloc: f64,
    #[arg(long, default_value_t = DEFAULT_F_FRAG)]
    pub f_frag: f64,
    /// Per-GPU bytes available to the planner, overriding the computed value.
    #[arg(long, value_parser = count)]
    pub u_allowed: Option<u64>,
    /// Comma-separated chunk lengths to try, e.g. `32Mi,64Mi,128Mi`.
    #[arg(long, value_parser = count, value_delimiter = ',')]
    pub candidates: Option<Vec<u64>>,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    /// Bytes per element the velocity constants are measured in.
    #[arg(long, value_parser = count)]
    pub velocity_element_bytes: Option<u64>,
    #[command(flatten)]
    pub precision: PrecisionArgs,
}

impl BudgetArgs {
    fn options(&self) -> PlanOptions {
        PlanOptions {
            f_alloc: self.f_alloc,
            f_frag: self.f_frag,
            u_allowed: self.u_allowed,
            candidates: self.candidates.clone(),
            grid_points: self.grid_points,
            velocity_element_bytes: self.velocity_element_bytes,
        }
    }
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub hardware: PathBuf,
    #[command(flatten)]
    pub budget: BudgetArgs,
    /// Write a plan even when the working set does not fit.
    #[arg(long)]
    pub allow_fallback: bool,
    /// Plan output path; the plan goes to stdout and the summary to stderr when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub hardware: PathBuf,
    #[arg(long, value_parser = count)]
    pub velocity_element_bytes: Option<u64>,
    #[command(flatten)]
    pub precision: PrecisionArgs,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Model size in elements.
    #[arg(long, value_parser = count)]
    pub model_elements: u64,
    #[arg(long, value_parser = count)]
    pub gpus: u64,
    /// Aggregate chunk length; defaults to the model size.
    #[arg(long, value_parser = count)]
    pub aggregate_elements: Option<u64>,
    /// Chunk length; rCache-min memory is left empty without it.
    #[arg(long, value_parser = count)]
    pub chunk_length: Option<u64>,
    /// Gathered-parameter buffer of offloaded ZeRO-3, in bytes.
    #[arg(long, value_parser = count)]
    pub epsilon: Option<u64>,
    #[command(flatten)]
    pub precision: PrecisionArgs,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub hardware: PathBuf,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_infeasible() {
        EXIT_INFEASIBLE
    } else {
        EXIT_ERROR
    }
}

/// Single-line diagnostic printed on failure.
pub fn error_line(err: &Error) -> String {
    let msg = err.to_string().replace('\n', " ");
    format!("error: {}: {msg}", err.kind())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenProfile(a) => gen_profile(&a),
        Command::Plan(a) => plan(&a),
        Command::Simulate(a) => simulate_cmd(&a),
        Command::Compare(a) => compare(&a),
        Command::Sweep(a) => sweep(&a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn load_inputs(
    profile: &Path,
    hardware: &Path,
    gpus: Option<u64>,
) -> Result<(ModelProfile, HardwareProfile)> {
    let profile = load_model_profile(&read(profile)?)?;
    let mut hw = load_hardware_profile(&read(hardware)?)?;
    if let Some(n) = gpus {
        let n = u32::try_from(n)
            .map_err(|_| Error::InvalidArgument(format!("--gpus {n} is too large")))?;
        hw = hw.with_gpu_count(n)?;
    }
    Ok((profile, hw))
}

fn gen_profile(a: &GenProfileArgs) -> Result<()> {
    let mut shape = match (&a.preset, a.hidden, a.layers, a.heads) {
        (Some(name), ..) => TransformerShape::preset(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset `{name}`")))?,
        (None, Some(h), Some(l), Some(n)) => TransformerShape::new(h, l, n),
        _ => {
            return Err(Error::InvalidArgument(
                "pass --preset or all of --hidden, --layers and --heads".into(),
            ))
        }
    };
    if let Some(v) = a.vocab {
        shape.vocab = v;
    }
    if let Some(s) = a.seq_len {
        shape.seq_len = s;
    }
    if let Some(b) = a.batch {
        shape.batch = b;
    }
    let profile = synthesize_transformer_profile(&shape)?;
    emit(a.output.as_deref(), &profile.to_json()?)
}

/// Plan JSON with a metadata block that the loader ignores.
pub fn plan_file_text(plan: &Plan) -> Result<String> {
    let mut value: serde_json::Value = serde_json::from_str(&plan.to_json()?)?;
    let generated_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    if let Some(map) = value.as_object_mut() {
        map.insert(
            "metadata".into(),
            serde_json::json!({
                "tool": "chunkplan",
                "version": env!("CARGO_PKG_VERSION"),
                "generated_at_unix": generated_at,
            }),
        );
    }
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

fn plan(a: &PlanArgs) -> Result<()> {
    let (profile, hw) = load_inputs(&a.profile, &a.hardware, a.budget.gpus)?;
    let plan = build_plan(
        &profile,
        &hw,
        a.budget.precision.spec()?,
        &a.budget.options(),
    )?;
    let summary = plan_summary(&profile, &plan);
    if plan.fallback && !a.allow_fallback {
        eprint!("{summary}");
        return Err(Error::InfeasibleCache(format!(
            "allowed memory {} B cannot hold the {}-block working set of {} B chunks (pass --allow-fallback to write the plan anyway)",
            plan.memory.u_allowed, plan.working_set_blocks, plan.chunk_length
        )));
    }
    let text = plan_file_text(&plan)?;
    match &a.output {
        Some(path) => {
            emit(Some(path), &text)?;
            print!("{summary}");
        }
        None => {
            eprint!("{summary}");
            emit(None, &text)?;
        }
    }
    Ok(())
}

fn gib(bytes: u64) -> String {
    format!("{:.2} GiB", bytes as f64 / (1u64 << 30) as f64)
}

/// Human-readable plan overview.
pub fn plan_summary(profile: &ModelProfile, plan: &Plan) -> String {
    let m = &plan.memory;
    let uploads = plan
        .decision_trace
        .iter()
        .filter(|d| d.action == Action::UploadChunk)
        .count();
    let extends = plan.decision_trace.len() - uploads;
    let mut s = String::new();
    s.push_str(&format!(
        "plan for {} on {} GPU(s)\n",
        profile.name, plan.gpu_count
    ));
    s.push_str(&format!(
        "  allowed memory   {} (f_alloc {}, f_frag {})\n",
        gib(m.u_allowed),
        plan.budget.f_alloc,
        plan.budget.f_frag
    ));
    s.push_str(&format!(
        "  chunk length     {} elements, {} chunks, waste {:.2}%\n",
        plan.chunk_length,
        plan.n_chunks,
        plan.waste_rate * 100.0
    ));
    s.push_str(&format!(
        "  rCache           {} blocks (working set {})\n",
        plan.n_block, plan.working_set_blocks
    ));
    s.push_str(&format!(
        "  chunks on GPU    {} / {}\n",
        plan.gpu_chunks(),
        plan.n_chunks
    ));
    s.push_str(&format!(
        "  benefits         I = {:.6}, J = {:.6} ({:?})\n",
        plan.benefit_rcache_block, plan.benefit_chunk_upload, plan.priority
    ));
    s.push_str(&format!(
        "  greedy steps     {uploads} uploads, {extends} rCache extensions\n"
    ));
    s.push_str(&format!(
        "  memory per GPU   rCache {} + chunks {} + shared {} = {}\n",
        gib(m.rcache_bytes),
        gib(m.gpu_chunk_bytes),
        gib(m.shared_bytes),
        gib(m.total_bytes)
    ));
    match &plan.estimates {
        Some(e) => {
            s.push_str(&format!(
                "  traffic          GPU-GPU {}, GPU->CPU {}, CPU->GPU {}\n",
                gib(e.g2g_bytes),
                gib(e.g2c_bytes),
                gib(e.c2g_bytes)
            ));
            s.push_str(&format!(
                "  est. time        {:.3} s offload + {:.3} s update\n",
                e.estimated_offload_seconds, e.estimated_update_seconds
            ));
        }
        None => s.push_str("  FALLBACK: working set does not fit; no estimates\n"),
    }
    if plan.shared_elements > 0 {
        s.push_str(&format!(
            "  shared params    {} elements, GPU-GPU {} per step (not in chunk traffic)\n",
            plan.shared_elements,
            gib(plan.shared_g2g_bytes)
        ));
    }
    s
}

fn simulate_cmd(a: &SimulateArgs) -> Result<()> {
    let plan = load_plan(&read(&a.plan)?)?;
    let (profile, hw) = load_inputs(&a.profile, &a.hardware, Some(plan.gpu_count as u64))?;
    let layout = prepare_layout(&profile, plan.chunk_length)?;
    if layout.n_chunks != plan.n_chunks {
        return Err(Error::Consistency(format!(
            "plan has {} chunks but the profile packs into {} at chunk length {}",
            plan.n_chunks, layout.n_chunks, plan.chunk_length
        )));
    }
    let report: SimReport = simulate(&CachePolicyInput {
        trace: &layout.chunk_trace,
        n_block: plan.n_block,
        chunk_length: plan.chunk_length,
        placement: &plan.placement(),
        precision: a.precision.spec()?,
        gpu_count: plan.gpu_count,
        rates: Some(*hw.rates(plan.gpu_count)?),
        velocity_element_bytes: a.velocity_element_bytes,
    })?;
    emit(a.output.as_deref(), &report.to_json()?)
}

fn compare(a: &CompareArgs) -> Result<()> {
    let csv = comparison_csv(&CompareInputs {
        model_elements: a.model_elements,
        gpus: a.gpus,
        precision: a.precision.spec()?,
        aggregate_chunk_elements: a.aggregate_elements,
        chunk_length: a.chunk_length,
        epsilon_bytes: a.epsilon,
    })?;
    emit(a.output.as_deref(), &csv)
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let (profile, hw) = load_inputs(&a.profile, &a.hardware, a.budget.gpus)?;
    let search = sweep_chunk_lengths(
        &profile,
        &hw,
        a.budget.precision.spec()?,
        &a.budget.options(),
    )?;
    emit(a.output.as_deref(), &search.to_csv())
}
