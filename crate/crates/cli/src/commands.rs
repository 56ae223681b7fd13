use std::path::{Path, PathBuf};
use std::sync::Arc;

use dpra_core::model::{validate_model, CompiledModel, ModelError, SystemModel};
use dpra_core::planner::{PlanFile, PlannerError};
use dpra_core::risk::{
    assess, check_acceptance, compare_designs, AcceptanceCriteria, ComparisonCriterion, DesignChangeRecord,
    RiskError, Verdict,
};
use dpra_core::scheduler::{explore as run_explore, ExplorationConfig, ExplorationResult, ExploreError, Mode};
use dpra_core::simulator::TimedMode;
use serde::Deserialize;

use crate::cli::{CompareArgs, ExploreArgs, ModeArg, PlanArgs, ReportArgs, TimedArg, ValidateArgs};
use crate::manifest::{absolute, now_unix, sha256_hex, RunManifest, MANIFEST_FILE};
use crate::output::{write, write_results, RESULT_FILE};
use crate::{exit, Failure};

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn text(path: &Path, bytes: Vec<u8>) -> Result<String, Failure> {
    String::from_utf8(bytes).map_err(|_| Failure::invalid(format!("{}: not UTF-8", path.display())))
}

fn model_failure(path: &Path, e: &ModelError) -> Failure {
    for d in e.diagnostics() {
        eprintln!("{}: {d}", path.display());
    }
    Failure::invalid(format!("{}: invalid model", path.display()))
}

fn plan_failure(path: &Path, e: PlannerError) -> Failure {
    Failure::invalid(format!("{}: {e}", path.display()))
}

fn explore_failure(e: ExploreError) -> Failure {
    match e {
        ExploreError::Config(_) | ExploreError::UnknownTarget(_) => Failure::usage(e.to_string()),
        _ => Failure::invalid(e.to_string()),
    }
}

fn load_model(path: &Path) -> Result<(SystemModel, Vec<u8>), Failure> {
    let bytes = read(path)?;
    let src = text(path, bytes.clone())?;
    let model = dpra_core::model::parse_model(&src).map_err(|e| model_failure(path, &e))?;
    Ok((model, bytes))
}

fn load_plan(path: &Path) -> Result<(PlanFile, Vec<u8>), Failure> {
    let bytes = read(path)?;
    let src = text(path, bytes.clone())?;
    let plan = PlanFile::parse(&src).map_err(|e| plan_failure(path, e))?;
    Ok((plan, bytes))
}

pub fn validate(a: &ValidateArgs) -> Result<u8, Failure> {
    let src = text(&a.model, read(&a.model)?)?;
    let model = SystemModel::from_json_unchecked(&src).map_err(|e| model_failure(&a.model, &e))?;
    let diags = validate_model(&model);
    for d in &diags {
        eprintln!("{}: {d}", a.model.display());
    }
    if diags.iter().any(|d| d.is_error()) {
        return Ok(exit::INVALID);
    }
    println!(
        "{}: valid ({} components, {} end states, {} warnings)",
        model.name,
        model.components.len(),
        model.end_states.len(),
        diags.len()
    );
    Ok(exit::OK)
}

pub fn plan(a: &PlanArgs) -> Result<u8, Failure> {
    let (mut plan, _) = load_plan(&a.plan)?;
    let warnings = plan.regenerate(a.max_len).map_err(|e| plan_failure(&a.plan, e))?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    println!("{} scenarios", plan.scenarios.len());
    for s in &plan.scenarios {
        println!("  {s}");
    }
    if let Some(out) = &a.out {
        write(out, (plan.to_json() + "\n").as_bytes())?;
    }
    Ok(exit::OK)
}

fn config_from(a: &ExploreArgs) -> Result<ExplorationConfig, Failure> {
    let mut cfg = ExplorationConfig::default();
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Systematic => Mode::Systematic,
            ModeArg::Guided => Mode::Guided,
            ModeArg::Targeted => Mode::Targeted,
        };
    }
    if cfg.mode != Mode::Systematic && a.plan.is_none() {
        return Err(Failure::usage(format!("--mode {} needs --plan", cfg.mode.as_str())));
    }
    match (cfg.mode, &a.target_event) {
        (Mode::Targeted, None) => return Err(Failure::usage("--mode targeted needs --target-event")),
        (Mode::Targeted, Some(t)) => cfg.target = Some(t.clone()),
        (_, Some(_)) => return Err(Failure::usage("--target-event needs --mode targeted")),
        (_, None) => {}
    }
    if a.boost.is_some() && cfg.mode != Mode::Targeted {
        return Err(Failure::usage("--boost needs --mode targeted"));
    }
    macro_rules! set {
        ($($field:ident <- $arg:ident),*) => { $(if let Some(v) = a.$arg { cfg.$field = v; })* };
    }
    set!(p_lim <- plim, n_sequences <- n, seed <- seed, alpha <- alpha, beta <- beta, gamma <- gamma,
         boost <- boost, max_depth <- max_depth, max_rounds <- max_rounds, workers <- workers, h <- h);
    cfg.timed = a.timed.map(|t| match t {
        TimedArg::Sampled => TimedMode::Sampled,
        TimedArg::Discretized => TimedMode::Discretized,
    });
    cfg.check().map_err(explore_failure)?;
    Ok(cfg)
}

/// A finished run together with what its manifest records.
pub struct Run {
    pub result: ExplorationResult,
    pub model_sha256: String,
    pub plan_sha256: Option<String>,
}

pub fn run(model_path: &Path, plan_path: Option<&Path>, cfg: &ExplorationConfig) -> Result<Run, Failure> {
    let (model, model_bytes) = load_model(model_path)?;
    let plan = plan_path.map(load_plan).transpose()?;
    let compiled = Arc::new(CompiledModel::new(&model).map_err(|e| model_failure(model_path, &e))?);
    let result = run_explore(&compiled, plan.as_ref().map(|p| &p.0), cfg).map_err(explore_failure)?;
    Ok(Run {
        result,
        model_sha256: sha256_hex(&model_bytes),
        plan_sha256: plan.map(|p| sha256_hex(&p.1)),
    })
}

fn check_hash(path: &Path, recorded: &str, actual: &str) -> Result<(), Failure> {
    if recorded == actual {
        Ok(())
    } else {
        Err(Failure::invalid(format!("{} changed since the recorded run (sha256 {actual}, expected {recorded})", path.display())))
    }
}

pub fn explore(a: &ExploreArgs) -> Result<u8, Failure> {
    let (model_path, plan_path, cfg, recorded) = match &a.manifest {
        Some(m) => {
            let man = RunManifest::load(m)?;
            (man.model_path.clone(), man.plan_path.clone(), man.config.clone(), Some(man))
        }
        None => {
            let cfg = config_from(a)?;
            let model = a.model.as_deref().expect("clap requires a model");
            (absolute(model), a.plan.as_deref().map(absolute), cfg, None)
        }
    };
    let started = now_unix();
    let r = run(&model_path, plan_path.as_deref(), &cfg)?;
    if let Some(man) = &recorded {
        check_hash(&model_path, &man.model_sha256, &r.model_sha256)?;
        if let (Some(p), Some(want), Some(got)) = (&plan_path, &man.plan_sha256, &r.plan_sha256) {
            check_hash(p, want, got)?;
        }
    }
    let outputs = write_results(&a.out_dir, &r.result)?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        model_path,
        model_sha256: r.model_sha256,
        plan_path,
        plan_sha256: r.plan_sha256,
        seed: cfg.seed,
        config: cfg,
        started_unix: started,
        finished_unix: now_unix(),
        outputs,
    };
    manifest.store(&a.out_dir)?;
    if let Some(man) = &recorded {
        for (file, hash) in &man.outputs {
            if manifest.outputs.get(file) != Some(hash) {
                eprintln!("warning: {file} differs from the recorded run");
            }
        }
    }

    let res = &r.result;
    println!("{} ({}): {} stories", res.model, res.mode.as_str(), res.n_stories);
    for e in &res.end_states {
        println!("  {:<20} {:.6e}", e.name, e.estimate);
    }
    println!(
        "  truncated {:e}, unexplored {:e}, depth-exceeded {:e}",
        res.ledger.truncated_mass, res.ledger.unexplored_mass, res.ledger.depth_exceeded_mass
    );
    for n in &res.notes {
        eprintln!("note: {n}");
    }
    println!("wrote {}", a.out_dir.display());
    Ok(exit::OK)
}

fn risk_failure(e: RiskError) -> Failure {
    match e {
        RiskError::ClassMismatch { .. } => Failure::invalid(e.to_string()),
        _ => Failure::usage(e.to_string()),
    }
}

pub fn report(a: &ReportArgs) -> Result<u8, Failure> {
    RunManifest::load(&a.results.join(MANIFEST_FILE))?;
    let path = a.results.join(RESULT_FILE);
    let src = text(&path, read(&path)?)?;
    let result: ExplorationResult =
        serde_json::from_str(&src).map_err(|e| Failure::usage(format!("malformed {}: {e}", path.display())))?;
    let rep = assess(&result, a.top_k);
    print!("{rep}");
    if let Some(csv) = &a.csv {
        write(csv, rep.to_csv().as_bytes())?;
    }
    let Some(crit_path) = &a.criteria else {
        return Ok(exit::OK);
    };
    let crit = AcceptanceCriteria::parse(&text(crit_path, read(crit_path)?)?).map_err(risk_failure)?;
    let acc = check_acceptance(&rep, &crit).map_err(risk_failure)?;
    println!("acceptance:");
    print!("{acc}");
    Ok(match acc.overall() {
        Verdict::Accept => exit::OK,
        Verdict::Indeterminate => exit::INDETERMINATE,
        Verdict::Reject => exit::REJECT,
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Alternative {
    name: String,
    model: PathBuf,
    #[serde(default)]
    plan: Option<PathBuf>,
    #[serde(default)]
    change: Option<DesignChangeRecord>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareConfig {
    criterion: ComparisonCriterion,
    #[serde(default)]
    exploration: ExplorationConfig,
    #[serde(default = "default_top_k")]
    top_k: usize,
    alternatives: Vec<Alternative>,
}

fn default_top_k() -> usize {
    5
}

pub fn compare(a: &CompareArgs) -> Result<u8, Failure> {
    let src = text(&a.config, read(&a.config)?)?;
    let cfg: CompareConfig =
        serde_json::from_str(&src).map_err(|e| Failure::usage(format!("{}: {e}", a.config.display())))?;
    if cfg.alternatives.len() < 2 {
        return Err(risk_failure(RiskError::TooFewAlternatives(cfg.alternatives.len())));
    }
    cfg.exploration.check().map_err(explore_failure)?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let mut reports = Vec::new();
    for alt in &cfg.alternatives {
        let plan = alt.plan.as_ref().map(|p| base.join(p));
        let r = run(&base.join(&alt.model), plan.as_deref(), &cfg.exploration)
            .map_err(|f| Failure { code: f.code, message: format!("{}: {}", alt.name, f.message) })?;
        reports.push((alt.name.clone(), assess(&r.result, cfg.top_k)));
    }
    let cmp = compare_designs(&reports, &cfg.criterion).map_err(risk_failure)?;
    for alt in &cfg.alternatives {
        match &alt.change {
            Some(c) => println!("{}: {c}", alt.name),
            None => println!("{}: reference design", alt.name),
        }
    }
    print!("{cmp}");
    if let Some(csv) = &a.csv {
        write(csv, cmp.to_csv().as_bytes())?;
    }
    Ok(exit::OK)
}
