//! The command pipeline behind the `leno` binary. Every command reads the
//! config, writes its artifacts below the output directory together with a
//! manifest, and fails with a stage-order error when a prerequisite
//! artifact is missing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{connectivity_export, edges_csv, effective_interaction_length, jacobian_regional, matrix_csv};
use crate::domain::{Domain, EigenBasis};
use crate::error::{Error, Result};
use crate::io::{load_checkpoint, save_checkpoint, write_file, Checkpoint, Manifest, PipelineConfig};
use crate::metrics::{average_by_species, evaluate, evaluate_cohort, metrics_csv, predict_trained, METRICS_HEADER};
use crate::model::{Architecture, LenoModel};
use crate::synth::{fmt_num as num, make_cohort, InitialState, Species, Trajectory};
use crate::train::train_species;
use crate::transfer::fit_timescale;
use crate::treatment::{cognitive_csv, optimize_policy, treated_rollout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Eigs,
    Simulate,
    Train,
    Predict,
    Transfer,
    Treat,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Eigs => "eigs",
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Transfer => "transfer",
            Command::Treat => "treat",
            Command::Report => "report",
        }
    }
}

/// Loaded config plus the domain and eigenbasis every command needs.
pub struct Context {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub domain: Domain,
    pub basis: EigenBasis,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CohortIndex {
    patients: Vec<String>,
    synthetic: bool,
}

impl Context {
    /// `seed` and `out` override the config values when given.
    pub fn new(mut cfg: PipelineConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(o) = out {
            cfg.out = o;
        }
        cfg.validate()?;
        let domain = cfg.load_domain()?;
        let basis = domain.eigenbasis(cfg.domain.modes)?;
        Ok(Context {
            out: cfg.out.clone(),
            cfg,
            domain,
            basis,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn cohort_dir(&self) -> PathBuf {
        self.path("data")
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.path("checkpoint.json")
    }

    fn load_cohort(&self) -> Result<(Vec<Trajectory>, bool)> {
        let index = self.cohort_dir().join("cohort.json");
        if !index.exists() {
            return Err(Error::StageOrder(format!(
                "no trajectories at {}; run `simulate` first",
                index.display()
            )));
        }
        let text = std::fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
        let idx: CohortIndex = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: index.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let dir = self.cohort_dir();
        let cohort = idx
            .patients
            .iter()
            .map(|id| Trajectory::load_csv(&dir, id))
            .collect::<Result<Vec<_>>>()?;
        for t in &cohort {
            if t.n_nodes() != self.basis.n_nodes() {
                return Err(Error::DimensionMismatch {
                    what: "trajectory nodes",
                    expected: self.basis.n_nodes(),
                    got: t.n_nodes(),
                });
            }
        }
        Ok((cohort, idx.synthetic))
    }

    fn load_model(&self) -> Result<Checkpoint> {
        let path = self.checkpoint_path();
        if !path.exists() {
            return Err(Error::StageOrder(format!("no checkpoint at {}; run `train` first", path.display())));
        }
        let ckpt = load_checkpoint(&path)?;
        ckpt.model_for(&self.basis)?;
        Ok(ckpt)
    }

    fn patient_seeds(&self, count: usize, offset: u64) -> Vec<u64> {
        (0..count as u64).map(|m| self.cfg.seed.wrapping_add(offset).wrapping_add(m)).collect()
    }
}

/// Outcome of one command: written files and lines meant for the terminal.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

impl RunOutput {
    fn write(&mut self, path: PathBuf, text: &str) -> Result<()> {
        write_file(&path, text)?;
        self.files.push(path);
        Ok(())
    }
}

/// Runs `cmd` and records its manifest.
pub fn run(cmd: Command, ctx: &Context) -> Result<RunOutput> {
    let start = Instant::now();
    let mut out = match cmd {
        Command::Eigs => cmd_eigs(ctx),
        Command::Simulate => cmd_simulate(ctx),
        Command::Train => cmd_train(ctx),
        Command::Predict => cmd_predict(ctx),
        Command::Transfer => cmd_transfer(ctx),
        Command::Treat => cmd_treat(ctx),
        Command::Report => cmd_report(ctx),
    }?;
    let config_file = ctx.path("config.resolved.toml");
    write_file(&config_file, &ctx.cfg.to_toml())?;
    let manifest = Manifest {
        command: cmd.name().into(),
        config_hash: ctx.cfg.hash(),
        seed: ctx.cfg.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        config_file,
        outputs: out.files.clone(),
    };
    let mpath = ctx.path(&format!("manifests/{}.json", cmd.name()));
    manifest.save(&mpath)?;
    out.files.push(mpath);
    Ok(out)
}

fn cmd_eigs(ctx: &Context) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let lambda = ctx.basis.eigenvalues();
    let mut text = String::from("k,lambda\n");
    for (k, l) in lambda.iter().enumerate() {
        writeln!(text, "{k},{}", num(*l)).unwrap();
    }
    out.write(ctx.path("eigs/eigenvalues.csv"), &text)?;
    out.write(ctx.path("eigs/modes.csv"), &matrix_csv(ctx.basis.modes()))?;
    let shown: Vec<String> = lambda.iter().take(10).map(|l| format!("{l:.10}")).collect();
    out.summary.push(format!("basis {} ({} modes on {} nodes)", ctx.basis.id(), lambda.len(), ctx.basis.n_nodes()));
    out.summary.push(format!("eigenvalues: {}", shown.join(" ")));
    Ok(out)
}

fn cmd_simulate(ctx: &Context) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let cfg = &ctx.cfg;
    let (cohort, synthetic) = match &cfg.cohort.data_dir {
        Some(dir) => (import_dir(dir)?, false),
        None => {
            let seeds = ctx.patient_seeds(cfg.cohort.patients, 0);
            let cohort = make_cohort(
                &cfg.params,
                &ctx.basis,
                &seeds,
                &cfg.cohort.gammas()?,
                &cfg.cohort.times()?,
                cfg.cohort.inner_dt,
                cfg.cohort.ic_modes,
            )?;
            (cohort, true)
        }
    };
    let dir = ctx.cohort_dir();
    for t in &cohort {
        if t.n_nodes() != ctx.basis.n_nodes() {
            return Err(Error::DimensionMismatch {
                what: "trajectory nodes",
                expected: ctx.basis.n_nodes(),
                got: t.n_nodes(),
            });
        }
        t.save_csv(&dir)?;
    }
    let index = CohortIndex {
        patients: cohort.iter().map(|t| t.patient_id.clone()).collect(),
        synthetic,
    };
    out.write(dir.join("cohort.json"), &serde_json::to_string_pretty(&index).unwrap())?;
    out.summary.push(format!("{} trajectories written to {}", cohort.len(), dir.display()));
    Ok(out)
}

/// Patients are the distinct `<id>` prefixes of `<id>_A.csv` files.
fn import_dir(dir: &Path) -> Result<Vec<Trajectory>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix("_A.csv")) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::InvalidArgument(format!("no `<id>_A.csv` files in {}", dir.display())));
    }
    ids.iter().map(|id| Trajectory::load_csv(dir, id)).collect()
}

fn cmd_train(ctx: &Context) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let (cohort, synthetic) = ctx.load_cohort()?;
    let cfg = &ctx.cfg;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.train.seed.wrapping_add(cfg.seed);
    let mut model = LenoModel::new(&ctx.basis, Architecture::for_basis(&ctx.basis));
    let mut ckpt_losses = BTreeMap::new();
    for s in &cfg.species {
        if *s == Species::C && cohort.iter().any(|t| t.c.is_none()) {
            return Err(Error::InvalidArgument("cohort has no cognitive series to train C on".into()));
        }
        let report = train_species(&mut model, *s, &cohort, &ctx.basis, &tcfg)?;
        let mut text = String::from("epoch,loss\n");
        for (e, l) in report.loss_history.iter().enumerate() {
            writeln!(text, "{e},{}", num(*l)).unwrap();
        }
        out.write(ctx.path(&format!("train/loss_{}.csv", s.tag())), &text)?;
        let alpha = if *s == Species::C { String::new() } else { format!(", alpha {:.4}", report.alpha) };
        out.summary.push(format!(
            "{s}: final loss {:.3e}{alpha}, training E_L2 {:.3e}",
            report.final_loss, report.metrics.e_l2
        ));
        ckpt_losses.insert(s.tag().to_string(), report.final_loss);
    }
    let reference = synthetic.then_some(&cfg.params);
    let metrics = evaluate_cohort(&model, &ctx.basis, &cohort, reference, tcfg.train_fraction, None)?;
    out.write(ctx.path("metrics/train.csv"), &metrics_csv(&metrics.rows()))?;
    let mut ckpt = Checkpoint::new(model, &ctx.basis, cfg.hash(), cfg.seed);
    ckpt.final_losses = ckpt_losses;
    let path = ctx.checkpoint_path();
    save_checkpoint(&ckpt, &path)?;
    out.files.push(path);
    Ok(out)
}

fn cmd_predict(ctx: &Context) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let ckpt = ctx.load_model()?;
    let model = &ckpt.model;
    let (cohort, synthetic) = ctx.load_cohort()?;
    let reference = synthetic.then_some(&ctx.cfg.params);
    let dir = ctx.path("predict");
    let mut finals = Vec::new();
    for traj in &cohort {
        let pred = predict_trained(model, &ctx.basis, traj, 1.0)?;
        pred.save_csv(&dir)?;
        let last = traj.n_times() - 1;
        finals.push(evaluate(&pred, traj, model, &ctx.basis, reference, last..last + 1, 1.0)?);
    }
    out.files.push(dir);
    let metrics = evaluate_cohort(model, &ctx.basis, &cohort, reference, ctx.cfg.train.train_fraction, None)?;
    let mut rows = metrics.rows();
    for (s, m) in average_by_species(&finals) {
        rows.push((s, "final".into(), m));
    }
    out.write(ctx.path("metrics/predict.csv"), &metrics_csv(&rows))?;
    for (s, phase, m) in &rows {
        if phase == "final" {
            out.summary.push(format!("{s}: E_L2 at final time {:.3e}, Acc2 {:.4}", m.e_l2, m.acc2));
        }
    }
    Ok(out)
}

fn cmd_transfer(ctx: &Context) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let ckpt = ctx.load_model()?;
    let model = &ckpt.model;
    let cfg = &ctx.cfg;
    let times = cfg.cohort.times()?;
    let gammas = &cfg.transfer.gammas;
    let seeds = ctx.patient_seeds(gammas.len(), cfg.transfer.seed_offset);
    let patients = make_cohort(
        &cfg.params,
        &ctx.basis,
        &seeds,
        gammas,
        &times,
        cfg.cohort.inner_dt,
        cfg.cohort.ic_modes,
    )?;
    let mut table = String::from("patient,gamma_true,gamma_fit,offset,loss,relative_error\n");
    let mut per_patient = Vec::new();
    for (traj, g) in patients.iter().zip(gammas) {
        let res = fit_timescale(model, &ctx.basis, traj, &cfg.transfer.fit)?;
        let rel = (res.timescale.gamma - g).abs() / g;
        writeln!(
            table,
            "{},{},{},{},{},{}",
            traj.patient_id,
            num(*g),
            num(res.timescale.gamma),
            num(res.timescale.offset),
            num(res.loss),
            num(rel)
        )
        .unwrap();
        out.summary.push(format!("{}: gamma {:.4} (true {g}), relative error {rel:.2e}", traj.patient_id, res.timescale.gamma));
        let pred = predict_trained(model, &ctx.basis, traj, res.timescale.gamma)?;
        let nt = traj.train_len(cfg.transfer.fit.train_fraction).max(2);
        if nt < traj.n_times() {
            per_patient.push(evaluate(&pred, traj, model, &ctx.basis, Some(&cfg.params), nt..traj.n_times(), res.timescale.gamma)?);
        }
    }
    out.write(ctx.path("transfer/timescales.csv"), &table)?;
    let rows: Vec<_> = average_by_species(&per_patient).into_iter().map(|(s, m)| (s, "test".to_string(), m)).collect();
    out.write(ctx.path("metrics/transfer.csv"), &metrics_csv(&rows))?;
    Ok(out)
}

fn cmd_treat(ctx: &Context) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let ckpt = ctx.load_model()?;
    let model = &ckpt.model;
    model.net(Species::C)?;
    let (cohort, _) = ctx.load_cohort()?;
    let sec = &ctx.cfg.treatment;
    let traj = cohort.get(sec.patient).ok_or_else(|| {
        Error::Config(format!("treatment.patient {} out of range ({} patients)", sec.patient, cohort.len()))
    })?;
    let last = traj.n_times() - 1;
    let t0 = traj.times[last];
    if traj.c.is_none() {
        return Err(Error::InvalidArgument(format!("{} has no cognitive series", traj.patient_id)));
    }
    let init = InitialState::from_trajectory(traj, last);
    let mut pcfg = sec.policy.clone();
    pcfg.seed = pcfg.seed.wrapping_add(ctx.cfg.seed);
    let mut summary = String::from("scenario,objective,C_T,mean_d_A,mean_d_tau\n");
    let mut cs = Vec::new();
    let mut times = Vec::new();
    for sc in &sec.scenarios {
        let res = optimize_policy(model, &ctx.basis, &init, t0, &pcfg, *sc)?;
        let roll = treated_rollout(model, &ctx.basis, &res.policy, &init, &res.times)?;
        let (da, dt) = res.policy.doses(&res.times)?;
        let c = roll.c.clone().unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        writeln!(
            summary,
            "{sc},{},{},{},{}",
            num(res.objective),
            num(c[c.len() - 1]),
            num(mean(&da)),
            num(mean(&dt))
        )
        .unwrap();
        out.write(ctx.path(&format!("treatment/doses_{}.csv", sc.tag())), &res.policy.schedule_csv(&res.times)?)?;
        let mut trace = String::from("epoch,objective\n");
        for (e, v) in res.trace.iter().enumerate() {
            writeln!(trace, "{e},{}", num(*v)).unwrap();
        }
        out.write(ctx.path(&format!("treatment/trace_{}.csv", sc.tag())), &trace)?;
        out.summary.push(format!("{sc}: objective {:.5}, C(T) {:.5}", res.objective, c[c.len() - 1]));
        cs.push((*sc, c));
        times = res.times;
    }
    out.write(ctx.path("treatment/objectives.csv"), &summary)?;
    out.write(ctx.path("treatment/cognitive.csv"), &cognitive_csv(&times, &cs)?)?;
    Ok(out)
}

const SOURCES: [&str; 3] = ["train", "predict", "transfer"];

fn cmd_report(ctx: &Context) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    for src in SOURCES {
        let path = ctx.path(&format!("metrics/{src}.csv"));
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(METRICS_HEADER) {
            return Err(Error::Parse {
                path,
                line: 1,
                msg: "unexpected metrics header".into(),
            });
        }
        for l in lines.filter(|l| !l.is_empty()) {
            rows.push((src.to_string(), l.split(',').map(str::to_string).collect()));
        }
    }
    if rows.is_empty() {
        return Err(Error::StageOrder("no metrics to report; run `train` or `predict` first".into()));
    }
    let mut csv = format!("source,{METRICS_HEADER}\n");
    for (src, r) in &rows {
        writeln!(csv, "{src},{}", r.join(",")).unwrap();
    }
    out.write(ctx.path("report/summary.csv"), &csv)?;
    let md = report_tables(&rows);
    out.write(ctx.path("report/summary.md"), &md)?;
    out.summary.extend(md.lines().map(str::to_string));

    if let Ok(ckpt) = ctx.load_model() {
        out.files.extend(connectivity(ctx, &ckpt.model)?);
    }
    Ok(out)
}

fn lookup<'a>(rows: &'a [(String, Vec<String>)], src: &str, sp: &str, phase: &str) -> Option<&'a [String]> {
    rows.iter()
        .find(|(s, r)| s == src && r[0] == sp && r[1] == phase)
        .map(|(_, r)| r.as_slice())
}

fn short(cell: Option<&String>) -> String {
    cell.and_then(|c| c.parse::<f64>().ok())
        .map_or("-".into(), |v| format!("{v:.3e}"))
}

/// Error table (training errors plus final-time prediction error) and
/// accuracy table (training and held-out Acc2).
fn report_tables(rows: &[(String, Vec<String>)]) -> String {
    let mut s = String::from("| species | E_L2 | E_Res | E_Nonlinear | E_L2 pred (final) |\n|---|---|---|---|---|\n");
    for sp in Species::ALL {
        let tag = sp.tag();
        let Some(tr) = lookup(rows, "train", tag, "train") else { continue };
        let fin = lookup(rows, "predict", tag, "final");
        writeln!(
            s,
            "| {tag} | {} | {} | {} | {} |",
            short(tr.get(4)),
            short(tr.get(5)),
            short(tr.get(6)),
            short(fin.and_then(|f| f.get(4)))
        )
        .unwrap();
    }
    s.push_str("\n| species | Acc2 train | Acc2 prediction | Acc2 transfer |\n|---|---|---|---|\n");
    for sp in Species::ALL {
        let tag = sp.tag();
        let Some(tr) = lookup(rows, "train", tag, "train") else { continue };
        let te = lookup(rows, "train", tag, "test");
        let tf = lookup(rows, "transfer", tag, "test");
        writeln!(
            s,
            "| {tag} | {} | {} | {} |",
            short(tr.get(2)),
            short(te.and_then(|r| r.get(2))),
            short(tf.and_then(|r| r.get(2)))
        )
        .unwrap();
    }
    s
}

/// Regional influence matrices of every trained species pair at the
/// configured representative states, with thresholded edge lists.
fn connectivity(ctx: &Context, model: &LenoModel) -> Result<Vec<PathBuf>> {
    let (cohort, _) = ctx.load_cohort()?;
    let sec = &ctx.cfg.analysis;
    let traj = cohort
        .get(sec.patient)
        .ok_or_else(|| Error::Config(format!("analysis.patient {} out of range", sec.patient)))?;
    let labels = ctx.domain.region_labels();
    let dist = ctx.domain.distances();
    let mass = ctx.basis.lumped().to_vec();
    let mut files = Vec::new();
    let mut lengths = String::from("stage,output,input,edges,interaction_length\n");
    for &frac in &sec.stages {
        let k = ((frac.clamp(0.0, 1.0) * (traj.n_times() - 1) as f64).round()) as usize;
        let stage = format!("t{}", traj.times[k]);
        let fields = [traj.a[k].as_slice(), traj.tau[k].as_slice(), traj.n[k].as_slice()];
        for out_s in Species::FIELDS.into_iter().filter(|s| model.is_trained(*s)) {
            for in_s in Species::FIELDS.into_iter().take(out_s.index() + 1) {
                let m = jacobian_regional(model, out_s, in_s, fields, &ctx.basis, &stage)?;
                let edges = connectivity_export(&m, sec.threshold)?;
                let name = format!("report/connectivity/{stage}_{}_from_{}", out_s.tag(), in_s.tag());
                let p1 = ctx.path(&format!("{name}_matrix.csv"));
                write_file(&p1, &matrix_csv(&m.weights))?;
                let p2 = ctx.path(&format!("{name}_edges.csv"));
                write_file(&p2, &edges_csv(&edges, &labels)?)?;
                files.extend([p1, p2]);
                let len = effective_interaction_length(&edges, &dist, &mass);
                writeln!(
                    lengths,
                    "{stage},{},{},{},{}",
                    out_s.tag(),
                    in_s.tag(),
                    edges.len(),
                    len.map_or(String::new(), num)
                )
                .unwrap();
            }
        }
    }
    let p = ctx.path("report/interaction_lengths.csv");
    write_file(&p, &lengths)?;
    files.push(p);
    Ok(files)
}
