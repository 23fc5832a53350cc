//! Stage orchestration for the full experiment: training, explanation,
//! evaluation, and reporting.
//!
//! Stages communicate only through files under the configured output
//! directory — checkpoints, result logs, image files, and CSV reports — so
//! any stage can be rerun from its persisted inputs. Every stage derives its
//! random stream from the root seed by a fixed label, making reruns with the
//! same configuration byte-identical except for wall-clock fields.
//!
//! The full explanation protocol runs the per-instance search first to fix
//! each instance's counterfactual class (its nearest-prototype class); the
//! amortized methods then reuse those classes, so all three methods are
//! compared on identical (instance, target) pairs.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use cfx_tensor::{AdamConfig, Rng};

use crate::amortized::{explain_amortized, train_amortized, AmortizedTrainConfig};
use crate::cfproto::{cfproto_explain, LatentIndex};
use crate::checkpoint::atomic_write;
use crate::config::ExperimentConfig;
use crate::data::{load_mnist, Dataset, IMAGE_SIDE, NUM_CLASSES};
use crate::error::{CoreError, Result};
use crate::eval::{
    histogram_csv, im1, im2, parse_records_csv, records_csv, summarize, EvalRecord,
};
use crate::models::{
    train_autoencoder, train_discriminator, Autoencoder, Discriminator, Generator, TrainConfig,
    TrainReport,
};
use crate::pgm::{image_grid, read_pgm, write_pgm};
use crate::record::{read_result_log, write_result_log, CounterfactualResult, Method, ResultRecord};

pub const CKPT_DISCRIMINATOR: &str = "discriminator.ckpt";
pub const CKPT_AUTOENCODER: &str = "ae.ckpt";
pub const CKPT_DAAE: &str = "daae.ckpt";
pub const CKPT_GEN_DGCEX: &str = "gen_dgcex.ckpt";
pub const CKPT_GEN_DADGCEX: &str = "gen_dadgcex.ckpt";

pub fn ckpt_class_autoencoder(class: usize) -> String {
    format!("ae_class_{class}.ckpt")
}

/// File name of a method's per-instance result log.
pub fn result_log_name(method: Method) -> String {
    format!("results_{}.log", method.name())
}

/// Rows per comparison grid image.
const GRID_ROWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainComponent {
    Discriminator,
    Autoencoders,
    PerClassAutoencoders,
    Dgcex,
    DaDgcex,
}

impl TrainComponent {
    pub fn parse(s: &str) -> Result<TrainComponent> {
        match s {
            "discriminator" => Ok(TrainComponent::Discriminator),
            "ae" => Ok(TrainComponent::Autoencoders),
            "ae-per-class" => Ok(TrainComponent::PerClassAutoencoders),
            "dgcex" => Ok(TrainComponent::Dgcex),
            "dadgcex" => Ok(TrainComponent::DaDgcex),
            other => Err(CoreError::Config(format!(
                "unknown train component {other:?}; expected discriminator, ae, ae-per-class, dgcex, or dadgcex"
            ))),
        }
    }
}

/// Which test instances an explain run covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplainScope {
    /// The evaluation subset: the first `eval_count` test instances.
    All,
    /// One test instance by id.
    Single(usize),
}

pub struct Pipeline {
    cfg: ExperimentConfig,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Pipeline> {
        cfg.validate()?;
        Ok(Pipeline { cfg })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Absolute path of an artifact under the output directory.
    pub fn artifact_path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn stage_seed(&self, label: &str) -> u64 {
        Rng::from_label(self.cfg.seed, label).next_u64()
    }

    fn write_resolved_config(&self) -> Result<()> {
        atomic_write(
            &self.artifact_path("config.resolved.txt"),
            self.cfg.to_text().as_bytes(),
        )
    }

    fn load_train_test(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = load_mnist(&self.cfg.mnist_dir)?;
        if self.cfg.train_count > train.len() {
            return Err(CoreError::Config(format!(
                "train_count {} exceeds the {} available training images",
                self.cfg.train_count,
                train.len()
            )));
        }
        if self.cfg.eval_count > test.len() {
            return Err(CoreError::Config(format!(
                "eval_count {} exceeds the {} available test images",
                self.cfg.eval_count,
                test.len()
            )));
        }
        Ok((train.take(self.cfg.train_count), test))
    }

    fn hint(e: CoreError, cmd: &str) -> CoreError {
        match e {
            CoreError::Prerequisite(msg) => {
                CoreError::Prerequisite(format!("{msg} (run `{cmd}` first)"))
            }
            other => other,
        }
    }

    fn load_disc(&self) -> Result<Discriminator> {
        Discriminator::load(&self.artifact_path(CKPT_DISCRIMINATOR))
            .map(|(m, _)| m)
            .map_err(|e| Self::hint(e, "cfx train discriminator"))
    }

    fn load_ae(&self, name: &str) -> Result<Autoencoder> {
        Autoencoder::load(&self.artifact_path(name))
            .map(|(m, _)| m)
            .map_err(|e| Self::hint(e, "cfx train ae"))
    }

    fn load_class_ae(&self, class: usize) -> Result<Autoencoder> {
        Autoencoder::load(&self.artifact_path(&ckpt_class_autoencoder(class)))
            .map(|(m, _)| m)
            .map_err(|e| Self::hint(e, "cfx train ae-per-class"))
    }

    fn load_gen(&self, method: Method) -> Result<Generator> {
        let (name, cmd) = match method {
            Method::Dgcex => (CKPT_GEN_DGCEX, "cfx train dgcex"),
            Method::DaDgcex => (CKPT_GEN_DADGCEX, "cfx train dadgcex"),
            Method::CfProto => {
                return Err(CoreError::Contract(
                    "the per-instance method has no generator checkpoint".to_string(),
                ))
            }
        };
        Generator::load(&self.artifact_path(name))
            .map(|(m, _)| m)
            .map_err(|e| Self::hint(e, cmd))
    }

    fn write_train_log(&self, name: &str, component: &str, report: &TrainReport) -> Result<()> {
        let mut text = format!("component {component}\nseed {}\n", report.seed);
        for (epoch, loss) in report.epoch_losses.iter().enumerate() {
            text.push_str(&format!("epoch {epoch} loss {loss}\n"));
        }
        text.push_str(&format!("final_metric {}\n", report.final_metric));
        text.push_str(&format!("seconds {:.6}\n", report.seconds));
        atomic_write(&self.artifact_path(name), text.as_bytes())
    }

    // ---- training stages --------------------------------------------------

    pub fn train(&self, component: TrainComponent) -> Result<()> {
        self.write_resolved_config()?;
        match component {
            TrainComponent::Discriminator => self.train_discriminator_stage(),
            TrainComponent::Autoencoders => self.train_autoencoder_stage(),
            TrainComponent::PerClassAutoencoders => self.train_per_class_stage(),
            TrainComponent::Dgcex => self.train_generator_stage(Method::Dgcex),
            TrainComponent::DaDgcex => self.train_generator_stage(Method::DaDgcex),
        }
    }

    fn train_discriminator_stage(&self) -> Result<()> {
        let (train, test) = self.load_train_test()?;
        let seed = self.stage_seed("stage.discriminator");
        let mut model = Discriminator::init(seed);
        let tc = TrainConfig {
            epochs: self.cfg.disc_epochs,
            batch_size: self.cfg.disc_batch,
            adam: AdamConfig::default(),
            seed,
        };
        let report = train_discriminator(&mut model, &train, &test, &tc)?;
        let meta = [
            ("epochs".to_string(), tc.epochs.to_string()),
            ("train_count".to_string(), train.len().to_string()),
        ];
        model.save(&self.artifact_path(CKPT_DISCRIMINATOR), seed, &meta)?;
        self.write_train_log("train_discriminator.log", "discriminator", &report)?;
        println!(
            "trained discriminator: test accuracy {:.4} in {:.1}s -> {}",
            report.final_metric,
            report.seconds,
            self.artifact_path(CKPT_DISCRIMINATOR).display()
        );
        Ok(())
    }

    fn train_one_autoencoder(
        &self,
        label: &str,
        ckpt: &str,
        log: &str,
        component: &str,
        train: &Dataset,
        test: &Dataset,
    ) -> Result<()> {
        let seed = self.stage_seed(label);
        let mut model = Autoencoder::init(seed);
        let tc = TrainConfig {
            epochs: self.cfg.ae_epochs,
            batch_size: self.cfg.ae_batch,
            adam: AdamConfig::default(),
            seed,
        };
        let report = train_autoencoder(&mut model, train, test, &tc)?;
        let meta = [
            ("epochs".to_string(), tc.epochs.to_string()),
            ("train_count".to_string(), train.len().to_string()),
        ];
        model.save(&self.artifact_path(ckpt), seed, &meta)?;
        self.write_train_log(log, component, &report)?;
        println!(
            "trained {component}: reconstruction error {:.4} in {:.1}s -> {}",
            report.final_metric,
            report.seconds,
            self.artifact_path(ckpt).display()
        );
        Ok(())
    }

    fn train_autoencoder_stage(&self) -> Result<()> {
        let (train, test) = self.load_train_test()?;
        self.train_one_autoencoder("stage.ae", CKPT_AUTOENCODER, "train_ae.log", "ae", &train, &test)?;
        if self.cfg.separate_daae {
            self.train_one_autoencoder(
                "stage.daae",
                CKPT_DAAE,
                "train_daae.log",
                "daae",
                &train,
                &test,
            )?;
        }
        Ok(())
    }

    fn train_per_class_stage(&self) -> Result<()> {
        let (train, test) = self.load_train_test()?;
        for class in 0..NUM_CLASSES {
            let train_c = train.class_subset(class)?;
            let test_c = test.class_subset(class)?;
            self.train_one_autoencoder(
                &format!("stage.ae_class.{class}"),
                &ckpt_class_autoencoder(class),
                &format!("train_ae_class_{class}.log"),
                &format!("ae_class_{class}"),
                &train_c,
                &test_c,
            )?;
        }
        Ok(())
    }

    fn train_generator_stage(&self, method: Method) -> Result<()> {
        let (train, _) = self.load_train_test()?;
        let mut disc = self.load_disc()?;
        disc.freeze();
        let (gamma, daae, ckpt, log, label, component) = match method {
            Method::Dgcex => (0.0, None, CKPT_GEN_DGCEX, "train_dgcex.log", "stage.gen.dgcex", "dgcex"),
            Method::DaDgcex => {
                let name = if self.cfg.separate_daae { CKPT_DAAE } else { CKPT_AUTOENCODER };
                let mut ae = self.load_ae(name)?;
                ae.freeze();
                (
                    self.cfg.gamma,
                    Some(ae),
                    CKPT_GEN_DADGCEX,
                    "train_dadgcex.log",
                    "stage.gen.dadgcex",
                    "dadgcex",
                )
            }
            Method::CfProto => {
                return Err(CoreError::Contract(
                    "the per-instance method is not trained".to_string(),
                ))
            }
        };
        let seed = self.stage_seed(label);
        let mut gen = Generator::init(seed);
        let ac = AmortizedTrainConfig {
            alpha: self.cfg.alpha,
            beta: self.cfg.beta,
            gamma,
            epochs: self.cfg.gen_epochs,
            batch_size: self.cfg.gen_batch,
            adam: AdamConfig::default(),
            seed,
        };
        let report = train_amortized(&mut gen, &disc, daae.as_ref(), &train, &ac)?;
        let meta = [
            ("epochs".to_string(), ac.epochs.to_string()),
            ("gamma".to_string(), gamma.to_string()),
        ];
        gen.save(&self.artifact_path(ckpt), seed, &meta)?;
        self.write_train_log(log, component, &report)?;
        println!(
            "trained {component}: final loss {:.4} in {:.1}s -> {}",
            report.final_metric,
            report.seconds,
            self.artifact_path(ckpt).display()
        );
        Ok(())
    }

    // ---- explanation stage ------------------------------------------------

    /// Explain test instances. With no method, runs the full protocol:
    /// per-instance search first (fixing each instance's counterfactual
    /// class), then both amortized methods on the same classes. An explicit
    /// `target` class applies to single-instance runs only.
    pub fn explain(
        &self,
        method: Option<Method>,
        scope: ExplainScope,
        target: Option<u8>,
    ) -> Result<()> {
        self.write_resolved_config()?;
        if target.is_some() && !matches!(scope, ExplainScope::Single(_)) {
            return Err(CoreError::Config(
                "--target applies to a single instance (use --id)".to_string(),
            ));
        }
        let methods: Vec<Method> = match method {
            Some(m) => vec![m],
            None => Method::all().to_vec(),
        };
        for m in methods {
            self.explain_method(m, scope, target)?;
        }
        Ok(())
    }

    fn instance_ids(&self, scope: ExplainScope, test_len: usize) -> Result<Vec<usize>> {
        match scope {
            ExplainScope::All => Ok((0..self.cfg.eval_count).collect()),
            ExplainScope::Single(id) => {
                if id >= test_len {
                    return Err(CoreError::Config(format!(
                        "instance id {id} out of range for {test_len} test images"
                    )));
                }
                Ok(vec![id])
            }
        }
    }

    fn explain_method(
        &self,
        method: Method,
        scope: ExplainScope,
        target: Option<u8>,
    ) -> Result<()> {
        let (train, test) = self.load_train_test()?;
        let ids = self.instance_ids(scope, test.len())?;
        let disc = self.load_disc()?;
        let outputs = match method {
            Method::CfProto => self.run_cfproto(&train, &test, &ids, &disc, target)?,
            _ => self.run_amortized(method, &test, &ids, &disc, target)?,
        };
        self.persist_results(method, &ids, outputs)
    }

    fn run_cfproto(
        &self,
        train: &Dataset,
        test: &Dataset,
        ids: &[usize],
        disc: &Discriminator,
        target: Option<u8>,
    ) -> Result<Vec<CounterfactualResult>> {
        let ae = self.load_ae(CKPT_AUTOENCODER)?;
        let index = LatentIndex::build(&ae, train, 256)?;
        let threads = worker_count(ids.len());
        let next = AtomicUsize::new(0);
        let done = AtomicUsize::new(0);

        let mut slots: Vec<Option<Result<CounterfactualResult>>> = Vec::new();
        slots.resize_with(ids.len(), || None);
        std::thread::scope(|scope| {
            let workers: Vec<_> = (0..threads)
                .map(|_| {
                    let next = &next;
                    let done = &done;
                    let ae = &ae;
                    let index = &index;
                    scope.spawn(move || {
                        let mut local = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            if i >= ids.len() {
                                return local;
                            }
                            let out = (|| {
                                let x = test.image_tensor(ids[i]);
                                let y = disc.predict(&x)?[0];
                                let (result, _) = cfproto_explain(
                                    &x,
                                    y,
                                    disc,
                                    ae,
                                    index,
                                    &self.cfg.cfproto,
                                    target,
                                )?;
                                Ok(result)
                            })();
                            local.push((i, out));
                            let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
                            if finished % 25 == 0 {
                                eprintln!("cfproto: {finished}/{} instances", ids.len());
                            }
                        }
                    })
                })
                .collect();
            for w in workers {
                for (i, out) in w.join().expect("explanation worker panicked") {
                    slots[i] = Some(out);
                }
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every instance was claimed by a worker"))
            .collect()
    }

    fn cfproto_targets(&self, ids: &[usize]) -> Result<BTreeMap<usize, u8>> {
        let path = self.artifact_path(&result_log_name(Method::CfProto));
        let records = read_result_log(&path).map_err(|e| {
            Self::hint(e, "cfx explain --method cfproto")
        })?;
        let map: BTreeMap<usize, u8> = records.iter().map(|r| (r.instance_id, r.y_cf)).collect();
        for id in ids {
            if !map.contains_key(id) {
                return Err(CoreError::Prerequisite(format!(
                    "instance {id} is missing from {} (run `cfx explain --method cfproto` over the same instances first)",
                    path.display()
                )));
            }
        }
        Ok(map)
    }

    fn run_amortized(
        &self,
        method: Method,
        test: &Dataset,
        ids: &[usize],
        disc: &Discriminator,
        target: Option<u8>,
    ) -> Result<Vec<CounterfactualResult>> {
        let gen = self.load_gen(method)?;
        let targets: Vec<u8> = match target {
            Some(t) => vec![t; ids.len()],
            None => {
                let map = self.cfproto_targets(ids)?;
                ids.iter().map(|id| map[id]).collect()
            }
        };
        ids.iter()
            .zip(&targets)
            .map(|(&id, &y_cf)| explain_amortized(&gen, disc, &test.image_tensor(id), y_cf, method))
            .collect()
    }

    fn persist_results(
        &self,
        method: Method,
        ids: &[usize],
        outputs: Vec<CounterfactualResult>,
    ) -> Result<()> {
        let mut records = Vec::with_capacity(outputs.len());
        let mut grid_rows = Vec::new();
        for (&id, res) in ids.iter().zip(&outputs) {
            let x_ref = format!("images/x_{id}.pgm");
            let x_cf_ref = format!("images/xcf_{}_{id}.pgm", method.name());
            let x = res.x.reshaped(&[IMAGE_SIDE, IMAGE_SIDE])?;
            let x_cf = res.x_cf.reshaped(&[IMAGE_SIDE, IMAGE_SIDE])?;
            write_pgm(&self.artifact_path(&x_ref), &x)?;
            write_pgm(&self.artifact_path(&x_cf_ref), &x_cf)?;
            if grid_rows.len() < GRID_ROWS {
                grid_rows.push(vec![x, x_cf]);
            }
            records.push(ResultRecord {
                instance_id: id,
                method,
                y: res.y,
                y_cf: res.y_cf,
                y_pred_cf: res.y_pred_cf,
                seconds: res.seconds,
                x_ref,
                x_cf_ref,
            });
        }
        let log = self.artifact_path(&result_log_name(method));
        write_result_log(&log, &records)?;
        write_pgm(
            &self.artifact_path(&format!("grid_{}.pgm", method.name())),
            &image_grid(&grid_rows)?,
        )?;
        let valid = records.iter().filter(|r| r.is_valid()).count();
        println!(
            "explained {} instances with {}: {}/{} valid -> {}",
            records.len(),
            method,
            valid,
            records.len(),
            log.display()
        );
        Ok(())
    }

    // ---- evaluation stage -------------------------------------------------

    fn read_present_logs(&self) -> Result<Vec<(Method, Vec<ResultRecord>)>> {
        let mut logs = Vec::new();
        for method in Method::all() {
            let path = self.artifact_path(&result_log_name(method));
            if path.exists() {
                logs.push((method, read_result_log(&path)?));
            }
        }
        if logs.is_empty() {
            return Err(CoreError::Prerequisite(format!(
                "no result logs under {} (run `cfx explain` first)",
                self.cfg.out_dir.display()
            )));
        }
        Ok(logs)
    }

    /// Every method must have explained each shared instance under the same
    /// original and counterfactual class.
    fn assert_protocol(logs: &[(Method, Vec<ResultRecord>)]) -> Result<()> {
        let mut seen: BTreeMap<usize, (u8, u8, Method)> = BTreeMap::new();
        for (method, records) in logs {
            for r in records {
                match seen.get(&r.instance_id) {
                    None => {
                        seen.insert(r.instance_id, (r.y, r.y_cf, *method));
                    }
                    Some(&(y, y_cf, first)) => {
                        if (y, y_cf) != (r.y, r.y_cf) {
                            return Err(CoreError::Invariant(format!(
                                "instance {}: {first} explained {y} -> {y_cf} but {method} explained {} -> {}",
                                r.instance_id, r.y, r.y_cf
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Compute both metrics for every explained instance and write
    /// `metrics.csv`.
    pub fn evaluate(&self) -> Result<()> {
        self.write_resolved_config()?;
        let logs = self.read_present_logs()?;
        Self::assert_protocol(&logs)?;

        let ae_all = self.load_ae(CKPT_AUTOENCODER)?;
        let mut per_class = Vec::with_capacity(NUM_CLASSES);
        for class in 0..NUM_CLASSES {
            per_class.push(self.load_class_ae(class)?);
        }

        let mut eval_records = Vec::new();
        for (method, records) in &logs {
            for r in records {
                let x_cf = read_pgm(&self.artifact_path(&r.x_cf_ref))?
                    .reshaped(&[1, IMAGE_SIDE, IMAGE_SIDE, 1])?;
                let v1 = im1(
                    &per_class[r.y_cf as usize],
                    &per_class[r.y as usize],
                    &x_cf,
                    &self.cfg.metrics,
                )?;
                let v2 = im2(&per_class[r.y_cf as usize], &ae_all, &x_cf, &self.cfg.metrics)?;
                eval_records.push(EvalRecord::new(
                    r.instance_id,
                    *method,
                    r.y,
                    r.y_cf,
                    v1,
                    v2,
                    r.seconds,
                )?);
            }
        }
        let csv = records_csv(&eval_records)?;
        atomic_write(&self.artifact_path("metrics.csv"), csv.as_bytes())?;
        println!(
            "evaluated {} records -> {}",
            eval_records.len(),
            self.artifact_path("metrics.csv").display()
        );
        Ok(())
    }

    // ---- report stage -----------------------------------------------------

    /// Render summary tables, pairwise matrices, histograms, and the
    /// combined image grid from `metrics.csv`. Returns the report text.
    pub fn report(&self) -> Result<String> {
        self.write_resolved_config()?;
        let path = self.artifact_path("metrics.csv");
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CoreError::Prerequisite(format!(
                "{} does not exist (run `cfx evaluate` first)",
                path.display()
            )),
            _ => CoreError::io(&path, e),
        })?;
        let records = parse_records_csv(&text)?;
        let summary = summarize(&records)?;
        atomic_write(
            &self.artifact_path("summary.txt"),
            summary.report_text().as_bytes(),
        )?;
        atomic_write(
            &self.artifact_path("summary.csv"),
            summary.table_csv().as_bytes(),
        )?;
        atomic_write(
            &self.artifact_path("pairwise_im1.csv"),
            summary.pairwise_im1.csv().as_bytes(),
        )?;
        atomic_write(
            &self.artifact_path("pairwise_im2.csv"),
            summary.pairwise_im2.csv().as_bytes(),
        )?;
        atomic_write(
            &self.artifact_path("histograms.csv"),
            histogram_csv(&records)?.as_bytes(),
        )?;
        self.write_combined_grid()?;
        Ok(summary.report_text())
    }

    /// One grid over all present methods: original in column one, each
    /// method's counterfactual after it, first [`GRID_ROWS`] shared ids.
    fn write_combined_grid(&self) -> Result<()> {
        let logs = self.read_present_logs()?;
        let mut shared: Option<Vec<usize>> = None;
        for (_, records) in &logs {
            let ids: Vec<usize> = records.iter().map(|r| r.instance_id).collect();
            shared = Some(match shared {
                None => ids,
                Some(prev) => prev.into_iter().filter(|i| ids.contains(i)).collect(),
            });
        }
        let mut ids = shared.unwrap_or_default();
        ids.sort_unstable();
        ids.truncate(GRID_ROWS);
        if ids.is_empty() {
            return Ok(());
        }
        let mut rows = Vec::with_capacity(ids.len());
        for id in ids {
            let mut row = Vec::with_capacity(logs.len() + 1);
            let first = &logs[0].1;
            let x_ref = &first
                .iter()
                .find(|r| r.instance_id == id)
                .expect("id came from this log")
                .x_ref;
            row.push(read_pgm(&self.artifact_path(x_ref))?);
            for (_, records) in &logs {
                let r = records
                    .iter()
                    .find(|r| r.instance_id == id)
                    .expect("id is shared");
                row.push(read_pgm(&self.artifact_path(&r.x_cf_ref))?);
            }
            rows.push(row);
        }
        write_pgm(&self.artifact_path("grid_all.pgm"), &image_grid(&rows)?)
    }
}

/// Worker threads for per-instance searches: the machine's parallelism,
/// capped by the `CFX_THREADS` environment variable and the amount of work.
fn worker_count(work_items: usize) -> usize {
    let available = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1);
    let cap = std::env::var("CFX_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(available);
    available.min(cap).clamp(1, work_items.max(1))
}
