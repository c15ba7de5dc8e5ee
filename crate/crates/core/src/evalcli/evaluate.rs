use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::metrics::{metrics_report, MetricsReport, RESULTS_HEADER};
use super::train::{resolve_dataset, sorted_pairs, stack_grids};
use super::RunConfig;
use crate::diffusion::{sample_batch, ConditionInput, GuidanceConfig};
use crate::grids::{export_pgm, Grid, PrecipField, SamplePair, Split};
use crate::rng::derive_seed;
use crate::{Error, Result};

pub const RESULTS_FILE: &str = "results.csv";
pub const PER_SAMPLE_FILE: &str = "per_sample.csv";
pub const SWEEP_FILE: &str = "consistency.csv";

/// Bilinear upsampling of the low-resolution field in physical units.
pub fn predict_bilinear(pairs: &[SamplePair]) -> Result<Vec<PrecipField>> {
    pairs
        .iter()
        .map(|p| {
            let (h, w) = p.hr.dims();
            PrecipField::new(p.lr.resize_bilinear(h, w)?.map(|v| v.max(0.0)))
        })
        .collect()
}

fn conditions(ck: &Checkpoint, pairs: &[SamplePair]) -> Result<Vec<ConditionInput>> {
    pairs
        .iter()
        .map(|p| ConditionInput::from_pair(p, &ck.norm, ck.topo_moments, ck.config.use_topo))
        .collect()
}

fn check_dims(ck: &Checkpoint, pairs: &[SamplePair]) -> Result<()> {
    let (h, w) = pairs[0].hr.dims();
    if (h, w) != (ck.config.size, ck.config.size) {
        return Err(Error::Shape {
            op: "evaluate",
            detail: format!(
                "eval fields are {h}x{w} but the checkpoint was trained on {0}x{0}",
                ck.config.size
            ),
        });
    }
    Ok(())
}

pub fn predict_srcnn(ck: &Checkpoint, pairs: &[SamplePair], batch: usize) -> Result<Vec<PrecipField>> {
    check_dims(ck, pairs)?;
    let net = ck.srcnn()?;
    let conds = conditions(ck, pairs)?;
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in conds.chunks(batch.max(1)) {
        let input = stack_grids(&chunk.iter().map(|c| &c.lr_up).collect::<Vec<_>>())?;
        let pred = net.predict(&input)?;
        let (h, w) = chunk[0].hr_dims();
        for b in 0..chunk.len() {
            let u = Grid::new(h, w, pred.sample(b).to_vec())?;
            out.push(ck.norm.decode(&u));
        }
    }
    Ok(out)
}

/// Diffusion samples in model range and physical units, one chain per pair
/// seeded with `derive_seed(seed, id)`.
pub struct DiffusionOutput {
    pub model_range: Vec<Grid>,
    pub fields: Vec<PrecipField>,
    pub conds: Vec<ConditionInput>,
}

pub fn predict_diffusion(
    ck: &Checkpoint,
    pairs: &[SamplePair],
    config: &RunConfig,
    guidance: &GuidanceConfig,
) -> Result<DiffusionOutput> {
    check_dims(ck, pairs)?;
    let net = ck.unet()?;
    let schedule = ck.schedule()?;
    let conds = conditions(ck, pairs)?;
    let seeds: Vec<u64> = pairs.iter().map(|p| derive_seed(config.seed, &p.id)).collect();
    let mut model_range = Vec::with_capacity(pairs.len());
    for (c, s) in conds.chunks(config.eval_batch).zip(seeds.chunks(config.eval_batch)) {
        model_range.extend(sample_batch(&net, c, s, &schedule, guidance, config.reverse)?);
    }
    let fields = model_range.iter().map(|u| ck.norm.decode(u)).collect();
    Ok(DiffusionOutput {
        model_range,
        fields,
        conds,
    })
}

/// `|| resize(y, LR dims) - x ||_2` in model range, where `y` is the
/// sample clamped to `[-1, 1]` (the values the decoded prediction carries).
pub fn lr_residual(y0: &Grid, cond: &ConditionInput) -> Result<f64> {
    let (h, w) = cond.lr.dims();
    let down = y0.map(|v| v.clamp(-1.0, 1.0)).resize_bilinear(h, w)?;
    Ok(down
        .values()
        .iter()
        .zip(cond.lr.values())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub w: f64,
    pub lr_residual: f64,
    pub rmse: f64,
    pub n: usize,
}

/// What to run in [`evaluate`].
#[derive(Debug, Clone, Default)]
pub struct EvalRequest {
    pub bilinear: bool,
    pub srcnn: Option<Checkpoint>,
    pub unet: Option<Checkpoint>,
    /// Companion model trained without topography, for the ablation rows.
    pub unet_no_topo: Option<Checkpoint>,
    /// Emit guidance on and off rows for every diffusion model.
    pub ablation: bool,
    /// Run the guidance-weight sweep on the first `eval.sweep_count` pairs.
    pub sweep: bool,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub reports: Vec<MetricsReport>,
    pub sweep: Vec<SweepRow>,
    pub results_path: PathBuf,
}

impl EvalSummary {
    pub fn report(&self, method: &str) -> Option<&MetricsReport> {
        self.reports.iter().find(|r| r.method == method)
    }
}

pub fn diffusion_label(guided: bool, topo: bool) -> String {
    let on = |b: bool| if b { "on" } else { "off" };
    format!("diffusion_bgs-{}_topo-{}", on(guided), on(topo))
}

pub fn results_csv(reports: &[MetricsReport]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn per_sample_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from("method,id,rmse,corr,bias\n");
    for r in reports {
        for s in &r.per_sample {
            let corr = s.corr.map_or("undefined".to_string(), |c| c.to_string());
            writeln!(out, "{},{},{},{corr},{}", r.method, s.id, s.rmse, s.bias).expect("string write");
        }
    }
    out
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("w,lr_residual,rmse,n\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.w, r.lr_residual, r.rmse, r.n).expect("string write");
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn panels(dir: &Path, pairs: &[SamplePair], preds: &[(String, Vec<PrecipField>)], count: usize) -> Result<()> {
    for (i, p) in pairs.iter().take(count).enumerate() {
        let vmax = p.hr.values().iter().copied().fold(0.0f32, f32::max);
        let vmax = if vmax > 0.0 { vmax } else { 1.0 };
        export_pgm(p.lr.grid(), dir.join(format!("{}_lr.pgm", p.id)), vmax)?;
        export_pgm(p.hr.grid(), dir.join(format!("{}_hr.pgm", p.id)), vmax)?;
        for (method, fields) in preds {
            export_pgm(fields[i].grid(), dir.join(format!("{}_{method}.pgm", p.id)), vmax)?;
        }
    }
    Ok(())
}

/// Scores the requested methods on the eval split (ordered by id) and
/// writes `results.csv`, `per_sample.csv`, optional `consistency.csv` and
/// PGM panels under `config.out_dir`.
pub fn evaluate(config: &RunConfig, request: &EvalRequest) -> Result<EvalSummary> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::io(format!("creating {}", config.out_dir.display()), e))?;
    let manifest = resolve_dataset(config)?;
    let pairs = sorted_pairs(&manifest, Split::Eval)?;
    let ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
    let obs: Vec<PrecipField> = pairs.iter().map(|p| p.hr.clone()).collect();

    let mut preds: Vec<(String, Vec<PrecipField>)> = Vec::new();
    if request.bilinear {
        preds.push(("bilinear".into(), predict_bilinear(&pairs)?));
    }
    if let Some(ck) = &request.srcnn {
        preds.push(("srcnn".into(), predict_srcnn(ck, &pairs, config.eval_batch)?));
    }
    let guided = config.guidance();
    for ck in [&request.unet, &request.unet_no_topo].into_iter().flatten() {
        let mut modes = Vec::new();
        if request.ablation {
            modes.push(GuidanceConfig::disabled());
        }
        if guided.enabled || !request.ablation {
            modes.push(guided);
        }
        for g in modes {
            let out = predict_diffusion(ck, &pairs, config, &g)?;
            let on = g.enabled && g.w > 0.0;
            preds.push((diffusion_label(on, ck.config.use_topo), out.fields));
        }
    }
    if preds.is_empty() {
        return Err(Error::Config("nothing to evaluate: no baseline or checkpoint".into()));
    }

    let reports = preds
        .iter()
        .map(|(m, p)| metrics_report(m, &ids, p, &obs))
        .collect::<Result<Vec<_>>>()?;

    let mut sweep = Vec::new();
    if request.sweep {
        let ck = request
            .unet
            .as_ref()
            .ok_or_else(|| Error::Config("the guidance sweep needs a diffusion checkpoint".into()))?;
        let subset = &pairs[..config.eval_sweep_count.min(pairs.len())];
        let sub_obs = &obs[..subset.len()];
        for &w in &config.eval_sweep {
            let g = GuidanceConfig {
                enabled: true,
                w,
                ..guided
            };
            let out = predict_diffusion(ck, subset, config, &g)?;
            let total = out
                .model_range
                .iter()
                .zip(&out.conds)
                .map(|(y, c)| lr_residual(y, c))
                .sum::<Result<f64>>()?;
            sweep.push(SweepRow {
                w,
                lr_residual: total / subset.len() as f64,
                rmse: super::metrics::rmse(&out.fields, sub_obs)?,
                n: subset.len(),
            });
        }
        write(&config.out_dir.join(SWEEP_FILE), &sweep_csv(&sweep))?;
    }

    let results_path = config.out_dir.join(RESULTS_FILE);
    write(&results_path, &results_csv(&reports))?;
    write(&config.out_dir.join(PER_SAMPLE_FILE), &per_sample_csv(&reports))?;
    if config.eval_panels > 0 {
        let dir = config.out_dir.join("panels");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        panels(&dir, &pairs, &preds, config.eval_panels)?;
    }
    Ok(EvalSummary {
        reports,
        sweep,
        results_path,
    })
}
