use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;
use wsphen_core::analysis::{cox_hr_binary, kaplan_meier, kmeans, logrank_test, pca_reduce};
use wsphen_core::{SurvivalRecord, Tensor};

use super::*;
use crate::config::Population;

struct EmbeddingRows {
    ids: Vec<String>,
    probability: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

fn parse_field<T: std::str::FromStr>(raw: &str, line: usize, what: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("{what} {raw:?} is not a number"),
    })
}

fn read_embeddings(path: &Path) -> Result<EmbeddingRows> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::EmptyInput(format!("{} is empty", path.display())))?;
    let width = header.split(',').count();
    if width < 3 || !header.starts_with("patient_id,probability,") {
        return Err(Error::Parse {
            line: 1,
            message: "expected header patient_id,probability,e0,...".into(),
        });
    }
    let mut rows = EmbeddingRows {
        ids: Vec::new(),
        probability: Vec::new(),
        vectors: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::Parse {
                line: n,
                message: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        rows.ids.push(fields[0].to_string());
        rows.probability.push(parse_field(fields[1], n, "probability")?);
        rows.vectors.push(
            fields[2..]
                .iter()
                .map(|f| parse_field(f, n, "embedding value"))
                .collect::<Result<_>>()?,
        );
    }
    Ok(rows)
}

#[derive(Serialize)]
struct ClusterSummary {
    population: Population,
    n: usize,
    k: usize,
    sizes: Vec<usize>,
    wcss: f64,
    n_components: usize,
    explained_ratio: Vec<f64>,
}

pub(super) fn cluster(ctx: &Ctx) -> std::result::Result<(), StageError> {
    let path = ctx.input(&ctx.cfg.run.embeddings, EMBEDDINGS);
    let rows = read_embeddings(&path).stage("load")?;
    let keep: Vec<usize> = (0..rows.ids.len())
        .filter(|&i| match ctx.cfg.cluster.population {
            Population::All => true,
            Population::PredictedPositive => rows.probability[i] >= 0.5,
        })
        .collect();
    if keep.len() < ctx.cfg.cluster.k.max(2) {
        return Err(Error::Config(format!(
            "only {} patients in the {:?} population; need at least max(k, 2) = {}",
            keep.len(),
            ctx.cfg.cluster.population,
            ctx.cfg.cluster.k.max(2)
        )))
        .stage("cluster");
    }
    let x = Tensor::from_rows(&keep.iter().map(|&i| rows.vectors[i].clone()).collect::<Vec<_>>()).stage("cluster")?;
    let pca = pca_reduce(&x, ctx.cfg.cluster.var_threshold).stage("pca")?;
    let model = kmeans(&pca.coords, &ctx.cfg.cluster.kmeans()).stage("cluster")?;

    let mut clusters = String::from("patient_id,cluster\n");
    let mut coords = String::from("patient_id,pc1,pc2\n");
    for (row, &i) in keep.iter().enumerate() {
        let _ = writeln!(clusters, "{},{}", rows.ids[i], model.assignments[row]);
        let _ = writeln!(coords, "{},{},{}", rows.ids[i], pca.coords_2d.at(row, 0), pca.coords_2d.at(row, 1));
    }
    write_text(&ctx.out(CLUSTERS), &clusters).stage("cluster")?;
    write_text(&ctx.out(COORDS), &coords).stage("cluster")?;
    let summary = ClusterSummary {
        population: ctx.cfg.cluster.population,
        n: keep.len(),
        k: model.k,
        sizes: model.sizes(),
        wcss: model.wcss,
        n_components: pca.n_components(),
        explained_ratio: pca.explained_ratio.clone(),
    };
    write_json(&ctx.out(CLUSTER_SUMMARY), &summary).stage("cluster")
}

fn read_clusters(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("patient_id,cluster") {
        return Err(Error::Parse {
            line: 1,
            message: "expected header patient_id,cluster".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let (id, c) = line.rsplit_once(',').ok_or_else(|| Error::Parse {
                line: i + 2,
                message: "expected patient_id,cluster".into(),
            })?;
            Ok((id.to_string(), parse_field(c, i + 2, "cluster id")?))
        })
        .collect()
}

#[derive(Serialize)]
struct SurvivalReport {
    /// Reference and comparison cluster; the hazard ratio is `b` versus `a`.
    group_a: usize,
    group_b: usize,
    n_a: usize,
    n_b: usize,
    logrank_chi2: f64,
    p: f64,
    observed_b: f64,
    expected_b: f64,
    /// Absent when the partial likelihood is monotone.
    hr: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    cox_p: Option<f64>,
    /// Set when the estimate diverges; `hr_infinite` tells the direction.
    monotone: bool,
    hr_infinite: bool,
}

pub(super) fn survival(ctx: &Ctx) -> std::result::Result<(), StageError> {
    let clusters = read_clusters(&ctx.input(&ctx.cfg.run.clusters, CLUSTERS)).stage("load")?;
    let groups: BTreeSet<usize> = clusters.iter().map(|c| c.1).collect();
    if groups.len() < 2 {
        return Err(Error::Config(format!(
            "survival comparison needs at least 2 clusters, found {}",
            groups.len()
        )))
        .stage("survival");
    }
    let table = ctx.table().stage("load")?;
    let cohort = ctx.cohort(&table, COHORT_CALIBRATED).stage("load")?;
    let by_id: HashMap<&str, usize> = cohort
        .patients
        .iter()
        .enumerate()
        .map(|(i, p)| (p.patient_id.as_str(), i))
        .collect();
    let mut per_group: BTreeMap<usize, Vec<SurvivalRecord>> = BTreeMap::new();
    for (id, group) in &clusters {
        let i = *by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Validation(format!("clustered patient {id} is not in the cohort")))
            .stage("survival")?;
        let s = cohort.patients[i]
            .survival
            .ok_or_else(|| Error::Validation(format!("patient {id} has no survival record")))
            .stage("survival")?;
        per_group
            .entry(*group)
            .or_default()
            .push(SurvivalRecord::new(s.time, s.event, *group).stage("survival")?);
    }

    let mut km = String::from("group,time,survival\n");
    for (g, records) in &per_group {
        let curve = kaplan_meier(records).stage("survival")?;
        let _ = writeln!(km, "{g},0,1");
        for step in &curve.steps {
            let _ = writeln!(km, "{g},{},{}", step.time, step.survival);
        }
    }
    write_text(&ctx.out(KM), &km).stage("survival")?;

    let mut ids = groups.iter().copied();
    let (a, b) = (ids.next().unwrap_or(0), ids.next().unwrap_or(1));
    if groups.len() > 2 {
        log::warn!("{} clusters; comparing the two lowest ids {a} and {b}", groups.len());
    }
    let (ra, rb) = (&per_group[&a], &per_group[&b]);
    let lr = logrank_test(ra, rb).stage("survival")?;
    let both: Vec<SurvivalRecord> = ra.iter().chain(rb).copied().collect();
    let exposed: Vec<bool> = both.iter().map(|r| r.group == b).collect();
    let cox = cox_hr_binary(&both, &exposed).stage("survival")?;
    let fit = cox.fit();
    let report = SurvivalReport {
        group_a: a,
        group_b: b,
        n_a: ra.len(),
        n_b: rb.len(),
        logrank_chi2: lr.chi2,
        p: lr.p,
        observed_b: lr.observed_b,
        expected_b: lr.expected_b,
        hr: fit.map(|f| f.hr),
        ci_low: fit.map(|f| f.ci_low),
        ci_high: fit.map(|f| f.ci_high),
        cox_p: fit.map(|f| f.p),
        monotone: fit.is_none(),
        hr_infinite: matches!(cox, wsphen_core::analysis::CoxOutcome::Monotone { hr_infinite: true }),
    };
    write_json(&ctx.out(SURVIVAL), &report).stage("survival")
}
