use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use erflow_core::evaluation::{
    adjusted_rand_index, blocking_metrics, pairwise_metrics, profile_pairs, profile_partition, read_ground_truth,
    truth_partition, EvaluationReport, MetricFamily, Metrics, UnknownRefPolicy,
};
use erflow_core::{jsonl, CandidateGroup, ClusterPartition, ComparisonSpace, EntityProfile, GroundTruth, Result};

use crate::EvalMode;

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn run(
    predicted: &Path,
    truth_path: &Path,
    mode: EvalMode,
    references: Option<u64>,
    policy: UnknownRefPolicy,
) -> u8 {
    let truth = match open(truth_path).and_then(read_ground_truth) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("erflow: {}: {e}", truth_path.display());
            return 1;
        }
    };
    let report = match evaluate(predicted, &truth, mode, references, policy) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("erflow: {e}");
            return 1;
        }
    };
    match serde_json::to_string_pretty(&report) {
        Ok(text) => {
            println!("{text}");
            0
        }
        Err(e) => {
            eprintln!("erflow: {e}");
            2
        }
    }
}

fn read_profiles(path: &Path) -> std::result::Result<Vec<EntityProfile>, String> {
    open(path)
        .and_then(jsonl::read)
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn evaluate(
    predicted: &Path,
    truth: &GroundTruth,
    mode: EvalMode,
    references: Option<u64>,
    policy: UnknownRefPolicy,
) -> std::result::Result<EvaluationReport, String> {
    match mode {
        EvalMode::Pairwise => {
            let profiles = read_profiles(predicted)?;
            let m = pairwise_metrics(&profile_pairs(&profiles), truth, policy);
            Ok(EvaluationReport::new(MetricFamily::Pairwise, Metrics::Pairwise(m)))
        }
        EvalMode::Ari => {
            let profiles = read_profiles(predicted)?;
            let ours = profile_partition(&profiles).map_err(|e| e.to_string())?;
            let theirs = truth_as_partition(truth, &ours).map_err(|e| e.to_string())?;
            let ari = adjusted_rand_index(&ours, &theirs).map_err(|e| e.to_string())?;
            Ok(EvaluationReport::new(
                MetricFamily::Clustering,
                Metrics::Clustering {
                    ari,
                    references: ours.universe.len() as u64,
                },
            ))
        }
        EvalMode::Blocking => {
            let n = references.ok_or("blocking mode needs --references (total reference count)")?;
            let groups: Vec<CandidateGroup> = open(predicted)
                .and_then(jsonl::read)
                .map_err(|e| format!("{}: {e}", predicted.display()))?;
            let space = ComparisonSpace::from_groups(groups, n as usize);
            let m = blocking_metrics(&space, truth, n);
            Ok(EvaluationReport::new(MetricFamily::Blocking, Metrics::Blocking(m)))
        }
    }
}

/// Label-form truth is taken as is; pair-form truth is closed over the
/// predicted references plus any the truth names.
fn truth_as_partition(truth: &GroundTruth, predicted: &ClusterPartition) -> Result<ClusterPartition> {
    let mut universe: BTreeSet<String> = match truth {
        GroundTruth::Clusters(labels) => labels.keys().cloned().collect(),
        GroundTruth::Pairs(_) => predicted.universe.clone(),
    };
    if let GroundTruth::Pairs(pairs) = truth {
        for (a, b) in pairs {
            universe.insert(a.clone());
            universe.insert(b.clone());
        }
    }
    truth_partition(truth, &universe)
}
