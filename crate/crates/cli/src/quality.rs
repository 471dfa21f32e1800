use std::collections::BTreeMap;

use anyhow::{bail, Context};
use capfuse_core::corpus::SimilarityScore;
use capfuse_core::jsonl;
use capfuse_core::quality::{
    calibrate as sweep, clip_hallucination_scores, paired_labels, CalibrationSample, HumanAnnotation, LabelRecord,
    ThresholdGrid, F1_05,
};

use crate::CalibrateArgs;

pub fn calibrate(args: CalibrateArgs) -> anyhow::Result<()> {
    let scores: Vec<SimilarityScore> = jsonl::read(&args.scores)?;
    let mut cosines = BTreeMap::new();
    for s in scores {
        if cosines.insert(s.clip_id.clone(), s.cosine).is_some() {
            bail!("{}: duplicate clip_id `{}`", args.scores.display(), s.clip_id);
        }
    }
    let labels: Vec<(usize, LabelRecord)> = jsonl::read_numbered(&args.labels)?;
    let annotations = labels
        .iter()
        .map(|(line, l)| l.to_annotation().with_context(|| format!("{}:{line}", args.labels.display())))
        .collect::<anyhow::Result<Vec<HumanAnnotation>>>()?;

    let mut samples = Vec::new();
    let mut unscored = 0;
    for (clip, score) in clip_hallucination_scores(&annotations) {
        match cosines.get(&clip) {
            Some(&c) => samples.push(CalibrationSample::new(c, score)),
            None => unscored += 1,
        }
    }
    if unscored > 0 {
        tracing::warn!(unscored, "labelled clips without a similarity score were left out");
    }
    if let Some(a) = paired_labels(&annotations) {
        tracing::info!(pairs = a.pairs, detailness = a.detailness, hallucination = a.hallucination, "rater agreement");
    }
    let report = sweep(&samples, &ThresholdGrid::stepped(args.lo, args.hi, args.step), F1_05)?;
    crate::emit_json(&report, Some(&args.out))?;
    print!("{}", report.to_table());
    Ok(())
}
