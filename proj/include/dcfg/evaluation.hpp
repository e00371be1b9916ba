#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dcfg/run_config.hpp"
#include "dcfg/synthgen.hpp"

namespace dcfg {

struct MetricSummary {
    int sequences = 0;
    int frames = 0;
    double precision = 0.0;
    double norm_precision = 0.0;
    double success = 0.0;
};

struct SequenceReport {
    std::string name;
    std::vector<std::string> attributes;
    /// Tracked frames, i.e. every frame after the initial one.
    int frames = 0;
    double precision = 0.0;
    double norm_precision = 0.0;
    double success = 0.0;
    /// Mean off-diagonal |Pearson correlation| between compressed group maps.
    double diversity = 0.0;
    int diversity_samples = 0;
    /// Frame 0 holds the initial box with score 1.
    std::vector<TrackResult> predictions;
    std::vector<double> center_errors;
    std::vector<double> overlaps;
};

struct EvalReport {
    std::vector<SequenceReport> sequences;
    /// Frame-weighted means of the per-sequence metrics.
    MetricSummary aggregate;
    std::map<std::string, MetricSummary> by_attribute;
    /// Sequences with neither distractors nor occlusion.
    MetricSummary clean;
    double diversity = 0.0;
    int diversity_groups = 0;
};

/// Tracks every evaluation sequence from its frame-0 ground truth and scores
/// frames 1..T-1. The model is only read. `include` narrows the sequences.
EvalReport evaluate(TrackerModel& model, const std::vector<SyntheticSequence>& suite, const EvalConfig& config,
                    const std::function<bool(const SyntheticSequence&)>& include = {});

/// Group count the diversity measurement uses for this model.
int diversity_group_count(const TrackerConfig& tracker, const EvalConfig& config);

/// Mean off-diagonal |correlation| of the model's group maps of one template
/// crop, averaged over branches.
double template_diversity(TrackerModel& model, const Image& frame, const BBox& box, int n_groups);

/// Mean of per-sequence values weighted by tracked frames.
MetricSummary summarize(const std::vector<const SequenceReport*>& sequences);

bool is_clean(const SyntheticSequence& sequence);
bool is_clean(const SequenceReport& sequence);

/// eval_report.json and eval_report.csv in `dir`.
void write_eval_report(const EvalReport& report, const std::filesystem::path& dir);
/// One CSV per sequence: frame_index,cx,cy,w,h,score.
void write_predictions(const EvalReport& report, const std::filesystem::path& dir);
/// Precision-vs-threshold and success-vs-overlap curves over all tracked frames.
void write_eval_plots(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace dcfg
