#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "dcfg/image.hpp"
#include "dcfg/run_config.hpp"
#include "dcfg/synthgen.hpp"

namespace dcfg {

/// One training example: standardised crops and the target box in search
/// patch coordinates.
struct TrainingPair {
    Tensor template_patch;
    Tensor search_patch;
    BBox target;
    int sequence = 0;
    int template_frame = 0;
    int search_frame = 0;
};

/// Draws a sequence, a template frame and a later search frame, and shifts
/// the search window off the target by up to `max_shift` pixels per axis.
TrainingPair sample_pair(const std::vector<const SyntheticSequence*>& pool, const TrackerConfig& tracker,
                         const SamplingConfig& sampling, CounterRng& rng);

/// Pair cut from explicit frames without shift, for fixed-sample runs.
TrainingPair make_pair(const SyntheticSequence& sequence, int template_frame, int search_frame,
                       const TrackerConfig& tracker, double shift_x = 0.0, double shift_y = 0.0);

/// SGD with momentum and L2 weight decay:
///   v <- momentum * v + (grad + weight_decay * p),  p <- p - lr * v.
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Tensor> params, const OptimizerConfig& config);
    void zero_grad();
    /// Applies one update from the accumulated gradients; returns the global
    /// gradient norm before clipping.
    double step();

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    OptimizerConfig config_;
};

struct TrainLogRow {
    int step = 0;
    LossBreakdown parts;
};

class Trainer {
public:
    Trainer(const RunConfig& config, TrackerModel& model);
    /// Forward, loss, backward and update on one pair. The mask group cycles
    /// through the feature groups step by step.
    LossBreakdown step(const TrainingPair& pair);
    int steps_done() const { return steps_; }

private:
    RunConfig config_;
    TrackerModel& model_;
    SgdOptimizer optimizer_;
    int steps_ = 0;
};

/// Runs config.steps steps on the training sequences of `suite`. With a
/// non-empty `run_dir`, streams run_dir/train_log.csv and writes
/// run_dir/checkpoints/step_NNNNNN every checkpoint_every steps plus
/// run_dir/checkpoints/final. A non-finite loss aborts with NumericError
/// after writing run_dir/divergence.json.
std::vector<TrainLogRow> train(const RunConfig& config, const std::vector<SyntheticSequence>& suite,
                               TrackerModel& model, const std::filesystem::path& run_dir,
                               const std::function<void(const TrainLogRow&)>& progress = {});

inline constexpr const char* kTrainLogHeader = "step,total,l_cfgb,l_norm,l_dcfg";
std::string format_train_log_row(const TrainLogRow& row);
void write_train_log(const std::vector<TrainLogRow>& rows, const std::filesystem::path& path);

/// Checkpoint of `model` whose meta carries the resolved config and step.
void save_model(const TrackerModel& model, const RunConfig& config, int step, const std::filesystem::path& dir);

struct LoadedModel {
    RunConfig config;
    std::unique_ptr<TrackerModel> model;
    int step = 0;
};
LoadedModel load_model(const std::filesystem::path& checkpoint_dir);

/// Imports config.data_dir when set, otherwise generates the suite.
std::vector<SyntheticSequence> load_suite(const RunConfig& config);

}  // namespace dcfg
