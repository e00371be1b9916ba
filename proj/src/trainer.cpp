#include "dcfg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace dcfg {

namespace {

constexpr std::uint64_t kSamplingStream = 7;
// Loss values beyond this are treated as divergence even when finite.
constexpr double kDivergedLoss = 1e6;

std::string checkpoint_name(int step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step_%06d", step);
    return buf;
}

void write_divergence_report(const std::filesystem::path& run_dir, const RunConfig& config, int step,
                             const TrainingPair& pair, const std::string& what) {
    if (run_dir.empty()) {
        return;
    }
    const nlohmann::json report = {{"step", step},
                                   {"error", what},
                                   {"seed", config.seed},
                                   {"sampling_stream", kSamplingStream},
                                   {"draws_before_step", step},
                                   {"sequence", pair.sequence},
                                   {"template_frame", pair.template_frame},
                                   {"search_frame", pair.search_frame},
                                   {"config", to_json(config)}};
    std::ofstream out(run_dir / "divergence.json");
    out << report.dump(2) << '\n';
}

}  // namespace

TrainingPair make_pair(const SyntheticSequence& seq, int template_frame, int search_frame,
                       const TrackerConfig& tracker, double shift_x, double shift_y) {
    const int n = static_cast<int>(seq.frames.size());
    if (template_frame < 0 || template_frame >= n || search_frame < 0 || search_frame >= n) {
        throw ShapeError("make_pair: frame index outside the sequence");
    }
    const BBox& t = seq.gt[static_cast<std::size_t>(template_frame)];
    const BBox& s = seq.gt[static_cast<std::size_t>(search_frame)];
    TrainingPair pair;
    pair.template_frame = template_frame;
    pair.search_frame = search_frame;
    pair.template_patch = crop_patch(seq.frames[static_cast<std::size_t>(template_frame)], t.cx, t.cy,
                                     tracker.template_size).pixels;
    const Patch search = crop_patch(seq.frames[static_cast<std::size_t>(search_frame)], s.cx + shift_x,
                                    s.cy + shift_y, tracker.search_size);
    pair.search_patch = search.pixels;
    pair.target = BBox{s.cx - search.origin_x, s.cy - search.origin_y, s.w, s.h};
    return pair;
}

TrainingPair sample_pair(const std::vector<const SyntheticSequence*>& pool, const TrackerConfig& tracker,
                         const SamplingConfig& sampling, CounterRng& rng) {
    if (pool.empty()) {
        throw ShapeError("sample_pair: no training sequences");
    }
    const int index = static_cast<int>(rng.below(pool.size()));
    const SyntheticSequence& seq = *pool[static_cast<std::size_t>(index)];
    const int n = static_cast<int>(seq.frames.size());
    if (n < 2) {
        throw ShapeError("sample_pair: training sequence '" + seq.name + "' has fewer than 2 frames");
    }
    const int gap = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(sampling.max_frame_gap, n - 1))));
    const int first = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - gap)));
    const double dx = rng.uniform(-sampling.max_shift, sampling.max_shift);
    const double dy = rng.uniform(-sampling.max_shift, sampling.max_shift);
    TrainingPair pair = make_pair(seq, first, first + gap, tracker, dx, dy);
    pair.sequence = index;
    return pair;
}

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, const OptimizerConfig& config)
    : params_(std::move(params)), config_(config) {
    for (const Tensor& p : params_) {
        velocity_.emplace_back(p.numel(), 0.0);
    }
}

void SgdOptimizer::zero_grad() {
    for (Tensor& p : params_) {
        p.zero_grad();
    }
}

double SgdOptimizer::step() {
    double sq = 0.0;
    for (const Tensor& p : params_) {
        if (p.has_grad()) {
            for (double g : p.grad()) {
                sq += g * g;
            }
        }
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
        throw NumericError("optimizer: non-finite gradient norm");
    }
    const double scale = config_.grad_clip > 0.0 && norm > config_.grad_clip ? config_.grad_clip / norm : 1.0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        std::span<double> w = params_[i].mutable_data();
        std::vector<double>& v = velocity_[i];
        const bool has = params_[i].has_grad();
        std::span<const double> g = has ? params_[i].grad() : std::span<const double>();
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double grad = (has ? scale * g[k] : 0.0) + config_.weight_decay * w[k];
            v[k] = config_.momentum * v[k] + grad;
            w[k] -= config_.lr * v[k];
        }
    }
    return norm;
}

Trainer::Trainer(const RunConfig& config, TrackerModel& model)
    : config_(config), model_(model), optimizer_(model.state().parameters(), config.optimizer) {}

LossBreakdown Trainer::step(const TrainingPair& pair) {
    const int n = model_.config().active_groups();
    const int mask_group = n > 0 ? steps_ % n : -1;
    optimizer_.zero_grad();
    const PairForward forward = model_.forward_pair(pair.template_patch, pair.search_patch, mask_group,
                                                    NormMode::train);
    const TotalLoss loss = total_loss(forward, pair.target, model_.grid(), config_.loss,
                                      model_.config().search_size, config_.use_dcfg_loss);
    const double value = loss.total.item();
    if (!std::isfinite(value) || value > kDivergedLoss) {
        throw NumericError("training diverged: total loss " + std::to_string(value));
    }
    loss.total.backward();
    optimizer_.step();
    ++steps_;
    return loss.parts;
}

std::string format_train_log_row(const TrainLogRow& row) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g", row.step, row.parts.total, row.parts.l_cfgb,
                  row.parts.l_norm, row.parts.l_dcfg);
    return buf;
}

void write_train_log(const std::vector<TrainLogRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << kTrainLogHeader << '\n';
    for (const TrainLogRow& r : rows) {
        out << format_train_log_row(r) << '\n';
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

void save_model(const TrackerModel& model, const RunConfig& config, int step, const std::filesystem::path& dir) {
    save_checkpoint(model.state(), dir, nlohmann::json{{"config", to_json(config)}, {"step", step}});
}

LoadedModel load_model(const std::filesystem::path& dir) {
    const nlohmann::json meta = read_checkpoint_meta(dir);
    if (!meta.contains("config")) {
        throw IoError("checkpoint " + dir.string() + " carries no run config");
    }
    LoadedModel out;
    out.config = run_config_from_json(meta.at("config"));
    out.step = meta.value("step", 0);
    out.model = std::make_unique<TrackerModel>(out.config.tracker, out.config.seed);
    load_checkpoint(out.model->state(), dir);
    return out;
}

std::vector<SyntheticSequence> load_suite(const RunConfig& config) {
    return config.data_dir.empty() ? make_suite(config.suite_seed) : import_suite(config.data_dir);
}

std::vector<TrainLogRow> train(const RunConfig& config, const std::vector<SyntheticSequence>& suite,
                               TrackerModel& model, const std::filesystem::path& run_dir,
                               const std::function<void(const TrainLogRow&)>& progress) {
    config.validate();
    std::vector<const SyntheticSequence*> pool;
    for (const SyntheticSequence& s : suite) {
        if (s.train) {
            pool.push_back(&s);
        }
    }
    if (pool.empty()) {
        throw ShapeError("train: the suite has no training sequences");
    }

    std::ofstream log;
    if (!run_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(run_dir / "checkpoints", ec);
        if (ec) {
            throw IoError("cannot create " + (run_dir / "checkpoints").string() + ": " + ec.message());
        }
        log.open(run_dir / "train_log.csv");
        if (!log) {
            throw IoError("cannot write " + (run_dir / "train_log.csv").string());
        }
        log << kTrainLogHeader << '\n';
    }

    CounterRng rng = CounterRng(config.seed).split(kSamplingStream);
    Trainer trainer(config, model);
    std::vector<TrainLogRow> rows;
    rows.reserve(static_cast<std::size_t>(config.steps));
    for (int step = 1; step <= config.steps; ++step) {
        const TrainingPair pair = sample_pair(pool, config.tracker, config.sampling, rng);
        TrainLogRow row;
        row.step = step;
        try {
            row.parts = trainer.step(pair);
        } catch (const NumericError& e) {
            write_divergence_report(run_dir, config, step, pair, e.what());
            throw NumericError("step " + std::to_string(step) + ": " + e.what());
        }
        rows.push_back(row);
        if (log.is_open()) {
            log << format_train_log_row(row) << '\n';
        }
        if (progress) {
            progress(row);
        }
        if (!run_dir.empty() && config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
            log.flush();
            save_model(model, config, step, run_dir / "checkpoints" / checkpoint_name(step));
        }
    }
    if (!run_dir.empty()) {
        save_model(model, config, config.steps, run_dir / "checkpoints" / "final");
        if (!log) {
            throw IoError("failed writing " + (run_dir / "train_log.csv").string());
        }
    }
    return rows;
}

}  // namespace dcfg
