#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dcfg/ablation.hpp"
#include "dcfg/plot.hpp"
#include "dcfg/trainer.hpp"
#include "test_util.hpp"

using namespace dcfg;

namespace {

// Two training and two evaluation sequences of 64 x 64 pixels.
std::vector<SyntheticSequence> small_suite(int frames = 24) {
    std::vector<SyntheticSequence> suite;
    for (int i = 0; i < 4; ++i) {
        SceneConfig s;
        s.frames = frames;
        s.start_cx = 24 + 4 * i;
        s.start_cy = 30;
        s.vx = 0.4;
        s.vy = 0.2 * (i % 2 ? 1 : -1);
        s.seed = 100 + static_cast<std::uint64_t>(i);
        if (i == 3) {
            s.distractors = 1;
            s.attributes = {"DI"};
        }
        SyntheticSequence seq = generate(s);
        seq.name = "seq_" + std::to_string(i);
        seq.train = i < 2;
        suite.push_back(std::move(seq));
    }
    return suite;
}

RunConfig small_run(int steps) {
    RunConfig c;
    c.tracker = test::toy_tracker_config();
    c.sampling.max_shift = 6;
    c.steps = steps;
    c.checkpoint_every = 0;
    c.eval.diversity_every = 8;
    return c;
}

std::vector<std::vector<double>> snapshot(const TrackerModel& model) {
    std::vector<std::vector<double>> out;
    for (const StateEntry& e : model.state().entries()) {
        out.emplace_back(e.values().begin(), e.values().end());
    }
    return out;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("dcfg_test_trainer_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("optimizer update rule") {
    Tensor p = Tensor::from({2}, {1.0, -2.0}, true);
    OptimizerConfig cfg;
    cfg.lr = 0.1;
    cfg.momentum = 0.5;
    cfg.weight_decay = 0.01;
    SgdOptimizer opt({p}, cfg);
    for (int step = 0; step < 2; ++step) {
        opt.zero_grad();
        sum(mul(p, 3.0)).backward();
        opt.step();
    }
    // v1 = 3 + 0.01 p0, p1 = p0 - 0.1 v1; v2 = 0.5 v1 + 3 + 0.01 p1, p2 = p1 - 0.1 v2
    for (int i = 0; i < 2; ++i) {
        const double p0 = i == 0 ? 1.0 : -2.0;
        const double v1 = 3 + 0.01 * p0;
        const double p1 = p0 - 0.1 * v1;
        const double v2 = 0.5 * v1 + 3 + 0.01 * p1;
        CHECK(p.data()[i] == doctest::Approx(p1 - 0.1 * v2).epsilon(1e-14));
    }

    Tensor q = Tensor::from({2}, {3.0, 4.0}, true);
    cfg = OptimizerConfig{};
    cfg.lr = 1.0;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.grad_clip = 1.0;
    SgdOptimizer clipped({q}, cfg);
    clipped.zero_grad();
    sum(mul(q, q)).backward();  // gradient (6, 8), norm 10
    CHECK(clipped.step() == doctest::Approx(10.0));
    CHECK(q.data()[0] == doctest::Approx(3.0 - 0.6));
    CHECK(q.data()[1] == doctest::Approx(4.0 - 0.8));
}

TEST_CASE("sampled pairs stay inside the sequences and the response reach") {
    const auto suite = small_suite();
    std::vector<const SyntheticSequence*> pool = {&suite[0], &suite[1]};
    const RunConfig cfg = small_run(1);
    CounterRng rng(5);
    for (int i = 0; i < 100; ++i) {
        const TrainingPair p = sample_pair(pool, cfg.tracker, cfg.sampling, rng);
        CHECK(p.search_frame > p.template_frame);
        CHECK(p.search_frame - p.template_frame <= cfg.sampling.max_frame_gap);
        CHECK(p.template_patch.dim(1) == cfg.tracker.template_size);
        CHECK(p.search_patch.dim(1) == cfg.tracker.search_size);
        const double centre = cfg.tracker.search_size / 2.0;
        CHECK(std::abs(p.target.cx - centre) <= cfg.sampling.max_shift + 1.0);
        CHECK(std::abs(p.target.cy - centre) <= cfg.sampling.max_shift + 1.0);
    }
}

TEST_CASE("50 steps on one fixed pair cut the loss by at least 30%") {
    const auto suite = small_suite(30);
    RunConfig cfg;
    const TrainingPair pair = make_pair(suite[0], 4, 9, cfg.tracker, 5.0, -3.0);
    TrackerModel model(cfg.tracker, cfg.seed);
    Trainer trainer(cfg, model);
    const double first = trainer.step(pair).total;
    double last = first;
    for (int i = 1; i < 50; ++i) {
        last = trainer.step(pair).total;
    }
    MESSAGE("loss " << first << " -> " << last);
    CHECK(last <= 0.7 * first);
}

TEST_CASE("lr = 0 leaves every parameter bit-identical") {
    const auto suite = small_suite();
    RunConfig cfg = small_run(6);
    cfg.optimizer.lr = 0.0;
    TrackerModel model(cfg.tracker, cfg.seed);
    std::vector<std::vector<double>> before;
    for (const Tensor& p : model.state().parameters()) {
        before.emplace_back(p.data().begin(), p.data().end());
    }
    train(cfg, suite, model, {});
    const auto params = model.state().parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(std::vector<double>(params[i].data().begin(), params[i].data().end()) == before[i]);
    }
}

TEST_CASE("training is deterministic and writes its artifacts") {
    const auto suite = small_suite();
    RunConfig cfg = small_run(8);
    cfg.checkpoint_every = 4;
    const auto a = scratch("a"), b = scratch("b");
    TrackerModel ma(cfg.tracker, cfg.seed), mb(cfg.tracker, cfg.seed);
    const auto log_a = train(cfg, suite, ma, a);
    const auto log_b = train(cfg, suite, mb, b);
    REQUIRE(log_a.size() == 8);
    for (std::size_t i = 0; i < log_a.size(); ++i) {
        CHECK(format_train_log_row(log_a[i]) == format_train_log_row(log_b[i]));
    }
    CHECK(slurp(a / "train_log.csv") == slurp(b / "train_log.csv"));
    CHECK(slurp(a / "train_log.csv").rfind(std::string(kTrainLogHeader) + "\n1,", 0) == 0);
    for (const char* c : {"step_000004", "step_000008", "final"}) {
        CHECK(std::filesystem::exists(a / "checkpoints" / c / kManifestName));
        CHECK(slurp(a / "checkpoints" / c / kBlobName) == slurp(b / "checkpoints" / c / kBlobName));
    }

    const LoadedModel loaded = load_model(a / "checkpoints" / "final");
    CHECK(loaded.step == 8);
    CHECK(to_json(loaded.config) == to_json(cfg));
    CHECK(snapshot(*loaded.model) == snapshot(ma));

    RunConfig other = cfg;
    other.seed = 2;
    TrackerModel mc(other.tracker, other.seed);
    const auto log_c = train(other, suite, mc, {});
    CHECK(format_train_log_row(log_c.back()) != format_train_log_row(log_a.back()));
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}

TEST_CASE("divergence aborts with a numeric error and a dump") {
    const auto suite = small_suite();
    RunConfig cfg = small_run(40);
    cfg.optimizer.lr = 1e4;
    const auto dir = scratch("diverge");
    TrackerModel model(cfg.tracker, cfg.seed);
    CHECK_THROWS_AS(train(cfg, suite, model, dir), NumericError);
    REQUIRE(std::filesystem::exists(dir / "divergence.json"));
    const auto dump = nlohmann::json::parse(slurp(dir / "divergence.json"));
    CHECK(dump.at("seed") == 1);
    CHECK(dump.contains("config"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("evaluation aggregates are frame-weighted and evaluation is read-only") {
    const auto suite = small_suite(30);
    RunConfig cfg = small_run(10);
    const auto dir = scratch("eval");
    TrackerModel model(cfg.tracker, cfg.seed);
    train(cfg, suite, model, dir);
    const std::string blob = slurp(dir / "checkpoints" / "final" / kBlobName);
    const std::string manifest = slurp(dir / "checkpoints" / "final" / kManifestName);

    LoadedModel loaded = load_model(dir / "checkpoints" / "final");
    const auto before = snapshot(*loaded.model);
    const EvalReport report = evaluate(*loaded.model, suite, cfg.eval);
    CHECK(snapshot(*loaded.model) == before);
    CHECK(slurp(dir / "checkpoints" / "final" / kBlobName) == blob);
    CHECK(slurp(dir / "checkpoints" / "final" / kManifestName) == manifest);

    REQUIRE(report.sequences.size() == 2);
    double prec = 0, np = 0, succ = 0, frames = 0;
    for (std::size_t i = 0; i < report.sequences.size(); ++i) {
        const SequenceReport& s = report.sequences[i];
        CHECK(s.frames == 29);
        CHECK(s.predictions.size() == 30);
        CHECK(s.predictions[0].box == suite[2 + i].gt[0]);
        prec += s.precision * s.frames;
        np += s.norm_precision * s.frames;
        succ += s.success * s.frames;
        frames += s.frames;
    }
    CHECK(std::abs(report.aggregate.precision - prec / frames) <= 1e-9);
    CHECK(std::abs(report.aggregate.norm_precision - np / frames) <= 1e-9);
    CHECK(std::abs(report.aggregate.success - succ / frames) <= 1e-9);
    CHECK(report.clean.sequences == 1);
    CHECK(report.by_attribute.at("DI").sequences == 1);
    CHECK(report.diversity_groups == 2);
    for (double v : {report.aggregate.precision, report.aggregate.norm_precision, report.aggregate.success,
                     report.diversity}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    const EvalReport again = evaluate(*loaded.model, suite, cfg.eval);
    write_eval_report(report, dir / "r1");
    write_eval_report(again, dir / "r2");
    write_predictions(report, dir / "r1" / "predictions");
    CHECK(slurp(dir / "r1" / "eval_report.json") == slurp(dir / "r2" / "eval_report.json"));
    CHECK(slurp(dir / "r1" / "eval_report.csv") == slurp(dir / "r2" / "eval_report.csv"));
    const std::string pred = slurp(dir / "r1" / "predictions" / "seq_2.csv");
    CHECK(pred.rfind("frame_index,cx,cy,w,h,score\n0,", 0) == 0);
    CHECK(std::count(pred.begin(), pred.end(), '\n') == 31);

    CHECK_THROWS_AS(evaluate(*loaded.model, suite, cfg.eval, [](const SyntheticSequence&) { return false; }),
                    ShapeError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("ablation variants") {
    const RunConfig base;
    const auto groups = ablation_variants(base, "groups");
    REQUIRE(groups.size() == 6);
    CHECK(groups[4].label == "n8");
    CHECK(groups[4].config.tracker.dccfg.n_groups == 8);
    CHECK(groups[0].config.tracker.active_groups() == 0);
    const auto loss = ablation_variants(base, "dcfg_loss");
    CHECK_FALSE(loss[0].config.use_dcfg_loss);
    CHECK(loss[1].config.use_dcfg_loss);
    CHECK(to_json(loss[1].config) == to_json(base));
    CHECK(ablation_variants(base, "cfgb_groups").back().config.tracker.dccfg.groups == 8);
    CHECK_THROWS_AS(ablation_variants(base, "colour"), ConfigError);
}

TEST_CASE("the off/off ablation row is the plain baseline tracker") {
    const auto suite = small_suite();
    RunConfig base = small_run(5);
    const auto variants = ablation_variants(base, "components");
    const RunConfig& off = variants[0].config;
    CHECK_FALSE(off.tracker.use_dccfg);
    CHECK_FALSE(off.use_dcfg_loss);

    RunConfig plain = base;
    plain.tracker.use_dccfg = false;
    plain.use_dcfg_loss = false;
    TrackerModel ma(off.tracker, off.seed), mb(plain.tracker, plain.seed);
    const auto la = train(off, suite, ma, {});
    const auto lb = train(plain, suite, mb, {});
    for (std::size_t i = 0; i < la.size(); ++i) {
        CHECK(format_train_log_row(la[i]) == format_train_log_row(lb[i]));
        CHECK(la[i].parts.l_dcfg == 0.0);
    }

    AblationOptions options;
    options.seeds = 2;
    const auto rows = run_ablation(base, "dcfg_loss", suite, options);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].seed == rows[1].seed);
    CHECK(rows[2].seed == rows[0].seed + 1);
    const std::string table = format_ablation_table(rows);
    CHECK(table.find("with_dcfg_loss") != std::string::npos);
    CHECK(table.find("means over seeds") != std::string::npos);
}

TEST_CASE("line plots are deterministic SVG") {
    PlotSpec spec{"t <&>", "x", "y", {{"a", {0, 1, 2}, {0.1, 0.5, 0.2}}, {"b", {0, 2}, {1, 0}}}, 0.0, 1.0, true};
    const std::string svg = render_line_plot(spec);
    CHECK(svg == render_line_plot(spec));
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("&lt;&amp;&gt;") != std::string::npos);
    CHECK(svg.find("<&>") == std::string::npos);
    CHECK(std::count(svg.begin(), svg.end(), '\n') > 5);
}
