// Command-line front end: data generation, training, evaluation, ablations,
// the convolution cost model and the finite-difference gradient suite.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "dcfg/ablation.hpp"
#include "dcfg/costmodel.hpp"
#include "dcfg/evaluation.hpp"
#include "dcfg/gradsuite.hpp"
#include "dcfg/plot.hpp"
#include "dcfg/trainer.hpp"

namespace fs = std::filesystem;
using namespace dcfg;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kNumeric = 2, kIo = 3 };

struct ConfigArgs {
    std::string config_file;
    std::vector<std::string> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "JSON run config")->check(CLI::ExistingFile);
        cmd->add_option("--set", overrides, "override a config field, e.g. --set tracker.dccfg.n_groups=4")
            ->take_all()
            ->allow_extra_args(false);
    }
    RunConfig resolve() const { return resolve_run_config(config_file, overrides); }
};

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
}

void write_json(const nlohmann::json& j, const fs::path& path) {
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void print_summary(const EvalReport& r) {
    std::printf("%-10s %5s %7s %10s %10s %10s\n", "split", "seqs", "frames", "precision", "norm_prec", "success");
    auto line = [](const std::string& name, const MetricSummary& m) {
        std::printf("%-10s %5d %7d %10.4f %10.4f %10.4f\n", name.c_str(), m.sequences, m.frames, m.precision,
                    m.norm_precision, m.success);
    };
    for (const auto& [tag, m] : r.by_attribute) {
        line(tag, m);
    }
    line("clean", r.clean);
    line("all", r.aggregate);
    std::printf("mean off-diagonal |corr| over %d groups: %.4f\n", r.diversity_groups, r.diversity);
}

void write_train_plot(const std::vector<TrainLogRow>& log, const fs::path& path) {
    constexpr std::size_t kWindow = 50;
    PlotSeries total{"total", {}, {}};
    PlotSeries cfgb{"l_cfgb", {}, {}};
    PlotSeries norm{"l_norm", {}, {}};
    PlotSeries dcfg{"l_dcfg", {}, {}};
    const std::size_t every = std::max<std::size_t>(1, log.size() / 200);
    for (std::size_t i = 0; i < log.size(); i += every) {
        const std::size_t lo = i + 1 >= kWindow ? i + 1 - kWindow : 0;
        double t = 0, c = 0, n = 0, d = 0;
        for (std::size_t k = lo; k <= i; ++k) {
            t += log[k].parts.total;
            c += log[k].parts.l_cfgb;
            n += log[k].parts.l_norm;
            d += log[k].parts.l_dcfg;
        }
        const double m = static_cast<double>(i + 1 - lo);
        for (PlotSeries* s : {&total, &cfgb, &norm, &dcfg}) {
            s->x.push_back(log[i].step);
        }
        total.y.push_back(t / m);
        cfgb.y.push_back(c / m);
        norm.y.push_back(n / m);
        dcfg.y.push_back(d / m);
    }
    write_line_plot({"Training loss (50-step moving average)", "step", "loss", {total, cfgb, norm, dcfg}, 0.0, 0.0,
                     false},
                    path);
}

void evaluate_into(TrackerModel& model, const std::vector<SyntheticSequence>& suite, const RunConfig& cfg,
                   const fs::path& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const EvalReport report = evaluate(model, suite, cfg.eval);
    write_eval_report(report, out);
    write_predictions(report, out / "predictions");
    write_eval_plots(report, out / "plots");
    print_summary(report);
    std::printf("evaluation took %.1f s\n", seconds_since(t0));
}

int cmd_gen_data(const ConfigArgs& args, const std::string& out, const std::optional<std::uint64_t>& seed) {
    RunConfig cfg = args.resolve();
    if (seed) {
        cfg.suite_seed = *seed;
    }
    const auto suite = make_suite(cfg.suite_seed);
    export_suite(suite, out);
    std::printf("wrote %zu sequences (suite seed %llu) to %s\n", suite.size(),
                static_cast<unsigned long long>(cfg.suite_seed), out.c_str());
    return kOk;
}

int cmd_train(const ConfigArgs& args, const std::string& out, bool run_eval, bool quiet) {
    const RunConfig cfg = args.resolve();
    const fs::path run_dir(out);
    make_dir(run_dir / "plots");
    write_json(to_json(cfg), run_dir / "config.json");
    const auto suite = load_suite(cfg);
    TrackerModel model(cfg.tracker, cfg.seed);
    std::printf("model: %zu learnable values, %d feature groups\n", model.state().parameter_count(),
                cfg.tracker.active_groups());

    const auto t0 = std::chrono::steady_clock::now();
    const int report_every = std::max(1, cfg.steps / 20);
    const auto log = train(cfg, suite, model, run_dir, [&](const TrainLogRow& r) {
        if (!quiet && (r.step % report_every == 0 || r.step == cfg.steps)) {
            std::printf("step %5d  total %.4f  l_cfgb %.4f  l_norm %.4f  l_dcfg %.4f  (%.0f s)\n", r.step,
                        r.parts.total, r.parts.l_cfgb, r.parts.l_norm, r.parts.l_dcfg, seconds_since(t0));
            std::fflush(stdout);
        }
    });
    std::printf("trained %d steps in %.1f s\n", cfg.steps, seconds_since(t0));
    if (!log.empty()) {
        write_train_plot(log, run_dir / "plots" / "train_loss.svg");
    }
    if (run_eval) {
        evaluate_into(model, suite, cfg, run_dir);
    }
    return kOk;
}

int cmd_eval(const ConfigArgs& args, const std::string& checkpoint, const std::string& out,
             const std::string& data) {
    LoadedModel loaded = load_model(checkpoint);
    // overrides apply on top of the stored config; architecture changes fail to load
    nlohmann::json j = to_json(loaded.config);
    for (const std::string& o : args.overrides) {
        apply_override(j, o);
    }
    RunConfig cfg = run_config_from_json(j);
    if (!data.empty()) {
        cfg.data_dir = data;
    }
    if (cfg.tracker.widths != loaded.config.tracker.widths ||
        cfg.tracker.active_groups() != loaded.config.tracker.active_groups()) {
        throw ConfigError("eval: overrides may not change the model architecture");
    }
    auto model = std::make_unique<TrackerModel>(cfg.tracker, cfg.seed);
    load_checkpoint(model->state(), checkpoint);
    make_dir(out);
    write_json(to_json(cfg), fs::path(out) / "config.json");
    const auto suite = load_suite(cfg);
    evaluate_into(*model, suite, cfg, out);
    return kOk;
}

int cmd_ablate(const ConfigArgs& args, const std::string& axis, int seeds, const std::string& out) {
    const RunConfig base = args.resolve();
    const fs::path dir(out);
    make_dir(dir / "plots");
    write_json(to_json(base), dir / "config.json");
    const auto suite = load_suite(base);
    AblationOptions options;
    options.seeds = seeds;
    options.out_dir = dir;
    const auto t0 = std::chrono::steady_clock::now();
    options.log = [&](const std::string& msg) {
        std::printf("[%6.0f s] %s\n", seconds_since(t0), msg.c_str());
        std::fflush(stdout);
    };
    const auto rows = run_ablation(base, axis, suite, options);
    const std::string table = format_ablation_table(rows);
    std::ofstream(dir / ("ablation_" + axis + ".txt")) << table;
    write_ablation_csv(rows, dir / ("ablation_" + axis + ".csv"));
    write_ablation_plot(rows, axis, dir / "plots" / ("ablation_" + axis + ".svg"));
    std::printf("\n%s", table.c_str());
    return kOk;
}

std::vector<std::int64_t> parse_groups(const std::string& text) {
    std::vector<std::int64_t> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(item, &used);
            if (used != item.size() || v < 1) {
                throw std::invalid_argument(item);
            }
            out.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("--groups expects a comma-separated list of positive integers, got '" + text + "'");
        }
    }
    return out;
}

int cmd_costmodel(std::int64_t h, std::int64_t w, std::int64_t cin, std::int64_t cout, std::int64_t g, bool sweep_mode,
                  std::int64_t budget, const std::string& groups, const std::string& csv) {
    std::vector<SweepRow> rows;
    if (sweep_mode) {
        if (budget < 1) {
            throw ConfigError("--sweep needs --flops-budget");
        }
        rows = sweep(h, w, budget, parse_groups(groups));
    } else {
        SweepRow row;
        row.spec = LayerCostSpec{h, w, cin, cout, g};
        try {
            row.report = cost_report(row.spec);
        } catch (const ShapeError& e) {
            throw ConfigError(e.what());
        }
        row.default_groups = g == kDefaultGroups;
        rows.push_back(row);
    }
    std::printf("%s", format_cost_table(rows).c_str());
    if (!csv.empty()) {
        write_cost_csv(rows, csv);
    }
    return kOk;
}

int cmd_gradcheck(int probes, std::uint64_t seed, const std::string& csv_path) {
    if (probes < 1) {
        throw ConfigError("--probes must be positive");
    }
    const std::vector<GradSuiteEntry> entries = run_gradient_suite(probes, seed);
    if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        csv << "check,probes,max_rel_error,pass\n";
        char line[200];
        for (const GradSuiteEntry& e : entries) {
            std::snprintf(line, sizeof line, "%s,%d,%.6e,%d\n", e.name.c_str(), e.result.probes,
                          e.result.max_rel_error, e.result.max_rel_error < kGradTolerance ? 1 : 0);
            csv << line;
        }
        if (!csv) {
            throw IoError("cannot write " + csv_path);
        }
    }
    bool ok = true;
    for (const GradSuiteEntry& e : entries) {
        const bool pass = e.result.max_rel_error < kGradTolerance;
        ok = ok && pass;
        std::printf("%-4s %-32s probes %4d  max rel err %.3e\n", pass ? "ok" : "FAIL", e.name.c_str(),
                    e.result.probes, e.result.max_rel_error);
        if (!pass) {
            std::printf("     worst: %s\n", e.result.worst.c_str());
        }
    }
    std::printf("%s\n", ok ? "all gradients match" : "gradient mismatch");
    return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Diverse fine-grained feature tracker: synthetic data, training, evaluation and analysis"};
    app.require_subcommand(1);

    ConfigArgs gen_args, train_args, eval_args, ablate_args;

    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "write the synthetic sequence suite as PGM frames");
    gen_args.attach(gen);
    gen->add_option("--out", gen_out, "output directory")->required();
    std::optional<std::uint64_t> gen_seed;
    gen->add_option("--seed", gen_seed, "suite seed (same as --set suite_seed=S)");

    std::string train_out;
    bool no_eval = false;
    bool quiet = false;
    auto* tr = app.add_subcommand("train", "train a tracker, then evaluate it");
    train_args.attach(tr);
    tr->add_option("--out", train_out, "run directory")->required();
    tr->add_flag("--no-eval", no_eval, "skip the evaluation after training");
    tr->add_flag("--quiet", quiet, "no per-step progress");

    std::string eval_ckpt, eval_out, eval_data;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the evaluation sequences");
    eval_args.attach(ev);
    ev->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
    ev->add_option("--out", eval_out, "report directory")->required();
    ev->add_option("--data", eval_data, "exported suite to evaluate on");

    std::string axis = "dcfg_loss";
    int seeds = 3;
    std::string ablate_out;
    auto* ab = app.add_subcommand("ablate", "train and evaluate the variants of one ablation axis");
    ablate_args.attach(ab);
    ab->add_option("--axis", axis, "components, dcfg_loss, groups or cfgb_groups")
        ->check(CLI::IsMember(ablation_axes()));
    ab->add_option("--seeds", seeds, "paired seeds per variant")->check(CLI::PositiveNumber);
    ab->add_option("--out", ablate_out, "output directory")->required();

    std::int64_t h = 16, w = 16, cin = 64, cout = 64, g = 1, budget = 0;
    bool sweep_mode = false;
    std::string groups = "1,2,4,8";
    std::string csv;
    auto* cm = app.add_subcommand("costmodel", "FLOPs and memory access cost of a pointwise convolution");
    cm->set_help_flag("--help", "print this help message and exit");
    cm->add_option("--h", h, "map height")->check(CLI::PositiveNumber);
    cm->add_option("--w", w, "map width")->check(CLI::PositiveNumber);
    cm->add_option("--cin", cin, "input channels")->check(CLI::PositiveNumber);
    cm->add_option("--cout", cout, "output channels")->check(CLI::PositiveNumber);
    cm->add_option("--g", g, "groups")->check(CLI::PositiveNumber);
    cm->add_flag("--sweep", sweep_mode, "enumerate channel splits and group counts at a fixed FLOPs budget");
    cm->add_option("--flops-budget", budget, "FLOPs budget for --sweep");
    cm->add_option("--groups", groups, "group counts for --sweep");
    cm->add_option("--csv", csv, "also write the table as CSV");

    int probes = 50;
    std::uint64_t grad_seed = 1;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable operation");
    gc->add_option("--probes", probes, "coordinates probed per check");
    gc->add_option("--seed", grad_seed, "probe seed");
    std::string grad_csv;
    gc->add_option("--csv", grad_csv, "also write the results as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) {
            return cmd_gen_data(gen_args, gen_out, gen_seed);
        }
        if (*tr) {
            return cmd_train(train_args, train_out, !no_eval, quiet);
        }
        if (*ev) {
            return cmd_eval(eval_args, eval_ckpt, eval_out, eval_data);
        }
        if (*ab) {
            return cmd_ablate(ablate_args, axis, seeds, ablate_out);
        }
        if (*cm) {
            return cmd_costmodel(h, w, cin, cout, g, sweep_mode, budget, groups, csv);
        }
        if (*gc) {
            return cmd_gradcheck(probes, grad_seed, grad_csv);
        }
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const ShapeError& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumeric;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    }
    return kUsage;
}
