#include "dcfg/ablation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dcfg/plot.hpp"
#include "dcfg/trainer.hpp"

namespace dcfg {

namespace {

struct VariantMeans {
    std::string variant;
    double x = 0.0;
    int runs = 0;
    double precision = 0.0;
    double success = 0.0;
    double norm_precision = 0.0;
    double clean = 0.0;
    double distractor = 0.0;
    double diversity = 0.0;
    double final_loss = 0.0;
};

std::vector<VariantMeans> variant_means(const std::vector<AblationRow>& rows) {
    std::vector<VariantMeans> out;
    for (const AblationRow& r : rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const VariantMeans& m) { return m.variant == r.variant; });
        if (it == out.end()) {
            out.push_back({r.variant, r.x});
            it = out.end() - 1;
        }
        it->runs += 1;
        it->precision += r.aggregate.precision;
        it->success += r.aggregate.success;
        it->norm_precision += r.aggregate.norm_precision;
        it->clean += r.clean.precision;
        it->distractor += r.distractor.precision;
        it->diversity += r.diversity;
        it->final_loss += r.final_loss;
    }
    for (VariantMeans& m : out) {
        for (double* v : {&m.precision, &m.success, &m.norm_precision, &m.clean, &m.distractor, &m.diversity,
                          &m.final_loss}) {
            *v /= m.runs;
        }
    }
    return out;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

std::vector<std::string> ablation_axes() { return {"components", "dcfg_loss", "groups", "cfgb_groups"}; }

std::vector<AblationVariant> ablation_variants(const RunConfig& base, const std::string& axis) {
    std::vector<AblationVariant> out;
    if (axis == "components") {
        RunConfig plain = base;
        plain.tracker.use_dccfg = false;
        plain.use_dcfg_loss = false;
        RunConfig blocks = base;
        blocks.tracker.use_dccfg = true;
        blocks.use_dcfg_loss = false;
        RunConfig full = base;
        full.tracker.use_dccfg = true;
        full.use_dcfg_loss = true;
        out = {{"baseline", 0, plain}, {"dccfg", 1, blocks}, {"dccfg_dcfg_loss", 2, full}};
    } else if (axis == "dcfg_loss") {
        RunConfig without = base;
        without.use_dcfg_loss = false;
        RunConfig with = base;
        with.use_dcfg_loss = true;
        out = {{"without_dcfg_loss", 0, without}, {"with_dcfg_loss", 1, with}};
    } else if (axis == "groups") {
        for (int n : {0, 1, 2, 4, 8, 16}) {
            RunConfig c = base;
            c.tracker.use_dccfg = true;
            c.tracker.dccfg.n_groups = n;
            out.push_back({"n" + std::to_string(n), static_cast<double>(n), c});
        }
    } else if (axis == "cfgb_groups") {
        for (int g : {1, 2, 4, 8}) {
            RunConfig c = base;
            c.tracker.dccfg.groups = g;
            out.push_back({"g" + std::to_string(g), static_cast<double>(g), c});
        }
    } else {
        throw ConfigError("unknown ablation axis '" + axis + "' (expected components, dcfg_loss, groups or cfgb_groups)");
    }
    for (AblationVariant& v : out) {
        v.config.validate();
    }
    return out;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::string& axis,
                                      const std::vector<SyntheticSequence>& suite, const AblationOptions& options) {
    if (options.seeds < 1) {
        throw ConfigError("ablation needs at least one seed");
    }
    const std::vector<AblationVariant> variants = ablation_variants(base, axis);
    std::vector<AblationRow> rows;
    for (int k = 0; k < options.seeds; ++k) {
        for (const AblationVariant& v : variants) {
            RunConfig cfg = v.config;
            cfg.seed = base.seed + static_cast<std::uint64_t>(k);
            if (options.log) {
                options.log("training " + v.label + " seed " + std::to_string(cfg.seed));
            }
            std::filesystem::path run_dir;
            if (!options.out_dir.empty()) {
                run_dir = options.out_dir / "runs" / v.label / ("seed_" + std::to_string(k));
                std::filesystem::create_directories(run_dir);
                std::ofstream(run_dir / "config.json") << to_json(cfg).dump(2) << '\n';
            }
            const auto started = std::chrono::steady_clock::now();
            RunConfig run_cfg = cfg;
            run_cfg.checkpoint_every = 0;
            TrackerModel model(cfg.tracker, cfg.seed);
            const std::vector<TrainLogRow> log = train(run_cfg, suite, model, run_dir);
            const EvalReport report = evaluate(model, suite, cfg.eval);
            if (!run_dir.empty()) {
                write_eval_report(report, run_dir);
            }

            AblationRow row;
            row.variant = v.label;
            row.x = v.x;
            row.seed_index = k;
            row.seed = cfg.seed;
            row.aggregate = report.aggregate;
            row.clean = report.clean;
            auto di = report.by_attribute.find("DI");
            if (di != report.by_attribute.end()) {
                row.distractor = di->second;
            }
            row.diversity = report.diversity;
            row.diversity_groups = report.diversity_groups;
            const std::size_t tail = std::max<std::size_t>(1, log.size() / 10);
            for (std::size_t i = log.size() - std::min(tail, log.size()); i < log.size(); ++i) {
                row.final_loss += log[i].parts.total / static_cast<double>(tail);
            }
            row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            rows.push_back(row);
            if (options.log) {
                char buf[200];
                std::snprintf(buf, sizeof buf, "  precision %.4f  DI %.4f  success %.4f  diversity %.4f",
                              row.aggregate.precision, row.distractor.precision, row.aggregate.success,
                              row.diversity);
                options.log(buf);
            }
        }
    }
    return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    char line[256];
    const char* header = "%-18s %5s %9s %9s %9s %9s %9s %9s %10s\n";
    const char* body = "%-18s %5s %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f %10.4f\n";
    std::snprintf(line, sizeof line, header, "variant", "seed", "prec", "norm_prec", "success", "clean_p", "DI_p",
                  "diversity", "final_loss");
    out << line;
    for (const AblationRow& r : rows) {
        std::snprintf(line, sizeof line, body, r.variant.c_str(), std::to_string(r.seed).c_str(),
                      r.aggregate.precision, r.aggregate.norm_precision, r.aggregate.success, r.clean.precision,
                      r.distractor.precision, r.diversity, r.final_loss);
        out << line;
    }
    out << "\nmeans over seeds\n";
    std::snprintf(line, sizeof line, header, "variant", "runs", "prec", "norm_prec", "success", "clean_p", "DI_p",
                  "diversity", "final_loss");
    out << line;
    for (const VariantMeans& m : variant_means(rows)) {
        std::snprintf(line, sizeof line, body, m.variant.c_str(), std::to_string(m.runs).c_str(), m.precision,
                      m.norm_precision, m.success, m.clean, m.distractor, m.diversity, m.final_loss);
        out << line;
    }
    return out.str();
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "variant,x,seed_index,seed,precision,norm_precision,success,clean_precision,di_precision,diversity,"
           "diversity_groups,final_loss\n";
    for (const AblationRow& r : rows) {
        out << r.variant << ',' << fmt(r.x) << ',' << r.seed_index << ',' << r.seed << ','
            << fmt(r.aggregate.precision) << ',' << fmt(r.aggregate.norm_precision) << ','
            << fmt(r.aggregate.success) << ',' << fmt(r.clean.precision) << ',' << fmt(r.distractor.precision)
            << ',' << fmt(r.diversity) << ',' << r.diversity_groups << ',' << fmt(r.final_loss) << '\n';
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

void write_ablation_plot(const std::vector<AblationRow>& rows, const std::string& axis,
                         const std::filesystem::path& path) {
    const std::vector<VariantMeans> means = variant_means(rows);
    PlotSeries prec{"precision", {}, {}};
    PlotSeries di{"DI precision", {}, {}};
    PlotSeries succ{"success", {}, {}};
    PlotSeries div{"mean |corr|", {}, {}};
    for (const VariantMeans& m : means) {
        // a log2 axis keeps N = 1..16 evenly spaced; N = 0 sits one step left
        const double x = axis == "groups" || axis == "cfgb_groups" ? (m.x > 0 ? std::log2(m.x) : -1.0) : m.x;
        for (PlotSeries* s : {&prec, &di, &succ, &div}) {
            s->x.push_back(x);
        }
        prec.y.push_back(m.precision);
        di.y.push_back(m.distractor);
        succ.y.push_back(m.success);
        div.y.push_back(m.diversity);
    }
    std::string x_label = "variant index";
    if (axis == "groups") {
        x_label = "log2 N (feature groups; -1 is N = 0)";
    } else if (axis == "cfgb_groups") {
        x_label = "log2 g (pointwise groups)";
    }
    PlotSpec spec{"Ablation: " + axis, x_label, "seed-averaged value", {prec, di, succ, div}, 0.0, 1.0, true};
    write_line_plot(spec, path);
}

}  // namespace dcfg
