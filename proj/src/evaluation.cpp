#include "dcfg/evaluation.hpp"

#include <cstdio>
#include <fstream>

#include "dcfg/image.hpp"
#include "dcfg/metrics.hpp"
#include "dcfg/plot.hpp"

namespace dcfg {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        out += (i ? std::string(1, sep) : std::string()) + parts[i];
    }
    return out;
}

nlohmann::json summary_json(const MetricSummary& m) {
    return {{"sequences", m.sequences},
            {"frames", m.frames},
            {"precision", m.precision},
            {"norm_precision", m.norm_precision},
            {"success", m.success}};
}

bool clean_tags(const std::vector<std::string>& attributes) {
    for (const std::string& a : attributes) {
        if (a == "DI" || a == "OCC") {
            return false;
        }
    }
    return true;
}

}  // namespace

bool is_clean(const SyntheticSequence& s) { return s.distractors.empty() && clean_tags(s.attributes); }
bool is_clean(const SequenceReport& s) { return clean_tags(s.attributes); }

int diversity_group_count(const TrackerConfig& tracker, const EvalConfig& config) {
    const int n = tracker.active_groups();
    return n >= 2 ? n : config.diversity_groups;
}

double template_diversity(TrackerModel& model, const Image& frame, const BBox& box, int n_groups) {
    NoGradGuard no_grad;
    const TrackerConfig& cfg = model.config();
    const Patch patch = crop_patch(frame, box.cx, box.cy, cfg.template_size);
    const auto maps = model.group_maps(patch.pixels, n_groups, cfg.inference_norm);
    double total = 0.0;
    for (const std::vector<Tensor>& branch : maps) {
        total += mean_abs_offdiag(branch);
    }
    return total / static_cast<double>(maps.size());
}

MetricSummary summarize(const std::vector<const SequenceReport*>& sequences) {
    MetricSummary m;
    for (const SequenceReport* s : sequences) {
        m.sequences += 1;
        m.frames += s->frames;
        m.precision += s->precision * s->frames;
        m.norm_precision += s->norm_precision * s->frames;
        m.success += s->success * s->frames;
    }
    if (m.frames > 0) {
        m.precision /= m.frames;
        m.norm_precision /= m.frames;
        m.success /= m.frames;
    }
    return m;
}

EvalReport evaluate(TrackerModel& model, const std::vector<SyntheticSequence>& suite, const EvalConfig& config,
                    const std::function<bool(const SyntheticSequence&)>& include) {
    EvalReport report;
    report.diversity_groups = diversity_group_count(model.config(), config);
    double diversity_sum = 0.0;
    int diversity_count = 0;
    for (const SyntheticSequence& seq : suite) {
        if (seq.train || (include && !include(seq))) {
            continue;
        }
        if (seq.frames.size() < 2) {
            throw ShapeError("evaluate: sequence '" + seq.name + "' needs at least 2 frames");
        }
        SequenceReport r;
        r.name = seq.name;
        r.attributes = seq.attributes;

        Tracker tracker(model);
        tracker.init(seq.frames[0], seq.gt[0]);
        r.predictions.push_back({seq.gt[0], 1.0});
        std::vector<BBox> pred;
        std::vector<BBox> truth(seq.gt.begin() + 1, seq.gt.end());
        for (std::size_t t = 1; t < seq.frames.size(); ++t) {
            const TrackResult step = tracker.step(seq.frames[t]);
            r.predictions.push_back(step);
            pred.push_back(step.box);
            r.center_errors.push_back(center_error(step.box, seq.gt[t]));
            r.overlaps.push_back(iou(step.box, seq.gt[t]));
        }
        r.frames = static_cast<int>(pred.size());
        r.precision = precision(pred, truth, config.center_threshold);
        r.norm_precision = norm_precision(pred, truth);
        r.success = success_auc(pred, truth);

        for (std::size_t t = 0; t < seq.frames.size(); t += static_cast<std::size_t>(config.diversity_every)) {
            r.diversity += template_diversity(model, seq.frames[t], seq.gt[t], report.diversity_groups);
            ++r.diversity_samples;
        }
        diversity_sum += r.diversity;
        diversity_count += r.diversity_samples;
        r.diversity /= r.diversity_samples;
        report.sequences.push_back(std::move(r));
    }
    if (report.sequences.empty()) {
        throw ShapeError("evaluate: no evaluation sequences selected");
    }

    std::vector<const SequenceReport*> all;
    std::vector<const SequenceReport*> clean;
    std::map<std::string, std::vector<const SequenceReport*>> tagged;
    for (const SequenceReport& r : report.sequences) {
        all.push_back(&r);
        if (is_clean(r)) {
            clean.push_back(&r);
        }
        for (const std::string& a : r.attributes) {
            tagged[a].push_back(&r);
        }
    }
    report.aggregate = summarize(all);
    report.clean = summarize(clean);
    for (const auto& [tag, members] : tagged) {
        report.by_attribute[tag] = summarize(members);
    }
    report.diversity = diversity_sum / diversity_count;
    return report;
}

void write_eval_report(const EvalReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    nlohmann::json sequences = nlohmann::json::array();
    for (const SequenceReport& s : report.sequences) {
        sequences.push_back({{"name", s.name},
                             {"attributes", s.attributes},
                             {"frames", s.frames},
                             {"precision", s.precision},
                             {"norm_precision", s.norm_precision},
                             {"success", s.success},
                             {"diversity", s.diversity},
                             {"diversity_samples", s.diversity_samples}});
    }
    nlohmann::json attributes = nlohmann::json::object();
    for (const auto& [tag, m] : report.by_attribute) {
        attributes[tag] = summary_json(m);
    }
    const nlohmann::json j = {{"aggregate", summary_json(report.aggregate)},
                              {"clean", summary_json(report.clean)},
                              {"by_attribute", attributes},
                              {"diversity", report.diversity},
                              {"diversity_groups", report.diversity_groups},
                              {"sequences", sequences}};
    {
        std::ofstream out(dir / "eval_report.json");
        out << j.dump(2) << '\n';
        if (!out) {
            throw IoError("failed writing " + (dir / "eval_report.json").string());
        }
    }
    std::ofstream csv(dir / "eval_report.csv");
    csv << "scope,name,attributes,sequences,frames,precision,norm_precision,success,diversity\n";
    for (const SequenceReport& s : report.sequences) {
        csv << "sequence," << s.name << ',' << join(s.attributes, ';') << ",1," << s.frames << ','
            << fmt(s.precision) << ',' << fmt(s.norm_precision) << ',' << fmt(s.success) << ',' << fmt(s.diversity)
            << '\n';
    }
    auto summary_row = [&](const std::string& scope, const std::string& name, const MetricSummary& m,
                           const std::string& diversity) {
        csv << scope << ',' << name << ",," << m.sequences << ',' << m.frames << ',' << fmt(m.precision) << ','
            << fmt(m.norm_precision) << ',' << fmt(m.success) << ',' << diversity << '\n';
    };
    for (const auto& [tag, m] : report.by_attribute) {
        summary_row("attribute", tag, m, "");
    }
    summary_row("split", "clean", report.clean, "");
    summary_row("aggregate", "all", report.aggregate, fmt(report.diversity));
    if (!csv) {
        throw IoError("failed writing " + (dir / "eval_report.csv").string());
    }
}

void write_predictions(const EvalReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    for (const SequenceReport& s : report.sequences) {
        std::ofstream out(dir / (s.name + ".csv"));
        out << "frame_index,cx,cy,w,h,score\n";
        char line[160];
        for (std::size_t t = 0; t < s.predictions.size(); ++t) {
            const TrackResult& p = s.predictions[t];
            std::snprintf(line, sizeof line, "%zu,%.4f,%.4f,%.4f,%.4f,%.6f\n", t, p.box.cx, p.box.cy, p.box.w,
                          p.box.h, p.score);
            out << line;
        }
        if (!out) {
            throw IoError("failed writing predictions for " + s.name);
        }
    }
}

void write_eval_plots(const EvalReport& report, const std::filesystem::path& dir) {
    std::map<std::string, std::vector<const SequenceReport*>> groups;
    for (const SequenceReport& s : report.sequences) {
        groups["all"].push_back(&s);
        for (const std::string& a : s.attributes) {
            groups[a].push_back(&s);
        }
    }
    PlotSpec prec{"Precision plot", "centre error threshold (px)", "precision", {}, 0.0, 1.0, false};
    PlotSpec succ{"Success plot", "overlap threshold", "success rate", {}, 0.0, 1.0, false};
    for (const auto& [name, members] : groups) {
        PlotSeries p{name, {}, {}};
        PlotSeries o{name, {}, {}};
        std::size_t n = 0;
        for (const SequenceReport* s : members) {
            n += s->center_errors.size();
        }
        for (int t = 0; t <= 50; ++t) {
            std::size_t hits = 0;
            for (const SequenceReport* s : members) {
                for (double e : s->center_errors) {
                    hits += e <= t;
                }
            }
            p.x.push_back(t);
            p.y.push_back(static_cast<double>(hits) / n);
        }
        for (int k = 0; k <= 20; ++k) {
            const double t = k / 20.0;
            std::size_t hits = 0;
            for (const SequenceReport* s : members) {
                for (double v : s->overlaps) {
                    hits += k < 20 && v >= t;
                }
            }
            o.x.push_back(t);
            o.y.push_back(static_cast<double>(hits) / n);
        }
        prec.series.push_back(std::move(p));
        succ.series.push_back(std::move(o));
    }
    write_line_plot(prec, dir / "precision_plot.svg");
    write_line_plot(succ, dir / "success_plot.svg");
}

}  // namespace dcfg
