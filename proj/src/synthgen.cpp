#include "dcfg/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "dcfg/rng.hpp"

namespace dcfg {

namespace {

constexpr double kEdgeMargin = 4.0;
constexpr int kDistractorRetries = 100;
constexpr double kMaxDistractorIou = 0.3;
constexpr double kIntensityPeriod = 60.0;

double round2(double x) { return std::round(x * 100.0) / 100.0; }

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

// Folds x into [lo, hi] as if bouncing between the walls.
double reflect(double x, double lo, double hi) {
    const double span = hi - lo;
    if (span <= 0.0) {
        return lo;
    }
    double m = std::fmod(x - lo, 2.0 * span);
    if (m < 0.0) {
        m += 2.0 * span;
    }
    return lo + (m <= span ? m : 2.0 * span - m);
}

double scale_at(const SceneConfig& c, int t) {
    const double frac = c.frames > 1 ? static_cast<double>(t) / (c.frames - 1) : 0.0;
    return 1.0 + (c.scale_end - 1.0) * frac;
}

// Smooth static background: a 5x5 grid of offsets, bilinearly interpolated.
std::vector<double> background_field(const SceneConfig& c, CounterRng& rng) {
    constexpr int kGrid = 5;
    double grid[kGrid][kGrid];
    for (auto& row : grid) {
        for (double& v : row) {
            v = rng.uniform(-1.0, 1.0) * c.background_variation;
        }
    }
    std::vector<double> field(static_cast<std::size_t>(c.width) * c.height);
    for (int y = 0; y < c.height; ++y) {
        const double gy = (y + 0.5) / c.height * (kGrid - 1);
        const int y0 = std::min(static_cast<int>(gy), kGrid - 2);
        const double fy = gy - y0;
        for (int x = 0; x < c.width; ++x) {
            const double gx = (x + 0.5) / c.width * (kGrid - 1);
            const int x0 = std::min(static_cast<int>(gx), kGrid - 2);
            const double fx = gx - x0;
            field[static_cast<std::size_t>(y) * c.width + x] =
                (1 - fy) * ((1 - fx) * grid[y0][x0] + fx * grid[y0][x0 + 1]) +
                fy * ((1 - fx) * grid[y0 + 1][x0] + fx * grid[y0 + 1][x0 + 1]);
        }
    }
    return field;
}

void add_blob(Image& img, double cx, double cy, double sx, double sy, double peak) {
    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - 4 * sx)));
    const int x_hi = std::min(img.width - 1, static_cast<int>(std::ceil(cx + 4 * sx)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - 4 * sy)));
    const int y_hi = std::min(img.height - 1, static_cast<int>(std::ceil(cy + 4 * sy)));
    for (int y = y_lo; y <= y_hi; ++y) {
        const double dy = (y + 0.5 - cy) / sy;
        for (int x = x_lo; x <= x_hi; ++x) {
            const double dx = (x + 0.5 - cx) / sx;
            img.at(x, y) += peak * std::exp(-0.5 * (dx * dx + dy * dy));
        }
    }
}

std::string format_box(const BBox& b) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.2f,%.2f,%.2f,%.2f", b.cx, b.cy, b.w, b.h);
    return buf;
}

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("corrupt JSON in " + path.string() + ": " + e.what());
    }
}

}  // namespace

void SceneConfig::validate() const {
    if (width < 16 || height < 16 || frames < 1) {
        throw ShapeError("scene: frames must be at least 16x16 and the sequence non-empty");
    }
    if (!(target_w > 0.0) || !(target_h > 0.0) || !(peak > 0.0) || !(scale_end > 0.0)) {
        throw ShapeError("scene: target size, peak and scale must be positive");
    }
    if (!(jitter >= 0.0) || !(noise >= 0.0) || !(background_variation >= 0.0)) {
        throw ShapeError("scene: jitter and noise levels must be non-negative");
    }
    if (!(similarity >= 0.0 && similarity <= 1.0)) {
        throw ShapeError("scene: similarity must lie in [0,1]");
    }
    if (!(intensity_drift >= 0.0 && intensity_drift < 1.0)) {
        throw ShapeError("scene: intensity drift must lie in [0,1)");
    }
    if (distractors < 0) {
        throw ShapeError("scene: negative distractor count");
    }
    for (const Occlusion& o : occlusions) {
        if (o.begin < 0 || o.end <= o.begin || !o.box.valid()) {
            throw ShapeError("scene: malformed occlusion window");
        }
    }
    // position and size are linear in time, so the endpoints bound the path
    for (int t : {0, frames - 1}) {
        const double s = scale_at(*this, t);
        const double cx = start_cx + vx * t;
        const double cy = start_cy + vy * t;
        const double hx = target_w * s / 2 + 3 * jitter;
        const double hy = target_h * s / 2 + 3 * jitter;
        if (cx - hx < kEdgeMargin || cx + hx > width - kEdgeMargin || cy - hy < kEdgeMargin ||
            cy + hy > height - kEdgeMargin) {
            throw ShapeError("scene: target motion leaves the frame interior at frame " + std::to_string(t));
        }
    }
}

bool SyntheticSequence::has(const std::string& attribute) const {
    return std::find(attributes.begin(), attributes.end(), attribute) != attributes.end();
}

SyntheticSequence generate(const SceneConfig& c) {
    c.validate();
    CounterRng root(c.seed);
    CounterRng bg_rng = root.split(1);
    CounterRng jitter_rng = root.split(2);
    CounterRng distractor_rng = root.split(3);
    CounterRng noise_rng = root.split(4);

    SyntheticSequence seq;
    seq.attributes = c.attributes;
    seq.seed = c.seed;

    const std::vector<double> field = background_field(c, bg_rng);
    const double sx0 = c.target_w / 4.0;
    const double sy0 = c.target_h / 4.0;
    const BBox first{c.start_cx, c.start_cy, c.target_w, c.target_h};

    const double dissimilarity = 1.0 - c.similarity;
    for (int d = 0; d < c.distractors; ++d) {
        BlobParams b;
        b.sigma_x = sx0 * (1.0 + dissimilarity * distractor_rng.uniform(-0.5, 0.5));
        b.sigma_y = sy0 * (1.0 + dissimilarity * distractor_rng.uniform(-0.5, 0.5));
        b.peak = c.peak * (1.0 + dissimilarity * distractor_rng.uniform(-0.5, 0.5));
        const double speed = distractor_rng.uniform(0.2, 0.6);
        const double angle = distractor_rng.uniform(0.0, 2.0 * std::numbers::pi);
        b.vx = speed * std::cos(angle);
        b.vy = speed * std::sin(angle);
        bool placed = false;
        for (int attempt = 0; attempt < kDistractorRetries && !placed; ++attempt) {
            b.cx = distractor_rng.uniform(kEdgeMargin + 2 * b.sigma_x, c.width - kEdgeMargin - 2 * b.sigma_x);
            b.cy = distractor_rng.uniform(kEdgeMargin + 2 * b.sigma_y, c.height - kEdgeMargin - 2 * b.sigma_y);
            placed = iou(BBox{b.cx, b.cy, 4 * b.sigma_x, 4 * b.sigma_y}, first) <= kMaxDistractorIou;
        }
        if (!placed) {
            throw ShapeError("scene: no distractor placement with IoU <= 0.3 after 100 attempts");
        }
        seq.distractors.push_back(b);
    }

    for (int t = 0; t < c.frames; ++t) {
        const double s = scale_at(c, t);
        double jx = 0.0, jy = 0.0;
        if (c.jitter > 0.0) {
            jx = std::clamp(jitter_rng.normal(0.0, c.jitter), -3 * c.jitter, 3 * c.jitter);
            jy = std::clamp(jitter_rng.normal(0.0, c.jitter), -3 * c.jitter, 3 * c.jitter);
        }
        const BBox box{round2(c.start_cx + c.vx * t + jx), round2(c.start_cy + c.vy * t + jy),
                       round2(c.target_w * s), round2(c.target_h * s)};
        seq.gt.push_back(box);

        const double wave = std::sin(2.0 * std::numbers::pi * t / kIntensityPeriod);
        const double target_gain = 1.0 + c.intensity_drift * wave;
        const double background_gain = 1.0 - 0.5 * c.intensity_drift * wave;

        Image img(c.width, c.height);
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
            img.pixels[i] = (c.background + field[i]) * background_gain;
        }
        for (const BlobParams& d : seq.distractors) {
            const double dcx = reflect(d.cx + d.vx * t, kEdgeMargin + 2 * d.sigma_x,
                                       c.width - kEdgeMargin - 2 * d.sigma_x);
            const double dcy = reflect(d.cy + d.vy * t, kEdgeMargin + 2 * d.sigma_y,
                                       c.height - kEdgeMargin - 2 * d.sigma_y);
            add_blob(img, dcx, dcy, d.sigma_x, d.sigma_y, d.peak);
        }
        add_blob(img, box.cx, box.cy, box.w / 4.0, box.h / 4.0, c.peak * target_gain);
        for (const Occlusion& o : c.occlusions) {
            if (t < o.begin || t >= o.end) {
                continue;
            }
            for (int y = 0; y < c.height; ++y) {
                for (int x = 0; x < c.width; ++x) {
                    if (x + 0.5 >= o.box.x1() && x + 0.5 < o.box.x2() && y + 0.5 >= o.box.y1() &&
                        y + 0.5 < o.box.y2()) {
                        img.at(x, y) = o.level;
                    }
                }
            }
        }
        for (double& v : img.pixels) {
            v = quantize(v + (c.noise > 0.0 ? noise_rng.normal(0.0, c.noise) : 0.0));
        }
        seq.frames.push_back(std::move(img));
    }
    return seq;
}

std::string suite_name(int index) {
    static const char* kPrefix[] = {"di", "occ", "iv", "sv"};
    char buf[32];
    if (index < 4 * kSuiteEvalPerAttribute) {
        std::snprintf(buf, sizeof buf, "%s_%02d", kPrefix[index / kSuiteEvalPerAttribute],
                      index % kSuiteEvalPerAttribute);
    } else {
        std::snprintf(buf, sizeof buf, "train_%02d", index - 4 * kSuiteEvalPerAttribute);
    }
    return buf;
}

SceneConfig suite_scene(std::uint64_t seed, int index) {
    if (index < 0 || index >= kSuiteSize) {
        throw ShapeError("suite index out of range");
    }
    static const char* kTags[] = {"DI", "OCC", "IV", "SV"};
    CounterRng rng = CounterRng(seed).split(static_cast<std::uint64_t>(index) + 1);
    const bool train = index >= 4 * kSuiteEvalPerAttribute;
    const int kind = train ? -1 : index / kSuiteEvalPerAttribute;

    SceneConfig c;
    c.width = kSuiteFrameSize;
    c.height = kSuiteFrameSize;
    c.target_w = round2(rng.uniform(8.0, 14.0));
    c.target_h = round2(rng.uniform(8.0, 14.0));
    c.peak = rng.uniform(0.45, 0.7);
    c.background = rng.uniform(0.12, 0.3);
    c.jitter = 0.3;
    if (kind == 3) {
        c.scale_end = rng.uniform() < 0.5 ? rng.uniform(0.6, 0.8) : rng.uniform(1.3, 1.6);
    } else if (train) {
        c.scale_end = rng.uniform(0.85, 1.2);
    }
    if (kind == 2) {
        c.intensity_drift = rng.uniform(0.3, 0.5);
    } else if (train) {
        c.intensity_drift = rng.uniform(0.0, 0.2);
    }

    // pick a velocity, then a start point that keeps the whole path inside
    double speed = rng.uniform(0.25, 0.55);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const int last = c.frames - 1;
    for (;;) {
        c.vx = speed * std::cos(angle);
        c.vy = speed * std::sin(angle);
        double lo_x = -1e9, hi_x = 1e9, lo_y = -1e9, hi_y = 1e9;
        for (int t : {0, last}) {
            const double s = scale_at(c, t);
            const double hx = c.target_w * s / 2 + 3 * c.jitter + 0.01;
            const double hy = c.target_h * s / 2 + 3 * c.jitter + 0.01;
            lo_x = std::max(lo_x, kEdgeMargin + hx - c.vx * t);
            hi_x = std::min(hi_x, c.width - kEdgeMargin - hx - c.vx * t);
            lo_y = std::max(lo_y, kEdgeMargin + hy - c.vy * t);
            hi_y = std::min(hi_y, c.height - kEdgeMargin - hy - c.vy * t);
        }
        if (lo_x <= hi_x && lo_y <= hi_y) {
            c.start_cx = rng.uniform(lo_x, hi_x);
            c.start_cy = rng.uniform(lo_y, hi_y);
            break;
        }
        speed *= 0.9;
    }

    if (kind == 0) {
        c.distractors = 3 + static_cast<int>(rng.below(2));
        c.similarity = rng.uniform(0.85, 1.0);
    }
    if (kind == 1) {
        Occlusion o;
        o.begin = rng.uniform_int(40, 70);
        o.end = o.begin + rng.uniform_int(10, 20);
        const int mid = (o.begin + o.end) / 2;
        const double s = scale_at(c, mid);
        o.box = BBox{c.start_cx + c.vx * mid, c.start_cy + c.vy * mid, c.target_w * s + 6, c.target_h * s + 6};
        o.level = c.background;
        c.occlusions.push_back(o);
    }
    if (!train) {
        c.attributes = {kTags[kind]};
    }
    c.seed = rng.next_u64();
    return c;
}

std::vector<SyntheticSequence> make_suite(std::uint64_t seed) {
    std::vector<SyntheticSequence> suite;
    for (int i = 0; i < kSuiteSize; ++i) {
        SyntheticSequence s = generate(suite_scene(seed, i));
        s.name = suite_name(i);
        s.train = i >= 4 * kSuiteEvalPerAttribute;
        suite.push_back(std::move(s));
    }
    return suite;
}

void write_pgm(const Image& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<unsigned char> bytes(image.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

Image read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    auto next_token = [&]() {
        std::string tok;
        char ch;
        while (in.get(ch)) {
            if (ch == '#') {
                std::string skip;
                std::getline(in, skip);
            } else if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!tok.empty()) {
                    break;
                }
            } else {
                tok.push_back(ch);
            }
        }
        return tok;
    };
    if (next_token() != "P5") {
        throw IoError(path.string() + " is not a binary PGM (P5)");
    }
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(next_token());
        h = std::stoi(next_token());
        maxval = std::stoi(next_token());
    } catch (const std::exception&) {
        throw IoError("malformed PGM header in " + path.string());
    }
    if (w < 1 || h < 1 || maxval != 255) {
        throw IoError("unsupported PGM geometry or depth in " + path.string());
    }
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw IoError("truncated PGM data in " + path.string());
    }
    Image img(w, h);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        img.pixels[i] = bytes[i] / 255.0;
    }
    return img;
}

void export_sequence(const SyntheticSequence& seq, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.pgm", t);
        write_pgm(seq.frames[t], dir / name);
    }
    {
        std::ofstream gt(dir / "groundtruth.txt");
        for (const BBox& b : seq.gt) {
            gt << format_box(b) << '\n';
        }
        if (!gt) {
            throw IoError("failed writing " + (dir / "groundtruth.txt").string());
        }
    }
    nlohmann::json distractors = nlohmann::json::array();
    for (const BlobParams& d : seq.distractors) {
        distractors.push_back({{"peak", d.peak},
                               {"sigma_x", d.sigma_x},
                               {"sigma_y", d.sigma_y},
                               {"cx", d.cx},
                               {"cy", d.cy},
                               {"vx", d.vx},
                               {"vy", d.vy}});
    }
    const Image& f0 = seq.frames.front();
    nlohmann::json meta = {{"name", seq.name},
                           {"attributes", seq.attributes},
                           {"seed", seq.seed},
                           {"split", seq.train ? "train" : "eval"},
                           {"width", f0.width},
                           {"height", f0.height},
                           {"frames", seq.frames.size()},
                           {"distractors", distractors}};
    std::ofstream out(dir / "meta.json");
    out << meta.dump(2) << '\n';
    if (!out) {
        throw IoError("failed writing " + (dir / "meta.json").string());
    }
}

SyntheticSequence import_sequence(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("sequence directory " + dir.string() + " does not exist");
    }
    if (!std::filesystem::exists(dir / "meta.json")) {
        throw IoError("no meta.json in " + dir.string());
    }
    const nlohmann::json meta = read_json(dir / "meta.json");
    SyntheticSequence seq;
    std::size_t n = 0;
    try {
        seq.name = meta.at("name").get<std::string>();
        seq.attributes = meta.at("attributes").get<std::vector<std::string>>();
        seq.seed = meta.at("seed").get<std::uint64_t>();
        seq.train = meta.at("split").get<std::string>() == "train";
        n = meta.at("frames").get<std::size_t>();
        for (const auto& d : meta.value("distractors", nlohmann::json::array())) {
            seq.distractors.push_back({d.at("peak"), d.at("sigma_x"), d.at("sigma_y"), d.at("cx"), d.at("cy"),
                                       d.at("vx"), d.at("vy")});
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("incomplete meta.json in " + dir.string() + ": " + e.what());
    }
    if (n == 0) {
        throw IoError("sequence " + dir.string() + " declares no frames");
    }
    for (std::size_t t = 0; t < n; ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.pgm", t);
        seq.frames.push_back(read_pgm(dir / name));
    }

    std::ifstream gt(dir / "groundtruth.txt");
    if (!gt) {
        throw IoError("no groundtruth.txt in " + dir.string());
    }
    std::string line;
    while (std::getline(gt, line)) {
        if (line.empty()) {
            continue;
        }
        BBox b;
        char c1, c2, c3;
        std::istringstream ls(line);
        if (!(ls >> b.cx >> c1 >> b.cy >> c2 >> b.w >> c3 >> b.h) || c1 != ',' || c2 != ',' || c3 != ',') {
            throw IoError("malformed ground-truth line '" + line + "' in " + dir.string());
        }
        seq.gt.push_back(b);
    }
    if (seq.gt.size() != seq.frames.size()) {
        throw IoError("ground truth of " + dir.string() + " has " + std::to_string(seq.gt.size()) +
                      " boxes for " + std::to_string(seq.frames.size()) + " frames");
    }
    return seq;
}

void export_suite(const std::vector<SyntheticSequence>& suite, const std::filesystem::path& dir) {
    nlohmann::json index = nlohmann::json::array();
    for (const SyntheticSequence& s : suite) {
        export_sequence(s, dir / s.name);
        index.push_back({{"name", s.name}, {"split", s.train ? "train" : "eval"}, {"attributes", s.attributes}});
    }
    std::ofstream out(dir / "suite.json");
    out << nlohmann::json{{"sequences", index}}.dump(2) << '\n';
    if (!out) {
        throw IoError("failed writing " + (dir / "suite.json").string());
    }
}

std::vector<SyntheticSequence> import_suite(const std::filesystem::path& dir) {
    const nlohmann::json index = read_json(dir / "suite.json");
    std::vector<SyntheticSequence> suite;
    try {
        for (const auto& entry : index.at("sequences")) {
            suite.push_back(import_sequence(dir / entry.at("name").get<std::string>()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed suite.json in " + dir.string() + ": " + e.what());
    }
    if (suite.empty()) {
        throw IoError("suite " + dir.string() + " lists no sequences");
    }
    return suite;
}

}  // namespace dcfg
