#include "dcfg/state.hpp"

#include <bit>
#include <fstream>
#include <iterator>

namespace dcfg {

namespace {

void put_le64(std::vector<unsigned char>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
        out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xFFu));
    }
}

double get_le64(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    }
    return std::bit_cast<double>(bits);
}

nlohmann::json read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / kManifestName;
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open checkpoint manifest " + path.string());
    }
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("corrupt checkpoint manifest " + path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "dcfg-checkpoint" || manifest.value("dtype", "") != "float64" ||
        manifest.value("byte_order", "") != "little") {
        throw IoError("unsupported checkpoint manifest " + path.string());
    }
    return manifest;
}

}  // namespace

std::span<const double> StateEntry::values() const {
    if (param.defined()) {
        return param.data();
    }
    return {buffer->data(), buffer->size()};
}

std::span<double> StateEntry::mutable_values() {
    if (param.defined()) {
        return param.mutable_data();
    }
    return {buffer->data(), buffer->size()};
}

void StateDict::add_param(const std::string& name, const Tensor& param) {
    if (!param.defined()) {
        throw ShapeError("state entry '" + name + "' is undefined");
    }
    entries_.push_back({name, param.shape(), param, nullptr});
}

void StateDict::add_buffer(const std::string& name, std::vector<double>& values) {
    entries_.push_back({name, {static_cast<int>(values.size())}, Tensor(), &values});
}

void StateDict::add_batch_norm(const std::string& prefix, BatchNorm& bn) {
    add_param(prefix + ".gamma", bn.gamma);
    add_param(prefix + ".beta", bn.beta);
    add_buffer(prefix + ".running_mean", bn.running_mean);
    add_buffer(prefix + ".running_var", bn.running_var);
}

std::vector<Tensor> StateDict::parameters() const {
    std::vector<Tensor> out;
    for (const auto& e : entries_) {
        if (e.trainable()) {
            out.push_back(e.param);
        }
    }
    return out;
}

std::size_t StateDict::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        if (e.trainable()) {
            n += e.param.numel();
        }
    }
    return n;
}

const StateEntry& StateDict::find(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) {
            return e;
        }
    }
    throw ShapeError("no state entry named '" + name + "'");
}

void save_checkpoint(const StateDict& state, const std::filesystem::path& dir, const nlohmann::json& meta) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
    }
    nlohmann::json entries = nlohmann::json::array();
    std::vector<unsigned char> blob;
    std::size_t offset = 0;
    for (const auto& e : state.entries()) {
        auto v = e.values();
        entries.push_back({{"name", e.name},
                           {"shape", e.shape},
                           {"offset", offset},
                           {"count", v.size()},
                           {"trainable", e.trainable()}});
        for (double x : v) {
            put_le64(blob, x);
        }
        offset += v.size();
    }
    nlohmann::json manifest = {{"format", "dcfg-checkpoint"},
                               {"version", 1},
                               {"dtype", "float64"},
                               {"byte_order", "little"},
                               {"blob", kBlobName},
                               {"total_values", offset},
                               {"entries", entries},
                               {"meta", meta}};
    {
        std::ofstream out(dir / kBlobName, std::ios::binary);
        out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
        if (!out) {
            throw IoError("failed writing " + (dir / kBlobName).string());
        }
    }
    std::ofstream out(dir / kManifestName);
    out << manifest.dump(2) << '\n';
    if (!out) {
        throw IoError("failed writing " + (dir / kManifestName).string());
    }
}

nlohmann::json load_checkpoint(StateDict& state, const std::filesystem::path& dir) {
    const nlohmann::json manifest = read_manifest(dir);
    const auto blob_path = dir / manifest.value("blob", std::string(kBlobName));
    std::ifstream in(blob_path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint blob " + blob_path.string());
    }
    std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t total = manifest.value("total_values", std::size_t{0});
    if (blob.size() != total * 8) {
        throw IoError("checkpoint blob " + blob_path.string() + " has " + std::to_string(blob.size()) +
                      " bytes, manifest expects " + std::to_string(total * 8));
    }

    for (const auto& stored : manifest.at("entries")) {
        const std::string name = stored.at("name");
        const auto offset = stored.at("offset").get<std::size_t>();
        const auto count = stored.at("count").get<std::size_t>();
        if (offset + count > total) {
            throw IoError("checkpoint entry '" + name + "' runs past the blob");
        }
    }
    for (auto& e : state.entries()) {
        const nlohmann::json* match = nullptr;
        for (const auto& stored : manifest.at("entries")) {
            if (stored.at("name") == e.name) {
                match = &stored;
                break;
            }
        }
        if (match == nullptr) {
            throw IoError("checkpoint is missing entry '" + e.name + "'");
        }
        if (match->at("shape").get<Shape>() != e.shape) {
            throw IoError("checkpoint entry '" + e.name + "' has shape " +
                          shape_str(match->at("shape").get<Shape>()) + ", model expects " + shape_str(e.shape));
        }
        const auto offset = match->at("offset").get<std::size_t>();
        auto dst = e.mutable_values();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] = get_le64(blob.data() + 8 * (offset + i));
        }
    }
    return manifest.value("meta", nlohmann::json::object());
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& dir) {
    return read_manifest(dir).value("meta", nlohmann::json::object());
}

}  // namespace dcfg
