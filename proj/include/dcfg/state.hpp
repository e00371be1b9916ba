#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dcfg/ops.hpp"
#include "dcfg/tensor.hpp"

namespace dcfg {

/// One named array of model state. Learnable entries hold the parameter
/// tensor; buffers (BN running statistics) point at plain storage.
struct StateEntry {
    std::string name;
    Shape shape;
    Tensor param;
    std::vector<double>* buffer = nullptr;

    bool trainable() const { return param.defined(); }
    std::span<const double> values() const;
    std::span<double> mutable_values();
};

/// Flat, ordered view of a model's state. Entries alias the model's own
/// storage, so the model must outlive the dict and must not be moved.
class StateDict {
public:
    void add_param(const std::string& name, const Tensor& param);
    void add_buffer(const std::string& name, std::vector<double>& values);
    /// gamma, beta, running_mean, running_var under `prefix`.
    void add_batch_norm(const std::string& prefix, BatchNorm& bn);

    const std::vector<StateEntry>& entries() const { return entries_; }
    std::vector<StateEntry>& entries() { return entries_; }
    std::vector<Tensor> parameters() const;
    /// Learnable scalars only.
    std::size_t parameter_count() const;
    const StateEntry& find(const std::string& name) const;

private:
    std::vector<StateEntry> entries_;
};

// Checkpoint layout: a directory holding
//   manifest.json  {"format":"dcfg-checkpoint","version":1,"dtype":"float64",
//                   "byte_order":"little","blob":"weights.bin","total_values":N,
//                   "entries":[{"name","shape","offset","count","trainable"}...],
//                   "meta":{...}}
//   weights.bin    N IEEE-754 binary64 values, little-endian, no header.
// `offset` and `count` are in values (multiply by 8 for bytes). Entries are
// stored back to back in manifest order.
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kBlobName = "weights.bin";

void save_checkpoint(const StateDict& state, const std::filesystem::path& dir,
                     const nlohmann::json& meta = nlohmann::json::object());

/// Fills `state` in place from `dir` and returns the stored meta object.
/// Every entry of `state` must be present with the same shape; throws
/// IoError otherwise.
nlohmann::json load_checkpoint(StateDict& state, const std::filesystem::path& dir);

/// Reads only the meta object of a checkpoint.
nlohmann::json read_checkpoint_meta(const std::filesystem::path& dir);

}  // namespace dcfg
