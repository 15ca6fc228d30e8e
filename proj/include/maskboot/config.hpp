#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskboot/bootstrap.hpp"
#include "maskboot/encoder.hpp"
#include "maskboot/eval.hpp"
#include "maskboot/scenegen.hpp"
#include "maskboot/steps.hpp"

namespace maskboot {

inline constexpr int kConfigFormatVersion = 1;

struct DataConfig {
    std::string dir;  // empty: generate the dataset in memory from the seed
    int scenes = 2048;
    scenegen::SceneConfig scene;
};

struct TrainConfig {
    int warmup_epochs = 5;      // W
    int bootstrap_every = 20;   // N; 0 = never re-bootstrap after the post-warmup bootstrap
    int consistency_every = 5;  // M
    int epochs = 100;
    int batch_size = 32;
    double lambda_vmf = 0.1;
    double kappa = 10.0;
    int warmup_k = 0;  // 0: median object count of the dataset (at least 2)
    int vmf_kmeans_iters = 50;
    bool independent_geometry = false;
    double lr = 0.05;
    double sgd_momentum = 0.9;
    double weight_decay = 1.5e-6;
    double ema_momentum = 0.99;
    double temperature = 0.2;
    int negatives = 16;
    std::string masks = "bootstrap";  // bootstrap | random_crop | grid | ground_truth
    int checkpoint_every = 10;        // epochs; 0 = final checkpoint only
    bool save_masks = true;
};

struct EvalConfig {
    bool probe = true;
    eval::ProbeConfig probe_cfg;
};

struct RunConfig {
    int format_version = kConfigFormatVersion;
    std::uint64_t seed = 0;
    std::string out_dir = "run";
    DataConfig data;
    steps::AugmentSetup augment;
    encoder::EncoderConfig encoder;
    encoder::HeadConfig heads;
    std::vector<encoder::Stage> fusion_layers = {encoder::Stage::s2, encoder::Stage::s3, encoder::Stage::s4};
    int fusion_size = 4;
    bootstrap::BootstrapConfig bootstrap;
    TrainConfig train;
    EvalConfig eval;

    // Throws ConfigError naming the offending key(s).
    void validate() const;
};

// Every key has the dotted form "group.name"; nested JSON objects are
// flattened. Unknown keys and type mismatches throw ConfigError.
RunConfig config_from_json(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& file);
// Fully resolved nested document, including every default.
nlohmann::json config_to_json(const RunConfig& cfg);
// "key=value"; the value is parsed according to the key's type (JSON syntax
// accepted, bare strings allowed for string keys).
void apply_override(RunConfig& cfg, const std::string& assignment);
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

// Keys whose values differ between two configs (dotted form).
std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b, const std::vector<std::string>& ignore = {});

void write_config(const RunConfig& cfg, const std::filesystem::path& file);

}  // namespace maskboot
