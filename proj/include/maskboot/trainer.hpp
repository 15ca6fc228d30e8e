#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maskboot/config.hpp"
#include "maskboot/encoder.hpp"
#include "maskboot/eval.hpp"
#include "maskboot/optim.hpp"
#include "maskboot/rng.hpp"
#include "maskboot/scenegen.hpp"

namespace maskboot::train {

enum class EventKind { warmup, bootstrap, contrastive, consistency };
const char* event_name(EventKind k);
EventKind parse_event(const std::string& name);

struct Event {
    int epoch = 0;
    EventKind kind = EventKind::warmup;
    bool operator==(const Event&) const = default;
};

struct Dataset {
    std::vector<FeatureMap> images;
    std::vector<MaskSet> gt;
    std::vector<int> object_counts;
    scenegen::SceneConfig scene;

    int size() const { return static_cast<int>(images.size()); }
    static Dataset from_scenes(std::span<const scenegen::Scene> scenes, const scenegen::SceneConfig& cfg);
};

// data.dir when set, otherwise data.scenes scenes generated from the run seed.
Dataset load_or_generate(const RunConfig& cfg);

// Lower median of the per-scene object counts, at least 2.
int median_object_count(std::span<const int> counts);

struct Streams {
    Rng data, augment, kmeans, negatives;

    static Streams from_seed(std::uint64_t seed);
    bool operator==(const Streams&) const = default;
};

struct TrainState {
    encoder::OnlineParams online;
    encoder::TargetParams target;
    optim::State opt;
    std::vector<MaskSet> masks;  // empty until the first masks are assigned
    int epoch = 0;               // completed epochs
    long step = 0;               // batches consumed
    Streams rng;
    std::vector<Event> events;
    std::uint64_t metrics_bytes = 0;  // length of metrics.jsonl when this state was current

    bool operator==(const TrainState&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary: magic "MBCK", format version, payload length, payload, CRC-32 of
// the payload. The payload starts with the resolved config document.
void save_checkpoint(const TrainState& state, const RunConfig& cfg, const std::filesystem::path& path);
// Throws FormatError on bad magic, version mismatch, truncation or checksum failure.
TrainState load_checkpoint(const std::filesystem::path& path, RunConfig* cfg = nullptr);

struct RunOptions {
    bool write_outputs = true;                  // metrics, checkpoints, masks, config echo
    std::optional<int> stop_after_epoch;        // interrupt after this epoch (checkpoint written)
    std::optional<std::filesystem::path> dump_augmented;  // first batch's views as PNG, once per phase
    bool verbose = false;                       // progress on stderr
};

class Trainer {
public:
    Trainer(RunConfig cfg, Dataset data);

    const RunConfig& config() const { return cfg_; }
    const encoder::Model& model() const { return model_; }
    const Dataset& data() const { return data_; }
    int warmup_k() const { return warmup_k_; }
    int batches_per_epoch() const;
    std::vector<int> eval_epochs() const;

    TrainState fresh_state() const;
    // Loads a checkpoint written for the same resolved config (out_dir and
    // data.dir may differ); throws ConfigError listing differing keys.
    TrainState resume(const std::filesystem::path& checkpoint) const;
    // Fresh state whose online/target parameters come from a checkpoint.
    TrainState init_from(const std::filesystem::path& checkpoint) const;

    // Runs the remaining epochs. On an exception the current state is written
    // to checkpoints/crash.ckpt before rethrowing.
    void run(TrainState& state, const RunOptions& opts = {});

    // Assigns masks for every scene by bootstrapping with the online encoder.
    bootstrap::BootstrapResult bootstrap_all(const encoder::OnlineParams& online, Rng& rng) const;
    eval::ProbeReport probe(const encoder::OnlineParams& online, int epoch) const;

private:
    class Sink;
    void run_epoch(TrainState& state, int epoch, Sink& sink, const RunOptions& opts);
    void do_bootstrap(TrainState& state, int epoch, Sink& sink);
    void evaluate(TrainState& state, int epoch, Sink& sink);
    void checkpoint(const TrainState& state, const std::string& name) const;

    RunConfig cfg_;
    Dataset data_;
    encoder::Model model_;
    eval::MaskKind mask_kind_;
    int warmup_k_;
    bool write_outputs_ = true;
    mutable std::optional<eval::ProbeData> probe_data_;
};

}  // namespace maskboot::train
