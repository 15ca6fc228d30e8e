#include "maskboot/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <numeric>

#include "maskboot/augment.hpp"
#include "maskboot/errors.hpp"
#include "maskboot/png_io.hpp"
#include "maskboot/steps.hpp"

namespace maskboot::train {

using nlohmann::json;
namespace fs = std::filesystem;

const char* event_name(EventKind k) {
    switch (k) {
        case EventKind::warmup: return "warmup";
        case EventKind::bootstrap: return "bootstrap";
        case EventKind::contrastive: return "contrastive";
        case EventKind::consistency: return "consistency";
    }
    return "?";
}

EventKind parse_event(const std::string& name) {
    for (auto k : {EventKind::warmup, EventKind::bootstrap, EventKind::contrastive, EventKind::consistency})
        if (name == event_name(k)) return k;
    throw FormatError("unknown event kind '" + name + "'");
}

Dataset Dataset::from_scenes(std::span<const scenegen::Scene> scenes, const scenegen::SceneConfig& cfg) {
    Dataset d;
    d.scene = cfg;
    for (const auto& s : scenes) {
        d.images.push_back(to_feature_map(s.image));
        d.gt.push_back(s.gt_masks());
        d.object_counts.push_back(s.object_count);
    }
    return d;
}

Dataset load_or_generate(const RunConfig& cfg) {
    if (!cfg.data.dir.empty()) {
        scenegen::DatasetManifest manifest;
        const auto scenes = scenegen::load_dataset(cfg.data.dir, &manifest);
        return Dataset::from_scenes(scenes, manifest.config);
    }
    const auto scenes = scenegen::generate_dataset(derive_seed(cfg.seed, "scenegen"), cfg.data.scenes, cfg.data.scene);
    return Dataset::from_scenes(scenes, cfg.data.scene);
}

int median_object_count(std::span<const int> counts) {
    if (counts.empty()) return 2;
    std::vector<int> v(counts.begin(), counts.end());
    std::sort(v.begin(), v.end());
    return std::max(2, v[(v.size() - 1) / 2]);
}

Streams Streams::from_seed(std::uint64_t seed) {
    return {Rng(derive_seed(seed, "data")), Rng(derive_seed(seed, "augment")), Rng(derive_seed(seed, "kmeans")),
            Rng(derive_seed(seed, "negatives"))};
}

// metrics.jsonl is a pure function of (config, seed); wall-clock timings go
// to timing.jsonl.
class Trainer::Sink {
public:
    Sink(const fs::path& dir, bool enabled, std::uint64_t resume_bytes) : enabled_(enabled), bytes_(resume_bytes) {
        if (!enabled_) return;
        fs::create_directories(dir);
        const auto path = dir / "metrics.jsonl";
        if (fs::exists(path)) {
            const auto size = fs::file_size(path);
            if (size > resume_bytes)
                fs::resize_file(path, resume_bytes);
            else if (size < resume_bytes)
                std::cerr << "warning: " << path.string() << " is shorter than the checkpoint expects; appending\n";
        } else if (resume_bytes > 0) {
            std::cerr << "warning: " << path.string() << " missing; starting a new log\n";
        }
        metrics_.open(path, std::ios::app | std::ios::binary);
        timing_.open(dir / "timing.jsonl", std::ios::app);
        if (!metrics_) throw IoError("cannot open " + path.string());
    }
    void record(const json& j) {
        const std::string line = j.dump() + "\n";
        bytes_ += line.size();
        if (enabled_) {
            metrics_ << line;
            metrics_.flush();
        }
    }
    void timing(const json& j) {
        if (enabled_) timing_ << j.dump() << '\n' << std::flush;
    }
    std::uint64_t bytes() const { return bytes_; }

private:
    bool enabled_;
    std::uint64_t bytes_;
    std::ofstream metrics_, timing_;
};

Trainer::Trainer(RunConfig cfg, Dataset data)
    : cfg_(std::move(cfg)),
      data_(std::move(data)),
      model_(cfg_.encoder, cfg_.heads, cfg_.fusion_layers, cfg_.fusion_size),
      mask_kind_(eval::MaskKind::bootstrap),
      warmup_k_(0) {
    cfg_.validate();
    mask_kind_ = eval::parse_mask_kind(cfg_.train.masks);
    if (data_.size() == 0) throw ConfigError("dataset is empty");
    for (const auto& img : data_.images)
        if (img.height != cfg_.encoder.input_size || img.width != cfg_.encoder.input_size)
            throw ConfigError("dataset image size must equal encoder.input_size (" +
                              std::to_string(cfg_.encoder.input_size) + ")");
    warmup_k_ = cfg_.train.warmup_k > 0 ? cfg_.train.warmup_k : median_object_count(data_.object_counts);
}

int Trainer::batches_per_epoch() const { return (data_.size() + cfg_.train.batch_size - 1) / cfg_.train.batch_size; }

std::vector<int> Trainer::eval_epochs() const {
    const int w = cfg_.train.warmup_epochs, n = cfg_.train.bootstrap_every, e = cfg_.train.epochs;
    std::vector<int> v = {w, e / 2, e};
    if (n > 0) v.insert(v.end(), {w + n / 4, w + n / 2, w + n});
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    v.erase(std::remove_if(v.begin(), v.end(), [&](int x) { return x < 1 || x > e; }), v.end());
    return v;
}

TrainState Trainer::fresh_state() const {
    TrainState st;
    Rng init(derive_seed(cfg_.seed, "init"));
    st.online = model_.init(init);
    st.target = encoder::Model::target_from(st.online);
    st.opt = optim::State::zeros_like(st.online);
    st.rng = Streams::from_seed(cfg_.seed);
    return st;
}

TrainState Trainer::resume(const fs::path& checkpoint) const {
    RunConfig saved;
    TrainState st = load_checkpoint(checkpoint, &saved);
    const auto diff = config_diff(cfg_, saved,
                                  {"out_dir", "data.dir", "train.checkpoint_every", "train.save_masks", "eval.probe"});
    if (!diff.empty()) {
        std::string keys;
        for (const auto& k : diff) keys += (keys.empty() ? "" : ", ") + k;
        throw ConfigError("checkpoint was written with a different configuration (" + keys + ")");
    }
    const TrainState ref = fresh_state();
    if (!st.online.encoder.same_structure(ref.online.encoder) || !st.online.projector.same_structure(ref.online.projector) ||
        !st.online.predictor.same_structure(ref.online.predictor))
        throw FormatError("checkpoint parameters do not match the configured model");
    if (!st.masks.empty() && static_cast<int>(st.masks.size()) != data_.size())
        throw FormatError("checkpoint masks do not match the dataset size");
    return st;
}

TrainState Trainer::init_from(const fs::path& checkpoint) const {
    const TrainState src = load_checkpoint(checkpoint);
    TrainState st = fresh_state();
    if (!src.online.encoder.same_structure(st.online.encoder) ||
        !src.online.projector.same_structure(st.online.projector) ||
        !src.online.predictor.same_structure(st.online.predictor))
        throw ConfigError("--init-from checkpoint does not match the configured model");
    st.online = src.online;
    st.target = src.target;
    return st;
}

bootstrap::BootstrapResult Trainer::bootstrap_all(const encoder::OnlineParams& online, Rng& rng) const {
    return bootstrap::bootstrap_masks(model_.encoder, online.encoder, data_.images, cfg_.bootstrap, rng);
}

eval::ProbeReport Trainer::probe(const encoder::OnlineParams& online, int epoch) const {
    if (!probe_data_) probe_data_ = eval::make_probe_data(derive_seed(cfg_.seed, "probe"), data_.scene, cfg_.eval.probe_cfg);
    Rng rng(derive_seed(derive_seed(cfg_.seed, "probe.fit"), static_cast<std::uint64_t>(epoch)));
    auto rep = eval::linear_probe(model_.encoder, online.encoder, *probe_data_, cfg_.eval.probe_cfg, rng);
    rep.epoch = epoch;
    return rep;
}

void Trainer::checkpoint(const TrainState& state, const std::string& name) const {
    const fs::path dir = fs::path(cfg_.out_dir) / "checkpoints";
    save_checkpoint(state, cfg_, dir / name);
    fs::copy_file(dir / name, dir / "latest.ckpt", fs::copy_options::overwrite_existing);
}

void Trainer::do_bootstrap(TrainState& state, int epoch, Sink& sink) {
    const auto res = bootstrap_all(state.online, state.rng.kmeans);
    state.masks = res.masks;
    state.events.push_back({epoch, EventKind::bootstrap});
    const auto q = eval::mask_quality(state.masks, data_.gt, epoch);
    json ks = json::array(), obj = json::array(), iters = json::array();
    int replaced = 0, resampled = 0;
    for (const auto& b : res.batches) {
        ks.push_back(b.k);
        obj.push_back(b.objective);
        iters.push_back(b.iterations);
        replaced += b.replaced_rows;
        resampled += b.k_resampled ? 1 : 0;
    }
    sink.record({{"kind", "bootstrap"}, {"epoch", epoch}, {"k", ks}, {"objective", obj}, {"iterations", iters},
                 {"replaced_rows", replaced}, {"k_resampled", resampled}, {"mask_miou", q.mean_miou},
                 {"mean_labels", q.mean_labels}});
    if (!(cfg_.train.save_masks && write_outputs_)) return;
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04d", epoch);
    const fs::path dir = fs::path(cfg_.out_dir) / "masks" / name;
    fs::create_directories(dir);
    for (int i = 0; i < data_.size(); ++i)
        write_png(dir / (scenegen::scene_file_id(i) + ".png"), state.masks[static_cast<std::size_t>(i)].labels());
    json prov = {{"epoch", epoch}, {"stage", encoder::stage_name(cfg_.bootstrap.stage)},
                 {"k_min", cfg_.bootstrap.k_min}, {"k_max", cfg_.bootstrap.k_max}, {"batches", json::array()}};
    for (const auto& b : res.batches)
        prov["batches"].push_back({{"first_scene", b.first_scene}, {"scene_count", b.scene_count}, {"k", b.k},
                                   {"objective", b.objective}, {"iterations", b.iterations},
                                   {"replaced_rows", b.replaced_rows}, {"k_resampled", b.k_resampled}});
    std::ofstream(dir / "provenance.json") << prov.dump(2) << '\n';
}

void Trainer::evaluate(TrainState& state, int epoch, Sink& sink) {
    json rec = {{"kind", "eval"}, {"epoch", epoch}, {"mask_miou", nullptr}};
    if (!state.masks.empty()) rec["mask_miou"] = eval::mask_quality(state.masks, data_.gt, epoch).mean_miou;
    if (cfg_.eval.probe) {
        const auto rep = probe(state.online, epoch);
        rec["probe_accuracy"] = rep.accuracy;
        rec["probe_miou"] = rep.miou;
        rec["probe_train_loss"] = rep.train_loss;
    }
    sink.record(rec);
}

void Trainer::run_epoch(TrainState& state, int epoch, Sink& sink, const RunOptions& opts) {
    const auto& t = cfg_.train;
    const bool warm = epoch <= t.warmup_epochs;
    if (!warm) {
        if (mask_kind_ == eval::MaskKind::bootstrap) {
            if (epoch == t.warmup_epochs + 1 || (t.bootstrap_every > 0 && (epoch - t.warmup_epochs) % t.bootstrap_every == 0))
                do_bootstrap(state, epoch, sink);
        } else if (state.masks.empty()) {
            for (const auto& g : data_.gt) state.masks.push_back(eval::baseline_masks(mask_kind_, g));
        }
    }
    const bool consistency = !warm && epoch % t.consistency_every == 0;
    state.events.push_back({epoch, warm ? EventKind::warmup : EventKind::contrastive});
    if (consistency) state.events.push_back({epoch, EventKind::consistency});

    std::vector<int> order(static_cast<std::size_t>(data_.size()));
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(state.rng.data.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

    const long total_steps = static_cast<long>(t.epochs) * batches_per_epoch();
    steps::UpdateRule rule;
    rule.sgd = {t.lr, t.sgd_momentum, t.weight_decay};
    rule.ema_momentum = t.ema_momentum;
    steps::ConsistencyStepConfig ccfg;
    ccfg.stage = cfg_.bootstrap.stage;
    ccfg.k = warmup_k_;
    ccfg.kappa = t.kappa;
    ccfg.kmeans_iters = t.vmf_kmeans_iters;
    ccfg.independent_geometry = t.independent_geometry;
    const steps::ContrastStepConfig xcfg{t.temperature, t.negatives};

    double sum_contrast = 0.0, sum_clus = 0.0;
    int n_contrast = 0, n_clus = 0, skipped = 0, pairs = 0;
    for (int first = 0; first < data_.size(); first += t.batch_size) {
        const int count = std::min(t.batch_size, data_.size() - first);
        std::vector<FeatureMap> images;
        std::vector<MaskSet> masks;
        for (int i = first; i < first + count; ++i) {
            images.push_back(data_.images[order[i]]);
            if (!warm) masks.push_back(state.masks[order[i]]);
        }
        rule.lr = optim::cosine_lr(t.lr, state.step, total_steps);
        json rec = {{"kind", "step"}, {"epoch", epoch}, {"step", state.step}, {"lr", rule.lr}};
        const bool dump = opts.dump_augmented && first == 0 && (epoch == 1 || epoch == t.warmup_epochs + 1);

        auto consistency_step = [&](double lambda) {
            ccfg.lambda = lambda;
            if (dump && warm) {
                Rng copy = state.rng.augment;
                const auto v = steps::make_views(images, {}, cfg_.augment, !ccfg.independent_geometry, copy);
                const MaskSet blank(LabelGrid(v.first[0].height, v.first[0].width, 0));
                augment::dump_view({v.first[0], blank}, *opts.dump_augmented, "warmup_view_a");
                augment::dump_view({v.second[0], blank}, *opts.dump_augmented, "warmup_view_b");
            }
            const auto out = steps::run_consistency_step(model_, state.online, state.target, state.opt, rule, images,
                                                         cfg_.augment, ccfg, state.rng.augment, state.rng.kmeans);
            rec["loss_clus"] = out.loss;
            rec["clus_terms"] = {out.terms.intra_online, out.terms.intra_target, out.terms.inter_online,
                                 out.terms.inter_target};
            rec["k"] = out.k;
            rec["lambda"] = lambda;
            sum_clus += out.loss;
            ++n_clus;
        };

        if (warm) {
            rec["phase"] = "warmup";
            consistency_step(1.0);
        } else {
            rec["phase"] = "contrastive";
            const auto views = steps::make_views(images, masks, cfg_.augment, false, state.rng.augment);
            if (dump) {
                augment::dump_view({views.first[0], MaskSet(views.first_labels[0])}, *opts.dump_augmented, "view_a");
                augment::dump_view({views.second[0], MaskSet(views.second_labels[0])}, *opts.dump_augmented, "view_b");
            }
            const auto out = steps::run_contrastive_step(model_, state.online, state.target, state.opt, rule, views,
                                                         xcfg, state.rng.negatives);
            rec["loss_contrast"] = out.loss;
            rec["pairs"] = out.pairs;
            rec["skipped"] = out.skipped;
            if (out.skipped) {
                ++skipped;
            } else {
                sum_contrast += out.loss;
                ++n_contrast;
            }
            pairs += out.pairs;
            if (consistency) consistency_step(t.lambda_vmf);
        }
        sink.record(rec);
        ++state.step;
    }
    json summary = {{"kind", "epoch"}, {"epoch", epoch}, {"phase", warm ? "warmup" : "contrastive"},
                    {"steps", batches_per_epoch()}, {"skipped_batches", skipped}, {"pairs", pairs}};
    summary["mean_contrast"] = n_contrast ? json(sum_contrast / n_contrast) : json(nullptr);
    summary["mean_clus"] = n_clus ? json(sum_clus / n_clus) : json(nullptr);
    sink.record(summary);
}

void Trainer::run(TrainState& state, const RunOptions& opts) {
    write_outputs_ = opts.write_outputs;
    const fs::path out(cfg_.out_dir);
    if (opts.write_outputs) write_config(cfg_, out / "config.json");
    if (opts.dump_augmented) fs::create_directories(*opts.dump_augmented);
    Sink sink(out, opts.write_outputs, state.metrics_bytes);
    const auto evals = eval_epochs();
    const auto& t = cfg_.train;
    try {
        while (state.epoch < t.epochs) {
            if (opts.stop_after_epoch && state.epoch >= *opts.stop_after_epoch) break;
            const int epoch = state.epoch + 1;
            const auto start = std::chrono::steady_clock::now();
            run_epoch(state, epoch, sink, opts);
            state.epoch = epoch;
            if (std::find(evals.begin(), evals.end(), epoch) != evals.end()) evaluate(state, epoch, sink);
            state.metrics_bytes = sink.bytes();
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            sink.timing({{"epoch", epoch}, {"seconds", secs}});
            if (opts.verbose) std::cerr << "epoch " << epoch << "/" << t.epochs << " (" << secs << " s)\n";
            if (opts.write_outputs && t.checkpoint_every > 0 && epoch % t.checkpoint_every == 0) {
                char name[32];
                std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
                checkpoint(state, name);
            }
        }
        const bool finished = state.epoch >= t.epochs;
        // A run that ends with warmup still produces the post-warmup masks.
        const Event post_warmup{t.warmup_epochs + 1, EventKind::bootstrap};
        if (finished && t.epochs == t.warmup_epochs && mask_kind_ == eval::MaskKind::bootstrap &&
            std::find(state.events.begin(), state.events.end(), post_warmup) == state.events.end()) {
            do_bootstrap(state, post_warmup.epoch, sink);
            state.metrics_bytes = sink.bytes();
        }
        if (opts.write_outputs) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%04d.ckpt", state.epoch);
            checkpoint(state, finished ? std::string("final.ckpt") : std::string(name));
        }
    } catch (...) {
        if (opts.write_outputs) {
            try {
                save_checkpoint(state, cfg_, out / "checkpoints" / "crash.ckpt");
            } catch (...) {
            }
        }
        throw;
    }
}

}  // namespace maskboot::train
