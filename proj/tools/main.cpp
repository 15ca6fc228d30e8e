#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "maskboot/config.hpp"
#include "maskboot/errors.hpp"
#include "maskboot/eval.hpp"
#include "maskboot/png_io.hpp"
#include "maskboot/scenegen.hpp"
#include "maskboot/trainer.hpp"

namespace fs = std::filesystem;
using namespace maskboot;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

std::string version_text() {
    return std::string("maskboot ") + MASKBOOT_VERSION + " (config format " + std::to_string(kConfigFormatVersion) +
           ", checkpoint format " + std::to_string(train::kCheckpointVersion) + ", dataset format " +
           std::to_string(scenegen::kDatasetFormatVersion) + ")";
}

// Flags shared by subcommands that resolve a RunConfig.
struct ConfigFlags {
    std::string file;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs, kmin, kmax;
    std::optional<double> lambda_vmf;
    std::optional<std::string> stage, out, data;

    void attach(CLI::App* app, bool training) {
        app->add_option("--config", file, "JSON config file (missing keys take defaults)")->check(CLI::ExistingFile);
        app->add_option("--set", sets, "Override one key, e.g. --set train.epochs=20 (repeatable)");
        app->add_option("--seed", seed, "Global seed");
        app->add_option("--kmin", kmin, "bootstrap.k_min");
        app->add_option("--kmax", kmax, "bootstrap.k_max");
        app->add_option("--stage", stage, "bootstrap.stage (s2.b2, s2, s3, s4)");
        app->add_option("--data", data, "Dataset directory written by generate-data");
        if (training) {
            app->add_option("--epochs", epochs, "train.epochs");
            app->add_option("--lambda-vmf", lambda_vmf, "vmf.lambda_vmf");
            app->add_option("--out", out, "Run output directory");
        }
    }

    // File first, then --set, then dedicated flags.
    RunConfig resolve(RunConfig base) const {
        RunConfig cfg = file.empty() ? base : load_config(file);
        for (const auto& s : sets) apply_override(cfg, s);
        if (seed) cfg.seed = *seed;
        if (epochs) cfg.train.epochs = *epochs;
        if (kmin) cfg.bootstrap.k_min = *kmin;
        if (kmax) cfg.bootstrap.k_max = *kmax;
        if (lambda_vmf) cfg.train.lambda_vmf = *lambda_vmf;
        if (stage) apply_override(cfg, "bootstrap.stage", *stage);
        if (out) cfg.out_dir = *out;
        if (data) cfg.data.dir = *data;
        cfg.validate();
        return cfg;
    }
};

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

// Config stored in a checkpoint, with the dataset location taken from --data when given.
std::pair<RunConfig, train::TrainState> open_checkpoint(const std::string& ckpt, const std::optional<std::string>& data) {
    RunConfig cfg;
    auto st = train::load_checkpoint(ckpt, &cfg);
    if (data) cfg.data.dir = *data;
    return {cfg, std::move(st)};
}

int cmd_generate(const fs::path& out, int count, int size, std::uint64_t seed, const ConfigFlags& flags) {
    RunConfig cfg = flags.resolve({});
    cfg.data.scene.image_size = size;
    cfg.data.scene.validate();
    const auto scenes = scenegen::generate_dataset(seed, count, cfg.data.scene);
    const auto manifest = scenegen::write_dataset(scenes, cfg.data.scene, out);
    std::cerr << "wrote " << manifest.scene_count << " scenes to " << out.string() << '\n';
    return kExitOk;
}

int cmd_train(const ConfigFlags& flags, const std::optional<std::string>& resume, const std::optional<std::string>& init_from,
              const std::optional<std::string>& dump, bool quiet) {
    if (resume && init_from) throw CLI::ValidationError("--resume and --init-from are mutually exclusive");
    RunConfig cfg = flags.resolve({});
    train::Trainer trainer(cfg, train::load_or_generate(cfg));
    train::TrainState st = resume ? trainer.resume(*resume) : init_from ? trainer.init_from(*init_from) : trainer.fresh_state();
    train::RunOptions opts;
    opts.verbose = !quiet;
    if (dump) opts.dump_augmented = fs::path(*dump);
    if (!quiet)
        std::cerr << "training " << cfg.train.epochs << " epochs on " << trainer.data().size() << " scenes -> "
                  << cfg.out_dir << " (from epoch " << st.epoch << ")\n";
    trainer.run(st, opts);
    return kExitOk;
}

int cmd_bootstrap(const std::string& ckpt, const ConfigFlags& flags) {
    auto [saved, st] = open_checkpoint(ckpt, flags.data);
    RunConfig cfg = saved;
    if (flags.kmin) cfg.bootstrap.k_min = *flags.kmin;
    if (flags.kmax) cfg.bootstrap.k_max = *flags.kmax;
    if (flags.stage) apply_override(cfg, "bootstrap.stage", *flags.stage);
    if (flags.seed) cfg.seed = *flags.seed;
    for (const auto& s : flags.sets) apply_override(cfg, s);
    cfg.validate();
    const fs::path out = flags.out.value_or("bootstrap_out");
    train::Trainer trainer(cfg, train::load_or_generate(cfg));
    Rng rng(derive_seed(cfg.seed, "bootstrap.cli"));
    const auto res = trainer.bootstrap_all(st.online, rng);
    fs::create_directories(out / "masks");
    for (int i = 0; i < trainer.data().size(); ++i)
        write_png(out / "masks" / (scenegen::scene_file_id(i) + ".png"), res.masks[static_cast<std::size_t>(i)].labels());
    const auto q = eval::mask_quality(res.masks, trainer.data().gt, st.epoch);
    json prov = {{"epoch", st.epoch},
                 {"checkpoint", ckpt},
                 {"stage", encoder::stage_name(cfg.bootstrap.stage)},
                 {"k_min", cfg.bootstrap.k_min},
                 {"k_max", cfg.bootstrap.k_max},
                 {"mask_miou", q.mean_miou},
                 {"batches", json::array()}};
    for (const auto& b : res.batches)
        prov["batches"].push_back({{"first_scene", b.first_scene}, {"scene_count", b.scene_count}, {"k", b.k},
                                   {"objective", b.objective}, {"iterations", b.iterations},
                                   {"replaced_rows", b.replaced_rows}, {"k_resampled", b.k_resampled}});
    write_json(out / "provenance.json", prov);
    std::cout << json{{"scenes", trainer.data().size()}, {"mask_miou", q.mean_miou}}.dump() << '\n';
    return kExitOk;
}

int cmd_eval(const std::string& ckpt, const ConfigFlags& flags) {
    auto [cfg, st] = open_checkpoint(ckpt, flags.data);
    const fs::path out = flags.out.value_or("eval_out");
    train::Trainer trainer(cfg, train::load_or_generate(cfg));
    Rng rng(derive_seed(cfg.seed, "eval.cli"));
    const auto fresh = trainer.bootstrap_all(st.online, rng);
    const auto q = eval::mask_quality(fresh.masks, trainer.data().gt, st.epoch);
    json rec = {{"epoch", st.epoch}, {"bootstrap_mask_miou", q.mean_miou}, {"mean_labels", q.mean_labels},
                {"min_labels", q.min_labels}, {"max_labels", q.max_labels}};
    if (!st.masks.empty()) rec["training_mask_miou"] = eval::mask_quality(st.masks, trainer.data().gt, st.epoch).mean_miou;
    if (cfg.eval.probe) {
        const auto p = trainer.probe(st.online, st.epoch);
        rec["probe_accuracy"] = p.accuracy;
        rec["probe_miou"] = p.miou;
    }
    write_json(out / "eval.json", rec);
    fs::create_directories(out);
    std::ofstream csv(out / "per_scene.csv");
    csv << "scene,mask_miou\n";
    for (std::size_t i = 0; i < q.per_scene.size(); ++i) csv << scenegen::scene_file_id(static_cast<int>(i)) << ',' << q.per_scene[i] << '\n';
    std::cout << rec.dump() << '\n';
    return kExitOk;
}

int cmd_probe(const std::string& ckpt, const ConfigFlags& flags) {
    auto [cfg, st] = open_checkpoint(ckpt, flags.data);
    if (flags.stage) cfg.eval.probe_cfg.stage = encoder::parse_stage(*flags.stage);
    for (const auto& s : flags.sets) apply_override(cfg, s);
    cfg.validate();
    train::Trainer trainer(cfg, train::load_or_generate(cfg));
    const auto p = trainer.probe(st.online, st.epoch);
    json rec = {{"epoch", st.epoch}, {"stage", encoder::stage_name(cfg.eval.probe_cfg.stage)},
                {"accuracy", p.accuracy}, {"miou", p.miou}, {"train_loss", p.train_loss}};
    if (flags.out) write_json(fs::path(*flags.out) / "probe.json", rec);
    std::cout << rec.dump() << '\n';
    return kExitOk;
}

int cmd_report(const std::string& runs, const std::string& out) {
    const auto s = eval::emit_report(runs, out);
    for (const auto& w : s.warnings) std::cerr << "warning: " << w << '\n';
    std::cerr << "report: " << s.runs << " run(s), " << s.eval_rows << " eval rows, " << s.bootstrap_rows
              << " bootstrap rows, " << s.plots << " plot(s) -> " << out << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mask-bootstrapped dense contrastive pretraining on synthetic scenes"};
    app.require_subcommand(0, 1);
    app.set_version_flag("--version", version_text());

    ConfigFlags gen_flags, train_flags, boot_flags, eval_flags, probe_flags;

    auto* gen = app.add_subcommand("generate-data", "Render a synthetic scene dataset to disk");
    std::string gen_out;
    int gen_count = 2048, gen_size = 64;
    std::uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--count", gen_count, "Number of scenes")->check(CLI::PositiveNumber);
    gen->add_option("--size", gen_size, "Image side length in pixels");
    gen->add_option("--seed", gen_seed, "Dataset seed");
    gen->add_option("--config", gen_flags.file, "Config file supplying scenegen.* settings")->check(CLI::ExistingFile);
    gen->add_option("--set", gen_flags.sets, "Override one key (repeatable)");

    auto* tr = app.add_subcommand("train", "Train an encoder");
    train_flags.attach(tr, true);
    std::optional<std::string> resume, init_from, dump;
    bool quiet = false;
    tr->add_option("--resume", resume, "Continue a run from its checkpoint")->check(CLI::ExistingFile);
    tr->add_option("--init-from", init_from, "Start a fresh schedule from a checkpoint's weights")->check(CLI::ExistingFile);
    tr->add_option("--dump-augmented", dump, "Write the first batch's augmented views of each phase as PNG");
    tr->add_flag("--quiet", quiet, "No progress output");

    auto* bs = app.add_subcommand("bootstrap", "Bootstrap masks for a dataset from a checkpoint");
    std::string boot_ckpt;
    bs->add_option("--ckpt", boot_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    boot_flags.attach(bs, false);
    bs->add_option("--out", boot_flags.out, "Output directory");

    auto* ev = app.add_subcommand("eval", "Mask quality (and probe) of a checkpoint");
    std::string eval_ckpt;
    ev->add_option("--ckpt", eval_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", eval_flags.data, "Dataset directory (defaults to the checkpoint's)");
    ev->add_option("--out", eval_flags.out, "Output directory");

    auto* pr = app.add_subcommand("probe", "Linear probe on frozen features of a checkpoint");
    std::string probe_ckpt;
    pr->add_option("--ckpt", probe_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    pr->add_option("--stage", probe_flags.stage, "Feature stage (s2.b2, s2, s3, s4)");
    pr->add_option("--data", probe_flags.data, "Dataset directory (defaults to the checkpoint's)");
    pr->add_option("--set", probe_flags.sets, "Override one key, e.g. --set eval.probe_steps=100");
    pr->add_option("--out", probe_flags.out, "Write probe.json here");

    auto* rp = app.add_subcommand("report", "Tables and plots from run directories");
    std::string runs, report_out = "report";
    rp->add_option("--runs", runs, "A run directory or a directory of runs")->required();
    rp->add_option("--out", report_out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_generate(gen_out, gen_count, gen_size, gen_seed, gen_flags);
        if (tr->parsed()) return cmd_train(train_flags, resume, init_from, dump, quiet);
        if (bs->parsed()) return cmd_bootstrap(boot_ckpt, boot_flags);
        if (ev->parsed()) return cmd_eval(eval_ckpt, eval_flags);
        if (pr->parsed()) return cmd_probe(probe_ckpt, probe_flags);
        if (rp->parsed()) return cmd_report(runs, report_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const CLI::Error& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}
