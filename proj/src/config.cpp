#include "maskboot/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "maskboot/errors.hpp"

namespace maskboot {

using nlohmann::json;

namespace {

template <class F>
void visit_fields(RunConfig& c, F&& f) {
    f("format_version", c.format_version);
    f("seed", c.seed);
    f("out_dir", c.out_dir);

    f("data.dir", c.data.dir);
    f("data.scenes", c.data.scenes);
    auto& s = c.data.scene;
    f("scenegen.image_size", s.image_size);
    f("scenegen.min_objects", s.min_objects);
    f("scenegen.max_objects", s.max_objects);
    f("scenegen.num_classes", s.num_classes);
    f("scenegen.noise_sigma", s.noise_sigma);
    f("scenegen.background_texture", s.background_texture);
    f("scenegen.color_jitter", s.color_jitter);
    f("scenegen.min_half_extent", s.min_half_extent);
    f("scenegen.max_half_extent", s.max_half_extent);

    for (auto [prefix, spec] : {std::pair<const char*, augment::PipelineSpec*>{"augment.view_a.", &c.augment.first},
                                {"augment.view_b.", &c.augment.second}}) {
        const std::string p = prefix;
        f(p + "crop_scale_min", spec->crop_scale_min);
        f(p + "crop_scale_max", spec->crop_scale_max);
        f(p + "aspect_min", spec->aspect_min);
        f(p + "aspect_max", spec->aspect_max);
        f(p + "flip_p", spec->flip_p);
        f(p + "jitter_p", spec->jitter_p);
        f(p + "brightness", spec->brightness);
        f(p + "contrast", spec->contrast);
        f(p + "saturation", spec->saturation);
        f(p + "grayscale_p", spec->grayscale_p);
        f(p + "blur_p", spec->blur_p);
        f(p + "blur_sigma_min", spec->blur_sigma_min);
        f(p + "blur_sigma_max", spec->blur_sigma_max);
        f(p + "output_size", spec->output_size);
    }

    f("encoder.input_size", c.encoder.input_size);
    f("encoder.channels", c.encoder.channels);
    f("encoder.blocks", c.encoder.blocks);
    f("encoder.residual_init_gain", c.encoder.residual_init_gain);
    f("encoder.head_hidden", c.heads.hidden);
    f("encoder.head_out", c.heads.out);
    f("encoder.fusion_layers", c.fusion_layers);
    f("encoder.fusion_size", c.fusion_size);

    f("bootstrap.k_min", c.bootstrap.k_min);
    f("bootstrap.k_max", c.bootstrap.k_max);
    f("bootstrap.stage", c.bootstrap.stage);
    f("bootstrap.kmeans_iters", c.bootstrap.kmeans_iters);
    f("bootstrap.batch_images", c.bootstrap.batch_images);
    f("bootstrap.mini_batch", c.bootstrap.mini_batch);
    f("bootstrap.mini_batch_size", c.bootstrap.mini_batch_size);

    f("vmf.kappa", c.train.kappa);
    f("vmf.lambda_vmf", c.train.lambda_vmf);
    f("vmf.every_m", c.train.consistency_every);
    f("vmf.warmup_w", c.train.warmup_epochs);
    f("vmf.warmup_k", c.train.warmup_k);
    f("vmf.kmeans_iters", c.train.vmf_kmeans_iters);
    f("vmf.independent_geometry", c.train.independent_geometry);

    f("contrast.temperature", c.train.temperature);
    f("contrast.negatives", c.train.negatives);

    f("train.epochs", c.train.epochs);
    f("train.bootstrap_every_n", c.train.bootstrap_every);
    f("train.batch_size", c.train.batch_size);
    f("train.lr", c.train.lr);
    f("train.sgd_momentum", c.train.sgd_momentum);
    f("train.weight_decay", c.train.weight_decay);
    f("train.ema_momentum", c.train.ema_momentum);
    f("train.masks", c.train.masks);
    f("train.checkpoint_every", c.train.checkpoint_every);
    f("train.save_masks", c.train.save_masks);

    f("eval.probe", c.eval.probe);
    f("eval.probe_stage", c.eval.probe_cfg.stage);
    f("eval.probe_train_scenes", c.eval.probe_cfg.train_scenes);
    f("eval.probe_test_scenes", c.eval.probe_cfg.test_scenes);
    f("eval.probe_pixels_per_scene", c.eval.probe_cfg.pixels_per_scene);
    f("eval.probe_steps", c.eval.probe_cfg.steps);
    f("eval.probe_lr", c.eval.probe_cfg.lr);
    f("eval.probe_weight_decay", c.eval.probe_cfg.weight_decay);
}

[[noreturn]] void type_error(const std::string& key, const char* expected, const json& v) {
    throw ConfigError("config key '" + key + "' expects " + expected + ", got " + v.dump());
}

// JSON value -> field, one overload per field type.
void read(const std::string& k, const json& v, int& out) {
    if (!v.is_number_integer()) type_error(k, "an integer", v);
    const auto x = v.get<std::int64_t>();
    if (x < INT32_MIN || x > INT32_MAX) type_error(k, "a 32-bit integer", v);
    out = static_cast<int>(x);
}
void read(const std::string& k, const json& v, double& out) {
    if (!v.is_number()) type_error(k, "a number", v);
    out = v.get<double>();
}
void read(const std::string& k, const json& v, bool& out) {
    if (!v.is_boolean()) type_error(k, "true or false", v);
    out = v.get<bool>();
}
void read(const std::string& k, const json& v, std::string& out) {
    if (!v.is_string()) type_error(k, "a string", v);
    out = v.get<std::string>();
}
void read(const std::string& k, const json& v, std::uint64_t& out) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        type_error(k, "a non-negative integer", v);
    out = v.get<std::uint64_t>();
}
void read(const std::string& k, const json& v, encoder::Stage& out) {
    if (!v.is_string()) type_error(k, "a stage name (s2.b2, s2, s3, s4)", v);
    try {
        out = encoder::parse_stage(v.get<std::string>());
    } catch (const ConfigError& e) {
        throw ConfigError("config key '" + k + "': " + e.what());
    }
}
void read(const std::string& k, const json& v, std::vector<encoder::Stage>& out) {
    if (!v.is_array()) type_error(k, "a list of stage names", v);
    std::vector<encoder::Stage> tmp;
    for (const auto& e : v) {
        encoder::Stage s{};
        read(k, e, s);
        tmp.push_back(s);
    }
    out = std::move(tmp);
}
template <std::size_t N>
void read(const std::string& k, const json& v, std::array<int, N>& out) {
    if (!v.is_array() || v.size() != N) type_error(k, ("a list of " + std::to_string(N) + " integers").c_str(), v);
    std::array<int, N> tmp{};
    for (std::size_t i = 0; i < N; ++i) read(k, v[i], tmp[i]);
    out = tmp;
}

json to_value(int v) { return v; }
json to_value(double v) { return v; }
json to_value(bool v) { return v; }
json to_value(const std::string& v) { return v; }
json to_value(std::uint64_t v) { return v; }
json to_value(encoder::Stage s) { return encoder::stage_name(s); }
json to_value(const std::vector<encoder::Stage>& v) {
    json a = json::array();
    for (auto s : v) a.push_back(encoder::stage_name(s));
    return a;
}
template <std::size_t N>
json to_value(const std::array<int, N>& v) {
    return json(std::vector<int>(v.begin(), v.end()));
}

void flatten(const json& node, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
    for (auto it = node.begin(); it != node.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object())
            flatten(*it, key, out);
        else
            out.emplace_back(key, *it);
    }
}

template <class T>
constexpr bool is_stringy = std::is_same_v<T, std::string> || std::is_same_v<T, encoder::Stage>;

}  // namespace

void RunConfig::validate() const {
    if (format_version != kConfigFormatVersion)
        throw ConfigError("format_version " + std::to_string(format_version) + " is not supported (expected " +
                          std::to_string(kConfigFormatVersion) + ")");
    if (data.scenes < 1) throw ConfigError("data.scenes must be >= 1");
    data.scene.validate();
    augment.first.validate();
    augment.second.validate();
    encoder.validate();
    if (augment.first.output_size != encoder.input_size || augment.second.output_size != encoder.input_size)
        throw ConfigError("augment.view_a.output_size and augment.view_b.output_size must equal encoder.input_size");
    if (heads.hidden < 1 || heads.out < 1) throw ConfigError("encoder.head_hidden and encoder.head_out must be >= 1");
    if (fusion_layers.empty()) throw ConfigError("encoder.fusion_layers must not be empty");
    for (std::size_t i = 0; i < fusion_layers.size(); ++i)
        for (std::size_t j = i + 1; j < fusion_layers.size(); ++j)
            if (fusion_layers[i] == fusion_layers[j]) throw ConfigError("encoder.fusion_layers lists a stage twice");
    if (fusion_size < 1) throw ConfigError("encoder.fusion_size must be >= 1");
    bootstrap.validate();

    const auto& t = train;
    if (t.warmup_epochs < 1) throw ConfigError("vmf.warmup_w must be >= 1");
    if (t.bootstrap_every < 0) throw ConfigError("train.bootstrap_every_n must be >= 0 (0 = never re-bootstrap)");
    if (t.consistency_every < 1) throw ConfigError("vmf.every_m must be >= 1");
    if (t.epochs < t.warmup_epochs) throw ConfigError("train.epochs must be >= vmf.warmup_w");
    if (t.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (t.lambda_vmf < 0.0) throw ConfigError("vmf.lambda_vmf must be >= 0");
    if (t.kappa < 0.0) throw ConfigError("vmf.kappa must be >= 0");
    if (t.warmup_k < 0 || t.warmup_k == 1) throw ConfigError("vmf.warmup_k must be 0 (automatic) or >= 2");
    if (t.vmf_kmeans_iters < 1) throw ConfigError("vmf.kmeans_iters must be >= 1");
    if (!(t.lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (t.sgd_momentum < 0.0 || t.sgd_momentum >= 1.0) throw ConfigError("train.sgd_momentum must lie in [0, 1)");
    if (t.weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
    if (t.ema_momentum < 0.0 || t.ema_momentum > 1.0) throw ConfigError("train.ema_momentum must lie in [0, 1]");
    if (!(t.temperature > 0.0)) throw ConfigError("contrast.temperature must be positive");
    if (t.negatives < 0) throw ConfigError("contrast.negatives must be >= 0");
    try {
        eval::parse_mask_kind(t.masks);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("train.masks: ") + e.what());
    }
    if (t.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    eval.probe_cfg.validate();
}

std::vector<std::string> config_keys() {
    RunConfig c;
    std::vector<std::string> keys;
    visit_fields(c, [&](const std::string& k, auto&) { keys.push_back(k); });
    return keys;
}

RunConfig config_from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
    std::vector<std::pair<std::string, json>> entries;
    flatten(doc, "", entries);
    RunConfig c;
    std::set<std::string> known;
    visit_fields(c, [&](const std::string& k, auto&) { known.insert(k); });
    for (const auto& [k, v] : entries) {
        if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
        visit_fields(c, [&](const std::string& key, auto& field) {
            if (key == k) read(k, v, field);
        });
    }
    return c;
}

RunConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return RunConfig{};
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + file.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(doc);
}

json config_to_json(const RunConfig& cfg) {
    RunConfig c = cfg;
    json doc = json::object();
    visit_fields(c, [&](const std::string& k, auto& field) {
        std::string ptr = "/" + k;
        std::replace(ptr.begin(), ptr.end(), '.', '/');
        doc[json::json_pointer(ptr)] = to_value(field);
    });
    return doc;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    bool found = false;
    visit_fields(cfg, [&](const std::string& k, auto& field) {
        if (k != key) return;
        found = true;
        using T = std::decay_t<decltype(field)>;
        json v;
        try {
            v = json::parse(value);
        } catch (const json::parse_error&) {
            if constexpr (is_stringy<T>) {
                v = value;
            } else if constexpr (std::is_same_v<T, std::vector<encoder::Stage>>) {
                v = json::array();
                std::stringstream ss(value);
                std::string item;
                while (std::getline(ss, item, ',')) v.push_back(item);
            } else {
                throw ConfigError("config key '" + key + "': cannot parse value '" + value + "'");
            }
        }
        if constexpr (is_stringy<T>)
            if (!v.is_string()) v = value;
        read(key, v, field);
    });
    if (!found) throw ConfigError("unknown config key '" + key + "'");
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
    apply_override(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b, const std::vector<std::string>& ignore) {
    std::vector<std::pair<std::string, json>> fa, fb;
    flatten(config_to_json(a), "", fa);
    flatten(config_to_json(b), "", fb);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < fa.size(); ++i)
        if (fa[i].second != fb[i].second &&
            std::find(ignore.begin(), ignore.end(), fa[i].first) == ignore.end())
            out.push_back(fa[i].first);
    return out;
}

void write_config(const RunConfig& cfg, const std::filesystem::path& file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    out << config_to_json(cfg).dump(2) << '\n';
}

}  // namespace maskboot
