#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>

#include "maskboot/config.hpp"
#include "maskboot/errors.hpp"
#include "run_fixtures.hpp"

using namespace maskboot;

namespace {

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("an empty file resolves to the documented defaults") {
    const auto dir = fixtures::scratch_dir("config_empty");
    { std::ofstream(dir / "c.json") << "\n"; }
    const auto c = load_config(dir / "c.json");
    CHECK(config_to_json(c) == config_to_json(RunConfig{}));
    { std::ofstream(dir / "c.json") << "{}"; }
    CHECK(config_to_json(load_config(dir / "c.json")) == config_to_json(RunConfig{}));
    CHECK(c.train.warmup_epochs == 5);
    CHECK(c.train.bootstrap_every == 20);
    CHECK(c.train.consistency_every == 5);
    CHECK(c.train.epochs == 100);
    CHECK(c.train.batch_size == 32);
    CHECK(c.train.lambda_vmf == 0.1);
    CHECK(c.train.kappa == 10.0);
    CHECK(c.train.lr == 0.05);
    CHECK(c.train.sgd_momentum == 0.9);
    CHECK(c.train.weight_decay == 1.5e-6);
    CHECK(c.train.ema_momentum == 0.99);
    CHECK(c.train.temperature == 0.2);
    CHECK(c.bootstrap.k_min == 2);
    CHECK(c.bootstrap.k_max == 32);
    CHECK(c.bootstrap.batch_images == 16);
    CHECK(c.data.scenes == 2048);
    CHECK(c.data.scene.image_size == 64);
    CHECK(c.data.scene.num_classes == 12);
    CHECK(c.encoder.channels == std::array<int, 4>{32, 32, 64, 128});
    CHECK(c.heads.hidden == 256);
    CHECK(c.heads.out == 64);
    CHECK(c.fusion_size == 4);
}

TEST_CASE("file values and override precedence") {
    const auto dir = fixtures::scratch_dir("config_prec");
    { std::ofstream(dir / "c.json") << R"({"vmf": {"lambda_vmf": 0.2}, "seed": 4})"; }
    auto c = load_config(dir / "c.json");
    CHECK(c.train.lambda_vmf == 0.2);
    CHECK(c.seed == 4u);
    apply_override(c, "vmf.lambda_vmf=0.3");
    CHECK(c.train.lambda_vmf == 0.3);
    apply_override(c, "train.masks", "grid");
    CHECK(c.train.masks == "grid");
    apply_override(c, "encoder.fusion_layers=[\"s3\",\"s4\"]");
    CHECK(c.fusion_layers.size() == 2u);
}

TEST_CASE("unknown keys, type mismatches and constraint violations name the key") {
    CHECK(error_of([] { config_from_json(nlohmann::json::parse(R"({"train": {"epochz": 3}})")); }).find("train.epochz") !=
          std::string::npos);
    CHECK(error_of([] { config_from_json(nlohmann::json::parse(R"({"train": {"epochs": "many"}})")); }).find("train.epochs") !=
          std::string::npos);
    RunConfig c;
    CHECK(error_of([&] { apply_override(c, "nope.key=1"); }).find("nope.key") != std::string::npos);
    apply_override(c, "bootstrap.k_min=10");
    apply_override(c, "bootstrap.k_max=5");
    const auto msg = error_of([&] { c.validate(); });
    CHECK(msg.find("k_min") != std::string::npos);
    CHECK(msg.find("k_max") != std::string::npos);
    CHECK_THROWS_AS(apply_override(c, "justtext"), ConfigError);
}

TEST_CASE("the echoed config reproduces itself") {
    const auto dir = fixtures::scratch_dir("config_echo");
    auto c = fixtures::tiny_run_config(dir);
    c.train.masks = "grid";
    write_config(c, dir / "config.json");
    const auto back = load_config(dir / "config.json");
    CHECK(config_diff(c, back).empty());
    CHECK(config_to_json(back) == config_to_json(c));
    auto d = back;
    d.train.lr = 0.5;
    d.out_dir = "elsewhere";
    CHECK(config_diff(c, d, {"out_dir"}) == std::vector<std::string>{"train.lr"});
}

void flatten_doc(const nlohmann::json& j, const std::string& prefix, std::map<std::string, nlohmann::json>& out) {
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it) flatten_doc(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    } else {
        out[prefix] = j;
    }
}

TEST_CASE("every key round-trips through overrides") {
    RunConfig c;
    c.seed = 77;
    c.train.masks = "grid";
    c.data.dir = "somewhere";
    std::map<std::string, nlohmann::json> flat;
    flatten_doc(config_to_json(c), "", flat);
    auto keys = config_keys();
    std::sort(keys.begin(), keys.end());
    std::vector<std::string> doc_keys;
    for (const auto& [k, v] : flat) doc_keys.push_back(k);
    CHECK(keys == doc_keys);
    RunConfig d;
    for (const auto& [k, v] : flat) apply_override(d, k, v.is_string() ? v.get<std::string>() : v.dump());
    CHECK(config_diff(c, d).empty());
}
