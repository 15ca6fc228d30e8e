#include <doctest.h>

#include "maskboot/errors.hpp"
#include "run_fixtures.hpp"

using namespace maskboot;
using fixtures::simulate_schedule;
using train::EventKind;

TEST_CASE("schedule oracle encodes the documented small example") {
    const auto ev = simulate_schedule(2, 4, 2, 8);
    std::vector<int> boots, cons;
    for (const auto& e : ev) {
        if (e.kind == EventKind::bootstrap) boots.push_back(e.epoch);
        if (e.kind == EventKind::consistency) cons.push_back(e.epoch);
    }
    CHECK(boots == std::vector<int>{3, 6});
    CHECK(cons == std::vector<int>{4, 6, 8});
}

TEST_CASE("trainer event log matches the schedule oracle") {
    const auto dir = fixtures::scratch_dir("trainer_events");
    auto cfg = fixtures::tiny_run_config(dir);
    cfg.eval.probe = false;
    struct Case {
        int w, n, m, e;
    };
    for (auto c : {Case{2, 2, 2, 5}, Case{1, 0, 1, 3}, Case{2, 1, 3, 4}, Case{3, 4, 2, 3}}) {
        cfg.train.warmup_epochs = c.w;
        cfg.train.bootstrap_every = c.n;
        cfg.train.consistency_every = c.m;
        cfg.train.epochs = c.e;
        train::Trainer t(cfg, train::load_or_generate(cfg));
        auto st = t.fresh_state();
        t.run(st, {.write_outputs = false});
        CHECK(st.events == simulate_schedule(c.w, c.n, c.m, c.e));
        CHECK(st.masks.size() == 8u);
    }
}

TEST_CASE("run ending at warmup still bootstraps once and never contrasts") {
    const auto dir = fixtures::scratch_dir("trainer_warm_only");
    auto cfg = fixtures::tiny_run_config(dir);
    cfg.eval.probe = false;
    cfg.train.epochs = cfg.train.warmup_epochs;
    train::Trainer t(cfg, train::load_or_generate(cfg));
    auto st = t.fresh_state();
    t.run(st, {.write_outputs = false});
    for (const auto& e : st.events) CHECK(e.kind != EventKind::contrastive);
    CHECK(st.events.back() == train::Event{cfg.train.warmup_epochs + 1, EventKind::bootstrap});
    for (const auto& m : st.masks) CHECK(is_partition(m));
}

TEST_CASE("identical config and seed give byte-identical metrics") {
    const auto a = fixtures::scratch_dir("trainer_det_a"), b = fixtures::scratch_dir("trainer_det_b");
    for (const auto& dir : {a, b}) {
        auto cfg = fixtures::tiny_run_config(dir);
        train::Trainer t(cfg, train::load_or_generate(cfg));
        auto st = t.fresh_state();
        t.run(st);
    }
    const auto ma = fixtures::slurp(a / "metrics.jsonl");
    CHECK_FALSE(ma.empty());
    CHECK(ma == fixtures::slurp(b / "metrics.jsonl"));
}

TEST_CASE("resume from a mid-run checkpoint reproduces the uninterrupted run") {
    const auto full = fixtures::scratch_dir("trainer_full"), split = fixtures::scratch_dir("trainer_split");
    train::TrainState whole;
    {
        auto cfg = fixtures::tiny_run_config(full);
        train::Trainer t(cfg, train::load_or_generate(cfg));
        whole = t.fresh_state();
        t.run(whole);
    }
    auto cfg = fixtures::tiny_run_config(split);
    {
        train::Trainer t(cfg, train::load_or_generate(cfg));
        auto st = t.fresh_state();
        t.run(st, {.stop_after_epoch = 3});
        CHECK(st.epoch == 3);
    }
    train::Trainer t(cfg, train::load_or_generate(cfg));
    auto st = t.resume(split / "checkpoints" / "latest.ckpt");
    t.run(st);
    CHECK(st.events == whole.events);
    CHECK(st == whole);
    CHECK(fixtures::slurp(split / "metrics.jsonl") == fixtures::slurp(full / "metrics.jsonl"));
}

TEST_CASE("resume refuses a checkpoint from a different configuration") {
    const auto dir = fixtures::scratch_dir("trainer_cfg_mismatch");
    auto cfg = fixtures::tiny_run_config(dir);
    cfg.eval.probe = false;
    cfg.train.epochs = 2;
    {
        train::Trainer t(cfg, train::load_or_generate(cfg));
        auto st = t.fresh_state();
        t.run(st);
    }
    cfg.train.lr = 0.01;
    train::Trainer t(cfg, train::load_or_generate(cfg));
    CHECK_THROWS_AS(t.resume(dir / "checkpoints" / "latest.ckpt"), ConfigError);
}

TEST_CASE("fixed-mask modes never bootstrap") {
    const auto dir = fixtures::scratch_dir("trainer_fixed");
    for (const char* kind : {"random_crop", "grid", "ground_truth"}) {
        auto cfg = fixtures::tiny_run_config(dir);
        cfg.eval.probe = false;
        cfg.train.masks = kind;
        train::Trainer t(cfg, train::load_or_generate(cfg));
        auto st = t.fresh_state();
        t.run(st, {.write_outputs = false});
        for (const auto& e : st.events) CHECK(e.kind != EventKind::bootstrap);
        for (const auto& m : st.masks) CHECK(is_partition(m));
    }
}

TEST_CASE("median object count") {
    const std::vector<int> a = {3, 5, 7, 2};
    CHECK(train::median_object_count(a) == 3);
    const std::vector<int> b = {1, 1, 1};
    CHECK(train::median_object_count(b) == 2);
}
