#include "maskboot/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>

#include "maskboot/errors.hpp"
#include "maskboot/plot.hpp"
#include "maskboot/png_io.hpp"

namespace maskboot::eval {

std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows()), m = static_cast<int>(cost.cols());
    MASKBOOT_REQUIRE(n <= m, "solve_assignment: more rows than columns");
    const double inf = std::numeric_limits<double>::infinity();
    // Shortest augmenting path with row/column potentials, 1-based.
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> out(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= m; ++j)
        if (p[j] != 0) out[p[j] - 1] = j - 1;
    return out;
}

Matching hungarian_match(const MaskSet& pred, const MaskSet& gt) {
    MASKBOOT_REQUIRE(pred.height() == gt.height() && pred.width() == gt.width(),
                     "hungarian_match: prediction and ground truth differ in size");
    Matching out;
    out.gt_labels = gt.present_labels();
    const auto pred_labels = pred.present_labels();
    const int g = static_cast<int>(out.gt_labels.size()), q = static_cast<int>(pred_labels.size());
    out.matched_pred.assign(static_cast<std::size_t>(g), -1);
    out.iou.assign(static_cast<std::size_t>(g), 0.0);
    if (g == 0) return out;

    std::array<int, 256> gi{}, pi{};
    for (int i = 0; i < g; ++i) gi[out.gt_labels[i]] = i;
    for (int j = 0; j < q; ++j) pi[pred_labels[j]] = j;
    Eigen::MatrixXd inter = Eigen::MatrixXd::Zero(g, q);
    std::vector<double> gt_area(static_cast<std::size_t>(g), 0.0), pred_area(static_cast<std::size_t>(q), 0.0);
    const auto& gl = gt.labels().values;
    const auto& pl = pred.labels().values;
    for (std::size_t k = 0; k < gl.size(); ++k) {
        const int a = gi[gl[k]], b = pi[pl[k]];
        inter(a, b) += 1.0;
        gt_area[a] += 1.0;
        pred_area[b] += 1.0;
    }
    // Integer intersections dominate; the scaled IoU term only orders matchings
    // that tie on total intersection, so the result is label-permutation invariant.
    Eigen::MatrixXd score = inter;
    const double tie_scale = 1.0 / (std::min(g, q) + 1.0);
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < q; ++j) score(i, j) += tie_scale * inter(i, j) / (gt_area[i] + pred_area[j] - inter(i, j));
    std::vector<int> match(static_cast<std::size_t>(g), -1);
    if (g <= q) {
        match = solve_assignment(-score);
    } else {
        const auto cols = solve_assignment(-score.transpose());
        for (int j = 0; j < q; ++j) match[cols[j]] = j;
    }
    double total = 0.0;
    for (int i = 0; i < g; ++i) {
        if (match[i] < 0) continue;
        const int j = match[i];
        out.matched_pred[i] = pred_labels[j];
        const double in = inter(i, j);
        out.iou[i] = in / (gt_area[i] + pred_area[j] - in);
        total += out.iou[i];
    }
    out.miou = total / g;
    return out;
}

double hungarian_miou(const MaskSet& pred, const MaskSet& gt) { return hungarian_match(pred, gt).miou; }

MaskQualityReport mask_quality(std::span<const MaskSet> pred, std::span<const MaskSet> gt, int epoch) {
    MASKBOOT_REQUIRE(pred.size() == gt.size(), "mask_quality: scene count mismatch");
    MaskQualityReport r;
    r.epoch = epoch;
    if (pred.empty()) return r;
    r.min_labels = std::numeric_limits<int>::max();
    double sum = 0.0, labels = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        r.per_scene.push_back(hungarian_miou(pred[i], gt[i]));
        sum += r.per_scene.back();
        const int n = static_cast<int>(pred[i].present_labels().size());
        labels += n;
        r.min_labels = std::min(r.min_labels, n);
        r.max_labels = std::max(r.max_labels, n);
    }
    r.mean_miou = sum / static_cast<double>(pred.size());
    r.mean_labels = labels / static_cast<double>(pred.size());
    return r;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
    MASKBOOT_REQUIRE(a.size() == b.size(), "adjusted_rand_index: length mismatch");
    const double n = static_cast<double>(a.size());
    if (a.size() < 2) return 1.0;
    std::map<std::pair<int, int>, double> table;
    std::map<int, double> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        table[{a[i], b[i]}] += 1.0;
        ra[a[i]] += 1.0;
        rb[b[i]] += 1.0;
    }
    auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
    double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& [k, v] : table) sum_ij += c2(v);
    for (const auto& [k, v] : ra) sum_a += c2(v);
    for (const auto& [k, v] : rb) sum_b += c2(v);
    const double expected = sum_a * sum_b / c2(n);
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0;
    return (sum_ij - expected) / (max_index - expected);
}

const char* mask_kind_name(MaskKind k) {
    switch (k) {
        case MaskKind::bootstrap: return "bootstrap";
        case MaskKind::random_crop: return "random_crop";
        case MaskKind::grid: return "grid";
        case MaskKind::ground_truth: return "ground_truth";
    }
    return "?";
}

MaskKind parse_mask_kind(const std::string& name) {
    for (auto k : {MaskKind::bootstrap, MaskKind::random_crop, MaskKind::grid, MaskKind::ground_truth})
        if (name == mask_kind_name(k)) return k;
    throw ConfigError("unknown mask kind '" + name + "' (expected bootstrap, random_crop, grid or ground_truth)");
}

MaskSet grid_masks(int height, int width, int cells) {
    MASKBOOT_REQUIRE(cells >= 1 && cells <= 16 && cells <= height && cells <= width, "grid_masks: bad cell count");
    LabelGrid g(height, width);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) g(r, c) = static_cast<std::uint8_t>((r * cells / height) * cells + c * cells / width);
    return MaskSet(std::move(g));
}

MaskSet baseline_masks(MaskKind kind, const MaskSet& gt) {
    switch (kind) {
        case MaskKind::random_crop: return MaskSet(LabelGrid(gt.height(), gt.width(), 0));
        case MaskKind::grid: return grid_masks(gt.height(), gt.width(), 5);
        case MaskKind::ground_truth: return gt;
        case MaskKind::bootstrap: break;
    }
    throw ContractError("baseline_masks: bootstrap masks are produced by the bootstrap module");
}

void ProbeConfig::validate() const {
    if (train_scenes < 1 || test_scenes < 1) throw ConfigError("eval.probe_train_scenes and eval.probe_test_scenes must be >= 1");
    if (pixels_per_scene < 1) throw ConfigError("eval.probe_pixels_per_scene must be >= 1");
    if (steps < 0) throw ConfigError("eval.probe_steps must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("eval.probe_lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("eval.probe_weight_decay must be non-negative");
}

ProbeData make_probe_data(std::uint64_t seed, const scenegen::SceneConfig& scene_cfg, const ProbeConfig& cfg) {
    cfg.validate();
    ProbeData d;
    d.num_classes = scene_cfg.num_classes + 1;
    for (auto& s : scenegen::generate_dataset(derive_seed(seed, "probe.train"), cfg.train_scenes, scene_cfg)) {
        d.train_images.push_back(to_feature_map(s.image));
        d.train_labels.push_back(std::move(s.gt_mask));
    }
    for (auto& s : scenegen::generate_dataset(derive_seed(seed, "probe.test"), cfg.test_scenes, scene_cfg)) {
        d.test_images.push_back(to_feature_map(s.image));
        d.test_labels.push_back(std::move(s.gt_mask));
    }
    return d;
}

namespace {

Eigen::MatrixXd pixel_features(const encoder::Encoder& enc, const nn::ParamSet& params, const FeatureMap& image,
                               encoder::Stage stage) {
    const auto feats = enc.forward(params, image, nullptr, stage);
    return nn::bilinear_resize(feats[stage], image.height, image.width).data;
}

}  // namespace

ProbeReport linear_probe(const encoder::Encoder& enc, const nn::ParamSet& params, const ProbeData& data,
                         const ProbeConfig& cfg, Rng& rng) {
    cfg.validate();
    MASKBOOT_REQUIRE(!data.train_images.empty() && !data.test_images.empty(), "linear_probe: empty probe data");
    const int c = data.num_classes;

    std::vector<Eigen::VectorXd> cols;
    std::vector<int> ys;
    for (std::size_t s = 0; s < data.train_images.size(); ++s) {
        const Eigen::MatrixXd f = pixel_features(enc, params, data.train_images[s], cfg.stage);
        for (int k = 0; k < cfg.pixels_per_scene; ++k) {
            const auto idx = rng.uniform_int(0, f.cols() - 1);
            cols.push_back(f.col(idx));
            ys.push_back(data.train_labels[s].values[static_cast<std::size_t>(idx)]);
        }
    }
    const Eigen::Index d = cols.front().size(), n = static_cast<Eigen::Index>(cols.size());
    Eigen::MatrixXd x(d, n);
    for (Eigen::Index i = 0; i < n; ++i) x.col(i) = cols[i];
    const Eigen::VectorXd mean = x.rowwise().mean();
    const Eigen::VectorXd stdev =
        ((x.colwise() - mean).array().square().rowwise().mean()).sqrt().max(1e-6).matrix();
    auto standardize = [&](Eigen::MatrixXd& m) {
        m = (m.colwise() - mean).array().colwise() / stdev.array();
    };
    standardize(x);
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(c, n);
    for (Eigen::Index i = 0; i < n; ++i) onehot(ys[i], i) = 1.0;

    Eigen::MatrixXd w(c, d);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.01 * rng.normal();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(c);
    Eigen::MatrixXd mw = Eigen::MatrixXd::Zero(c, d), vw = mw;
    Eigen::VectorXd mb = Eigen::VectorXd::Zero(c), vb = mb;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ProbeReport rep;
    for (int t = 1; t <= cfg.steps; ++t) {
        Eigen::MatrixXd logits = (w * x).colwise() + b;
        const Eigen::RowVectorXd mx = logits.colwise().maxCoeff();
        Eigen::MatrixXd e = (logits.rowwise() - mx).array().exp();
        const Eigen::RowVectorXd z = e.colwise().sum();
        Eigen::MatrixXd prob = e.array().rowwise() / z.array();
        rep.train_loss = -((prob.array() * onehot.array()).colwise().sum().log()).mean() +
                         0.5 * cfg.weight_decay * w.squaredNorm();
        const Eigen::MatrixXd g = (prob - onehot) / static_cast<double>(n);
        const Eigen::MatrixXd gw = g * x.transpose() + cfg.weight_decay * w;
        const Eigen::VectorXd gb = g.rowwise().sum();
        mw = b1 * mw + (1 - b1) * gw;
        vw = b2 * vw + (1 - b2) * gw.cwiseProduct(gw);
        mb = b1 * mb + (1 - b1) * gb;
        vb = b2 * vb + (1 - b2) * gb.cwiseProduct(gb);
        const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
        w.array() -= cfg.lr * (mw.array() / c1) / ((vw.array() / c2).sqrt() + eps);
        b.array() -= cfg.lr * (mb.array() / c1) / ((vb.array() / c2).sqrt() + eps);
    }

    Eigen::MatrixXd confusion = Eigen::MatrixXd::Zero(c, c);  // gt × pred
    for (std::size_t s = 0; s < data.test_images.size(); ++s) {
        Eigen::MatrixXd f = pixel_features(enc, params, data.test_images[s], cfg.stage);
        standardize(f);
        const Eigen::MatrixXd logits = (w * f).colwise() + b;
        for (Eigen::Index i = 0; i < logits.cols(); ++i) {
            Eigen::Index best = 0;
            logits.col(i).maxCoeff(&best);
            confusion(data.test_labels[s].values[static_cast<std::size_t>(i)], best) += 1.0;
        }
    }
    rep.accuracy = confusion.trace() / confusion.sum();
    double iou_sum = 0.0;
    int classes = 0;
    for (int k = 0; k < c; ++k) {
        const double gt = confusion.row(k).sum();
        if (gt == 0.0) continue;
        const double tp = confusion(k, k);
        iou_sum += tp / (gt + confusion.col(k).sum() - tp);
        ++classes;
    }
    rep.miou = classes ? iou_sum / classes : 0.0;
    return rep;
}

namespace {

struct EvalRow {
    std::string run;
    int epoch = 0;
    double mask_miou = std::nan(""), probe_accuracy = std::nan(""), probe_miou = std::nan("");
};
struct BootRow {
    std::string run;
    int epoch = 0;
    double mask_miou = std::nan("");
    int k_min = 0, k_max = 0;
    double k_mean = 0.0;
};

double number_or_nan(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nan("");
    if (!j[key].is_number()) throw std::invalid_argument(std::string("field '") + key + "' is not a number");
    return j[key].get<double>();
}

std::string csv_num(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

void read_run(const std::filesystem::path& file, const std::string& run, std::vector<EvalRow>& evals,
              std::vector<BootRow>& boots) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot read " + file.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
                throw std::invalid_argument("record without a string 'kind'");
            const auto kind = j["kind"].get<std::string>();
            if (kind != "eval" && kind != "bootstrap") continue;
            if (!j.contains("epoch") || !j["epoch"].is_number_integer())
                throw std::invalid_argument("record without an integer 'epoch'");
            if (kind == "eval") {
                evals.push_back({run, j["epoch"].get<int>(), number_or_nan(j, "mask_miou"),
                                 number_or_nan(j, "probe_accuracy"), number_or_nan(j, "probe_miou")});
            } else {
                BootRow r{run, j["epoch"].get<int>(), number_or_nan(j, "mask_miou")};
                if (j.contains("k") && j["k"].is_array() && !j["k"].empty()) {
                    const auto ks = j["k"].get<std::vector<int>>();
                    r.k_min = *std::min_element(ks.begin(), ks.end());
                    r.k_max = *std::max_element(ks.begin(), ks.end());
                    double sum = 0.0;
                    for (int k : ks) sum += k;
                    r.k_mean = sum / static_cast<double>(ks.size());
                }
                boots.push_back(r);
            }
        } catch (const std::exception& e) {
            throw FormatError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

plot::LineChart chart_of(const std::map<std::string, std::vector<std::pair<int, double>>>& by_run) {
    plot::LineChart chart;
    for (const auto& [run, pts] : by_run) {
        plot::Series s;
        s.name = run;
        for (const auto& [e, v] : pts) {
            if (std::isnan(v)) continue;
            s.x.push_back(e);
            s.y.push_back(v);
        }
        if (!s.x.empty()) chart.series.push_back(std::move(s));
    }
    chart.x_ticks = plot::union_ticks(chart.series);
    return chart;
}

}  // namespace

ReportSummary emit_report(const std::filesystem::path& runs_dir, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(runs_dir)) throw IoError("runs directory not found: " + runs_dir.string());
    std::vector<std::pair<std::string, fs::path>> runs;
    if (fs::exists(runs_dir / "metrics.jsonl")) {
        runs.emplace_back(fs::absolute(runs_dir).lexically_normal().filename().string(), runs_dir / "metrics.jsonl");
    } else {
        for (const auto& entry : fs::directory_iterator(runs_dir))
            if (entry.is_directory() && fs::exists(entry.path() / "metrics.jsonl"))
                runs.emplace_back(entry.path().filename().string(), entry.path() / "metrics.jsonl");
        std::sort(runs.begin(), runs.end());
    }
    ReportSummary sum;
    sum.runs = static_cast<int>(runs.size());
    if (runs.empty()) sum.warnings.push_back("no metrics.jsonl found under " + runs_dir.string());

    std::vector<EvalRow> evals;
    std::vector<BootRow> boots;
    for (const auto& [name, file] : runs) read_run(file, name, evals, boots);
    sum.eval_rows = static_cast<int>(evals.size());
    sum.bootstrap_rows = static_cast<int>(boots.size());

    fs::create_directories(out_dir);
    {
        std::ofstream f(out_dir / "eval.csv");
        f << "run,epoch,mask_miou,probe_accuracy,probe_miou\n";
        for (const auto& r : evals)
            f << r.run << ',' << r.epoch << ',' << csv_num(r.mask_miou) << ',' << csv_num(r.probe_accuracy) << ','
              << csv_num(r.probe_miou) << '\n';
    }
    {
        std::ofstream f(out_dir / "bootstrap.csv");
        f << "run,epoch,mask_miou,k_min,k_max,k_mean\n";
        for (const auto& r : boots)
            f << r.run << ',' << r.epoch << ',' << csv_num(r.mask_miou) << ',' << r.k_min << ',' << r.k_max << ','
              << csv_num(r.k_mean) << '\n';
    }
    if (evals.empty()) sum.warnings.push_back("no evaluation records; plots skipped");

    std::map<std::string, std::vector<std::pair<int, double>>> probe, masks;
    for (const auto& r : evals) probe[r.run].emplace_back(r.epoch, r.probe_miou);
    for (const auto& r : boots) masks[r.run].emplace_back(r.epoch, r.mask_miou);
    const auto probe_chart = chart_of(probe);
    if (!probe_chart.series.empty()) {
        write_png(out_dir / "probe_miou.png", plot::render(probe_chart));
        sum.probe_plot_x = probe_chart.x_ticks;
        ++sum.plots;
    }
    const auto mask_chart = chart_of(masks);
    if (!mask_chart.series.empty()) {
        write_png(out_dir / "mask_miou.png", plot::render(mask_chart));
        sum.mask_plot_x = mask_chart.x_ticks;
        ++sum.plots;
    }
    return sum;
}

}  // namespace maskboot::eval
