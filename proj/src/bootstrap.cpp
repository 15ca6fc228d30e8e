#include "maskboot/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "maskboot/errors.hpp"

namespace maskboot::bootstrap {

void BootstrapConfig::validate() const {
    if (k_min < 2) throw ConfigError("bootstrap.k_min must be >= 2");
    if (k_min > k_max) throw ConfigError("bootstrap.k_min must be <= bootstrap.k_max");
    if (k_max > 256) throw ConfigError("bootstrap.k_max must be <= 256 (8-bit mask labels)");
    if (kmeans_iters < 1) throw ConfigError("bootstrap.kmeans_iters must be >= 1");
    if (batch_images < 1) throw ConfigError("bootstrap.batch_images must be >= 1");
    if (mini_batch_size < 1) throw ConfigError("bootstrap.mini_batch_size must be >= 1");
}

int sample_cluster_count(Rng& rng, int k_min, int k_max) {
    MASKBOOT_REQUIRE(k_min <= k_max, "sample_cluster_count: k_min > k_max");
    return static_cast<int>(rng.uniform_int(k_min, k_max));
}

VectorXd normalize_feature(const VectorXd& x, bool* replaced) {
    const double n = x.norm();
    if (n >= 1e-12) {
        if (replaced) *replaced = false;
        return x / n;
    }
    if (replaced) *replaced = true;
    const VectorXd y = x.array() + 1e-6;
    return y / y.norm();
}

ClusterFeatures flatten_normalized(std::span<const FeatureMap> maps) {
    ClusterFeatures out;
    if (maps.empty()) return out;
    const int d = maps[0].channels, cells = maps[0].cells();
    out.height = maps[0].height;
    out.width = maps[0].width;
    out.rows.resize(static_cast<Eigen::Index>(maps.size()) * cells, d);
    Eigen::Index row = 0;
    for (const auto& m : maps) {
        MASKBOOT_REQUIRE(m.channels == d && m.height == out.height && m.width == out.width,
                         "flatten_normalized: maps differ in shape");
        for (int c = 0; c < cells; ++c) {
            bool replaced = false;
            out.rows.row(row++) = normalize_feature(m.data.col(c), &replaced).transpose();
            out.replaced_rows += replaced ? 1 : 0;
        }
    }
    return out;
}

ClusterFeatures extract_cluster_features(const encoder::Encoder& enc, const nn::ParamSet& params,
                                         std::span<const FeatureMap> images, Stage stage) {
    std::vector<FeatureMap> maps;
    maps.reserve(images.size());
    for (const auto& img : images) maps.push_back(enc.forward(params, img, nullptr, stage)[stage]);
    return flatten_normalized(maps);
}

namespace {

int argmax_row(const MatrixXd& sims, Eigen::Index i) {
    int best = 0;
    for (Eigen::Index k = 1; k < sims.cols(); ++k)
        if (sims(i, k) > sims(i, best)) best = static_cast<int>(k);
    return best;
}

MatrixXd seed_plus_plus(const MatrixXd& rows, int k, Rng& rng) {
    const Eigen::Index n = rows.rows();
    MatrixXd protos(k, rows.cols());
    protos.row(0) = rows.row(rng.uniform_int(0, n - 1));
    VectorXd best = rows * protos.row(0).transpose();
    for (int j = 1; j < k; ++j) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) total += std::max(0.0, 1.0 - best(i));
        Eigen::Index pick = n - 1;
        if (total <= 0.0) {
            pick = rng.uniform_int(0, n - 1);
        } else {
            double u = rng.uniform() * total;
            for (Eigen::Index i = 0; i < n; ++i) {
                u -= std::max(0.0, 1.0 - best(i));
                if (u < 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        protos.row(j) = rows.row(pick);
        best = best.cwiseMax(rows * protos.row(j).transpose());
    }
    return protos;
}

}  // namespace

KMeansResult spherical_kmeans(const MatrixXd& rows, int k, Rng& rng, const KMeansOptions& opts) {
    const Eigen::Index n = rows.rows();
    if (k < 1) throw InfeasibleClusteringError("spherical_kmeans: K must be >= 1");
    if (k > n)
        throw InfeasibleClusteringError("spherical_kmeans: K=" + std::to_string(k) + " exceeds the row count " +
                                        std::to_string(n));
    MASKBOOT_REQUIRE(opts.max_iter >= 0, "spherical_kmeans: max_iter must be non-negative");

    KMeansResult res;
    res.bank.prototypes = seed_plus_plus(rows, k, rng);
    MatrixXd& protos = res.bank.prototypes;

    if (opts.mini_batch) {
        std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
        const Eigen::Index b = std::min<Eigen::Index>(opts.mini_batch_size, n);
        for (int it = 0; it < opts.max_iter; ++it) {
            for (Eigen::Index s = 0; s < b; ++s) {
                const auto i = rng.uniform_int(0, n - 1);
                const VectorXd sims = protos * rows.row(i).transpose();
                Eigen::Index c = 0;
                for (Eigen::Index j = 1; j < k; ++j)
                    if (sims(j) > sims(c)) c = j;
                counts[c] += 1.0;
                const double lr = 1.0 / counts[c];
                const VectorXd upd = (1.0 - lr) * protos.row(c).transpose() + lr * rows.row(i).transpose();
                if (upd.norm() > 1e-12) protos.row(c) = (upd / upd.norm()).transpose();
            }
            ++res.iterations;
        }
        const MatrixXd sims = rows * protos.transpose();
        res.assignment.resize(static_cast<std::size_t>(n));
        double obj = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            res.assignment[i] = argmax_row(sims, i);
            obj += sims(i, res.assignment[i]);
        }
        res.objective.push_back(obj / static_cast<double>(n));
        return res;
    }

    std::vector<int> assign(static_cast<std::size_t>(n), -1), prev;
    for (int it = 0;; ++it) {
        const MatrixXd sims = rows * protos.transpose();
        double obj = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            assign[i] = argmax_row(sims, i);
            obj += sims(i, assign[i]);
        }
        res.objective.push_back(obj / static_cast<double>(n));
        if (assign == prev) {
            res.converged = true;
            break;
        }
        if (it == opts.max_iter) break;

        MatrixXd sums = MatrixXd::Zero(k, rows.cols());
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[i]) += rows.row(i);
            ++counts[assign[i]];
        }
        std::vector<char> used(static_cast<std::size_t>(n), 0);
        for (int j = 0; j < k; ++j) {
            if (counts[j] > 0) {
                const double norm = sums.row(j).norm();
                if (norm > 1e-12) protos.row(j) = sums.row(j) / norm;
                continue;
            }
            Eigen::Index far = -1;
            for (Eigen::Index i = 0; i < n; ++i)
                if (!used[i] && (far < 0 || sims(i, assign[i]) < sims(far, assign[far]))) far = i;
            used[far] = 1;
            protos.row(j) = rows.row(far);
            ++res.reseeds;
        }
        ++res.iterations;
        prev = assign;
    }
    res.assignment = std::move(assign);
    return res;
}

LabelGrid assign_labels(const FeatureMap& features, const PrototypeBank& bank) {
    MASKBOOT_REQUIRE(features.channels == bank.dim(), "assign_labels: feature/prototype dimension mismatch");
    MASKBOOT_REQUIRE(bank.k() >= 1 && bank.k() <= 256, "assign_labels: K must lie in [1, 256]");
    LabelGrid out(features.height, features.width);
    for (int cell = 0; cell < features.cells(); ++cell) {
        const VectorXd y = normalize_feature(features.data.col(cell));
        int best = 0;
        double best_d = (bank.prototypes.row(0).transpose() - y).squaredNorm();
        for (int j = 1; j < bank.k(); ++j) {
            const double d = (bank.prototypes.row(j).transpose() - y).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        out.values[cell] = static_cast<std::uint8_t>(best);
    }
    return out;
}

LabelGrid assign_labels_cosine(const FeatureMap& features, const PrototypeBank& bank) {
    MASKBOOT_REQUIRE(features.channels == bank.dim(), "assign_labels_cosine: feature/prototype dimension mismatch");
    LabelGrid out(features.height, features.width);
    for (int cell = 0; cell < features.cells(); ++cell) {
        const VectorXd sims = bank.prototypes * normalize_feature(features.data.col(cell));
        int best = 0;
        for (int j = 1; j < bank.k(); ++j)
            if (sims(j) > sims(best)) best = j;
        out.values[cell] = static_cast<std::uint8_t>(best);
    }
    return out;
}

LabelGrid upsample_label_grid(const LabelGrid& labels, int height, int width) {
    MASKBOOT_REQUIRE(height >= labels.height && width >= labels.width, "upsample_labels: target smaller than source");
    LabelGrid out(height, width);
    auto nearest = [](int i, int src, int dst) {
        const double coord = (i + 0.5) * src / dst;
        return std::clamp(static_cast<int>(std::ceil(coord)) - 1, 0, src - 1);
    };
    for (int r = 0; r < height; ++r) {
        const int sr = nearest(r, labels.height, height);
        for (int c = 0; c < width; ++c) out(r, c) = labels(sr, nearest(c, labels.width, width));
    }
    return out;
}

MaskSet upsample_labels(const LabelGrid& labels, int height, int width) {
    return MaskSet(upsample_label_grid(labels, height, width));
}

BootstrapResult bootstrap_masks(const encoder::Encoder& enc, const nn::ParamSet& params,
                                std::span<const FeatureMap> images, const BootstrapConfig& cfg, Rng& rng) {
    return bootstrap_masks(
        [&](const FeatureMap& img) { return enc.forward(params, img, nullptr, cfg.stage)[cfg.stage]; }, images, cfg,
        rng);
}

BootstrapResult bootstrap_masks(const FeatureExtractor& extract, std::span<const FeatureMap> images,
                                const BootstrapConfig& cfg, Rng& rng) {
    cfg.validate();
    BootstrapResult out;
    out.masks.reserve(images.size());
    const auto total = static_cast<int>(images.size());
    for (int first = 0; first < total; first += cfg.batch_images) {
        const int count = std::min(cfg.batch_images, total - first);
        const auto batch = images.subspan(static_cast<std::size_t>(first), static_cast<std::size_t>(count));
        std::vector<FeatureMap> maps;
        maps.reserve(batch.size());
        for (const auto& img : batch) maps.push_back(extract(img));
        const ClusterFeatures feats = flatten_normalized(maps);

        BatchProvenance prov;
        prov.first_scene = first;
        prov.scene_count = count;
        prov.replaced_rows = feats.replaced_rows;
        const int rows = static_cast<int>(feats.rows.rows());
        int k = sample_cluster_count(rng, cfg.k_min, cfg.k_max);
        if (k > rows) {
            if (cfg.k_min > rows)
                throw InfeasibleClusteringError("bootstrap: k_min exceeds the " + std::to_string(rows) +
                                                " feature rows of a clustering batch");
            k = sample_cluster_count(rng, cfg.k_min, std::min(cfg.k_max, rows));
            prov.k_resampled = true;
        }
        prov.k = k;
        KMeansResult km = spherical_kmeans(feats.rows, k, rng, {cfg.kmeans_iters, cfg.mini_batch, cfg.mini_batch_size});
        km.bank.stage = cfg.stage;
        prov.objective = km.objective.back();
        prov.iterations = km.iterations;
        for (std::size_t i = 0; i < maps.size(); ++i) {
            const LabelGrid small = assign_labels(maps[i], km.bank);
            out.masks.push_back(upsample_labels(small, batch[i].height, batch[i].width));
        }
        out.batches.push_back(prov);
    }
    return out;
}

}  // namespace maskboot::bootstrap
