#include "maskboot/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "maskboot/errors.hpp"
#include "maskboot/png_io.hpp"
#include "maskboot/rng.hpp"

namespace maskboot::scenegen {

using nlohmann::json;

namespace {

constexpr int kShapeKinds = 3;

constexpr std::array<std::array<double, 3>, 8> kFamilies = {{
    {0.82, 0.24, 0.20},  // red
    {0.26, 0.70, 0.30},  // green
    {0.22, 0.34, 0.84},  // blue
    {0.88, 0.78, 0.26},  // yellow
    {0.62, 0.30, 0.74},  // purple
    {0.24, 0.74, 0.76},  // cyan
    {0.92, 0.52, 0.18},  // orange
    {0.90, 0.50, 0.66},  // pink
}};

double quarter(double v) { return std::round(v * 4.0) / 4.0; }

std::uint8_t to_byte(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

}  // namespace

const char* shape_name(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::rectangle: return "rectangle";
        case ShapeKind::ellipse: return "ellipse";
        case ShapeKind::triangle: return "triangle";
    }
    return "?";
}

void SceneConfig::validate() const {
    if (image_size < 32) throw ConfigError("scenegen.image_size must be >= 32");
    if (image_size > 4096) throw ConfigError("scenegen.image_size must be <= 4096");
    if (num_classes < 2) throw ConfigError("scenegen.num_classes must be >= 2 (non-background vocabulary)");
    if (num_classes > kShapeKinds * static_cast<int>(kFamilies.size()))
        throw ConfigError("scenegen.num_classes exceeds the shape vocabulary (max 24)");
    if (min_objects < 1) throw ConfigError("scenegen.min_objects must be >= 1");
    if (max_objects < min_objects) throw ConfigError("scenegen.max_objects must be >= scenegen.min_objects");
    if (max_objects > num_classes) throw ConfigError("scenegen.max_objects must be <= scenegen.num_classes");
    if (min_half_extent < 2) throw ConfigError("scenegen.min_half_extent must be >= 2");
    if (max_half_extent < min_half_extent)
        throw ConfigError("scenegen.max_half_extent must be >= scenegen.min_half_extent");
    if (noise_sigma < 0 || background_texture < 0 || color_jitter < 0)
        throw ConfigError("scenegen noise parameters must be non-negative");
}

ClassInfo class_info(int class_id) {
    MASKBOOT_REQUIRE(class_id >= 1, "class_info: class 0 is background");
    return {class_id, static_cast<ShapeKind>((class_id - 1) % kShapeKinds), (class_id - 1) / kShapeKinds};
}

std::array<double, 3> family_color(int color_family) {
    return kFamilies.at(static_cast<std::size_t>(color_family) % kFamilies.size());
}

bool covers(const ObjectSpec& o, int r, int c) {
    const double px = c + 0.5;
    const double py = r + 0.5;
    switch (o.shape) {
        case ShapeKind::rectangle:
            return std::abs(px - o.cx) <= o.rx && std::abs(py - o.cy) <= o.ry;
        case ShapeKind::ellipse: {
            const double dx = (px - o.cx) / o.rx;
            const double dy = (py - o.cy) / o.ry;
            return dx * dx + dy * dy <= 1.0;
        }
        case ShapeKind::triangle: {
            int pos = 0, neg = 0;
            for (int k = 0; k < 3; ++k) {
                const auto& a = o.vertices[k];
                const auto& b = o.vertices[(k + 1) % 3];
                const double e = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
                if (e > 0) ++pos;
                if (e < 0) ++neg;
            }
            return pos == 0 || neg == 0;
        }
    }
    return false;
}

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
    cfg.validate();
    Rng rng(seed);
    const int size = cfg.image_size;

    // Low-frequency background: bilinear field over a 5×5 lattice of offsets.
    std::array<double, 3> bg_base{};
    const double luminance = rng.uniform(0.30, 0.60);
    for (auto& v : bg_base) v = luminance + rng.uniform(-0.05, 0.05);
    constexpr int kLattice = 5;
    std::vector<std::array<double, 3>> lattice(kLattice * kLattice);
    for (auto& node : lattice)
        for (auto& v : node) v = rng.uniform(-cfg.background_texture, cfg.background_texture);

    const int count = static_cast<int>(rng.uniform_int(cfg.min_objects, cfg.max_objects));
    std::vector<int> classes(cfg.num_classes);
    for (int i = 0; i < cfg.num_classes; ++i) classes[i] = i + 1;
    for (int i = 0; i < count; ++i) {
        const auto j = rng.uniform_int(i, cfg.num_classes - 1);
        std::swap(classes[i], classes[static_cast<std::size_t>(j)]);
    }

    Scene scene;
    scene.seed = seed;
    for (int i = 0; i < count; ++i) {
        ObjectSpec o;
        o.class_id = classes[i];
        const ClassInfo info = class_info(o.class_id);
        o.shape = info.shape;
        o.cx = static_cast<double>(rng.uniform_int(0, size - 1)) + 0.5;
        o.cy = static_cast<double>(rng.uniform_int(0, size - 1)) + 0.5;
        o.rx = static_cast<double>(rng.uniform_int(cfg.min_half_extent, cfg.max_half_extent));
        o.ry = static_cast<double>(rng.uniform_int(cfg.min_half_extent, cfg.max_half_extent));
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        if (o.shape == ShapeKind::triangle) {
            for (int k = 0; k < 3; ++k) {
                const double a = angle + 2.0 * std::numbers::pi * k / 3.0;
                o.vertices[k] = {quarter(o.cx + o.rx * std::cos(a)), quarter(o.cy + o.ry * std::sin(a))};
            }
        }
        const auto base = family_color(info.color_family);
        for (int ch = 0; ch < 3; ++ch)
            o.color[ch] = std::clamp(base[ch] + rng.uniform(-cfg.color_jitter, cfg.color_jitter), 0.0, 1.0);
        scene.objects.push_back(o);
    }

    std::vector<int> owner;
    auto rasterize = [&] {
        scene.gt_mask = LabelGrid(size, size, 0);
        owner.assign(static_cast<std::size_t>(size) * size, -1);
        for (std::size_t i = 0; i < scene.objects.size(); ++i)
            for (int r = 0; r < size; ++r)
                for (int c = 0; c < size; ++c)
                    if (covers(scene.objects[i], r, c)) {
                        owner[static_cast<std::size_t>(r) * size + c] = static_cast<int>(i);
                        scene.gt_mask(r, c) = static_cast<std::uint8_t>(scene.objects[i].class_id);
                    }
        return std::find(owner.begin(), owner.end(), -1) != owner.end();
    };
    // Background must stay visible: drop the last-drawn objects, then shrink a lone survivor.
    while (!rasterize()) {
        if (scene.objects.size() > 1) {
            scene.objects.pop_back();
        } else {
            auto& o = scene.objects.front();
            o.rx = std::max(1.0, o.rx - 1.0);
            o.ry = std::max(1.0, o.ry - 1.0);
            for (auto& v : o.vertices) v = {quarter(o.cx + (v[0] - o.cx) * 0.9), quarter(o.cy + (v[1] - o.cy) * 0.9)};
        }
    }

    scene.image = RgbImage(size, size);
    const double cell = static_cast<double>(size) / (kLattice - 1);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const int who = owner[static_cast<std::size_t>(r) * size + c];
            std::array<double, 3> color{};
            if (who >= 0) {
                color = scene.objects[who].color;
            } else {
                const double fy = std::min((r + 0.5) / cell, kLattice - 1.000001);
                const double fx = std::min((c + 0.5) / cell, kLattice - 1.000001);
                const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
                const double wy = fy - y0, wx = fx - x0;
                for (int ch = 0; ch < 3; ++ch) {
                    const double v00 = lattice[y0 * kLattice + x0][ch], v01 = lattice[y0 * kLattice + x0 + 1][ch];
                    const double v10 = lattice[(y0 + 1) * kLattice + x0][ch];
                    const double v11 = lattice[(y0 + 1) * kLattice + x0 + 1][ch];
                    color[ch] = bg_base[ch] + (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
                }
            }
            for (int ch = 0; ch < 3; ++ch) scene.image.at(r, c, ch) = to_byte(color[ch] + rng.normal(0.0, cfg.noise_sigma));
        }
    }

    std::array<bool, 256> present{};
    for (auto v : scene.gt_mask.values) present[v] = true;
    scene.object_count = static_cast<int>(std::count(present.begin() + 1, present.end(), true));
    return scene;
}

std::vector<std::uint64_t> scene_seeds(std::uint64_t dataset_seed, int count) {
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) seeds[i] = derive_seed(dataset_seed, static_cast<std::uint64_t>(i));
    return seeds;
}

std::vector<Scene> generate_dataset(std::uint64_t dataset_seed, int count, const SceneConfig& cfg) {
    cfg.validate();
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(count));
    for (auto s : scene_seeds(dataset_seed, count)) scenes.push_back(generate_scene(s, cfg));
    return scenes;
}

std::string scene_file_id(int index) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << index;
    return os.str();
}

namespace {

json config_to_json(const SceneConfig& c) {
    return {{"image_size", c.image_size},           {"min_objects", c.min_objects},
            {"max_objects", c.max_objects},         {"num_classes", c.num_classes},
            {"noise_sigma", c.noise_sigma},         {"background_texture", c.background_texture},
            {"color_jitter", c.color_jitter},       {"min_half_extent", c.min_half_extent},
            {"max_half_extent", c.max_half_extent}};
}

SceneConfig config_from_json(const json& j) {
    SceneConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.min_objects = j.at("min_objects").get<int>();
    c.max_objects = j.at("max_objects").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.background_texture = j.at("background_texture").get<double>();
    c.color_jitter = j.at("color_jitter").get<double>();
    c.min_half_extent = j.at("min_half_extent").get<int>();
    c.max_half_extent = j.at("max_half_extent").get<int>();
    return c;
}

}  // namespace

DatasetManifest write_dataset(std::span<const Scene> scenes, const SceneConfig& cfg,
                              const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    fs::create_directories(dir / "masks", ec);
    if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

    DatasetManifest m;
    m.scene_count = static_cast<int>(scenes.size());
    m.image_size = cfg.image_size;
    m.config = cfg;
    for (int k = 1; k <= cfg.num_classes; ++k) m.shape_vocabulary.push_back(class_info(k));
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto id = scene_file_id(static_cast<int>(i));
        const auto img_path = dir / "images" / (id + ".png");
        const auto mask_path = dir / "masks" / (id + ".png");
        write_png(img_path, scenes[i].image);
        write_png(mask_path, scenes[i].gt_mask);
        m.seeds.push_back(scenes[i].seed);
        m.image_crc.push_back(crc32_of(read_file_bytes(img_path)));
        m.mask_crc.push_back(crc32_of(read_file_bytes(mask_path)));
    }

    json vocab = json::array();
    for (const auto& v : m.shape_vocabulary)
        vocab.push_back({{"class_id", v.class_id}, {"shape", shape_name(v.shape)}, {"color_family", v.color_family}});
    json doc = {{"format_version", m.format_version},
                {"scene_count", m.scene_count},
                {"image_size", m.image_size},
                {"scene_config", config_to_json(cfg)},
                {"shape_vocabulary", vocab},
                {"seeds", m.seeds},
                {"image_crc32", m.image_crc},
                {"mask_crc32", m.mask_crc}};
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir.string());
    out << doc.dump(2) << '\n';
    return m;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("missing manifest.json in " + dir.string());
    DatasetManifest m;
    try {
        const json doc = json::parse(in);
        m.format_version = doc.at("format_version").get<int>();
        if (m.format_version != kDatasetFormatVersion)
            throw FormatError("dataset format version " + std::to_string(m.format_version) + " is not supported (expected " +
                              std::to_string(kDatasetFormatVersion) + ")");
        m.scene_count = doc.at("scene_count").get<int>();
        m.image_size = doc.at("image_size").get<int>();
        m.config = config_from_json(doc.at("scene_config"));
        for (const auto& v : doc.at("shape_vocabulary")) m.shape_vocabulary.push_back(class_info(v.at("class_id").get<int>()));
        m.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
        m.image_crc = doc.at("image_crc32").get<std::vector<std::uint32_t>>();
        m.mask_crc = doc.at("mask_crc32").get<std::vector<std::uint32_t>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed manifest.json: ") + e.what());
    }
    const auto n = static_cast<std::size_t>(m.scene_count);
    if (m.scene_count < 0 || m.seeds.size() != n || m.image_crc.size() != n || m.mask_crc.size() != n)
        throw FormatError("manifest.json: scene_count does not match per-scene tables");
    return m;
}

std::vector<Scene> load_dataset(const std::filesystem::path& dir, DatasetManifest* manifest) {
    const DatasetManifest m = read_manifest(dir);
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(m.scene_count));
    for (int i = 0; i < m.scene_count; ++i) {
        const auto id = scene_file_id(i);
        const auto img_path = dir / "images" / (id + ".png");
        const auto mask_path = dir / "masks" / (id + ".png");
        if (crc32_of(read_file_bytes(img_path)) != m.image_crc[i])
            throw FormatError("checksum mismatch for " + img_path.string());
        if (crc32_of(read_file_bytes(mask_path)) != m.mask_crc[i])
            throw FormatError("checksum mismatch for " + mask_path.string());
        Scene s;
        s.image = read_png_rgb(img_path);
        s.gt_mask = read_png_gray(mask_path);
        if (s.image.height != m.image_size || s.image.width != m.image_size || s.gt_mask.height != m.image_size ||
            s.gt_mask.width != m.image_size)
            throw FormatError("image size mismatch for scene " + id);
        s.seed = m.seeds[i];
        std::array<bool, 256> present{};
        for (auto v : s.gt_mask.values) present[v] = true;
        s.object_count = static_cast<int>(std::count(present.begin() + 1, present.end(), true));
        scenes.push_back(std::move(s));
    }
    if (manifest) *manifest = m;
    return scenes;
}

}  // namespace maskboot::scenegen
