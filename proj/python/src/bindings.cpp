#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "maskboot/bootstrap.hpp"
#include "maskboot/config.hpp"
#include "maskboot/errors.hpp"
#include "maskboot/eval.hpp"
#include "maskboot/maskcontrast.hpp"
#include "maskboot/scenegen.hpp"
#include "maskboot/trainer.hpp"
#include "maskboot/vmf.hpp"

namespace py = pybind11;
using namespace maskboot;
using nlohmann::json;

namespace {

using LabelArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

LabelGrid to_grid(const LabelArray& a) {
    if (a.ndim() != 2) throw py::value_error("expected a 2-D label array");
    LabelGrid g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), g.values.begin());
    return g;
}

LabelArray to_array(const LabelGrid& g) {
    LabelArray a({g.height, g.width});
    std::copy(g.values.begin(), g.values.end(), a.mutable_data());
    return a;
}

// JSON <-> Python through the json module keeps nesting and types intact.
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }
json from_py(const py::handle& o) {
    return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

RunConfig resolve(const py::object& doc, const std::vector<std::string>& overrides) {
    RunConfig cfg = doc.is_none() ? RunConfig{} : config_from_json(from_py(doc));
    for (const auto& s : overrides) apply_override(cfg, s);
    cfg.validate();
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Core routines of the maskboot library";
    m.attr("__version__") = MASKBOOT_VERSION;

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_OSError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);

    m.def(
        "generate_scene",
        [](std::uint64_t seed, int image_size, int min_objects, int max_objects) {
            scenegen::SceneConfig cfg;
            cfg.image_size = image_size;
            cfg.min_objects = min_objects;
            cfg.max_objects = max_objects;
            cfg.validate();
            const auto s = scenegen::generate_scene(seed, cfg);
            py::array_t<std::uint8_t> img({s.image.height, s.image.width, 3});
            std::copy(s.image.rgb.begin(), s.image.rgb.end(), img.mutable_data());
            return py::make_tuple(img, to_array(s.gt_mask), s.object_count);
        },
        py::arg("seed"), py::arg("image_size") = 64, py::arg("min_objects") = 2, py::arg("max_objects") = 8,
        "Render one scene; returns (image HxWx3 uint8, ground-truth labels HxW uint8, object count).");

    m.def(
        "mask_pool",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> features, const LabelArray& mask) {
            if (features.ndim() != 3) throw py::value_error("features must be C x H x W");
            FeatureMap f(static_cast<int>(features.shape(0)), static_cast<int>(features.shape(1)),
                         static_cast<int>(features.shape(2)));
            auto r = features.unchecked<3>();
            for (int d = 0; d < f.channels; ++d)
                for (int y = 0; y < f.height; ++y)
                    for (int x = 0; x < f.width; ++x) f.at(d, y, x) = r(d, y, x);
            return Eigen::VectorXd(contrast::mask_pool(f, to_grid(mask)));
        },
        py::arg("features"), py::arg("mask"), "Mean feature over the cells where mask is nonzero.");

    m.def(
        "spherical_kmeans",
        [](const Eigen::MatrixXd& rows, int k, std::uint64_t seed, int max_iter) {
            Rng rng(seed);
            const auto r = bootstrap::spherical_kmeans(rows, k, rng, {max_iter});
            py::dict out;
            out["prototypes"] = r.bank.prototypes;
            out["assignment"] = r.assignment;
            out["objective"] = r.objective;
            out["iterations"] = r.iterations;
            return out;
        },
        py::arg("rows"), py::arg("k"), py::arg("seed") = 0, py::arg("max_iter") = 50,
        "Cosine k-means on unit-norm rows.");

    m.def("vmf_nll", &vmf::vmf_nll_value, py::arg("y"), py::arg("bank"), py::arg("assigned"), py::arg("kappa"),
          "Negative log posterior of the assigned prototype for one unit feature.");

    m.def(
        "hungarian_miou", [](const LabelArray& pred, const LabelArray& gt) {
            return eval::hungarian_miou(MaskSet(to_grid(pred)), MaskSet(to_grid(gt)));
        },
        py::arg("pred"), py::arg("gt"), "Mean IoU after one-to-one matching of predicted to true labels.");

    m.def(
        "adjusted_rand_index",
        [](const std::vector<int>& a, const std::vector<int>& b) { return eval::adjusted_rand_index(a, b); },
        py::arg("a"), py::arg("b"));

    m.def("default_config", [] { return to_py(config_to_json(RunConfig{})); }, "Fully resolved default config.");

    m.def(
        "resolve_config",
        [](const py::object& doc, const std::vector<std::string>& overrides) {
            return to_py(config_to_json(resolve(doc, overrides)));
        },
        py::arg("config") = py::none(), py::arg("overrides") = std::vector<std::string>{},
        "Apply defaults and key=value overrides; raises ConfigError naming bad keys.");

    m.def(
        "train",
        [](const py::object& doc, const std::vector<std::string>& overrides, bool write_outputs) {
            const RunConfig cfg = resolve(doc, overrides);
            std::vector<std::pair<int, std::string>> events;
            {
                py::gil_scoped_release release;
                train::Trainer trainer(cfg, train::load_or_generate(cfg));
                auto st = trainer.fresh_state();
                trainer.run(st, {.write_outputs = write_outputs});
                for (const auto& e : st.events) events.emplace_back(e.epoch, train::event_name(e.kind));
            }
            return events;
        },
        py::arg("config") = py::none(), py::arg("overrides") = std::vector<std::string>{},
        py::arg("write_outputs") = true, "Train from scratch; returns the (epoch, event) log.");

    m.def(
        "load_checkpoint_config",
        [](const std::string& path) {
            RunConfig cfg;
            train::load_checkpoint(path, &cfg);
            return to_py(config_to_json(cfg));
        },
        py::arg("path"), "Config stored in a checkpoint.");
}
