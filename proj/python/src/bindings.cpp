#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "deltamon/cli.hpp"
#include "deltamon/ensemble.hpp"
#include "deltamon/eval.hpp"
#include "deltamon/model.hpp"
#include "deltamon/transfer.hpp"

namespace py = pybind11;
using namespace deltamon;

namespace {

Grid grid_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw py::value_error("expected a 2-d float array");
    Grid g(int(a.shape(0)), int(a.shape(1)));
    std::copy(a.data(), a.data() + g.size(), g.v.begin());
    return g;
}

py::array_t<float> array_from_grid(const Grid& g) {
    py::array_t<float> a({g.rows, g.cols});
    std::copy(g.v.begin(), g.v.end(), a.mutable_data());
    return a;
}

std::vector<Grid> grids_from_list(const py::list& rasters) {
    std::vector<Grid> grids;
    for (const auto& item : rasters)
        grids.push_back(grid_from_array(
            item.cast<py::array_t<float, py::array::c_style | py::array::forcecast>>()));
    return grids;
}

WindowTensor window_from_array(
    const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 4) throw py::value_error("expected a [steps, bands, rows, cols] array");
    WindowTensor w;
    w.steps = int(a.shape(0));
    w.bands = int(a.shape(1));
    w.rows = int(a.shape(2));
    w.cols = int(a.shape(3));
    w.valid.assign(std::size_t(w.steps), 1);
    w.data.assign(a.data(), a.data() + a.size());
    return w;
}

py::dict curve_to_dict(const MetricsCurve& c) {
    py::list xs, ys;
    for (const CurvePoint& p : c.points) {
        xs.append(p.x);
        ys.append(p.y);
    }
    py::dict d;
    d["x"] = xs;
    d["y"] = ys;
    if (c.auc) d["auc"] = *c.auc;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "core operations of the deltamon change-monitoring toolkit";

    py::register_exception<Error>(m, "DeltamonError");

    m.def(
        "tanimoto_complement_loss",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& label) {
            const LossValue v = tanimoto_complement_loss(grid_from_array(pred),
                                                         grid_from_array(label));
            return py::make_tuple(v.loss, array_from_grid(v.grad));
        },
        py::arg("pred"), py::arg("label"),
        "Tanimoto loss with complement; returns (loss, gradient w.r.t. pred).");

    m.def(
        "max_pool_over_time",
        [](const py::list& rasters) {
            const auto grids = grids_from_list(rasters);
            return array_from_grid(max_pool_over_time(grids));
        },
        py::arg("predictions"), "Element-wise maximum over per-window predictions.");

    m.def(
        "combine_variants",
        [](const py::list& rasters) {
            const auto grids = grids_from_list(rasters);
            return array_from_grid(combine_variants(grids));
        },
        py::arg("variants"), "Bagged combination: n-th root of the element-wise product.");

    m.def(
        "roc_curve",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& scores,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& labels) {
            return curve_to_dict(
                roc_curve({scores.data(), std::size_t(scores.size())},
                          {labels.data(), std::size_t(labels.size())}));
        },
        py::arg("scores"), py::arg("labels"));

    m.def(
        "pr_curve",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& scores,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& labels) {
            return curve_to_dict(pr_curve({scores.data(), std::size_t(scores.size())},
                                          {labels.data(), std::size_t(labels.size())}));
        },
        py::arg("scores"), py::arg("labels"));

    m.def(
        "kappa_sweep",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& scores,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& labels,
           std::vector<double> thresholds) {
            if (thresholds.empty()) thresholds = default_kappa_thresholds();
            return curve_to_dict(kappa_sweep({scores.data(), std::size_t(scores.size())},
                                             {labels.data(), std::size_t(labels.size())},
                                             thresholds));
        },
        py::arg("scores"), py::arg("labels"), py::arg("thresholds") = std::vector<double>{});

    m.def(
        "param_count",
        [](int optical_bands, int sar_bands, int branch_filters, int trunk_filters,
           int reduce_filters, int kernel) {
            ModelDescriptor d;
            d.optical_bands = optical_bands;
            d.sar_bands = sar_bands;
            d.branch_filters = branch_filters;
            d.trunk_filters = trunk_filters;
            d.reduce_filters = reduce_filters;
            d.kernel = kernel;
            return expected_param_count(d);
        },
        py::arg("optical_bands") = 13, py::arg("sar_bands") = 4,
        py::arg("branch_filters") = 10, py::arg("trunk_filters") = 26,
        py::arg("reduce_filters") = 8, py::arg("kernel") = 3);

    py::class_<ModelParams>(m, "Model")
        .def(py::init([](std::uint64_t seed) {
                 return init_params(ModelDescriptor{}, seed);
             }),
             py::arg("seed") = 0)
        .def_static("load", [](const std::string& dir) { return load_checkpoint(dir); })
        .def("save", [](const ModelParams& p, const std::string& dir) { save_checkpoint(p, dir); })
        .def("param_count", [](const ModelParams& p) { return param_count(p); })
        .def(
            "forward",
            [](const ModelParams& p,
               const py::array_t<float, py::array::c_style | py::array::forcecast>& window,
               bool training, std::uint64_t dropout_seed) {
                return array_from_grid(forward(p, window_from_array(window),
                                               ForwardOptions{training, dropout_seed}));
            },
            py::arg("window"), py::arg("training") = false, py::arg("dropout_seed") = 0,
            "Run the network over a [steps, bands, rows, cols] window.");

    m.def(
        "run_cli", [](const std::vector<std::string>& args) { return cli::dispatch(args); },
        py::arg("args"), "Invoke a CLI subcommand in-process; returns the exit code.");
}
