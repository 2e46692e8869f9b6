#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "driftreg/pipeline.hpp"
#include "driftreg/pointcloud.hpp"
#include "driftreg/tps.hpp"

namespace py = pybind11;
using namespace driftreg;

namespace {

std::optional<Mat> opt_mat(const py::object& o) {
    if (o.is_none()) return std::nullopt;
    return o.cast<Mat>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Deformable point set registration: feature-augmented CPD with "
              "learned graph descriptors";

    // pointcloud
    m.def("load_pointset", [](const std::filesystem::path& p, const std::string& fmt) {
        return load_pointset(p, fmt == "ply" ? PointFormat::Ply : PointFormat::Csv);
    }, py::arg("path"), py::arg("format") = "csv");
    m.def("save_pointset", [](const Points& ps, const std::filesystem::path& p,
                              const std::string& fmt) {
        save_pointset(ps, p, fmt == "ply" ? PointFormat::Ply : PointFormat::Csv);
    }, py::arg("points"), py::arg("path"), py::arg("format") = "csv");
    m.def("farthest_point_sample", &farthest_point_sample, py::arg("points"), py::arg("count"),
          py::arg("seed"), py::arg("force_first_zero") = false);
    m.def("knn_indices", [](const Points& ps, int k) { return knn_indices(ps, k).neighbors; },
          py::arg("points"), py::arg("k"));
    m.def("center_align", &center_align, py::arg("fixed"), py::arg("moving"));

    // graphnet
    py::class_<NetworkParams>(m, "NetworkParams")
        .def_readonly("k", &NetworkParams::k)
        .def_readonly("descriptor_dim", &NetworkParams::descriptor_dim)
        .def_readwrite("dynamic_graph", &NetworkParams::dynamic_graph)
        .def("to_json", &network_to_json)
        .def_static("from_json", &network_from_json);
    m.def("default_network", &default_network, py::arg("k") = 20, py::arg("descriptor_dim") = 16,
          py::arg("seed") = 0);
    m.def("save_network", &save_network, py::arg("params"), py::arg("path"));
    m.def("load_network", &load_network, py::arg("path"));
    m.def("descriptor_forward", &descriptor_forward, py::arg("points"), py::arg("params"));
    m.def("triplet_loss", &triplet_loss, py::arg("anchor"), py::arg("positive"),
          py::arg("negative"), py::arg("margin"));
    m.def("train_triplet",
          [](const std::vector<std::tuple<Points, Points, Points, Points>>& raw_cases,
             const NetworkParams& init, double lr, int epochs, double margin,
             std::uint64_t seed) {
              std::vector<TrainCase> cases;
              for (const auto& [fixed, moving, corr_fixed, corr_moving] : raw_cases)
                  cases.push_back({fixed, moving, {corr_fixed, corr_moving}});
              TrainConfig cfg;
              cfg.learning_rate = lr;
              cfg.epochs = epochs;
              cfg.margin = margin;
              cfg.seed = seed;
              TrainReport report;
              NetworkParams out = train_triplet(cases, init, cfg, &report);
              return py::make_tuple(out, report.initial_loss, report.final_loss);
          },
          py::arg("cases"), py::arg("init"), py::arg("lr") = 1e-3, py::arg("epochs") = 200,
          py::arg("margin") = 0.2, py::arg("seed") = 0);

    // cpd
    py::class_<CpdParams>(m, "CpdParams")
        .def(py::init<>())
        .def_readwrite("alpha", &CpdParams::alpha)
        .def_readwrite("rho", &CpdParams::rho)
        .def_readwrite("w", &CpdParams::w)
        .def_readwrite("lambda_", &CpdParams::lambda)
        .def_readwrite("beta", &CpdParams::beta)
        .def_readwrite("iterations", &CpdParams::iterations)
        .def_readwrite("sigma2_floor", &CpdParams::sigma2_floor);
    m.def("gaussian_kernel", &gaussian_kernel, py::arg("y"), py::arg("beta"));
    m.def("spatial_posterior", &spatial_posterior, py::arg("x"), py::arg("t"), py::arg("sigma2"),
          py::arg("w"));
    m.def("feature_affinity", &feature_affinity, py::arg("desc_fixed"), py::arg("desc_moving"),
          py::arg("rho"));
    m.def("combine_priors", &combine_priors, py::arg("c_pos"), py::arg("c_feat"),
          py::arg("alpha"));
    m.def("cpd_register",
          [](const Points& fixed, const Points& moving, const py::object& desc_fixed,
             const py::object& desc_moving, const CpdParams& params) {
              auto df = opt_mat(desc_fixed);
              auto dm = opt_mat(desc_moving);
              return cpd_register(fixed, moving, df ? &*df : nullptr, dm ? &*dm : nullptr, params);
          },
          py::arg("fixed"), py::arg("moving"), py::arg("desc_fixed") = py::none(),
          py::arg("desc_moving") = py::none(), py::arg("params") = CpdParams{});
    m.def("knn_match", &knn_match, py::arg("desc_fixed"), py::arg("desc_moving"),
          py::arg("moving"), py::arg("fixed"), py::arg("k"));

    // tps
    py::class_<TpsModel>(m, "TpsModel")
        .def_readonly("control", &TpsModel::control)
        .def_readonly("kernel_weights", &TpsModel::kernel_weights)
        .def_readonly("affine", &TpsModel::affine);
    m.def("tps_fit", &tps_fit, py::arg("control"), py::arg("values"), py::arg("reg") = 0.0);
    m.def("tps_eval", &tps_eval, py::arg("model"), py::arg("queries"));
    m.def("correspondence_loss", &correspondence_loss, py::arg("fixed_corr"),
          py::arg("warped_corr"));

    // synth
    py::class_<RegistrationCase>(m, "RegistrationCase")
        .def_readonly("fixed", &RegistrationCase::fixed)
        .def_readonly("moving", &RegistrationCase::moving)
        .def_readonly("initial_tre", &RegistrationCase::initial_tre)
        .def_property_readonly("supervision",
                               [](const RegistrationCase& c) {
                                   return py::make_tuple(c.supervision.fixed,
                                                         c.supervision.corresponding);
                               })
        .def_property_readonly("eval_landmarks", [](const RegistrationCase& c) {
            return py::make_tuple(c.eval_landmarks.fixed, c.eval_landmarks.corresponding);
        });
    m.def("gen_shape",
          [](const std::string& kind, int n, std::uint64_t seed) {
              return gen_shape(shape_kind_from_string(kind), n, seed);
          },
          py::arg("kind"), py::arg("n"), py::arg("seed"));
    m.def("make_case",
          [](const std::string& kind, int n, std::uint64_t deform_seed, double noise_sigma,
             double outlier_frac, int supervision_count, int eval_count, std::uint64_t seed,
             double target_tre) {
              MakeCaseConfig cfg;
              cfg.kind = shape_kind_from_string(kind);
              cfg.n = n;
              cfg.deform_seed = deform_seed;
              cfg.noise_sigma = noise_sigma;
              cfg.outlier_frac = outlier_frac;
              cfg.supervision_count = supervision_count;
              cfg.eval_count = eval_count;
              cfg.seed = seed;
              cfg.target_initial_tre = target_tre;
              return make_case(cfg);
          },
          py::arg("kind") = "branching_tree", py::arg("n") = 512, py::arg("deform_seed") = 1,
          py::arg("noise_sigma") = 0.5, py::arg("outlier_frac") = 0.0,
          py::arg("supervision_count") = 64, py::arg("eval_count") = 64, py::arg("seed") = 1,
          py::arg("target_tre") = 22.5);
    m.def("save_case", &save_case, py::arg("case"), py::arg("dir"));
    m.def("load_case", &load_case, py::arg("dir"));

    // eval
    py::class_<TreStats>(m, "TreStats")
        .def_readonly("errors", &TreStats::errors)
        .def_readonly("mean", &TreStats::mean)
        .def_readonly("stddev", &TreStats::stddev)
        .def_readonly("count", &TreStats::count);
    m.def("target_registration_error",
          [](const Points& fixed, const Points& moving, const Mat& disp) {
              return target_registration_error({fixed, moving}, disp);
          },
          py::arg("fixed"), py::arg("moving"), py::arg("displacements"));
    m.def("rank_sum_test", &rank_sum_test, py::arg("errors_a"), py::arg("errors_b"));

    // pipeline
    m.def("register_case",
          [](const RegistrationCase& c, const std::string& method, const py::object& net,
             int fps_count, std::uint64_t seed, int iterations, double alpha) {
              PipelineConfig cfg;
              cfg.fps_count = fps_count;
              cfg.seed = seed;
              cfg.cpd.iterations = iterations;
              cfg.cpd.alpha = alpha;
              NetworkParams params;
              const NetworkParams* p = nullptr;
              if (!net.is_none()) {
                  params = net.cast<NetworkParams>();
                  p = &params;
              }
              MethodRun run = run_method(c, method_from_string(method), p, cfg, seed);
              return py::make_tuple(run.displacements, run.tre.mean);
          },
          py::arg("case"), py::arg("method"), py::arg("net") = py::none(),
          py::arg("fps_count") = 4096, py::arg("seed") = 0, py::arg("iterations") = 250,
          py::arg("alpha") = 0.05);
}
