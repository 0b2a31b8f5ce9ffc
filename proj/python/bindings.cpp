#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "conformal_kit/core.hpp"
#include "conformal_kit/dgp.hpp"
#include "conformal_kit/errors.hpp"
#include "conformal_kit/experiment.hpp"
#include "conformal_kit/kernels.hpp"
#include "conformal_kit/methods.hpp"
#include "conformal_kit/report.hpp"
#include "conformal_kit/version.hpp"

namespace py = pybind11;
using namespace ckit;

namespace {

using Intervals = std::vector<std::pair<double, double>>;

PValueConvention convention_from(const std::string& s) {
  if (s == "dual") return PValueConvention::dual;
  if (s == "strict") return PValueConvention::strict;
  throw ConfigError("convention must be dual or strict");
}

Dataset dataset(Matrix x, std::vector<double> y) {
  Dataset d{std::move(x), std::move(y)};
  d.validate();
  return d;
}

Intervals to_pairs(const PredictionRegion& r) {
  Intervals out;
  for (const auto& iv : r.intervals()) out.emplace_back(iv.lo, iv.hi);
  return out;
}

struct MethodInputs {
  ExperimentConfig config;
  RepetitionFit fit;
  Dataset calib;
};

MethodInputs prepare(const std::string& method, const Matrix& train_x,
                     const std::vector<double>& train_y, const Matrix& calib_x,
                     const std::vector<double>& calib_y, double alpha, double target_neff,
                     double sigma_x) {
  MethodInputs in;
  in.config.methods = {method};
  in.config.alpha = alpha;
  in.config.bandwidth.target_neff = target_neff;
  in.config.dgp.d = static_cast<std::size_t>(train_x.cols());
  in.config.dgp.n = calib_y.size();
  in.config.dgp.n_tr = train_y.size();
  in.config.dgp.sigma_x = sigma_x;
  in.config.validate();
  in.fit = fit_repetition(in.config, dataset(train_x, train_y));
  in.calib = dataset(calib_x, calib_y);
  return in;
}

CalibratedPredictor predictor(const MethodInputs& in) {
  const std::string& m = in.config.methods[0];
  return CalibratedPredictor(
      make_predictor(m, in.fit.components, in.fit.kernel,
                     is_shift_method(m) ? density_ratio(in.config.dgp) : CovariateFn{}),
      in.calib, Level(in.config.alpha));
}

template <class Config, class Run>
std::string run_json(const std::string& config_json, Run&& run) {
  Config c;
  Json j;
  try {
    j = Json::parse(config_json);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  apply_json(j, c);
  c.validate();
  return run(c).dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Weighted conformal prediction: quantiles, p-values, methods and experiments";
  m.attr("__version__") = kVersion;

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<UnsupportedError>(m, "UnsupportedError", PyExc_NotImplementedError);

  m.def(
      "weighted_quantile",
      [](std::vector<double> scores, std::vector<double> weights, double infinite_weight,
         double alpha) {
        return weighted_quantile({std::move(scores), std::move(weights), infinite_weight},
                                 Level(alpha));
      },
      py::arg("scores"), py::arg("weights"), py::arg("infinite_weight"), py::arg("alpha"));

  m.def(
      "weighted_p_value",
      [](const std::vector<double>& scores, const std::vector<double>& weights, double test_score,
         double test_weight, const std::string& convention) {
        return weighted_p_value(scores, weights, test_score, test_weight,
                                convention_from(convention));
      },
      py::arg("scores"), py::arg("weights"), py::arg("test_score"), py::arg("test_weight") = 1.0,
      py::arg("convention") = "dual");

  m.def(
      "effective_sample_size",
      [](const Matrix& x, double bandwidth, const std::string& kernel) {
        return estimate_effective_sample_size(
            KernelSpec(kernel_family_from_string(kernel), bandwidth), x);
      },
      py::arg("x"), py::arg("bandwidth"), py::arg("kernel") = "gaussian");

  m.def(
      "bandwidth_for_target_neff",
      [](double target, const Matrix& x, const std::string& kernel) {
        return bandwidth_for_target_neff(target, x, kernel_family_from_string(kernel));
      },
      py::arg("target"), py::arg("x"), py::arg("kernel") = "gaussian");

  m.def(
      "generate_dgp",
      [](int dgp, std::size_t d, std::size_t n, std::size_t n_tr, std::size_t n_te,
         double sigma_x, std::uint64_t seed) {
        DgpSpec s;
        s.dgp = dgp;
        s.d = d;
        s.n = n;
        s.n_tr = n_tr;
        s.n_te = n_te;
        s.sigma_x = sigma_x;
        s.seed = seed;
        s.validate();
        Rng rng(seed);
        DgpDraw draw = generate_dgp(s, rng);
        py::dict out;
        out["train_x"] = draw.train.x;
        out["train_y"] = draw.train.y;
        out["calib_x"] = draw.calib.x;
        out["calib_y"] = draw.calib.y;
        out["test_x"] = draw.test_x;
        return out;
      },
      py::arg("dgp") = 1, py::arg("d") = 10, py::arg("n") = 500, py::arg("n_tr") = 1000,
      py::arg("n_te") = 500, py::arg("sigma_x") = 1.0, py::arg("seed") = 0);

  m.def("method_names", &method_names);

  m.def(
      "prediction_regions",
      [](const std::string& method, const Matrix& train_x, const std::vector<double>& train_y,
         const Matrix& calib_x, const std::vector<double>& calib_y, const Matrix& test_x,
         double alpha, double target_neff, double sigma_x, std::uint64_t seed) {
        if (test_x.cols() != train_x.cols()) throw DimensionError("test_x dimension mismatch");
        const MethodInputs in =
            prepare(method, train_x, train_y, calib_x, calib_y, alpha, target_neff, sigma_x);
        const CalibratedPredictor cp = predictor(in);
        Rng rng(seed);
        std::vector<Intervals> out;
        for (Eigen::Index i = 0; i < test_x.rows(); ++i) {
          const auto x = row_span(test_x, i);
          RegionOptions opts;
          opts.auxiliary = cp.draw_auxiliary(x, rng);
          out.push_back(to_pairs(cp.region(x, opts)));
        }
        return out;
      },
      py::arg("method"), py::arg("train_x"), py::arg("train_y"), py::arg("calib_x"),
      py::arg("calib_y"), py::arg("test_x"), py::arg("alpha") = 0.1,
      py::arg("target_neff") = 40.0, py::arg("sigma_x") = 1.0, py::arg("seed") = 0);

  m.def(
      "p_values",
      [](const std::string& method, const Matrix& train_x, const std::vector<double>& train_y,
         const Matrix& calib_x, const std::vector<double>& calib_y, const Matrix& test_x,
         const std::vector<double>& test_y, double target_neff, double sigma_x,
         std::uint64_t seed, const std::string& convention) {
        if (static_cast<std::size_t>(test_x.rows()) != test_y.size()) {
          throw DimensionError("test_x rows differ from test_y");
        }
        const MethodInputs in =
            prepare(method, train_x, train_y, calib_x, calib_y, 0.1, target_neff, sigma_x);
        const CalibratedPredictor cp = predictor(in);
        Rng rng(seed);
        std::vector<double> out;
        for (Eigen::Index i = 0; i < test_x.rows(); ++i) {
          const auto x = row_span(test_x, i);
          RegionOptions opts;
          opts.convention = convention_from(convention);
          opts.auxiliary = cp.draw_auxiliary(x, rng);
          out.push_back(cp.p_value(x, test_y[static_cast<std::size_t>(i)], opts));
        }
        return out;
      },
      py::arg("method"), py::arg("train_x"), py::arg("train_y"), py::arg("calib_x"),
      py::arg("calib_y"), py::arg("test_x"), py::arg("test_y"), py::arg("target_neff") = 40.0,
      py::arg("sigma_x") = 1.0, py::arg("seed") = 0, py::arg("convention") = "dual");

  m.def("_run_coverage", [](const std::string& cfg) {
    py::gil_scoped_release release;
    return run_json<ExperimentConfig>(
        cfg, [](const ExperimentConfig& c) { return metrics_json(run_coverage_experiment(c)); });
  });
  m.def("_run_graph", [](const std::string& cfg) {
    py::gil_scoped_release release;
    return run_json<GraphExperimentConfig>(
        cfg, [](const GraphExperimentConfig& c) { return graph_json(run_graph_experiment(c)); });
  });
  m.def("_run_hier", [](const std::string& cfg) {
    py::gil_scoped_release release;
    return run_json<HierExperimentConfig>(
        cfg, [](const HierExperimentConfig& c) { return hier_json(run_hier_experiment(c)); });
  });
  m.def("_run_selection", [](const std::string& cfg) {
    py::gil_scoped_release release;
    return run_json<SelectionExperimentConfig>(cfg, [](const SelectionExperimentConfig& c) {
      return selection_json(run_selection_experiment(c));
    });
  });
}
