// Python bindings: solver, proxy allocation, data generation and file readers.

#include <string>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dsink/auxiliaries.hpp"
#include "dsink/config.hpp"
#include "dsink/error.hpp"
#include "dsink/eval_metrics.hpp"
#include "dsink/models.hpp"
#include "dsink/ot_solver.hpp"
#include "dsink/pipeline.hpp"
#include "dsink/proxy_alloc.hpp"
#include "dsink/synth_data.hpp"

namespace py = pybind11;
using namespace dsink;

namespace {

py::dict plan_dict(const ot::TransportPlan& p) {
  py::dict d;
  d["plan"] = p.values;
  d["u"] = p.scaling.u;
  d["v"] = p.scaling.v;
  d["iterations"] = p.iterations_used;
  d["residual"] = p.residual;
  return d;
}

py::dict dataset_dict(const data::Dataset& ds) {
  py::dict d;
  d["features"] = ds.features;
  d["observed_labels"] = ds.observed_labels;
  d["true_labels"] = ds.true_labels;
  d["class_counts"] = ds.class_counts;
  d["split"] = ds.split == data::Split::kTrain ? "train" : "test";
  d["recipe"] = ds.recipe.echo();
  d["measured_ir"] = data::measure_ir(ds);
  d["measured_nr"] = data::measure_nr(ds);
  return d;
}

proxy::BatchPredictions batch(Eigen::MatrixXd target, Eigen::MatrixXd noise_robust,
                              Eigen::MatrixXd imbalance_robust) {
  return {std::move(target), std::move(noise_robust), std::move(imbalance_robust)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sinkhorn proxy-label distillation on synthetic long-tailed noisy data";
  m.attr("__version__") = cli::kToolVersion;

  static py::exception<Error> error_type(m, "DsinkError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const std::string msg = std::string(to_string(e.kind())) + ": " + e.what();
      if (e.kind() == ErrorKind::kInvalidArgument || e.kind() == ErrorKind::kConfig)
        PyErr_SetString(PyExc_ValueError, msg.c_str());
      else
        py::set_error(error_type, msg.c_str());
    }
  });

  m.def(
      "sinkhorn_solve",
      [](Eigen::MatrixXd cost, Eigen::VectorXd row, Eigen::VectorXd col, double lam, int max_iters,
         double tol) {
        return plan_dict(ot::sinkhorn_solve(ot::CostMatrix(std::move(cost)),
                                            ot::Marginals(std::move(row), std::move(col)), lam,
                                            max_iters, tol));
      },
      py::arg("cost"), py::arg("row"), py::arg("col"), py::arg("lam") = 2.0,
      py::arg("max_iters") = 50, py::arg("tol") = 0.0,
      "Entropic OT by Sinkhorn scaling; tol = 0 runs exactly max_iters iterations.");

  m.def(
      "ot_oracle",
      [](Eigen::MatrixXd cost, Eigen::VectorXd row, Eigen::VectorXd col, double lam) {
        return plan_dict(ot::ot_oracle(ot::CostMatrix(std::move(cost)),
                                       ot::Marginals(std::move(row), std::move(col)), lam));
      },
      py::arg("cost"), py::arg("row"), py::arg("col"), py::arg("lam") = 2.0,
      "Dual Newton reference solver for instances with at most 64 entries.");

  m.def(
      "allocate_proxies",
      [](Eigen::MatrixXd target, Eigen::MatrixXd noise_robust, Eigen::MatrixXd imbalance_robust,
         int iters, double tol) {
        proxy::AllocateOptions o;
        o.iters = iters;
        o.tol = tol;
        const proxy::ProxyLabels q = proxy::allocate_proxies(
            batch(std::move(target), std::move(noise_robust), std::move(imbalance_robust)), o);
        py::dict d;
        d["q"] = q.q;
        d["iterations"] = q.iterations_used;
        d["residual"] = q.residual;
        return d;
      },
      py::arg("target"), py::arg("noise_robust"), py::arg("imbalance_robust"),
      py::arg("iters") = proxy::kDefaultSinkhornIters, py::arg("tol") = 0.0,
      "Proxy labels Q (C x N_B) for one batch of column-stochastic predictions.");

  m.def(
      "dsink_loss",
      [](const Eigen::MatrixXd& q, Eigen::MatrixXd target, Eigen::MatrixXd noise_robust) {
        const Eigen::MatrixXd unused = target;
        return proxy::dsink_loss_kl(q, batch(std::move(target), std::move(noise_robust), unused));
      },
      py::arg("q"), py::arg("target"), py::arg("noise_robust"),
      "Batch mean of KL(q || f_N) + KL(q || f).");

  m.def(
      "naive_distill_loss",
      [](Eigen::MatrixXd target, Eigen::MatrixXd noise_robust, Eigen::MatrixXd imbalance_robust) {
        return proxy::naive_distill_loss(
            batch(std::move(target), std::move(noise_robust), std::move(imbalance_robust)));
      },
      py::arg("target"), py::arg("noise_robust"), py::arg("imbalance_robust"));

  m.def(
      "generate_dataset",
      [](int num_classes, int base_per_class, double imbalance_ratio, const std::string& noise_mode,
         double noise_ratio, int feature_dim, double class_separation, std::uint64_t seed,
         int test_per_class, const std::string& split) {
        data::DatasetRecipe r;
        r.num_classes = num_classes;
        r.base_per_class = base_per_class;
        r.imbalance_ratio = imbalance_ratio;
        r.noise_mode = data::noise_mode_from_string(noise_mode);
        r.noise_ratio = noise_ratio;
        r.feature_dim = feature_dim;
        r.class_separation = class_separation;
        r.seed = seed;
        r.test_per_class = test_per_class;
        r.validate();
        if (split != "train" && split != "test")
          throw Error(ErrorKind::kInvalidArgument, "split must be 'train' or 'test'");
        return dataset_dict(
            data::generate(r, split == "train" ? data::Split::kTrain : data::Split::kTest));
      },
      py::arg("num_classes") = 10, py::arg("base_per_class") = 500,
      py::arg("imbalance_ratio") = 10.0, py::arg("noise_mode") = "symmetric",
      py::arg("noise_ratio") = 0.4, py::arg("feature_dim") = 16,
      py::arg("class_separation") = data::DatasetRecipe{}.class_separation, py::arg("seed") = 0,
      py::arg("test_per_class") = 100, py::arg("split") = "train");

  m.def(
      "load_dataset", [](const std::filesystem::path& p) { return dataset_dict(data::load(p)); },
      py::arg("path"));

  m.def(
      "load_cache",
      [](const std::filesystem::path& p) {
        const aux::AuxPredictionCache c = aux::load_cache(p);
        py::dict d;
        d["fl_probs"] = c.fl_probs;
        d["fn_probs"] = c.fn_probs;
        d["dataset_checksum"] = c.dataset_checksum;
        d["config_echo"] = c.config_echo;
        return d;
      },
      py::arg("path"));

  m.def(
      "predict",
      [](const std::filesystem::path& checkpoint, const Eigen::MatrixXd& features) {
        return model::forward(model::load_checkpoint(checkpoint), features);
      },
      py::arg("checkpoint"), py::arg("features"),
      "Class probabilities (C x N) of a saved classifier on d x N features.");

  m.def(
      "evaluate",
      [](const Eigen::MatrixXd& probs, const std::vector<std::uint32_t>& true_labels,
         const std::vector<std::size_t>& train_counts) {
        const eval::EvalReport r = eval::evaluate(probs, true_labels, train_counts);
        py::dict d;
        d["overall_acc"] = r.overall_acc;
        d["many_acc"] = r.many_acc;
        d["medium_acc"] = r.medium_acc;
        d["few_acc"] = r.few_acc;
        d["macro_f1"] = r.macro_f1;
        d["macro_auc"] = r.macro_auc;
        d["per_class_acc"] = r.per_class_acc;
        return d;
      },
      py::arg("probs"), py::arg("true_labels"), py::arg("train_counts"));

  m.def(
      "resolve_config",
      [](const std::filesystem::path& path) { return load_config(path).echo(); },
      py::arg("path"), "Canonical key=value dump of a config file with defaults filled in.");
}
