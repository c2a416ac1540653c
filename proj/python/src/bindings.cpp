#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mp2m/cli.hpp"
#include "mp2m/config.hpp"
#include "mp2m/data.hpp"
#include "mp2m/diffusion.hpp"
#include "mp2m/errors.hpp"
#include "mp2m/eval.hpp"
#include "mp2m/memory_bank.hpp"
#include "mp2m/trainer.hpp"

namespace py = pybind11;
using namespace mp2m;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const Trajectory& t) {
  Array a({static_cast<py::ssize_t>(t.size()), py::ssize_t{2}});
  auto m = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < t.size(); ++i) {
    m(i, 0) = t[i].x;
    m(i, 1) = t[i].y;
  }
  return a;
}

Trajectory to_traj(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw ArgumentError("expected an array of shape (T, 2)");
  auto r = a.unchecked<2>();
  Trajectory t(static_cast<std::size_t>(a.shape(0)));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = {r(i, 0), r(i, 1)};
  return t;
}

RunConfig to_config(const py::dict& d) {
  RunConfig c;
  for (auto [k, v] : d) c.set(py::str(k).cast<std::string>(), py::str(v).cast<std::string>());
  return c;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["split"] = r.split;
  d["K"] = r.k;
  d["ade"] = r.ade;
  d["fde"] = r.fde;
  d["n"] = r.n;
  d["seed"] = r.seed;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Memory-guided diffusion trajectory forecasting";

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);

  py::class_<Sample>(m, "Sample")
      .def(py::init([](const Array& observed, const Array& future, long long agent_id,
                       std::string scene_id, const std::string& split) {
             Sample s;
             s.observed = to_traj(observed);
             s.future = to_traj(future);
             s.agent_id = agent_id;
             s.scene_id = std::move(scene_id);
             s.split = parse_split(split);
             validate(s);
             return s;
           }),
           py::arg("observed"), py::arg("future"), py::arg("agent_id") = 0,
           py::arg("scene_id") = "", py::arg("split") = "none")
      .def_property_readonly("observed", [](const Sample& s) { return to_array(s.observed); })
      .def_property_readonly("future", [](const Sample& s) { return to_array(s.future); })
      .def_readonly("agent_id", &Sample::agent_id)
      .def_readonly("scene_id", &Sample::scene_id)
      .def_readonly("pattern_label", &Sample::pattern_label)
      .def_property_readonly("split", [](const Sample& s) { return std::string(to_string(s.split)); });

  py::class_<MemoryBank>(m, "MemoryBank")
      .def("__len__", &MemoryBank::size)
      .def_readonly("t_obs", &MemoryBank::t_obs)
      .def_readonly("t_pred", &MemoryBank::t_pred)
      .def("pattern_mean", [](const MemoryBank& b, std::size_t i) { return to_array(b.patterns.at(i).mu); })
      .def("pattern_var", [](const MemoryBank& b, std::size_t i) { return to_array(b.patterns.at(i).var); })
      .def("target", [](const MemoryBank& b, std::size_t i) {
        const auto& t = b.targets.at(i);
        return py::make_tuple(py::make_tuple(t.mean.x, t.mean.y), py::make_tuple(t.cov_diag.x, t.cov_diag.y));
      })
      .def("hash", [](const MemoryBank& b) { return bank_hash(b); })
      .def(py::self == py::self);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("kind", &Checkpoint::kind)
      .def_readonly("step", &Checkpoint::step)
      .def_readonly("bank_hash", &Checkpoint::bank_hash)
      .def("config", [](const Checkpoint& c) {
        py::dict d;
        for (const auto& [k, v] : c.config.entries()) d[py::str(k)] = v;
        return d;
      })
      .def("num_parameters", [](const Checkpoint& c) { return c.params.num_scalars(); });

  py::class_<Schedule>(m, "Schedule")
      .def_readonly("betas", &Schedule::betas)
      .def_readonly("alpha_bars", &Schedule::alpha_bars)
      .def("steps", &Schedule::steps);

  m.def("synth_generate",
        [](int n_patterns, int n_per_pattern, double noise_std, std::uint64_t seed, int t_obs,
           int t_pred, const std::string& split) {
          SynthConfig c;
          c.n_patterns = n_patterns;
          c.n_per_pattern = n_per_pattern;
          c.noise_std = noise_std;
          c.seed = seed;
          c.t_obs = t_obs;
          c.t_pred = t_pred;
          c.split = parse_split(split);
          return synth_generate(c);
        },
        py::arg("n_patterns") = 8, py::arg("n_per_pattern") = 100, py::arg("noise_std") = 0.05,
        py::arg("seed") = 0, py::arg("t_obs") = 8, py::arg("t_pred") = 12,
        py::arg("split") = "train");
  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("save_dataset", [](const std::string& path, const std::vector<Sample>& s) { save_dataset(path, s); },
        py::arg("path"), py::arg("samples"));

  m.def("build_bank",
        [](const std::vector<Sample>& samples, std::size_t k, std::uint64_t seed, double eps) {
          return build_bank(samples, k, seed, eps);
        },
        py::arg("samples"), py::arg("k") = 32, py::arg("seed") = 0, py::arg("eps") = 1e-6);
  m.def("load_bank", &load_bank, py::arg("path"));
  m.def("save_bank", [](const MemoryBank& b, const std::string& p) { save_bank(b, p); },
        py::arg("bank"), py::arg("path"));
  m.def("address",
        [](const MemoryBank& bank, const Array& observed) {
          const Address a = address(bank, to_traj(observed));
          return py::make_tuple(a.pattern, a.score, py::make_tuple(a.target.mean.x, a.target.mean.y));
        },
        py::arg("bank"), py::arg("observed"),
        "Returns (pattern index, NLL score, target mean) for a normalized observed window.");

  m.def("make_schedule", &make_schedule, py::arg("steps") = 100, py::arg("beta_start") = 1e-4,
        py::arg("beta_end") = 5e-2);
  m.def("q_sample",
        [](const std::vector<double>& y0, int s, const std::vector<double>& z, const Schedule& sc) {
          return q_sample(y0, s, z, sc);
        },
        py::arg("y0"), py::arg("s"), py::arg("z"), py::arg("schedule"));

  m.def("ade", [](const Array& p, const Array& g) { return ade(to_traj(p), to_traj(g)); },
        py::arg("pred"), py::arg("gt"));
  m.def("fde", [](const Array& p, const Array& g) { return fde(to_traj(p), to_traj(g)); },
        py::arg("pred"), py::arg("gt"));
  m.def("best_of_k",
        [](const std::vector<Array>& preds, const Array& gt) {
          std::vector<Trajectory> c;
          for (const auto& p : preds) c.push_back(to_traj(p));
          const auto r = best_of_k(c, to_traj(gt));
          return py::make_tuple(r.ade, r.fde);
        },
        py::arg("preds"), py::arg("gt"));

  m.def("train",
        [](const std::vector<Sample>& samples, const MemoryBank& bank, const py::dict& config) {
          const RunConfig c = to_config(config);
          py::gil_scoped_release release;
          TrainResult r = train(samples, bank, c);
          return std::make_pair(std::move(r.checkpoint), std::move(r.losses));
        },
        py::arg("samples"), py::arg("bank"), py::arg("config") = py::dict(),
        "Trains on samples tagged 'train'. Config keys match the command line config file.");
  m.def("oracle_checkpoint", &make_oracle_checkpoint, py::arg("bank"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def("save_checkpoint", [](const Checkpoint& c, const std::string& p) { save_checkpoint(c, p); },
        py::arg("checkpoint"), py::arg("path"));

  m.def("predict",
        [](const Checkpoint& ckpt, const MemoryBank& bank, const std::vector<Sample>& samples,
           std::size_t k, std::uint64_t seed, int workers) {
          PredictOptions o;
          o.k = k;
          o.seed = seed;
          o.workers = workers;
          std::vector<std::vector<Trajectory>> preds;
          {
            py::gil_scoped_release release;
            preds = predict(ckpt, bank, samples, o);
          }
          const auto t = static_cast<py::ssize_t>(bank.t_pred);
          Array a({static_cast<py::ssize_t>(preds.size()), static_cast<py::ssize_t>(k), t, py::ssize_t{2}});
          auto m4 = a.mutable_unchecked<4>();
          for (std::size_t i = 0; i < preds.size(); ++i)
            for (std::size_t j = 0; j < k; ++j)
              for (py::ssize_t s = 0; s < t; ++s) {
                m4(i, j, s, 0) = preds[i][j][s].x;
                m4(i, j, s, 1) = preds[i][j][s].y;
              }
          return a;
        },
        py::arg("checkpoint"), py::arg("bank"), py::arg("samples"), py::arg("k") = 20,
        py::arg("seed") = 0, py::arg("workers") = 1,
        "Returns an array of shape (N, K, t_pred, 2) in world coordinates.");
  m.def("evaluate",
        [](const Checkpoint& ckpt, const MemoryBank& bank, const std::vector<Sample>& samples,
           std::size_t k, std::uint64_t seed, int workers, const std::string& split) {
          PredictOptions o;
          o.k = k;
          o.seed = seed;
          o.workers = workers;
          EvalReport r;
          {
            py::gil_scoped_release release;
            r = evaluate(ckpt, bank, samples, split, o);
          }
          return report_dict(r);
        },
        py::arg("checkpoint"), py::arg("bank"), py::arg("samples"), py::arg("k") = 20,
        py::arg("seed") = 0, py::arg("workers") = 1, py::arg("split") = "test");

  m.def("plot_svg",
        [](const Sample& s, const std::vector<Array>& preds) {
          std::vector<Trajectory> c;
          for (const auto& p : preds) c.push_back(to_traj(p));
          return plot_svg(s, c);
        },
        py::arg("sample"), py::arg("preds"));

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          int code;
          {
            py::gil_scoped_release release;
            code = cli::run(args, out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one CLI subcommand; returns (exit code, stdout, stderr).");
}
