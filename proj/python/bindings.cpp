// Python bindings for the core operations: the algebra, the O(3) action,
// noise schedules, checkpoints, sampling, metrics and the self-test.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cdm/clifford.hpp"
#include "cdm/config.hpp"
#include "cdm/container.hpp"
#include "cdm/diffusion.hpp"
#include "cdm/moldata.hpp"
#include "cdm/pipeline.hpp"
#include "cdm/selftest.hpp"

namespace py = pybind11;
using namespace cdm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Multivector to_mv(const Array& a) {
  if (a.ndim() != 1 || a.shape(0) != static_cast<py::ssize_t>(kBladeCount)) {
    throw py::value_error("expected a length-8 coefficient array in the order 1, e1, e2, e3, e23, e31, e12, e123");
  }
  Multivector v;
  for (std::size_t b = 0; b < kBladeCount; ++b) v[b] = a.at(b);
  return v;
}

Array from_mv(const Multivector& v) {
  Array out(kBladeCount);
  for (std::size_t b = 0; b < kBladeCount; ++b) out.mutable_at(b) = v[b];
  return out;
}

Mat3 to_mat3(const Array& a) {
  if (a.ndim() != 2 || a.shape(0) != 3 || a.shape(1) != 3) throw py::value_error("expected a 3x3 matrix");
  Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i][j] = a.at(i, j);
  return m;
}

Array from_mat3(const Mat3& m) {
  Array out({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out.mutable_at(i, j) = m[i][j];
  return out;
}

// Molecule as {"positions": (n, 3) array, "elements": [str], "charges": [int]}.
py::dict mol_to_py(const MolecularGraph& m) {
  Array pos({static_cast<py::ssize_t>(m.size()), py::ssize_t{3}});
  py::list elements;
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (int k = 0; k < 3; ++k) pos.mutable_at(i, k) = m.positions[i][k];
    elements.append(std::string(element_symbol(m.atom_types[i])));
  }
  py::dict d;
  d["positions"] = pos;
  d["elements"] = elements;
  d["charges"] = m.charges;
  return d;
}

MolecularGraph mol_from_py(const py::dict& d) {
  const Array pos = d["positions"].cast<Array>();
  const auto elements = d["elements"].cast<std::vector<std::string>>();
  if (pos.ndim() != 2 || pos.shape(1) != 3 || static_cast<std::size_t>(pos.shape(0)) != elements.size()) {
    throw py::value_error("positions must be (n, 3) with one element symbol per row");
  }
  MolecularGraph m;
  for (std::size_t i = 0; i < elements.size(); ++i) {
    m.positions.push_back({pos.at(i, 0), pos.at(i, 1), pos.at(i, 2)});
    const auto e = parse_element(elements[i]);
    if (!e) throw py::value_error("unknown element symbol '" + elements[i] + "'");
    m.atom_types.push_back(*e);
  }
  m.charges = d.contains("charges") ? d["charges"].cast<std::vector<int>>() : std::vector<int>(elements.size(), 0);
  m.validate();
  return m;
}

std::vector<MolecularGraph> mols_from_py(const py::list& mols) {
  std::vector<MolecularGraph> out;
  for (const auto& m : mols) out.push_back(mol_from_py(m.cast<py::dict>()));
  return out;
}

py::dict metrics_to_py(const MetricReport& r) {
  return py::module_::import("json").attr("loads")(r.to_json().dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Clifford diffusion models: algebra, sampling and metrics";

  // ---- algebra ----
  m.def("geometric_product", [](const Array& a, const Array& b) { return from_mv(geometric_product(to_mv(a), to_mv(b))); },
        py::arg("a"), py::arg("b"));
  m.def("grade_project", [](const Array& a, int grade) { return from_mv(grade_project(to_mv(a), grade)); },
        py::arg("a"), py::arg("grade"));
  m.def("reverse", [](const Array& a) { return from_mv(reverse(to_mv(a))); });
  m.def("cayley_table", [] {
    py::array_t<int> index({8, 8}), sign({8, 8});
    const CayleyTable& t = CayleyTable::standard();
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b) {
        index.mutable_at(a, b) = t(a, b).index;
        sign.mutable_at(a, b) = t(a, b).sign;
      }
    return py::make_tuple(index, sign);
  });
  m.def("apply_orthogonal", [](const Array& R, const Array& a) { return from_mv(OrthogonalAction(to_mat3(R)).apply(to_mv(a))); },
        py::arg("R"), py::arg("a"));
  m.def("grade_blocks", [](const Array& R) {
    const auto& blk = OrthogonalAction(to_mat3(R)).grade_blocks();
    Array out({8, 8});
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) out.mutable_at(i, j) = blk[i][j];
    return out;
  });
  m.def("random_orthogonal", [](std::uint64_t seed, int det) {
    Rng rng(seed);
    return from_mat3(random_orthogonal(rng, det).matrix());
  }, py::arg("seed"), py::arg("det") = 1);

  // ---- schedules ----
  m.def("schedule", [](const std::string& kind, int T) {
    const auto k = parse_schedule_kind(kind);
    if (!k) throw py::value_error("schedule must be 'polynomial' or 'cosine'");
    const NoiseSchedule s = build_schedule(*k, T);
    py::dict d;
    d["beta"] = py::array_t<double>(s.beta.size(), s.beta.data());
    d["alpha_bar"] = py::array_t<double>(s.alpha_bar.size(), s.alpha_bar.data());
    return d;
  }, py::arg("kind") = "polynomial", py::arg("T") = 1000);

  // ---- training, checkpoints and sampling ----
  m.def("train", [](const std::string& config_json) {
    const RunConfig cfg = parse_config(config_json);
    const auto data = load_training_data(cfg);
    TrainResult r;
    {
      py::gil_scoped_release release;
      r = train_model(cfg, data);
    }
    const std::filesystem::path out(cfg.out_dir);
    std::filesystem::create_directories(out);
    save_checkpoint(out / "checkpoint.cdmc", r.model, {{"config", cfg.to_json()}});
    py::dict d;
    d["checkpoint"] = (out / "checkpoint.cdmc").string();
    d["checkpoint_id"] = checkpoint_id(r.model);
    d["loss"] = r.loss;
    d["smoothed"] = r.smoothed;
    return d;
  }, py::arg("config_json"), "Train from a JSON config string and write out_dir/checkpoint.cdmc.");

  m.def("checkpoint_info", [](const std::filesystem::path& path) {
    std::string id;
    const DiffusionModel model = load_checkpoint(path, &id);
    py::dict d;
    d["id"] = id;
    d["mode"] = std::string(to_string(model.spec.mode));
    d["timesteps"] = model.spec.timesteps;
    d["parameters"] = model.params.parameter_count();
    d["size_histogram"] = model.size_histogram;
    return d;
  });

  m.def("sample", [](const std::filesystem::path& checkpoint, std::size_t num, std::uint64_t seed,
                     std::vector<std::size_t> n_atoms) {
    const DiffusionModel model = load_checkpoint(checkpoint);
    SampleOptions opt;
    opt.seed = seed;
    opt.n_atoms = std::move(n_atoms);
    std::vector<MolecularGraph> mols;
    {
      py::gil_scoped_release release;
      mols = sample(model, num, opt);
    }
    py::list out;
    for (const auto& mol : mols) out.append(mol_to_py(mol));
    return out;
  }, py::arg("checkpoint"), py::arg("num"), py::arg("seed") = 0, py::arg("n_atoms") = std::vector<std::size_t>{});

  // ---- molecules and metrics ----
  m.def("parse_xyz", [](const std::string& text) {
    py::list out;
    for (const auto& mol : parse_xyz(text)) out.append(mol_to_py(mol));
    return out;
  });
  m.def("format_xyz", [](const py::list& mols) { return format_xyz(mols_from_py(mols)); });
  m.def("evaluate", [](const py::list& mols) { return metrics_to_py(evaluate(mols_from_py(mols))); });
  m.def("rigid_template", [] { return mol_to_py(rigid_template()); });
  m.def("matched_distance_error", [](const py::dict& a, const py::dict& b) {
    return matched_distance_error(mol_from_py(a), mol_from_py(b));
  });

  m.def("selftest", [](bool corrupt_cayley) {
    SelftestOptions opt;
    opt.corrupt_cayley = corrupt_cayley;
    py::list out;
    for (const SuiteResult& r : run_selftest(opt)) {
      py::dict d;
      d["name"] = r.name;
      d["passed"] = r.passed;
      d["max_error"] = r.max_error;
      d["tolerance"] = r.tolerance;
      d["detail"] = r.detail;
      out.append(d);
    }
    return out;
  }, py::arg("corrupt_cayley") = false);

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
}
