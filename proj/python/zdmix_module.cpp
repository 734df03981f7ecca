#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "zdmix/billiard.hpp"
#include "zdmix/coefficients.hpp"
#include "zdmix/montecarlo.hpp"
#include "zdmix/oracles.hpp"
#include "zdmix/spectral.hpp"
#include "zdmix/suites.hpp"

namespace py = pybind11;
using namespace zdmix;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// Flat offsets put the first index in the most significant digit, which is C order.
Tensor to_tensor(const Array& a) {
    const int rank = static_cast<int>(a.ndim());
    const int dim = rank ? static_cast<int>(a.shape(0)) : 2;
    for (int k = 0; k < rank; ++k)
        if (a.shape(k) != dim || (dim != 1 && dim != 2)) throw py::value_error("expected shape (d,)*rank with d = 1 or 2");
    Tensor t(rank, dim);
    std::copy(a.data(), a.data() + a.size(), t.data().begin());
    return t;
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(static_cast<std::size_t>(t.rank()), t.dim());
    Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::array_t<std::complex<double>> to_array(const CTensor& t) {
    std::vector<py::ssize_t> shape(static_cast<std::size_t>(t.rank()), t.dim());
    py::array_t<std::complex<double>> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

/// Cell observable from [(values or None, {(a, b): weight}), ...]; None means the constant 1.
CellObservable to_cell(const MarkovModel& m, const py::list& terms) {
    CellObservable f;
    for (const py::handle& item : terms) {
        auto pair = item.cast<py::tuple>();
        if (pair.size() != 2) throw py::value_error("each term is (values or None, {(a, b): weight})");
        BaseObservable base = BaseObservable::one();
        if (!pair[0].is_none()) {
            auto v = pair[0].cast<std::vector<double>>();
            if (static_cast<int>(v.size()) != m.size()) throw py::value_error("state vector length differs from the model size");
            base = BaseObservable::state_vector(Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())),
                                                "u" + std::to_string(f.terms.size()));
        }
        LatticeWeights h;
        for (auto kv : pair[1].cast<py::dict>()) {
            auto cell = kv.first.cast<std::vector<int>>();
            if (cell.empty() || cell.size() > 2) throw py::value_error("cell keys are (a,) or (a, b)");
            h.push_back({Step{cell[0], cell.size() > 1 ? cell[1] : 0}, kv.second.cast<double>()});
        }
        f.terms.push_back({base, h});
    }
    return f;
}

Eigen::VectorXd state_or_one(const MarkovModel& m, const std::optional<std::vector<double>>& v) {
    if (!v) return Eigen::VectorXd::Ones(m.size());
    if (static_cast<int>(v->size()) != m.size()) throw py::value_error("state vector length differs from the model size");
    return Eigen::Map<const Eigen::VectorXd>(v->data(), static_cast<Eigen::Index>(v->size()));
}

py::dict suite_dict(const SuiteResult& r) {
    py::list criteria, rows;
    for (const Criterion& c : r.criteria)
        criteria.append(py::dict(py::arg("id") = c.id, py::arg("name") = c.name, py::arg("pass") = c.pass,
                                 py::arg("measured") = c.measured));
    for (const ReportRow& x : r.rows)
        rows.append(py::dict(py::arg("statistic") = x.statistic, py::arg("n") = x.n, py::arg("value") = x.value,
                             py::arg("stderr") = x.stderr_, py::arg("batches") = x.batches, py::arg("seed") = x.seed));
    return py::dict(py::arg("kind") = r.kind, py::arg("criteria") = criteria, py::arg("rows") = rows,
                    py::arg("notes") = r.notes, py::arg("passed") = r.passed(), py::arg("report_csv") = report_csv(r));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Mixing-rate expansions for Z^d-extensions: tensors, Markov models, billiards, verification suites";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<TableError>(m, "TableError", PyExc_ValueError);
    py::register_exception<FlightError>(m, "FlightError", PyExc_RuntimeError);

    m.def("contract", [](const Array& a, const Array& b) { return to_array(contract(to_tensor(a), to_tensor(b))); },
          "A * B: last rank(B) indices of A summed against B (both symmetric)");
    m.def("tensor_product", [](const Array& a, const Array& b) { return to_array(tensor_product(to_tensor(a), to_tensor(b))); });
    m.def("symmetrize", [](const Array& a) { return to_array(symmetrize(to_tensor(a))); });
    m.def("gaussian_density", [](const Array& sigma2, const Array& x) {
        return gaussian_density(GaussianModel::from_covariance(to_tensor(sigma2)), to_tensor(x));
    });
    m.def("gaussian_derivatives", [](const Array& sigma2, const Array& x, int order) {
        return to_array(gaussian_derivatives(GaussianModel::from_covariance(to_tensor(sigma2)), to_tensor(x), order));
    }, py::arg("sigma2"), py::arg("x"), py::arg("order"));

    py::class_<MarkovModel>(m, "Model")
        .def_static("builtin", &builtin_model, py::arg("name"))
        .def_static("from_config_text", [](const std::string& text) { return MarkovModel::from_config(Config::parse(text)); },
                    "model.* keys, as in a run config")
        .def_property_readonly("name", &MarkovModel::name)
        .def_property_readonly("dim", &MarkovModel::dim)
        .def_property_readonly("size", &MarkovModel::size)
        .def_property_readonly("even", &MarkovModel::even)
        .def_property_readonly("stationary", [](const MarkovModel& mm) {
            return std::vector<double>(mm.stationary().data(), mm.stationary().data() + mm.size());
        })
        .def("sigma2", [](const MarkovModel& mm) { return to_array(model_sigma2(mm)); })
        .def("lambda_derivatives", [](const MarkovModel& mm, int k) {
            py::list out;
            for (const CTensor& t : lambda_derivatives(mm, k)) out.append(to_array(t));
            return out;
        }, py::arg("k_max"))
        .def("__repr__", [](const MarkovModel& mm) { return "<Model " + mm.name() + ">"; });

    m.def("exact_correlation", [](const MarkovModel& mm, const py::list& f, const py::list& g, int n) {
        return oracle::exact_Cn(mm, to_cell(mm, f), to_cell(mm, g), n);
    }, py::arg("model"), py::arg("f"), py::arg("g"), py::arg("n"),
          "C_n(f, g) from the exact displacement law; f, g are [(values or None, {cell: weight}), ...]");
    m.def("expansion", [](const MarkovModel& mm, const py::list& f, const py::list& g, int K) {
        MarkovProvider p(mm);
        ExpansionBuilder eb(p);
        Expansion e = eb.expansion(to_cell(mm, f), to_cell(mm, g), K);
        return py::dict(py::arg("c") = e.c, py::arg("c_imag") = e.c_imag, py::arg("P") = e.P, py::arg("M") = e.M,
                        py::arg("exponent0") = 0.5 * mm.dim());
    }, py::arg("model"), py::arg("f"), py::arg("g"), py::arg("K") = 2,
          "coefficients c_L of C_n(f, g) = sum_L c_L n^-(d/2 + L)");
    m.def("A_coefficients", [](const MarkovModel& mm, std::optional<std::vector<double>> u,
                               std::optional<std::vector<double>> v, int m_max) {
        MarkovProvider p(mm);
        ExpansionBuilder eb(p);
        py::list out;
        for (const CTensor& t : eb.A(BaseObservable::state_vector(state_or_one(mm, u), "u"),
                                     BaseObservable::state_vector(state_or_one(mm, v), "v"), m_max))
            out.append(to_array(t));
        return out;
    }, py::arg("model"), py::arg("u") = py::none(), py::arg("v") = py::none(), py::arg("m_max") = 3);
    m.def("llt_predict", [](const MarkovModel& mm, int n, std::array<int, 2> l, int K, std::optional<std::vector<double>> u,
                            std::optional<std::vector<double>> v) {
        MarkovProvider p(mm);
        ExpansionBuilder eb(p);
        return eb.llt_predict(BaseObservable::state_vector(state_or_one(mm, u), "u"),
                              BaseObservable::state_vector(state_or_one(mm, v), "v"), n, l, K);
    }, py::arg("model"), py::arg("n"), py::arg("cell"), py::arg("K") = 3, py::arg("u") = py::none(), py::arg("v") = py::none());
    m.def("cell_distribution", [](const MarkovModel& mm, int n) {
        const Eigen::VectorXd one = Eigen::VectorXd::Ones(mm.size());
        DisplacementGrid g = exact_cell_distributions(mm, one, one, {n}).front();
        const int w0 = g.hi[0] - g.lo[0] + 1, w1 = mm.dim() == 2 ? g.hi[1] - g.lo[1] + 1 : 1;
        Array grid({w0, w1});
        for (int a = 0; a < w0; ++a)
            for (int b = 0; b < w1; ++b) grid.mutable_at(a, b) = g.at(g.lo[0] + a, g.lo[1] + b);
        return py::dict(py::arg("lo") = std::array<int, 2>{g.lo[0], g.lo[1]}, py::arg("p") = grid);
    }, py::arg("model"), py::arg("n"), "P(S_n = l) on its support; p[a, b] is l = lo + (a, b)");

    py::class_<BilliardTable>(m, "Table")
        .def(py::init([](const std::vector<std::array<double, 3>>& disks, long long cap) {
                 std::vector<Disk> d;
                 for (const auto& x : disks) d.push_back({{x[0], x[1]}, x[2]});
                 return BilliardTable::make(std::move(d), cap);
             }),
             py::arg("disks"), py::arg("flight_cap") = 1000000, "disks as (x, y, radius) in the unit cell")
        .def_static("finite_horizon", &finite_horizon_table)
        .def_static("infinite_horizon", &infinite_horizon_table)
        .def_property_readonly("disks", [](const BilliardTable& t) {
            std::vector<std::array<double, 3>> out;
            for (const Disk& d : t.disks()) out.push_back({d.center.x, d.center.y, d.radius});
            return out;
        })
        .def_property_readonly("finite_horizon_table", [](const BilliardTable& t) { return classify_horizon(t).finite; })
        .def("corridors", [](const BilliardTable& t) {
            py::list out;
            for (const Corridor& c : classify_horizon(t).corridors)
                out.append(py::dict(py::arg("w") = std::array<int, 2>{c.w[0], c.w[1]}, py::arg("width") = c.width,
                                    py::arg("tangent_ids") = std::array<std::vector<int>, 2>{c.lines[0].tangent_ids,
                                                                                             c.lines[1].tangent_ids}));
            return out;
        })
        .def("sigma_infinity", [](const BilliardTable& t) { return to_array(sigma_infinity(t)); })
        .def("describe", &BilliardTable::describe);

    m.def("orbit", [](const BilliardTable& t, int n, std::uint64_t seed) {
        StreamRng rng(seed, 0);
        OrbitRecord r = orbit(t, sample_invariant(t, rng), n, true);
        py::array_t<int> kap({static_cast<py::ssize_t>(r.kappas.size()), py::ssize_t(2)});
        for (std::size_t i = 0; i < r.kappas.size(); ++i) {
            kap.mutable_at(i, 0) = r.kappas[i][0];
            kap.mutable_at(i, 1) = r.kappas[i][1];
        }
        return py::dict(py::arg("kappa") = kap, py::arg("flights") = r.flight_lengths,
                        py::arg("displacement") = std::array<int, 2>{r.displacement[0], r.displacement[1]});
    }, py::arg("table"), py::arg("n"), py::arg("seed") = 1, "n collisions from an invariant-measure start");

    m.attr("experiment_kinds") = kExperimentKinds;
    m.def("run_suite", [](const std::string& kind, std::uint64_t seed, int workers, int batches, long long steps,
                          long long samples, std::vector<int> ladder, std::optional<MarkovModel> model,
                          std::optional<BilliardTable> table) {
        SuiteOptions o;
        o.seed = seed;
        o.workers = workers;
        o.batches = batches;
        o.steps = steps;
        o.samples = samples;
        o.ladder = std::move(ladder);
        o.model = std::move(model);
        o.table = std::move(table);
        SuiteResult r;
        {
            py::gil_scoped_release release;
            r = run_suite(kind, o);
        }
        return suite_dict(r);
    }, py::arg("kind"), py::arg("seed") = 1, py::arg("workers") = 0, py::arg("batches") = 64, py::arg("steps") = 0,
          py::arg("samples") = 0, py::arg("ladder") = std::vector<int>{}, py::arg("model") = py::none(),
          py::arg("table") = py::none());
    m.def("run_config_text", [](const std::string& text) {
        Config cfg = Config::parse(text);
        if (!cfg.has("experiment")) throw ConfigError("missing key 'experiment'");
        SuiteOptions o = options_from_config(cfg);
        SuiteResult r;
        {
            py::gil_scoped_release release;
            r = run_suite(cfg.get("experiment"), o);
        }
        return suite_dict(r);
    });
    m.def("plotdata_csv", &plotdata_csv, py::arg("report_csv_text"));
    m.def("config_schema", &config_schema);
    m.def("build_info", &build_info);
}
