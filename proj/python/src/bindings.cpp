#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "nba/errors.hpp"
#include "nba/evaluation.hpp"
#include "nba/pipeline.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

// JSON crosses the boundary as text; payloads are small.
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }
json from_py(const py::handle& o) { return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>()); }

nba::RunningCase to_case(const py::handle& events, const std::string& case_id) {
    nba::RunningCase rc;
    rc.trace.case_id = case_id;
    for (const auto& item : from_py(events)) {
        nba::Event e{case_id, "", std::nullopt, 0.0};
        if (item.is_string()) {
            e.activity = item.get<std::string>();
        } else if (item.is_array() && item.size() == 2) {
            e.activity = item[0].get<std::string>();
            e.kpi_value = item[1].get<double>();
        } else if (item.is_object()) {
            e.activity = item.at("activity").get<std::string>();
            e.kpi_value = item.value("kpi", 0.0);
        } else {
            throw nba::SchemaError("event must be a name, an (activity, kpi) pair or a dict");
        }
        if (e.activity.empty() || e.kpi_value < 0) throw nba::SchemaError("invalid event");
        rc.trace.events.push_back(std::move(e));
    }
    return rc;
}

nba::RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed, std::optional<std::size_t> k,
                           std::optional<std::size_t> workers) {
    auto cfg = nba::RunConfig::load(path);
    if (seed) cfg.seed = *seed;
    if (k) cfg.k = *k;
    if (workers) cfg.workers = *workers;
    return cfg;
}

json replay_json(const nba::DcrGraph& g, const std::vector<std::string>& seq) {
    auto r = g.replay(seq);
    json v = {{"conformant", r.verdict.conformant},
              {"failing_step", r.verdict.failing_step ? json(*r.verdict.failing_step) : json(nullptr)},
              {"reason", r.verdict.reason ? json(std::string(to_string(*r.verdict.reason))) : json(nullptr)},
              {"detail", r.verdict.detail},
              {"marking", g.marking_to_json(r.marking)},
              {"enabled", g.enabled_activities(r.marking)},
              {"accepting", g.is_accepting(r.marking)}};
    return v;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Next-best-action engine: predictor, suffix index, DCR simulation, recommender, evaluation";

    PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error;
    error.call_once_and_store_result(
        [&]() { return py::exception<nba::Error>(m, "NbaError", PyExc_RuntimeError); });
    // message carries the machine-readable code first
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const nba::Error& e) {
            py::set_error(error.get_stored(), (e.code() + ": " + e.what()).c_str());
        }
    });

    m.def("damerau_levenshtein",
          [](const std::vector<std::string>& a, const std::vector<std::string>& b) {
              return nba::damerau_levenshtein(a, b);
          },
          py::arg("a"), py::arg("b"), "Optimal-string-alignment distance between two activity sequences.");

    py::class_<nba::DcrGraph>(m, "DcrGraph")
        .def_static("load",
                    [](const std::string& path, bool strict) {
                        nba::DcrOptions o;
                        o.strict = strict;
                        return nba::DcrGraph::load(path, o);
                    },
                    py::arg("path"), py::arg("strict") = false)
        .def_static("from_dict",
                    [](const py::dict& d, bool strict) {
                        nba::DcrOptions o;
                        o.strict = strict;
                        return nba::DcrGraph::from_json(from_py(d), o);
                    },
                    py::arg("graph"), py::arg("strict") = false)
        .def_property_readonly("activities", &nba::DcrGraph::activities)
        .def("replay", [](const nba::DcrGraph& g, const std::vector<std::string>& seq) { return to_py(replay_json(g, seq)); },
             py::arg("activities"), "Replays a sequence from the initial marking.")
        .def("to_dict", [](const nba::DcrGraph& g) { return to_py(g.to_json()); });

    m.def("train",
          [](const std::string& config, std::optional<std::string> out, std::optional<std::uint64_t> seed) {
              json stats;
              {
                  py::gil_scoped_release release;
                  auto cfg = load_config(config, seed, std::nullopt, std::nullopt);
                  if (out) cfg.artifacts_dir = std::filesystem::absolute(*out).string();
                  auto outcome = nba::train_pipeline(cfg);
                  nba::write_artifacts(outcome.artifacts, cfg.resolve(cfg.artifacts_dir));
                  stats = outcome.artifacts.stats;
              }
              return to_py(stats);
          },
          py::arg("config"), py::arg("out") = py::none(), py::arg("seed") = py::none(),
          "Trains predictor and index from a run config and writes the four artifacts; returns the stats document.");

    m.def("evaluate",
          [](const std::string& config, std::optional<std::string> out, std::optional<std::size_t> workers,
             bool with_instances) {
              json report;
              {
                  py::gil_scoped_release release;
                  auto cfg = load_config(config, std::nullopt, std::nullopt, workers);
                  if (out) cfg.report_dir = std::filesystem::absolute(*out).string();
                  auto engine = nba::Engine::open(cfg);
                  report = nba::evaluate_pipeline(cfg, *engine).to_json(with_instances);
              }
              return to_py(report);
          },
          py::arg("config"), py::arg("out") = py::none(), py::arg("workers") = py::none(),
          py::arg("with_instances") = false, "Evaluates baseline and recommender; writes and returns the report.");

    py::class_<nba::Engine, std::shared_ptr<nba::Engine>>(m, "Engine")
        .def_static("open",
                    [](const std::string& config, std::optional<std::size_t> k) {
                        auto e = nba::Engine::open(load_config(config, std::nullopt, k, std::nullopt));
                        return std::const_pointer_cast<nba::Engine>(e);
                    },
                    py::arg("config"), py::arg("k") = py::none())
        .def("recommend",
             [](const nba::Engine& e, const py::object& events, std::optional<std::size_t> k, const std::string& case_id) {
                 auto rc = to_case(events, case_id);
                 json out;
                 {
                     py::gil_scoped_release release;
                     out = e.recommend(rc, k).to_json();
                 }
                 return to_py(out);
             },
             py::arg("events"), py::arg("k") = py::none(), py::arg("case_id") = "python")
        .def("roll_out",
             [](const nba::Engine& e, const py::object& events, std::optional<std::size_t> k) {
                 auto rc = to_case(events, "python");
                 nba::Rollout r;
                 {
                     py::gil_scoped_release release;
                     r = e.roll_out(rc, k);
                 }
                 json steps = json::array();
                 for (const auto& s : r.steps) steps.push_back(s.to_json());
                 return to_py({{"completed", r.completed.activities()},
                               {"total_kpi", r.completed.total_kpi()},
                               {"steps", steps},
                               {"truncated", r.truncated},
                               {"intervention", r.intervention}});
             },
             py::arg("events"), py::arg("k") = py::none())
        .def_property_readonly("threshold", &nba::Engine::threshold)
        .def_property_readonly("graph", [](const nba::Engine& e) { return e.graph(); })
        .def("meta", [](const nba::Engine& e) { return to_py(e.meta()); });
}
