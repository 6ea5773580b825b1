#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "reclab/ab_router.hpp"
#include "reclab/analytics.hpp"
#include "reclab/corpus_index.hpp"
#include "reclab/engines.hpp"
#include "reclab/event_store.hpp"
#include "reclab/simulation.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

std::vector<reclab::LogRecord> records_from_jsonl(const std::string& text) {
  auto store = reclab::EventStore::in_memory();
  std::istringstream in(text);
  store->import_events(in);
  return store->records();
}

py::list items_to_list(const std::vector<reclab::RecommendationItem>& items) {
  py::list out;
  for (const auto& i : items) {
    py::dict d;
    d["position"] = i.position;
    d["title"] = i.title;
    d["url"] = i.target_url;
    d["score"] = i.score ? py::cast(*i.score) : py::none();
    d["doc_id"] = i.origin_doc_id ? py::cast(*i.origin_doc_id) : py::none();
    out.append(std::move(d));
  }
  return out;
}

py::list report_to_list(const reclab::CtrReport& report) {
  py::list out;
  for (const auto& row : report) {
    py::dict d;
    d["bucket"] = row.bucket.to_string();
    d["engine"] = row.engine;
    d["delivered"] = row.delivered;
    d["clicked"] = row.clicked;
    d["ctr"] = row.ctr;
    d["ci_low"] = row.ci_low;
    d["ci_high"] = row.ci_high;
    out.append(std::move(d));
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the reclab recommender gateway";

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result(
      [&] { return py::exception<reclab::Error>(m, "ReclabError", PyExc_ValueError); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const reclab::Error& e) {
      py::set_error(error_type.get_stored(), (e.code() + ": " + e.what()).c_str());
    }
  });

  m.def("normalize_title", &reclab::normalize_title, py::arg("title"));
  m.def("tokenize", &reclab::tokenize, py::arg("text"));

  py::class_<reclab::Index>(m, "Index")
      .def_static(
          "from_jsonl",
          [](const std::string& text) {
            std::istringstream in(text);
            const auto docs = reclab::read_corpus_jsonl(in);
            return reclab::Index::build(docs);
          },
          py::arg("text"), "Build from corpus JSONL text (one document per line).")
      .def_static(
          "from_file", [](const std::string& path) { return reclab::Index::build(reclab::read_corpus_file(path)); },
          py::arg("path"))
      .def_property_readonly("doc_count", &reclab::Index::doc_count)
      .def_property_readonly("vocabulary_size", &reclab::Index::vocabulary_size)
      .def("idf", &reclab::Index::idf, py::arg("term"))
      .def(
          "similarity",
          [](const reclab::Index& index, const std::string& query, const std::string& doc_id) {
            return index.similarity(reclab::tokenize(query), doc_id);
          },
          py::arg("query"), py::arg("doc_id"))
      .def(
          "recommend",
          [](const reclab::Index& index, const std::string& title, int k) {
            return items_to_list(reclab::recommend_cbf(index, title, k));
          },
          py::arg("title"), py::arg("k") = reclab::kDefaultMaxCount);

  m.def("ctr", &reclab::ctr, py::arg("clicked"), py::arg("delivered"));
  m.def(
      "wilson_interval",
      [](std::int64_t clicked, std::int64_t delivered, double z) {
        const auto ci = reclab::wilson_interval(clicked, delivered, z);
        return py::make_tuple(ci.low, ci.high);
      },
      py::arg("clicked"), py::arg("delivered"), py::arg("z") = reclab::kWilsonZ95);

  m.def(
      "assign_engines",
      [](const std::vector<std::pair<std::string, double>>& weights, std::uint64_t seed, int n) {
        reclab::AllocationConfig config;
        config.partner_id = "python";
        for (const auto& [id, w] : weights) config.entries.push_back({id, w});
        reclab::validate_allocation(config, {[](const std::string&) { return true; },
                                             [](const std::string&) { return true; }});
        reclab::Rng rng(seed);
        std::vector<std::string> out;
        out.reserve(std::size_t(n));
        for (int i = 0; i < n; ++i) out.push_back(reclab::assign(config, rng));
        return out;
      },
      py::arg("weights"), py::arg("seed"), py::arg("n"));

  m.def(
      "ctr_timeseries",
      [](const std::string& events_jsonl, const std::string& attribution) {
        if (attribution != "serving" && attribution != "assigned") {
          throw reclab::Error("UnknownAttribution", "attribution must be 'serving' or 'assigned'");
        }
        const auto records = records_from_jsonl(events_jsonl);
        return report_to_list(reclab::ctr_timeseries(
            records, attribution == "serving" ? reclab::Attribution::serving_engine
                                              : reclab::Attribution::assigned_engine));
      },
      py::arg("events_jsonl"), py::arg("attribution") = "serving");

  m.def(
      "run_simulation",
      [](const std::string& config_json) {
        const auto config = reclab::sim_config_from_json(json::parse(config_json));
        reclab::SimResult result;
        {
          py::gil_scoped_release release;
          result = reclab::run_simulation(config);
        }
        py::dict out;
        out["events_jsonl"] = result.events_jsonl;
        out["report_csv"] = reclab::emit_report(result.report, reclab::ReportFormat::csv);
        out["report"] = report_to_list(result.report);
        out["stats_json"] = reclab::to_json(result.stats).dump();
        return out;
      },
      py::arg("config_json"));
}
