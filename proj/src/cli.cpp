#include "reclab/cli.hpp"

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "reclab/analytics.hpp"
#include "reclab/corpus_index.hpp"
#include "reclab/errors.hpp"
#include "reclab/event_store.hpp"
#include "reclab/gateway.hpp"
#include "reclab/http_server.hpp"
#include "reclab/simulation.hpp"

namespace reclab {

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("IoError", "cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw Error("IoError", "write to '" + path.string() + "' failed");
}

std::optional<Timestamp> parse_bound(const std::string& text) {
  if (text.empty()) return std::nullopt;
  if (text.size() == 7) return Month::parse(text).start();
  return parse_iso8601(text);
}

int serve(const std::string& config_path, std::ostream& out) {
  const auto config = load_gateway_config(config_path);
  static SystemClock clock;
  auto gateway = Gateway::from_config(config, clock);

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  HttpServer server([&](const HttpRequest& r) { return gateway->dispatch(r); });
  const int port = server.start(config.listen_host, config.listen_port);
  out << "reclab gateway listening on " << config.listen_host << ":" << port << " ("
      << gateway->index().doc_count() << " documents)" << std::endl;
  int received = 0;
  sigwait(&signals, &received);
  server.stop();
  return kExitOk;
}

int ingest(const std::string& corpus, const std::string& out_path, std::ostream& out) {
  const auto index = Index::build(read_corpus_file(corpus));
  std::ofstream file(out_path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error("IoError", "cannot write '" + out_path + "'");
  index.save(file);
  out << "indexed " << index.doc_count() << " documents, " << index.vocabulary_size() << " terms\n";
  return kExitOk;
}

int simulate(const std::string& config_path, const std::string& out_dir, int workers, std::ostream& out) {
  auto config = load_sim_config(config_path);
  if (workers > 0) config.workers = workers;
  validate(config);
  const auto result = run_simulation(config);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  write_file(dir / "events.jsonl", result.events_jsonl);
  write_file(dir / "report.csv", emit_report(result.report, ReportFormat::csv));
  write_file(dir / "summary.json", to_json(result.stats).dump(2) + "\n");
  std::int64_t delivered = 0;
  std::int64_t clicked = 0;
  for (const auto& row : result.report) {
    if (row.engine == kTotalRow) {
      delivered += row.delivered;
      clicked += row.clicked;
    }
  }
  out << "requests " << result.stats.requests << ", delivered " << delivered << ", clicked " << clicked;
  if (delivered > 0) out << ", ctr " << format_percent(ctr(clicked, delivered), 3);
  out << "\n";
  return kExitOk;
}

int report(const std::string& store_path, const std::string& from, const std::string& to,
           const std::string& format_name, const std::string& attribution, const std::string& out_path,
           std::ostream& out) {
  const auto format = parse_report_format(format_name);
  ReportWindow window;
  if (!from.empty()) window.from = Month::parse(from);
  if (!to.empty()) window.to = Month::parse(to);
  const auto store = load_event_log(store_path);
  const auto records = store->records();
  const auto rows = ctr_timeseries(
      records, attribution == "assigned" ? Attribution::assigned_engine : Attribution::serving_engine, window);
  const auto text = emit_report(rows, format);
  if (out_path.empty()) {
    out << text;
  } else {
    write_file(out_path, text);
  }
  return kExitOk;
}

int export_log(const std::string& store_path, const std::string& out_path, const std::string& from,
               const std::string& to) {
  const auto store = load_event_log(store_path);
  write_file(out_path, store->export_events(TimeRange{parse_bound(from), parse_bound(to)}));
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"reclab: living-lab gateway for online evaluation of recommendation engines", "reclab"};
  app.require_subcommand(1);

  std::string config_path;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP gateway");
  serve_cmd->add_option("--config", config_path, "Gateway config (JSON)")->required();

  std::string corpus_path;
  std::string index_out;
  auto* ingest_cmd = app.add_subcommand("ingest", "Build a term index from a JSONL corpus");
  ingest_cmd->add_option("--corpus", corpus_path, "Corpus, one JSON document per line")->required();
  ingest_cmd->add_option("--out", index_out, "Index snapshot to write")->required();

  std::string sim_config;
  std::string sim_out;
  int workers = 0;
  auto* simulate_cmd = app.add_subcommand("simulate", "Run a seeded end-to-end simulation");
  simulate_cmd->add_option("--config", sim_config, "Simulation config (JSON)")->required();
  simulate_cmd->add_option("--out", sim_out, "Output directory (events.jsonl, report.csv)")->required();
  simulate_cmd->add_option("--workers", workers, "Concurrent request workers; output is reproducible only at 1")
      ->check(CLI::PositiveNumber);

  std::string store_path;
  std::string from;
  std::string to;
  std::string bucket = "month";
  std::string format = "csv";
  std::string attribution = "serving";
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "CTR per engine per month from an event log");
  report_cmd->add_option("--store", store_path, "Event store or exported log")->required();
  report_cmd->add_option("--from", from, "First month, YYYY-MM");
  report_cmd->add_option("--to", to, "Last month, YYYY-MM");
  report_cmd->add_option("--bucket", bucket, "Time bucket")->check(CLI::IsMember({"month"}));
  report_cmd->add_option("--format", format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));
  report_cmd->add_option("--attribution", attribution, "serving or assigned engine")
      ->check(CLI::IsMember({"serving", "assigned"}));
  report_cmd->add_option("--out", report_out, "Write to a file instead of stdout");

  std::string export_out;
  std::string export_from;
  std::string export_to;
  auto* export_cmd = app.add_subcommand("export", "Export an event store as ordered JSONL");
  export_cmd->add_option("--store", store_path, "Event store file")->required();
  export_cmd->add_option("--out", export_out, "Output JSONL file")->required();
  export_cmd->add_option("--from", export_from, "Start (inclusive), YYYY-MM or ISO-8601");
  export_cmd->add_option("--to", export_to, "End (exclusive), YYYY-MM or ISO-8601");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "reclab: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (serve_cmd->parsed()) return serve(config_path, out);
    if (ingest_cmd->parsed()) return ingest(corpus_path, index_out, out);
    if (simulate_cmd->parsed()) return simulate(sim_config, sim_out, workers, out);
    if (report_cmd->parsed()) return report(store_path, from, to, format, attribution, report_out, out);
    if (export_cmd->parsed()) return export_log(store_path, export_out, export_from, export_to);
  } catch (const Error& e) {
    err << "reclab: " << e.code() << ": " << e.what() << "\n";
    return kExitRuntimeError;
  } catch (const std::exception& e) {
    err << "reclab: " << e.what() << "\n";
    return kExitRuntimeError;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace reclab
