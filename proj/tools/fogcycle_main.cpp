#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>
#include <variant>

#include <CLI11.hpp>

#include "fogcycle/broker.hpp"
#include "fogcycle/feedgen.hpp"
#include "fogcycle/pipeline.hpp"
#include "fogcycle/tcp.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitPipeline = 3;

struct PlanFlags {
  double duplicate_rate = 0;
  double drop_rate = 0;
  double blank_rate = 0;
  double wrong_rate = 0;
  std::string wrong_field = "lat";
  std::uint32_t shuffle_window = 0;
  std::uint64_t seed = 1;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--duplicate-rate", duplicate_rate, "Duplicate injection rate [0,1]");
    cmd->add_option("--drop-rate", drop_rate, "Missing-tuple injection rate [0,1]");
    cmd->add_option("--blank-rate", blank_rate, "Blank-field injection rate [0,1]");
    cmd->add_option("--wrong-rate", wrong_rate, "Wrong-value injection rate [0,1]");
    cmd->add_option("--wrong-field", wrong_field, "Field the wrong-value defect corrupts (lat|timestamp)");
    cmd->add_option("--shuffle-window", shuffle_window, "Max positional displacement for order scrambling");
    cmd->add_option("--seed", seed, "Deterministic generator seed");
  }

  fogcycle::feedgen::CorruptionPlan plan() const {
    fogcycle::feedgen::CorruptionPlan p;
    p.duplicate_rate = duplicate_rate;
    p.drop_rate = drop_rate;
    p.blank_field_rate = blank_rate;
    p.wrong_value_rate = wrong_rate;
    p.wrong_value_field = wrong_field;
    p.shuffle_window = shuffle_window;
    p.rng_seed = seed;
    return p;
  }

  bool any() const {
    return duplicate_rate > 0 || drop_rate > 0 || blank_rate > 0 || wrong_rate > 0 ||
           shuffle_window > 0;
  }
};

int cmd_generate(const std::string& schedule_path, const std::string& out_feed,
                 const std::string& out_manifest, const std::string& out_ledger,
                 const PlanFlags& flags, bool no_header) {
  namespace fg = fogcycle::feedgen;
  auto schedule_result = fg::load_schedule(schedule_path);
  if (auto* err = std::get_if<std::string>(&schedule_result)) {
    std::cerr << "error: " << *err << "\n";
    return kExitConfig;
  }
  const auto& schedule = std::get<fg::Schedule>(schedule_result);
  try {
    fg::FeedManifest manifest;
    fg::Feed feed = fg::generate_clean_feed(schedule, &manifest);
    fg::DefectLedger ledger;
    if (flags.any()) {
      feed = fg::corrupt_feed(feed, flags.plan(), &ledger);
    }
    fg::write_csv(feed, out_feed, !no_header);
    if (!out_manifest.empty()) fg::write_manifest(manifest, out_manifest);
    if (!out_ledger.empty()) fg::write_ledger(ledger, out_ledger);
    std::printf("generated %zu tuples (%llu clean) across %llu trips; %zu defects\n",
                feed.tuples.size(),
                static_cast<unsigned long long>(manifest.total_tuples),
                static_cast<unsigned long long>(schedule.scheduled_trip_total()),
                ledger.entries.size());
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmd_corrupt(const std::string& in_feed, const std::string& out_feed,
                const std::string& out_ledger, const PlanFlags& flags) {
  namespace fg = fogcycle::feedgen;
  try {
    auto read = fg::read_csv(in_feed);
    if (auto* bad = std::get_if<fogcycle::MalformedRecord>(&read)) {
      std::cerr << "error: malformed record at line " << bad->line_no << ": " << bad->why
                << "\n";
      return kExitConfig;
    }
    fg::DefectLedger ledger;
    const fg::Feed corrupted =
        fg::corrupt_feed(std::get<fg::Feed>(read), flags.plan(), &ledger);
    fg::write_csv(corrupted, out_feed);
    if (!out_ledger.empty()) fg::write_ledger(ledger, out_ledger);
    std::printf("wrote %zu tuples with %zu injected defects\n", corrupted.tuples.size(),
                ledger.entries.size());
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int cmd_run(const std::string& config_path, std::uint64_t seed_override,
            const std::string& out_dir_override) {
  namespace pl = fogcycle::pipeline;
  auto cfg_result = pl::TopologyConfig::load_file(config_path);
  if (auto* err = std::get_if<std::string>(&cfg_result)) {
    std::cerr << "error: " << *err << "\n";
    return kExitConfig;
  }
  auto cfg = std::get<pl::TopologyConfig>(cfg_result);
  if (seed_override != 0) cfg.rng_seed = seed_override;
  if (!out_dir_override.empty()) cfg.out_dir = out_dir_override;

  const auto result = pl::run_pipeline(cfg);
  if (auto* err = std::get_if<std::string>(&result)) {
    std::cerr << "error: " << *err << "\n";
    return err->rfind("InconsistentSnapshots", 0) == 0 ? kExitPipeline : kExitConfig;
  }
  const auto& out = std::get<pl::RunOutputs>(result);
  std::printf("received=%llu deleted=%llu arrived=%llu quarantined=%llu alarms=%llu\n",
              static_cast<unsigned long long>(out.totals.received_at_fog),
              static_cast<unsigned long long>(out.totals.deleted_total),
              static_cast<unsigned long long>(out.totals.arrived_at_cloud),
              static_cast<unsigned long long>(out.totals.quarantined),
              static_cast<unsigned long long>(out.alarm_lines));
  std::printf("reports: %s %s\n", out.trips_csv.string().c_str(),
              out.totals_txt.string().c_str());
  return out.conservation_ok ? kExitOk : kExitPipeline;
}

int cmd_report(const std::string& store_dir, const std::string& schedule_override,
               std::uint64_t min_tuples) {
  namespace pl = fogcycle::pipeline;
  const auto result = pl::rerender_reports(store_dir, schedule_override, min_tuples);
  if (auto* err = std::get_if<std::string>(&result)) {
    std::cerr << "error: " << *err << "\n";
    return kExitConfig;
  }
  const auto& out = std::get<pl::RunOutputs>(result);
  std::printf("re-rendered %s and %s\n", out.trips_csv.string().c_str(),
              out.totals_txt.string().c_str());
  return kExitOk;
}

int cmd_broker(const std::string& listen) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) {
    std::cerr << "error: --listen needs host:port\n";
    return kExitConfig;
  }
  const std::string host = listen.substr(0, colon);
  const int port = std::atoi(listen.c_str() + colon + 1);
  if (port < 0 || port > 65535) {
    std::cerr << "error: bad port\n";
    return kExitConfig;
  }
  try {
    fogcycle::broker::Broker core;
    fogcycle::tcp::TcpBrokerServer server(core, host, static_cast<std::uint16_t>(port));
    server.start();
    std::printf("broker listening on %s:%u\n", host.c_str(), server.port());
    // Foreground until interrupted.
    static volatile std::sig_atomic_t stop = 0;
    std::signal(SIGINT, [](int) { stop = 1; });
    std::signal(SIGTERM, [](int) { stop = 1; });
    while (!stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fogcycle - edge/fog/cloud transit stream pipeline"};
  app.require_subcommand(1);

  // generate
  auto* generate = app.add_subcommand("generate", "Build a synthetic feed from a schedule");
  std::string g_schedule, g_feed, g_manifest, g_ledger;
  bool g_no_header = false;
  PlanFlags g_flags;
  generate->add_option("--schedule", g_schedule, "Schedule JSON file")->required();
  generate->add_option("--out-feed", g_feed, "Output feed CSV")->required();
  generate->add_option("--out-manifest", g_manifest, "Output manifest (JSON lines)");
  generate->add_option("--out-ledger", g_ledger, "Output defect ledger (JSON lines)");
  generate->add_flag("--no-header", g_no_header, "Omit the CSV header row");
  g_flags.add_to(generate);

  // corrupt
  auto* corrupt = app.add_subcommand("corrupt", "Inject defects into an existing feed");
  std::string c_in, c_out, c_ledger;
  PlanFlags c_flags;
  corrupt->add_option("--in", c_in, "Input feed CSV")->required();
  corrupt->add_option("--out", c_out, "Output feed CSV")->required();
  corrupt->add_option("--out-ledger", c_ledger, "Output defect ledger (JSON lines)");
  c_flags.add_to(corrupt);

  // run
  auto* run = app.add_subcommand("run", "Run the full edge/fog/cloud topology");
  std::string r_config, r_out_dir;
  std::uint64_t r_seed = 0;
  run->add_option("--config", r_config, "Topology config file")->required();
  run->add_option("--seed", r_seed, "Override the configured seed");
  run->add_option("--out-dir", r_out_dir, "Override the configured output directory");

  // report
  auto* report = app.add_subcommand("report", "Re-render reports from stored batches");
  std::string p_store, p_schedule;
  std::uint64_t p_min = 0;
  report->add_option("--store", p_store, "Run output directory")->required();
  report->add_option("--schedule", p_schedule, "Schedule override");
  report->add_option("--min-tuples-per-trip", p_min, "Performed-trip threshold override");

  // broker
  auto* broker_cmd = app.add_subcommand("broker", "Run a standalone TCP broker");
  std::string b_listen = "127.0.0.1:7411";
  broker_cmd->add_option("--listen", b_listen, "host:port to listen on");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (generate->parsed())
    return cmd_generate(g_schedule, g_feed, g_manifest, g_ledger, g_flags, g_no_header);
  if (corrupt->parsed()) return cmd_corrupt(c_in, c_out, c_ledger, c_flags);
  if (run->parsed()) return cmd_run(r_config, r_seed, r_out_dir);
  if (report->parsed()) return cmd_report(p_store, p_schedule, p_min);
  if (broker_cmd->parsed()) return cmd_broker(b_listen);
  return kExitConfig;
}
