#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fogcycle/cloud.hpp"
#include "fogcycle/feedgen.hpp"
#include "fogcycle/model.hpp"

namespace fogcycle::tcp {
class TcpBrokerServer;
}

namespace fogcycle::pipeline {

enum class BrokerMode { InProcess, Tcp };

// Topology and knobs for one run. Loaded from a key = value config file
// (schema documented in the README); FOGCYCLE_FEED / FOGCYCLE_SCHEDULE /
// FOGCYCLE_OUT_DIR environment variables override those paths.
struct TopologyConfig {
  std::uint32_t edges = 1;
  std::uint32_t fogs = 1;
  BrokerMode broker_mode = BrokerMode::InProcess;
  std::string tcp_host = "127.0.0.1";
  std::uint16_t tcp_port = 0;  // 0 picks an ephemeral port

  std::uint32_t cadence_seconds = 5;
  std::uint32_t package_period_seconds = 300;
  Timestamp retention_seconds = 86400;
  Timestamp slack_seconds = 120;
  std::uint64_t min_tuples_per_trip = 1;
  std::uint64_t rng_seed = 1;
  std::size_t alarm_batch_bytes = 4096;
  std::size_t queue_high_water = 1u << 20;

  std::filesystem::path feed_path;
  std::filesystem::path schedule_path;
  std::filesystem::path out_dir;

  static std::variant<TopologyConfig, std::string> load_file(
      const std::filesystem::path& path);
  static std::variant<TopologyConfig, std::string> parse(
      std::string_view text, const std::filesystem::path& base_dir);
  std::optional<std::string> validate() const;
};

struct RunOutputs {
  cloud::Totals totals;
  std::vector<cloud::FogTotalsSnapshot> fog_snapshots;
  std::vector<TripReportRow> rows;
  std::uint64_t alarm_lines = 0;
  bool conservation_ok = false;
  std::filesystem::path trips_csv;
  std::filesystem::path totals_txt;
  std::filesystem::path alarms_log;
  std::filesystem::path metrics_log;
};

// Mid-run fault injection for distributed-mode tests.
struct TcpRunHooks {
  std::chrono::milliseconds after{0};
  std::function<void(tcp::TcpBrokerServer&)> action;
};

// Runs the whole topology to end-of-stream and writes reports under
// out_dir/report, logs under out_dir, state under out_dir/state. In-process
// mode is a deterministic single-threaded event loop; TCP mode runs each node
// on its own thread over loopback.
std::variant<RunOutputs, std::string> run_pipeline(const TopologyConfig& cfg,
                                                   const TcpRunHooks* hooks = nullptr);

// Re-renders reports from a previous run's stored batches without re-running
// the pipeline. min_tuples_per_trip == 0 keeps the recorded value.
std::variant<RunOutputs, std::string> rerender_reports(
    const std::filesystem::path& out_dir, const std::filesystem::path& schedule_override,
    std::uint64_t min_tuples_per_trip);

// Deterministic vehicle -> edge assignment used to split a feed.
std::size_t edge_for_vehicle(const std::string& vehicle_id, std::size_t edges);
std::vector<std::vector<std::string>> partition_feed(const std::vector<std::string>& lines,
                                                     std::size_t edges);

}  // namespace fogcycle::pipeline
