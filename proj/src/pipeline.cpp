#include "fogcycle/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fogcycle/broker.hpp"
#include "fogcycle/edge.hpp"
#include "fogcycle/fog.hpp"
#include "fogcycle/rng.hpp"
#include "fogcycle/tcp.hpp"

namespace fogcycle::pipeline {

using ordered_json = nlohmann::ordered_json;

// ---- config ----

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::optional<std::uint64_t> to_u64(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return v;
}

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::string& value) {
  std::filesystem::path p(value);
  if (p.is_absolute() || base.empty()) return p;
  return base / p;
}

}  // namespace

std::variant<TopologyConfig, std::string> TopologyConfig::parse(
    std::string_view text, const std::filesystem::path& base_dir) {
  TopologyConfig cfg;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      return "config line " + std::to_string(line_no) + ": expected key = value";
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty())
      return "config line " + std::to_string(line_no) + ": empty value for " + key;

    const auto as_uint = [&]() -> std::optional<std::uint64_t> { return to_u64(value); };

    if (key == "feed") cfg.feed_path = resolve(base_dir, value);
    else if (key == "schedule") cfg.schedule_path = resolve(base_dir, value);
    else if (key == "out_dir") cfg.out_dir = resolve(base_dir, value);
    else if (key == "edges") {
      const auto v = as_uint();
      if (!v || *v == 0) return "config line " + std::to_string(line_no) + ": edges must be a positive integer";
      cfg.edges = static_cast<std::uint32_t>(*v);
    } else if (key == "fogs") {
      const auto v = as_uint();
      if (!v || *v == 0) return "config line " + std::to_string(line_no) + ": fogs must be a positive integer";
      cfg.fogs = static_cast<std::uint32_t>(*v);
    } else if (key == "broker") {
      if (value == "inprocess") {
        cfg.broker_mode = BrokerMode::InProcess;
      } else if (value.rfind("tcp:", 0) == 0) {
        cfg.broker_mode = BrokerMode::Tcp;
        const std::string rest = value.substr(4);
        const auto colon = rest.rfind(':');
        if (colon == std::string::npos)
          return "config line " + std::to_string(line_no) + ": broker tcp needs host:port";
        cfg.tcp_host = rest.substr(0, colon);
        const auto port = to_u64(rest.substr(colon + 1));
        if (!port || *port > 65535)
          return "config line " + std::to_string(line_no) + ": bad tcp port";
        cfg.tcp_port = static_cast<std::uint16_t>(*port);
      } else {
        return "config line " + std::to_string(line_no) +
               ": broker must be inprocess or tcp:<host>:<port>";
      }
    } else if (key == "package_period_seconds") {
      const auto v = as_uint();
      if (!v || *v == 0) return "config line " + std::to_string(line_no) + ": package_period_seconds must be positive";
      cfg.package_period_seconds = static_cast<std::uint32_t>(*v);
    } else if (key == "cadence_seconds") {
      const auto v = as_uint();
      if (!v || *v == 0) return "config line " + std::to_string(line_no) + ": cadence_seconds must be positive";
      cfg.cadence_seconds = static_cast<std::uint32_t>(*v);
    } else if (key == "retention_seconds") {
      const auto v = as_uint();
      if (!v || *v == 0) return "config line " + std::to_string(line_no) + ": retention_seconds must be positive";
      cfg.retention_seconds = static_cast<Timestamp>(*v);
    } else if (key == "slack_seconds") {
      const auto v = as_uint();
      if (!v) return "config line " + std::to_string(line_no) + ": slack_seconds must be an integer";
      cfg.slack_seconds = static_cast<Timestamp>(*v);
    } else if (key == "min_tuples_per_trip") {
      const auto v = as_uint();
      if (!v || *v == 0) return "config line " + std::to_string(line_no) + ": min_tuples_per_trip must be positive";
      cfg.min_tuples_per_trip = *v;
    } else if (key == "seed") {
      const auto v = as_uint();
      if (!v) return "config line " + std::to_string(line_no) + ": seed must be an integer";
      cfg.rng_seed = *v;
    } else if (key == "alarm_batch_bytes") {
      const auto v = as_uint();
      if (!v || *v == 0) return "config line " + std::to_string(line_no) + ": alarm_batch_bytes must be positive";
      cfg.alarm_batch_bytes = *v;
    } else if (key == "queue_high_water") {
      const auto v = as_uint();
      if (!v || *v == 0) return "config line " + std::to_string(line_no) + ": queue_high_water must be positive";
      cfg.queue_high_water = *v;
    } else {
      return "config line " + std::to_string(line_no) + ": unknown key " + key;
    }
  }

  // Environment overrides, paths only.
  if (const char* env = std::getenv("FOGCYCLE_FEED")) cfg.feed_path = env;
  if (const char* env = std::getenv("FOGCYCLE_SCHEDULE")) cfg.schedule_path = env;
  if (const char* env = std::getenv("FOGCYCLE_OUT_DIR")) cfg.out_dir = env;

  if (auto err = cfg.validate()) return *err;
  return cfg;
}

std::variant<TopologyConfig, std::string> TopologyConfig::load_file(
    const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return "cannot open config: " + path.string();
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse(text, path.parent_path());
}

std::optional<std::string> TopologyConfig::validate() const {
  if (edges == 0) return "at least one edge is required";
  if (fogs == 0) return "at least one fog is required";
  if (feed_path.empty()) return "feed path is required";
  if (schedule_path.empty()) return "schedule path is required";
  if (out_dir.empty()) return "out_dir is required";
  if (package_period_seconds == 0 || cadence_seconds == 0)
    return "durations must be positive";
  if (retention_seconds <= 0) return "retention_seconds must be positive";
  if (slack_seconds < 0) return "slack_seconds must be non-negative";
  return std::nullopt;
}

// ---- feed partitioning ----

std::size_t edge_for_vehicle(const std::string& vehicle_id, std::size_t edges) {
  if (edges <= 1) return 0;
  return fnv1a64(vehicle_id.data(), vehicle_id.size()) % edges;
}

std::vector<std::vector<std::string>> partition_feed(const std::vector<std::string>& lines,
                                                     std::size_t edges) {
  std::vector<std::vector<std::string>> out(std::max<std::size_t>(edges, 1));
  for (const auto& line : lines) {
    std::size_t target = 0;
    if (edges > 1) {
      const auto fields = split_csv_line(line);
      if (fields && fields->size() == kFieldCount) {
        target = edge_for_vehicle((*fields)[kVehicleIdVlr], edges);
      }
    }
    out[target].push_back(line);
  }
  return out;
}

// ---- shared run plumbing ----

namespace {

struct Reporter {
  std::filesystem::path out_dir;
  std::ofstream alarms;
  std::ofstream metrics;
  std::uint64_t alarm_lines = 0;

  explicit Reporter(const std::filesystem::path& dir) : out_dir(dir) {
    std::filesystem::create_directories(dir);
    std::filesystem::create_directories(dir / "report");
    std::filesystem::create_directories(dir / "state");
    alarms.open(dir / "alarms.jsonl", std::ios::binary);
    metrics.open(dir / "metrics.jsonl", std::ios::binary);
  }

  void metric(const ordered_json& j) { metrics << j.dump() << '\n'; }

  void alarm_payload(const std::string& topic, std::uint64_t seq,
                     const std::string& payload) {
    // Alarm publishes may be aggregated batches; unpack to one line each.
    broker::Envelope e{topic, seq, payload};
    for (const auto& member : broker::decompose(e)) {
      alarms << member.payload << '\n';
      ++alarm_lines;
    }
  }
};

cloud::FogTotalsSnapshot snapshot_of(const fog::FogNode& node) {
  cloud::FogTotalsSnapshot s;
  s.fog_id = node.config().fog_id;
  s.records_received = node.records_received();
  s.malformed_quarantined = node.malformed_quarantined();
  s.dropped_missing_attribute = node.dropped(DropCode::MissingAttributeValue);
  s.dropped_wrong_value = node.dropped(DropCode::WrongAttributeValue);
  s.dropped_duplicate = node.dropped(DropCode::DuplicateTuple);
  s.survivors = node.survivors_out();
  s.alarms = node.alarms_emitted();
  return s;
}

std::variant<RunOutputs, std::string> finish_run(const TopologyConfig& cfg,
                                                 Reporter& reporter,
                                                 cloud::CloudStore& store,
                                                 std::vector<cloud::FogTotalsSnapshot> snaps,
                                                 const feedgen::Schedule& schedule) {
  RunOutputs out;
  out.fog_snapshots = std::move(snaps);

  const auto totals_result = cloud::totals(store, out.fog_snapshots);
  if (auto* err = std::get_if<std::string>(&totals_result)) {
    // Still render what we can; the caller maps this to exit code 3.
    out.conservation_ok = false;
    reporter.metric({{"event", "conservation_violation"}, {"detail", *err}});
    return *err;
  }
  out.totals = std::get<cloud::Totals>(totals_result);
  out.conservation_ok = true;

  out.rows = cloud::map_reduce_trips(store, schedule, cfg.min_tuples_per_trip);

  out.trips_csv = reporter.out_dir / "report" / "trips.csv";
  out.totals_txt = reporter.out_dir / "report" / "totals.txt";
  out.alarms_log = reporter.out_dir / "alarms.jsonl";
  out.metrics_log = reporter.out_dir / "metrics.jsonl";
  out.alarm_lines = reporter.alarm_lines;

  {
    std::ofstream f(out.trips_csv, std::ios::binary);
    f << cloud::render_trips_csv(out.rows);
  }
  {
    std::ofstream f(out.totals_txt, std::ios::binary);
    f << cloud::render_totals_text(out.totals, out.fog_snapshots);
  }
  {
    std::ofstream f(reporter.out_dir / "state" / "fog_snapshots.jsonl", std::ios::binary);
    for (const auto& s : out.fog_snapshots) f << cloud::fog_snapshot_to_json(s) << '\n';
  }
  {
    std::ofstream f(reporter.out_dir / "state" / "run.info", std::ios::binary);
    f << "schedule = " << std::filesystem::absolute(cfg.schedule_path).string() << '\n';
    f << "min_tuples_per_trip = " << cfg.min_tuples_per_trip << '\n';
    f << "seed = " << cfg.rng_seed << '\n';
  }

  reporter.metric({{"event", "run_end"},
                   {"received", out.totals.received_at_fog},
                   {"deleted", out.totals.deleted_total},
                   {"arrived", out.totals.arrived_at_cloud},
                   {"quarantined", out.totals.quarantined},
                   {"alarms", reporter.alarm_lines}});
  return out;
}

std::variant<RunOutputs, std::string> run_inprocess(const TopologyConfig& cfg,
                                                    const feedgen::Schedule& schedule,
                                                    std::vector<std::string> lines) {
  Reporter reporter(cfg.out_dir);
  reporter.metric({{"event", "run_start"},
                   {"mode", "inprocess"},
                   {"edges", cfg.edges},
                   {"fogs", cfg.fogs},
                   {"seed", cfg.rng_seed},
                   {"records", lines.size()}});

  broker::BrokerOptions bopts;
  bopts.high_water_mark = cfg.queue_high_water;
  broker::Broker bus(bopts);

  auto slices = partition_feed(lines, cfg.edges);
  lines.clear();
  lines.shrink_to_fit();

  // Edges, fogs (edges assigned round-robin), cloud, plus the orchestrator's
  // own view of alarms and packages for logging.
  std::vector<std::unique_ptr<edge::EdgeNode>> edges;
  std::vector<std::unique_ptr<broker::InProcessClient>> edge_clients;
  for (std::uint32_t i = 0; i < cfg.edges; ++i) {
    const std::string id = "edge" + std::to_string(i + 1);
    edge::EdgeConfig ec{id, cfg.package_period_seconds};
    edges.push_back(std::make_unique<edge::EdgeNode>(ec, std::move(slices[i])));
    edge_clients.push_back(std::make_unique<broker::InProcessClient>(bus, id));
  }

  std::vector<std::unique_ptr<fog::FogNode>> fogs;
  std::vector<std::unique_ptr<broker::InProcessClient>> fog_clients;
  for (std::uint32_t i = 0; i < cfg.fogs; ++i) {
    fog::FogConfig fc;
    fc.fog_id = "fog" + std::to_string(i + 1);
    for (std::uint32_t e = i; e < cfg.edges; e += cfg.fogs)
      fc.edge_ids.push_back("edge" + std::to_string(e + 1));
    fc.package_period_seconds = cfg.package_period_seconds;
    fc.cadence_seconds = cfg.cadence_seconds;
    fc.slack_seconds = cfg.slack_seconds;
    fc.retention_ttl_seconds = cfg.retention_seconds;
    fc.quarantine_dir = cfg.out_dir / "quarantine";
    fc.alarm_batch_max_bytes = cfg.alarm_batch_bytes;
    fogs.push_back(std::make_unique<fog::FogNode>(std::move(fc)));
    fog_clients.push_back(std::make_unique<broker::InProcessClient>(
        bus, "fog" + std::to_string(i + 1)));
    fogs.back()->attach(*fog_clients.back());
  }

  cloud::CloudNode cloud_node(cfg.fogs, cfg.out_dir / "state" / "batches");
  broker::InProcessClient cloud_client(bus, "cloud");
  cloud_node.attach(cloud_client);

  broker::InProcessClient watch(bus, "orchestrator");
  watch.subscribe("alarms");
  watch.subscribe("packages/*");

  Timestamp sim_now = 0;
  const auto drain_watch = [&] {
    while (const auto d = watch.poll(std::chrono::milliseconds(0))) {
      if (d->topic == "alarms") {
        reporter.alarm_payload(d->topic, d->seq, d->payload);
      } else if (const auto pkg = decode_package(d->payload)) {
        sim_now = std::max(sim_now, pkg->window_end);
        reporter.metric({{"event", "package"},
                         {"edge", pkg->edge_id},
                         {"seq", pkg->seq},
                         {"window_start", pkg->window_start},
                         {"records", pkg->records.size()}});
      }
    }
    // The package clock doubles as the broker's simulated time; everything is
    // drained in lockstep, so expiry only trims history nobody needs.
    bus.advance_time(sim_now);
  };

  // Deterministic event loop: one package per edge per round, then drain.
  bool edges_active = true;
  while (edges_active) {
    edges_active = false;
    for (std::uint32_t i = 0; i < cfg.edges; ++i) {
      if (!edges[i]->finished()) {
        edges[i]->step(*edge_clients[i]);
        if (!edges[i]->finished()) edges_active = true;
      }
    }
    for (std::uint32_t i = 0; i < cfg.fogs; ++i) {
      while (fogs[i]->pump(*fog_clients[i], std::chrono::milliseconds(0))) {
      }
    }
    while (cloud_node.pump(cloud_client, std::chrono::milliseconds(0))) {
    }
    drain_watch();
  }
  // Let any tail work settle (fog EOS handling publishes final uploads).
  for (std::uint32_t i = 0; i < cfg.fogs; ++i) {
    while (fogs[i]->pump(*fog_clients[i], std::chrono::milliseconds(0))) {
    }
  }
  while (cloud_node.pump(cloud_client, std::chrono::milliseconds(0))) {
  }
  drain_watch();

  for (std::uint32_t i = 0; i < cfg.edges; ++i) {
    reporter.metric({{"event", "edge_eos"},
                     {"edge", "edge" + std::to_string(i + 1)},
                     {"packages", edges[i]->packages_published()},
                     {"records", edges[i]->records_published()}});
  }

  std::vector<cloud::FogTotalsSnapshot> snaps;
  for (const auto& f : fogs) snaps.push_back(snapshot_of(*f));
  return finish_run(cfg, reporter, cloud_node.store(), std::move(snaps), schedule);
}

std::variant<RunOutputs, std::string> run_tcp(const TopologyConfig& cfg,
                                              const feedgen::Schedule& schedule,
                                              std::vector<std::string> lines,
                                              const TcpRunHooks* hooks) {
  Reporter reporter(cfg.out_dir);
  reporter.metric({{"event", "run_start"},
                   {"mode", "tcp"},
                   {"edges", cfg.edges},
                   {"fogs", cfg.fogs},
                   {"records", lines.size()}});

  broker::BrokerOptions bopts;
  bopts.high_water_mark = cfg.queue_high_water;
  broker::Broker core(bopts);
  tcp::TcpBrokerServer server(core, cfg.tcp_host, cfg.tcp_port);
  server.start();
  const std::uint16_t port = server.port();

  auto slices = partition_feed(lines, cfg.edges);
  lines.clear();
  lines.shrink_to_fit();

  std::vector<std::unique_ptr<fog::FogNode>> fogs;
  for (std::uint32_t i = 0; i < cfg.fogs; ++i) {
    fog::FogConfig fc;
    fc.fog_id = "fog" + std::to_string(i + 1);
    for (std::uint32_t e = i; e < cfg.edges; e += cfg.fogs)
      fc.edge_ids.push_back("edge" + std::to_string(e + 1));
    fc.package_period_seconds = cfg.package_period_seconds;
    fc.cadence_seconds = cfg.cadence_seconds;
    fc.slack_seconds = cfg.slack_seconds;
    fc.retention_ttl_seconds = cfg.retention_seconds;
    fc.quarantine_dir = cfg.out_dir / "quarantine";
    fc.alarm_batch_max_bytes = cfg.alarm_batch_bytes;
    fogs.push_back(std::make_unique<fog::FogNode>(std::move(fc)));
  }
  cloud::CloudNode cloud_node(cfg.fogs, cfg.out_dir / "state" / "batches");

  std::vector<std::thread> threads;

  threads.emplace_back([&] {
    tcp::TcpBrokerClient client("cloud", cfg.tcp_host, port);
    cloud_node.attach(client);
    while (!cloud_node.finished()) {
      cloud_node.pump(client, std::chrono::milliseconds(50));
    }
    client.close();
  });

  for (std::uint32_t i = 0; i < cfg.fogs; ++i) {
    threads.emplace_back([&, i] {
      tcp::TcpBrokerClient client(fogs[i]->config().fog_id, cfg.tcp_host, port);
      fogs[i]->attach(client);
      while (!fogs[i]->finished()) {
        fogs[i]->pump(client, std::chrono::milliseconds(50));
      }
      client.close();
    });
  }

  for (std::uint32_t i = 0; i < cfg.edges; ++i) {
    threads.emplace_back([&, i, slice = std::move(slices[i])]() mutable {
      const std::string id = "edge" + std::to_string(i + 1);
      edge::EdgeNode node(edge::EdgeConfig{id, cfg.package_period_seconds},
                          std::move(slice));
      tcp::TcpBrokerClient client(id, cfg.tcp_host, port);
      node.run(client);
      client.close();
    });
  }

  tcp::TcpBrokerClient watch("orchestrator", cfg.tcp_host, port);
  watch.subscribe("alarms");
  if (hooks && hooks->action) {
    std::this_thread::sleep_for(hooks->after);
    hooks->action(server);
  }
  // Drain alarms while the topology runs; the cloud finishing implies every
  // fog flushed and every edge hit end-of-stream.
  while (!cloud_node.finished()) {
    while (const auto d = watch.poll(std::chrono::milliseconds(20))) {
      reporter.alarm_payload(d->topic, d->seq, d->payload);
    }
  }
  for (auto& t : threads) t.join();
  // Tail alarms.
  while (const auto d = watch.poll(std::chrono::milliseconds(200))) {
    reporter.alarm_payload(d->topic, d->seq, d->payload);
  }
  watch.close();
  server.stop();

  std::vector<cloud::FogTotalsSnapshot> snaps;
  for (const auto& f : fogs) snaps.push_back(snapshot_of(*f));
  return finish_run(cfg, reporter, cloud_node.store(), std::move(snaps), schedule);
}

}  // namespace

std::variant<RunOutputs, std::string> run_pipeline(const TopologyConfig& cfg,
                                                   const TcpRunHooks* hooks) {
  if (auto err = cfg.validate()) return *err;
  auto schedule_result = feedgen::load_schedule(cfg.schedule_path);
  if (auto* err = std::get_if<std::string>(&schedule_result)) return *err;
  const auto& schedule = std::get<feedgen::Schedule>(schedule_result);

  std::vector<std::string> lines;
  try {
    lines = feedgen::read_feed_lines(cfg.feed_path);
  } catch (const std::exception& e) {
    return std::string(e.what());
  }

  if (cfg.broker_mode == BrokerMode::InProcess)
    return run_inprocess(cfg, schedule, std::move(lines));
  return run_tcp(cfg, schedule, std::move(lines), hooks);
}

// ---- report re-rendering ----

std::variant<RunOutputs, std::string> rerender_reports(
    const std::filesystem::path& out_dir, const std::filesystem::path& schedule_override,
    std::uint64_t min_tuples_per_trip) {
  const auto state = out_dir / "state";
  if (!std::filesystem::exists(state / "run.info"))
    return "missing artifacts: " + (state / "run.info").string();

  std::filesystem::path schedule_path = schedule_override;
  std::uint64_t min_tuples = min_tuples_per_trip;
  {
    std::ifstream f(state / "run.info", std::ios::binary);
    std::string line;
    while (std::getline(f, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key == "schedule" && schedule_path.empty()) schedule_path = value;
      if (key == "min_tuples_per_trip" && min_tuples == 0)
        min_tuples = to_u64(value).value_or(1);
    }
  }
  if (min_tuples == 0) min_tuples = 1;
  if (schedule_path.empty()) return std::string("missing artifacts: no schedule recorded");

  auto schedule_result = feedgen::load_schedule(schedule_path);
  if (auto* err = std::get_if<std::string>(&schedule_result)) return *err;
  const auto& schedule = std::get<feedgen::Schedule>(schedule_result);

  std::vector<cloud::FogTotalsSnapshot> snaps;
  {
    std::ifstream f(state / "fog_snapshots.jsonl", std::ios::binary);
    if (!f) return "missing artifacts: " + (state / "fog_snapshots.jsonl").string();
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto s = cloud::fog_snapshot_from_json(line);
      if (!s) return std::string("corrupt fog snapshot line");
      snaps.push_back(*s);
    }
  }

  cloud::CloudStore store;
  std::vector<std::filesystem::path> files;
  const auto batches_dir = state / "batches";
  if (std::filesystem::exists(batches_dir)) {
    for (const auto& entry : std::filesystem::directory_iterator(batches_dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    std::ifstream f(file, std::ios::binary);
    std::string payload((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto result = store.ingest_batch(payload);
    if (std::holds_alternative<std::string>(result))
      return "corrupt stored batch: " + file.string();
  }

  RunOutputs out;
  out.fog_snapshots = std::move(snaps);
  const auto totals_result = cloud::totals(store, out.fog_snapshots);
  if (auto* err = std::get_if<std::string>(&totals_result)) return *err;
  out.totals = std::get<cloud::Totals>(totals_result);
  out.conservation_ok = true;
  out.rows = cloud::map_reduce_trips(store, schedule, min_tuples);
  out.trips_csv = out_dir / "report" / "trips.csv";
  out.totals_txt = out_dir / "report" / "totals.txt";
  std::filesystem::create_directories(out_dir / "report");
  {
    std::ofstream f(out.trips_csv, std::ios::binary);
    f << cloud::render_trips_csv(out.rows);
  }
  {
    std::ofstream f(out.totals_txt, std::ios::binary);
    f << cloud::render_totals_text(out.totals, out.fog_snapshots);
  }
  return out;
}

}  // namespace fogcycle::pipeline
