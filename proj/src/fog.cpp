#include "fogcycle/fog.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "fogcycle/cloud.hpp"

namespace fogcycle::fog {

using ordered_json = nlohmann::ordered_json;

// ---- acquisition ----

AcquireResult acquire(const StreamPackage& pkg) {
  AcquireResult out;
  out.tuples.reserve(pkg.records.size());
  std::size_t line_no = 0;
  for (const auto& line : pkg.records) {
    ++line_no;
    auto parsed = parse_raw_record(line);
    if (auto* bad = std::get_if<MalformedRecord>(&parsed)) {
      bad->line_no = line_no;
      out.malformed.push_back(std::move(*bad));
    } else {
      out.tuples.push_back(std::move(std::get<RawTuple>(parsed)));
    }
  }
  return out;
}

// ---- id assignment ----

std::vector<NumberedTuple> assign_ids(std::vector<RawTuple> tuples, IdCounter& counter) {
  std::vector<NumberedTuple> out;
  out.reserve(tuples.size());
  for (auto& t : tuples) out.emplace_back(counter.next(), std::move(t));
  return out;
}

// ---- indexes ----

void DedupIndex::rotate(Timestamp window_start, Timestamp period) {
  if (!window_) {
    window_ = window_start;
    return;
  }
  if (window_start <= *window_) return;
  if (period > 0 && window_start - *window_ > period) {
    // Jumped more than one window: nothing recent enough to keep.
    previous_.clear();
    current_.clear();
  } else {
    previous_ = std::move(current_);
    current_.clear();
  }
  window_ = window_start;
}

bool DedupIndex::contains(const TupleKey& k) const {
  return current_.contains(k) || previous_.contains(k);
}

void DedupIndex::insert(const TupleKey& k) { current_.insert(k); }

std::optional<Timestamp> TripIndex::last_seen(const TripScope& s) const {
  const auto it = last_seen_.find(s);
  if (it == last_seen_.end()) return std::nullopt;
  return it->second;
}

void TripIndex::update(const TripScope& s, Timestamp t) {
  auto [it, inserted] = last_seen_.try_emplace(s, t);
  if (!inserted && t > it->second) it->second = t;
}

// ---- cleaning ----

namespace {

// Checked fields in schema order; rule (a) reports the first empty one.
constexpr std::size_t kCheckedFields[] = {kRouteIdRta, kTripIdBr,   kTripStart,
                                          kTripFinish,  kVehicleIdVlr, kLat,
                                          kLng,          kTimestamp};

struct ParsedValues {
  std::optional<Timestamp> trip_start;
  std::optional<Timestamp> trip_finish;
  std::optional<double> lat;
  std::optional<double> lng;
  std::optional<Timestamp> timestamp;
};

}  // namespace

CleanResult clean(const std::vector<NumberedTuple>& tuples, const CleanConfig& cfg,
                  DedupIndex& dedup, TripIndex& trips) {
  CleanResult out;
  const Timestamp cadence = cfg.cadence_seconds == 0 ? 1 : cfg.cadence_seconds;

  // Observed ticks per trip scope, fed by survivors and by attributable drops.
  std::map<TripScope, std::set<Timestamp>> timeline;
  std::map<TupleKey, std::uint64_t> dup_counts;

  auto observe = [&](const RawTuple& t, const ParsedValues& v) {
    if (t.route_id_rta().empty() || t.trip_id_br().empty() || t.vehicle_id_vlr().empty())
      return;
    if (!v.timestamp) return;
    if (v.trip_start && v.trip_finish &&
        (*v.timestamp < *v.trip_start - cfg.slack_seconds ||
         *v.timestamp > *v.trip_finish + cfg.slack_seconds))
      return;  // tick cannot be trusted
    timeline[{t.route_id_rta(), t.trip_id_br(), t.vehicle_id_vlr()}].insert(*v.timestamp);
  };

  for (const auto& [fog_id, t] : tuples) {
    ParsedValues v;
    v.trip_start = parse_timestamp(t.trip_start());
    v.trip_finish = parse_timestamp(t.trip_finish());
    v.lat = parse_decimal(t.lat());
    v.lng = parse_decimal(t.lng());
    v.timestamp = parse_timestamp(t.timestamp());

    // (a) missing attribute values
    std::string_view missing;
    for (std::size_t idx : kCheckedFields) {
      if (t[idx].empty()) {
        missing = field_names()[idx];
        break;
      }
    }
    if (!missing.empty()) {
      observe(t, v);
      out.drops.emplace_back(
          t, DropReason{DropCode::MissingAttributeValue, std::string(missing)});
      continue;
    }

    // (b) wrong attribute values: parse failures in schema order, then ranges
    std::string wrong;
    if (!v.trip_start) wrong = "trip_start";
    else if (!v.trip_finish) wrong = "trip_finish";
    else if (!v.lat) wrong = "lat";
    else if (!v.lng) wrong = "lng";
    else if (!v.timestamp) wrong = "timestamp";
    else if (*v.lat < -90.0 || *v.lat > 90.0) wrong = "lat";
    else if (*v.lng < -180.0 || *v.lng > 180.0) wrong = "lng";
    else if (*v.timestamp < *v.trip_start - cfg.slack_seconds ||
             *v.timestamp > *v.trip_finish + cfg.slack_seconds)
      wrong = "timestamp";
    if (!wrong.empty()) {
      observe(t, v);
      out.drops.emplace_back(t, DropReason{DropCode::WrongAttributeValue, wrong});
      continue;
    }

    // (c) duplicate check by TupleKey; the first occurrence survives
    TupleKey key{t.vehicle_id_vlr(), t.route_id_rta(), t.trip_id_br(), *v.timestamp};
    if (dedup.contains(key)) {
      ++dup_counts[key];
      observe(t, v);
      out.drops.emplace_back(t, DropReason{DropCode::DuplicateTuple, ""});
      continue;
    }
    dedup.insert(key);
    observe(t, v);

    // (d) projection drops the redundant attribute columns
    CanonicalTuple c;
    c.fog_id = fog_id;
    c.key = std::move(key);
    c.route_name = t.route_name();
    c.trip_start = *v.trip_start;
    c.trip_finish = *v.trip_finish;
    c.lat = *v.lat;
    c.lng = *v.lng;
    out.survivors.push_back(std::move(c));
  }

  // One DuplicateTuples alarm per offending key per window.
  for (const auto& [key, count] : dup_counts) {
    AlarmEvent a;
    a.kind = AlarmKind::DuplicateTuples;
    a.scope = {key.route_id_rta, key.trip_id_br, key.vehicle_id_vlr};
    a.key_timestamp = key.timestamp;
    a.duplicate_count = count;
    a.emitted_at = cfg.emitted_at;
    out.alarms.push_back(std::move(a));
  }

  // (e) gap scan per trip scope over the observed ticks.
  for (const auto& [scope, ticks] : timeline) {
    std::optional<Timestamp> prev = trips.last_seen(scope);
    for (const Timestamp tick : ticks) {
      if (prev && tick <= *prev) continue;  // stale or already charted
      if (prev) {
        const Timestamp gap = tick - *prev;
        if (gap >= 2 * cadence) {
          AlarmEvent a;
          a.kind = AlarmKind::MissingTuples;
          a.scope = scope;
          a.gap_start = *prev;
          a.gap_end = tick;
          a.estimated_missing = static_cast<std::uint64_t>(gap / cadence) - 1;
          a.emitted_at = cfg.emitted_at;
          out.alarms.push_back(std::move(a));
        }
      }
      prev = tick;
    }
    if (prev) trips.update(scope, *prev);
  }

  return out;
}

// ---- sorting ----

namespace {

bool sort_key_less(const CanonicalTuple& a, const CanonicalTuple& b) {
  if (a.key.route_id_rta != b.key.route_id_rta)
    return a.key.route_id_rta < b.key.route_id_rta;
  if (a.key.trip_id_br != b.key.trip_id_br) return a.key.trip_id_br < b.key.trip_id_br;
  return a.key.timestamp < b.key.timestamp;
}

}  // namespace

std::vector<CanonicalTuple> sort_window(std::vector<CanonicalTuple> tuples) {
  std::stable_sort(tuples.begin(), tuples.end(), sort_key_less);
  return tuples;
}

bool is_sorted_window(const std::vector<CanonicalTuple>& tuples) {
  for (std::size_t i = 1; i < tuples.size(); ++i)
    if (sort_key_less(tuples[i], tuples[i - 1])) return false;
  return true;
}

// ---- stream database ----

void StreamDatabase::store_tuple(Timestamp ws, Timestamp we, CanonicalTuple t) {
  auto& table = tables_[ws];
  if (table.window_end == 0) table.window_end = we;
  table.tuples.push_back(std::move(t));
}

void StreamDatabase::store_table(Timestamp ws, Timestamp we,
                                 std::vector<CanonicalTuple> tuples) {
  auto& table = tables_[ws];
  if (table.window_end == 0) table.window_end = we;
  if (table.tuples.empty()) {
    table.tuples = std::move(tuples);
  } else {
    for (auto& t : tuples) table.tuples.push_back(std::move(t));
  }
}

std::variant<std::vector<CanonicalTuple>, DbError> StreamDatabase::leverage(
    Timestamp ws) {
  const auto it = tables_.find(ws);
  if (it == tables_.end()) return DbError::UnknownWindow;
  if (it->second.state != TableState::Retained) return DbError::AlreadyUploaded;
  return sort_window(it->second.tuples);
}

std::optional<DbError> StreamDatabase::mark_uploaded(Timestamp ws, Timestamp now) {
  const auto it = tables_.find(ws);
  if (it == tables_.end()) return DbError::UnknownWindow;
  if (it->second.state != TableState::Retained) return DbError::AlreadyUploaded;
  it->second.state = TableState::Uploaded;
  it->second.uploaded_at = now;
  return std::nullopt;
}

std::optional<DbError> StreamDatabase::evict(Timestamp ws) {
  const auto it = tables_.find(ws);
  if (it == tables_.end()) return DbError::UnknownWindow;
  if (it->second.state == TableState::Retained) return DbError::EvictBeforeUpload;
  it->second.state = TableState::Evicted;
  it->second.tuples.clear();
  it->second.tuples.shrink_to_fit();
  return std::nullopt;
}

std::size_t StreamDatabase::evict_expired(Timestamp now) {
  std::size_t evicted = 0;
  for (auto& [ws, table] : tables_) {
    if (table.state == TableState::Uploaded &&
        table.uploaded_at + retention_ttl_ <= now) {
      table.state = TableState::Evicted;
      table.tuples.clear();
      table.tuples.shrink_to_fit();
      ++evicted;
    }
  }
  return evicted;
}

std::optional<TableState> StreamDatabase::state(Timestamp ws) const {
  const auto it = tables_.find(ws);
  if (it == tables_.end()) return std::nullopt;
  return it->second.state;
}

std::vector<Timestamp> StreamDatabase::retained_windows() const {
  std::vector<Timestamp> out;
  for (const auto& [ws, table] : tables_)
    if (table.state == TableState::Retained) out.push_back(ws);
  return out;
}

std::size_t StreamDatabase::tuples_in(Timestamp ws) const {
  const auto it = tables_.find(ws);
  return it == tables_.end() ? 0 : it->second.tuples.size();
}

// ---- monitoring ----

std::string_view task_name(Task t) {
  switch (t) {
    case Task::Transportation: return "transportation";
    case Task::Processing: return "processing";
    case Task::Acquisition: return "acquisition";
    case Task::Storage: return "storage";
    case Task::Leverage: return "leverage";
    case Task::Control: return "control";
  }
  return "unknown";
}

std::uint64_t TaskStatus::dropped_total() const {
  std::uint64_t n = 0;
  for (const auto& [reason, count] : tuples_dropped) n += count;
  return n;
}

// ---- fog node ----

FogNode::FogNode(FogConfig cfg) : cfg_(std::move(cfg)) {
  db_.set_retention_ttl(cfg_.retention_ttl_seconds);
}

void FogNode::attach(broker::Client& bus) {
  for (const auto& edge : cfg_.edge_ids) {
    bus.subscribe("packages/" + edge);
    bus.subscribe("control/" + edge);
  }
  if (cfg_.edge_ids.empty()) {
    bus.subscribe("packages/*");
    bus.subscribe("control/*");
  }
}

bool FogNode::pump(broker::Client& bus, std::chrono::milliseconds timeout) {
  if (paused_) return false;
  const auto delivery = bus.poll(timeout);
  if (!delivery) return false;
  if (delivery->topic.starts_with("packages/")) {
    if (const auto pkg = decode_package(delivery->payload)) {
      handle_package(*pkg, bus);
    }
  } else if (delivery->topic.starts_with("control/")) {
    if (const auto eos = decode_edge_eos(delivery->payload)) {
      handle_edge_eos(*eos, bus);
    }
  }
  return true;
}

Timestamp FogNode::watermark() const {
  // With an explicit edge list the watermark waits for every edge; in
  // wildcard mode it follows whatever edges have been observed so far.
  if (cfg_.edge_ids.empty()) {
    if (edges_.empty()) return std::numeric_limits<Timestamp>::min();
    Timestamp wm = std::numeric_limits<Timestamp>::max();
    bool any_live = false;
    for (const auto& [id, progress] : edges_) {
      if (progress.eos) continue;
      any_live = true;
      wm = std::min(wm, progress.latest_window_end);
    }
    return any_live ? wm : std::numeric_limits<Timestamp>::max();
  }
  Timestamp wm = std::numeric_limits<Timestamp>::max();
  bool any_live = false;
  for (const auto& id : cfg_.edge_ids) {
    const auto it = edges_.find(id);
    if (it == edges_.end()) return std::numeric_limits<Timestamp>::min();
    if (it->second.eos) continue;
    any_live = true;
    wm = std::min(wm, it->second.latest_window_end);
  }
  if (!any_live) return std::numeric_limits<Timestamp>::max();
  return wm;
}

void FogNode::handle_package(const StreamPackage& pkg, broker::Client& bus) {
  auto& progress = edges_[pkg.edge_id];
  progress.latest_window_end = std::max(progress.latest_window_end, pkg.window_end);
  ++progress.packages;

  transportation_.tuples_in += pkg.records.size();
  transportation_.tuples_out += pkg.records.size();
  transportation_.last_completed_window = pkg.window_start;

  if (!saw_any_package_ || pkg.window_start > open_window_)
    open_window_ = pkg.window_start;
  saw_any_package_ = true;
  logical_now_ = std::max(logical_now_, pkg.window_end);
  dedup_.rotate(open_window_, cfg_.package_period_seconds);

  // Block 1: acquisition (parse; quarantine malformed records).
  auto acquired = acquire(pkg);
  acquisition_.tuples_in += pkg.records.size();
  acquisition_.tuples_out += acquired.tuples.size();
  if (!acquired.malformed.empty()) {
    acquisition_.tuples_dropped[DropReason{DropCode::MalformedRecord, ""}] +=
        acquired.malformed.size();
    quarantine(pkg, acquired.malformed);
  }
  acquisition_.last_completed_window = pkg.window_start;

  // Block 2: unique id per tuple in arrival order.
  auto numbered = assign_ids(std::move(acquired.tuples), ids_);

  // Block 3: cleaning, sorting happens at table level, alarms go out now.
  CleanConfig clean_cfg{cfg_.cadence_seconds, cfg_.slack_seconds, pkg.window_end};
  auto cleaned = clean(numbered, clean_cfg, dedup_, trips_);
  processing_.tuples_in += numbered.size();
  processing_.tuples_out += cleaned.survivors.size();
  for (const auto& [tuple, reason] : cleaned.drops) ++processing_.tuples_dropped[reason];
  processing_.alarms_emitted += cleaned.alarms.size();
  processing_.last_completed_window = pkg.window_start;
  publish_alarms(cleaned.alarms, bus);

  // Block 4: tables in the stream database, keyed by event-time window.
  route_survivors(std::move(cleaned.survivors), pkg.window_start);

  upload_ready(bus);
}

void FogNode::route_survivors(std::vector<CanonicalTuple> survivors,
                              Timestamp arrival_window) {
  const Timestamp period = cfg_.package_period_seconds;
  for (auto& t : survivors) {
    const Timestamp ts = t.key.timestamp;
    const Timestamp w = (ts >= 0 ? ts / period : (ts - period + 1) / period) * period;
    const auto st = db_.state(w);
    storage_.tuples_in += 1;
    if (st && *st != TableState::Retained) {
      // The tuple's own window is gone; it rides the open table, flagged late.
      t.late = true;
      db_.store_tuple(arrival_window, arrival_window + period, std::move(t));
    } else {
      db_.store_tuple(w, w + period, std::move(t));
    }
  }
  storage_.last_completed_window = arrival_window;
}

void FogNode::upload_ready(broker::Client& bus) {
  const Timestamp wm = watermark();
  if (wm == std::numeric_limits<Timestamp>::min()) return;
  for (const Timestamp ws : db_.retained_windows()) {
    const Timestamp we = ws + cfg_.package_period_seconds;
    // One extra period of grace lets bounded scrambling settle.
    if (wm == std::numeric_limits<Timestamp>::max() ||
        we + cfg_.package_period_seconds <= wm) {
      upload_window(ws, logical_now_, bus);
    }
  }
  db_.evict_expired(logical_now_);
}

void FogNode::upload_window(Timestamp ws, Timestamp now, broker::Client& bus) {
  auto leveraged = db_.leverage(ws);
  if (std::holds_alternative<DbError>(leveraged)) return;
  auto tuples = std::move(std::get<std::vector<CanonicalTuple>>(leveraged));
  db_.mark_uploaded(ws, now);

  storage_.tuples_out += tuples.size();
  storage_.last_completed_window = ws;
  leverage_.tuples_in += tuples.size();
  leverage_.tuples_out += tuples.size();
  leverage_.last_completed_window = ws;

  if (tuples.empty()) return;  // nothing to ship for this window

  cloud::UploadHeader header;
  header.fog_id = cfg_.fog_id;
  header.window_start = ws;
  header.window_end = ws + cfg_.package_period_seconds;
  header.upload_seq = ++upload_seq_;
  header.fog_id_lo = tuples.front().fog_id;
  header.fog_id_hi = tuples.front().fog_id;
  for (const auto& t : tuples) {
    header.fog_id_lo = std::min(header.fog_id_lo, t.fog_id);
    header.fog_id_hi = std::max(header.fog_id_hi, t.fog_id);
  }
  bus.publish(std::string(kUploadTopic), cloud::encode_upload(header, tuples));
  ++uploads_published_;
}

void FogNode::flush_all(broker::Client& bus) {
  for (const Timestamp ws : db_.retained_windows())
    upload_window(ws, logical_now_, bus);
}

void FogNode::handle_edge_eos(const EdgeEos& eos, broker::Client& bus) {
  edges_[eos.edge_id].eos = true;
  maybe_finish(bus);
}

void FogNode::maybe_finish(broker::Client& bus) {
  if (finished_) return;
  for (const auto& id : cfg_.edge_ids) {
    const auto it = edges_.find(id);
    if (it == edges_.end() || !it->second.eos) return;
  }
  flush_all(bus);
  bus.publish(std::string(kUploadTopic),
              cloud::encode_fog_eos(cfg_.fog_id, uploads_published_, survivors_out()));
  finished_ = true;
}

void FogNode::admin(AdminCommand cmd, broker::Client& bus, Timestamp retention_ttl) {
  ++commands_handled_;
  control_.tuples_in += 1;
  control_.tuples_out += 1;
  switch (cmd) {
    case AdminCommand::Pause: paused_ = true; break;
    case AdminCommand::Resume: paused_ = false; break;
    case AdminCommand::Flush: flush_all(bus); break;
    case AdminCommand::SetRetention: db_.set_retention_ttl(retention_ttl); break;
  }
}

void FogNode::publish_alarms(const std::vector<AlarmEvent>& alarms, broker::Client& bus) {
  if (alarms.empty()) return;
  std::vector<broker::Envelope> envelopes;
  envelopes.reserve(alarms.size());
  for (const auto& a : alarms) {
    envelopes.push_back(broker::Envelope{std::string(kAlarmTopic), ++alarm_local_seq_,
                                         alarm_to_json(a, cfg_.fog_id)});
  }
  const auto batches = broker::aggregate(envelopes, cfg_.alarm_batch_max_bytes);
  for (const auto& b : *batches) bus.publish(std::string(kAlarmTopic), b.payload);
}

void FogNode::quarantine(const StreamPackage& pkg,
                         const std::vector<MalformedRecord>& bad) {
  if (cfg_.quarantine_dir.empty()) return;
  std::filesystem::create_directories(cfg_.quarantine_dir);
  const auto path = cfg_.quarantine_dir /
                    (cfg_.fog_id + "_" + std::to_string(pkg.window_start) + ".csv");
  std::ofstream f(path, std::ios::binary | std::ios::app);
  for (const auto& rec : bad) f << rec.line << '\n';
}

std::uint64_t FogNode::malformed_quarantined() const {
  const auto it = acquisition_.tuples_dropped.find(DropReason{DropCode::MalformedRecord, ""});
  return it == acquisition_.tuples_dropped.end() ? 0 : it->second;
}

std::uint64_t FogNode::dropped(DropCode code) const {
  std::uint64_t n = 0;
  for (const auto& [reason, count] : processing_.tuples_dropped)
    if (reason.code == code) n += count;
  return n;
}

std::vector<TaskStatus> FogNode::monitor_snapshot() const {
  return {transportation_, processing_, acquisition_, storage_, leverage_, control_};
}

std::string alarm_to_json(const AlarmEvent& a, const std::string& fog_id) {
  ordered_json j;
  j["kind"] = a.kind == AlarmKind::MissingTuples ? "missing_tuples" : "duplicate_tuples";
  j["fog"] = fog_id;
  j["route"] = a.scope.route_id_rta;
  j["trip"] = a.scope.trip_id_br;
  j["vehicle"] = a.scope.vehicle_id_vlr;
  if (a.kind == AlarmKind::MissingTuples) {
    j["gap_start"] = a.gap_start;
    j["gap_end"] = a.gap_end;
    j["estimated_missing"] = a.estimated_missing;
  } else {
    j["key_timestamp"] = a.key_timestamp;
    j["duplicate_count"] = a.duplicate_count;
  }
  j["emitted_at"] = a.emitted_at;
  return j.dump();
}

}  // namespace fogcycle::fog
