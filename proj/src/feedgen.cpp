#include "fogcycle/feedgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "fogcycle/rng.hpp"

namespace fogcycle::feedgen {

using ordered_json = nlohmann::ordered_json;

std::optional<std::string> Schedule::validate() const {
  if (cadence_seconds == 0) return "cadence_seconds must be positive";
  for (const auto& route : routes) {
    if (route.route_id_rta.empty()) return "route with empty route_id_rta";
    std::map<std::string, int> trip_ids;
    for (const auto& trip : route.trips) {
      if (trip.trip_id_br.empty())
        return "route " + route.route_id_rta + ": trip with empty trip_id_br";
      if (trip.vehicle_id_vlr.empty())
        return "route " + route.route_id_rta + ": trip " + trip.trip_id_br +
               " has empty vehicle_id_vlr";
      if (trip.trip_start >= trip.trip_finish)
        return "route " + route.route_id_rta + ": trip " + trip.trip_id_br +
               " has trip_start >= trip_finish";
      if (++trip_ids[trip.trip_id_br] > 1)
        return "route " + route.route_id_rta + ": duplicate trip_id_br " +
               trip.trip_id_br;
    }
  }
  return std::nullopt;
}

std::uint64_t Schedule::scheduled_trip_total() const {
  std::uint64_t n = 0;
  for (const auto& r : routes) n += r.trips.size();
  return n;
}

namespace {

double frac(double x) { return x - std::floor(x); }

// Triangle wave in [0, 1]; pure arithmetic so outputs are platform-stable.
double tri(double x) { return 1.0 - std::fabs(2.0 * frac(x) - 1.0); }

struct PendingTuple {
  Timestamp ts;
  std::uint32_t order;  // schedule order, for a stable merge
  RawTuple tuple;
};

}  // namespace

Feed generate_clean_feed(const Schedule& s, FeedManifest* manifest, const GeoBox& box) {
  if (auto err = s.validate()) throw InvalidSchedule(*err);

  std::vector<PendingTuple> pending;
  FeedManifest local;
  local.cadence_seconds = s.cadence_seconds;

  std::uint32_t order = 0;
  for (const auto& route : s.routes) {
    const std::string route_name =
        route.route_name.empty() ? "Route " + route.route_id_rta : route.route_name;
    for (const auto& trip : route.trips) {
      const std::uint64_t vh = fnv1a64(trip.vehicle_id_vlr.data(),
                                       trip.vehicle_id_vlr.size());
      const double lat_phase = static_cast<double>(vh % 997) / 997.0;
      const double lng_phase = static_cast<double>((vh >> 13) % 991) / 991.0;

      TripManifestRow row;
      row.scope = {route.route_id_rta, trip.trip_id_br, trip.vehicle_id_vlr};
      row.first_ts = trip.trip_start;

      std::uint64_t k = 0;
      for (Timestamp ts = trip.trip_start; ts <= trip.trip_finish;
           ts += s.cadence_seconds, ++k) {
        RawTuple t;
        t[kRouteIdVlr] = "rv-" + route.route_id_rta;
        t[kRouteName] = route_name;
        t[kRouteIdRta] = route.route_id_rta;
        t[kRouteNickname] = "R" + route.route_id_rta;
        t[kTripIdBr] = trip.trip_id_br;
        t[kServiceTimeId] = "st-" + trip.trip_id_br;
        t[kTripIdTta] = "tta-" + trip.trip_id_br;
        t[kTripStart] = std::to_string(trip.trip_start);
        t[kTripFinish] = std::to_string(trip.trip_finish);
        t[kVehicleIdYab] = "yab-" + trip.vehicle_id_vlr;
        t[kVehicleIdVlr] = trip.vehicle_id_vlr;
        t[kVehicleIdVlrTa] = "Bus " + trip.vehicle_id_vlr;
        t[kBdescription] = "40 ft, low floor";
        const double step = static_cast<double>(k) * 0.0137;
        t[kLat] = format_decimal(box.lat_min +
                                 tri(lat_phase + step) * (box.lat_max - box.lat_min));
        t[kLng] = format_decimal(box.lng_min +
                                 tri(lng_phase + step * 0.81) * (box.lng_max - box.lng_min));
        t[kTimestamp] = std::to_string(ts);
        pending.push_back({ts, order, std::move(t)});
        row.last_ts = ts;
        ++row.tuple_count;
      }
      ++order;
      local.total_tuples += row.tuple_count;
      local.trips.push_back(std::move(row));
    }
  }

  // Arrival order: by timestamp, schedule order breaking ties.
  std::stable_sort(pending.begin(), pending.end(),
                   [](const PendingTuple& a, const PendingTuple& b) {
                     if (a.ts != b.ts) return a.ts < b.ts;
                     return a.order < b.order;
                   });

  Feed feed;
  feed.tuples.reserve(pending.size());
  std::uint64_t vlr = 0;
  for (auto& p : pending) {
    p.tuple[kVlrId] = "vlr-" + std::to_string(++vlr);
    feed.tuples.push_back(std::move(p.tuple));
  }
  if (manifest) *manifest = std::move(local);
  return feed;
}

// ---- corruption -------------------------------------------------------------

std::string_view defect_type_name(DefectType t) {
  switch (t) {
    case DefectType::Duplicate: return "duplicate";
    case DefectType::Drop: return "drop";
    case DefectType::BlankField: return "blank_field";
    case DefectType::WrongValue: return "wrong_value";
  }
  return "unknown";
}

std::uint64_t DefectLedger::count(DefectType t) const {
  std::uint64_t n = 0;
  for (const auto& e : entries)
    if (e.type == t) ++n;
  return n;
}

std::uint64_t DefectLedger::count_wrong(std::string_view field) const {
  std::uint64_t n = 0;
  for (const auto& e : entries)
    if (e.type == DefectType::WrongValue && e.field == field) ++n;
  return n;
}

std::optional<std::string> CorruptionPlan::validate() const {
  for (double r : {duplicate_rate, drop_rate, blank_field_rate, wrong_value_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) return "rates must lie in [0, 1]";
  }
  if (duplicate_rate + drop_rate + blank_field_rate + wrong_value_rate > 1.0 + 1e-12)
    return "defects are mutually exclusive; rates must sum to at most 1";
  if (wrong_value_field != "lat" && wrong_value_field != "timestamp")
    return "wrong_value_field must be \"lat\" or \"timestamp\"";
  return std::nullopt;
}

namespace {

TupleKey best_effort_key(const RawTuple& t) {
  TupleKey k;
  k.vehicle_id_vlr = t.vehicle_id_vlr();
  k.route_id_rta = t.route_id_rta();
  k.trip_id_br = t.trip_id_br();
  k.timestamp = parse_timestamp(t.timestamp()).value_or(0);
  return k;
}

}  // namespace

Feed corrupt_feed(const Feed& feed, const CorruptionPlan& plan, DefectLedger* ledger) {
  if (auto err = plan.validate()) throw InvalidSchedule(*err);
  SplitMix64 rng(plan.rng_seed);
  DefectLedger local;

  enum class Mark { None, Duplicate, Drop, Blank, Wrong };
  static const char* const kBlankTargets[] = {"lat", "lng", "trip_start", "trip_finish"};

  const double d1 = plan.duplicate_rate;
  const double d2 = d1 + plan.drop_rate;
  const double d3 = d2 + plan.blank_field_rate;
  const double d4 = d3 + plan.wrong_value_rate;

  Feed out;
  out.tuples.reserve(feed.tuples.size());
  for (std::uint64_t i = 0; i < feed.tuples.size(); ++i) {
    const RawTuple& src = feed.tuples[i];
    const double u = rng.uniform01();
    Mark mark = Mark::None;
    if (u < d1) mark = Mark::Duplicate;
    else if (u < d2) mark = Mark::Drop;
    else if (u < d3) mark = Mark::Blank;
    else if (u < d4) mark = Mark::Wrong;

    if (mark == Mark::Drop) {
      local.entries.push_back({DefectType::Drop, i, "", best_effort_key(src)});
      continue;
    }

    RawTuple t = src;
    if (mark == Mark::Blank) {
      const char* field = kBlankTargets[rng.below(4)];
      std::size_t idx = kLat;
      if (std::string_view(field) == "lng") idx = kLng;
      else if (std::string_view(field) == "trip_start") idx = kTripStart;
      else if (std::string_view(field) == "trip_finish") idx = kTripFinish;
      t[idx].clear();
      local.entries.push_back({DefectType::BlankField, i, field, best_effort_key(src)});
    } else if (mark == Mark::Wrong) {
      if (plan.wrong_value_field == "lat") {
        t[kLat] = format_decimal(90.5 + rng.uniform01() * 9.0);
        local.entries.push_back({DefectType::WrongValue, i, "lat", best_effort_key(src)});
      } else {
        // Push the timestamp a day past the trip; the tick vanishes from its
        // trip's timeline, so this mode overlaps the missing-tuple class.
        const auto finish = parse_timestamp(t.trip_finish());
        const Timestamp base = finish ? *finish : parse_timestamp(t.timestamp()).value_or(0);
        t[kTimestamp] = std::to_string(base + 86400 + static_cast<Timestamp>(rng.below(3600)));
        local.entries.push_back({DefectType::WrongValue, i, "timestamp", best_effort_key(src)});
      }
    }

    out.tuples.push_back(std::move(t));
    if (mark == Mark::Duplicate) {
      RawTuple dup = src;
      dup[kVlrId] = src[kVlrId] + "-d";  // duplicated reports may get fresh report ids
      out.tuples.push_back(std::move(dup));
      local.entries.push_back({DefectType::Duplicate, i, "", best_effort_key(src)});
    }
  }

  if (plan.shuffle_window > 0 && out.tuples.size() > 1) {
    // Stable sort by (position + U[0..W]) displaces no tuple more than W slots.
    std::vector<std::uint64_t> sort_key(out.tuples.size());
    for (std::uint64_t j = 0; j < out.tuples.size(); ++j)
      sort_key[j] = j + rng.below(static_cast<std::uint64_t>(plan.shuffle_window) + 1);
    std::vector<std::uint32_t> perm(out.tuples.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return sort_key[a] < sort_key[b]; });
    Feed shuffled;
    shuffled.tuples.reserve(out.tuples.size());
    for (std::uint32_t p : perm) shuffled.tuples.push_back(std::move(out.tuples[p]));
    out = std::move(shuffled);
  }

  if (ledger) *ledger = std::move(local);
  return out;
}

// ---- files --------------------------------------------------------------------

void write_csv(const Feed& feed, const std::filesystem::path& path, bool header) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  if (header) f << csv_header_line() << '\n';
  for (const auto& t : feed.tuples) f << serialize_record(t) << '\n';
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

namespace {

bool get_clean_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

}  // namespace

std::variant<Feed, MalformedRecord> read_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  Feed feed;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (get_clean_line(f, line)) {
    ++line_no;
    if (first) {
      first = false;
      if (looks_like_header(line)) continue;
    }
    auto parsed = parse_raw_record(line);
    if (auto* bad = std::get_if<MalformedRecord>(&parsed)) {
      bad->line_no = line_no;
      return *bad;
    }
    feed.tuples.push_back(std::move(std::get<RawTuple>(parsed)));
  }
  return feed;
}

std::vector<std::string> read_feed_lines(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  bool first = true;
  while (get_clean_line(f, line)) {
    if (first) {
      first = false;
      if (looks_like_header(line)) continue;
    }
    lines.push_back(line);
  }
  return lines;
}

void write_manifest(const FeedManifest& m, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  ordered_json head;
  head["type"] = "manifest";
  head["cadence_seconds"] = m.cadence_seconds;
  head["total_tuples"] = m.total_tuples;
  f << head.dump() << '\n';
  for (const auto& row : m.trips) {
    ordered_json j;
    j["type"] = "trip";
    j["route"] = row.scope.route_id_rta;
    j["trip"] = row.scope.trip_id_br;
    j["vehicle"] = row.scope.vehicle_id_vlr;
    j["first_ts"] = row.first_ts;
    j["last_ts"] = row.last_ts;
    j["count"] = row.tuple_count;
    f << j.dump() << '\n';
  }
}

std::optional<FeedManifest> read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return std::nullopt;
  FeedManifest m;
  std::string line;
  while (get_clean_line(f, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    const std::string type = j.value("type", "");
    if (type == "manifest") {
      m.cadence_seconds = j.value("cadence_seconds", 5u);
      m.total_tuples = j.value("total_tuples", 0ull);
    } else if (type == "trip") {
      TripManifestRow row;
      row.scope = {j.value("route", ""), j.value("trip", ""), j.value("vehicle", "")};
      row.first_ts = j.value("first_ts", 0ll);
      row.last_ts = j.value("last_ts", 0ll);
      row.tuple_count = j.value("count", 0ull);
      m.trips.push_back(std::move(row));
    } else {
      return std::nullopt;
    }
  }
  return m;
}

void write_ledger(const DefectLedger& l, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& e : l.entries) {
    ordered_json j;
    j["type"] = std::string(defect_type_name(e.type));
    j["index"] = e.original_index;
    if (!e.field.empty()) j["field"] = e.field;
    j["key"] = {{"vehicle", e.key.vehicle_id_vlr},
                {"route", e.key.route_id_rta},
                {"trip", e.key.trip_id_br},
                {"timestamp", e.key.timestamp}};
    f << j.dump() << '\n';
  }
}

std::optional<DefectLedger> read_ledger(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return std::nullopt;
  DefectLedger l;
  std::string line;
  while (get_clean_line(f, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    DefectEntry e;
    const std::string type = j.value("type", "");
    if (type == "duplicate") e.type = DefectType::Duplicate;
    else if (type == "drop") e.type = DefectType::Drop;
    else if (type == "blank_field") e.type = DefectType::BlankField;
    else if (type == "wrong_value") e.type = DefectType::WrongValue;
    else return std::nullopt;
    e.original_index = j.value("index", 0ull);
    e.field = j.value("field", "");
    if (j.contains("key")) {
      const auto& k = j["key"];
      e.key.vehicle_id_vlr = k.value("vehicle", "");
      e.key.route_id_rta = k.value("route", "");
      e.key.trip_id_br = k.value("trip", "");
      e.key.timestamp = k.value("timestamp", 0ll);
    }
    l.entries.push_back(std::move(e));
  }
  return l;
}

// ---- schedule files -------------------------------------------------------------

namespace {

std::optional<Timestamp> json_timestamp(const nlohmann::json& v) {
  if (v.is_number_integer()) return v.get<Timestamp>();
  if (v.is_string()) return parse_timestamp(v.get<std::string>());
  return std::nullopt;
}

}  // namespace

std::variant<Schedule, std::string> parse_schedule_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) return std::string("schedule is not valid JSON");
  if (!j.is_object() || !j.contains("routes") || !j["routes"].is_array())
    return std::string("schedule must be an object with a \"routes\" array");
  Schedule s;
  s.cadence_seconds = j.value("cadence_seconds", 5u);
  for (const auto& rj : j["routes"]) {
    if (!rj.is_object() || !rj.contains("route_id_rta"))
      return std::string("every route needs a route_id_rta");
    RouteSchedule route;
    route.route_id_rta = rj["route_id_rta"].get<std::string>();
    route.route_name = rj.value("route_name", "");
    if (rj.contains("trips")) {
      for (const auto& tj : rj["trips"]) {
        TripSpec t;
        t.trip_id_br = tj.value("trip_id_br", "");
        t.vehicle_id_vlr = tj.value("vehicle_id_vlr", "");
        const auto start = tj.contains("trip_start") ? json_timestamp(tj["trip_start"]) : std::nullopt;
        const auto finish = tj.contains("trip_finish") ? json_timestamp(tj["trip_finish"]) : std::nullopt;
        if (!start || !finish)
          return std::string("route ") + route.route_id_rta +
                 ": trips need trip_start and trip_finish";
        t.trip_start = *start;
        t.trip_finish = *finish;
        route.trips.push_back(std::move(t));
      }
    } else if (rj.contains("trip_count")) {
      // Generator shorthand: evenly spaced trips over rotating vehicles.
      const std::uint64_t count = rj["trip_count"].get<std::uint64_t>();
      const auto first = rj.contains("first_start") ? json_timestamp(rj["first_start"]) : std::nullopt;
      if (!first) return std::string("route ") + route.route_id_rta + ": generator form needs first_start";
      const Timestamp headway = rj.value("headway_seconds", 1800ll);
      const Timestamp duration = rj.value("duration_seconds", 1500ll);
      const std::uint64_t vehicles = rj.value("vehicles", 2ull);
      if (headway <= 0 || duration <= 0 || vehicles == 0)
        return std::string("route ") + route.route_id_rta + ": generator values must be positive";
      for (std::uint64_t k = 0; k < count; ++k) {
        TripSpec t;
        t.trip_id_br = route.route_id_rta + "-t" + std::to_string(k + 1);
        t.trip_start = *first + static_cast<Timestamp>(k) * headway;
        t.trip_finish = t.trip_start + duration;
        t.vehicle_id_vlr = "bus-" + route.route_id_rta + "-" + std::to_string(k % vehicles);
        route.trips.push_back(std::move(t));
      }
    } else {
      return std::string("route ") + route.route_id_rta +
             " needs either \"trips\" or \"trip_count\"";
    }
    s.routes.push_back(std::move(route));
  }
  if (auto err = s.validate()) return *err;
  return s;
}

std::variant<Schedule, std::string> load_schedule(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return std::string("cannot open schedule: ") + path.string();
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_schedule_json(text);
}

void write_schedule(const Schedule& s, const std::filesystem::path& path) {
  ordered_json j;
  j["cadence_seconds"] = s.cadence_seconds;
  j["routes"] = ordered_json::array();
  for (const auto& route : s.routes) {
    ordered_json rj;
    rj["route_id_rta"] = route.route_id_rta;
    if (!route.route_name.empty()) rj["route_name"] = route.route_name;
    rj["trips"] = ordered_json::array();
    for (const auto& trip : route.trips) {
      rj["trips"].push_back({{"trip_id_br", trip.trip_id_br},
                             {"trip_start", trip.trip_start},
                             {"trip_finish", trip.trip_finish},
                             {"vehicle_id_vlr", trip.vehicle_id_vlr}});
    }
    j["routes"].push_back(std::move(rj));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f << j.dump(2) << '\n';
}

}  // namespace fogcycle::feedgen
