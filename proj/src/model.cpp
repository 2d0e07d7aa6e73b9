#include "fogcycle/model.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <cstring>

namespace fogcycle {

const std::array<std::string_view, kFieldCount>& field_names() {
  static const std::array<std::string_view, kFieldCount> names = {
      "vlr_id",
      "route_id_vlr",
      "route_name",
      "route_id_rta",
      "route_nickname",
      "trip_id_br",
      "transit_authority_service_time_id",
      "trip_id_tta",
      "trip_start",
      "trip_finish",
      "vehicle_id_yab",
      "vehicle_id_vlr",
      "vehicle_id_vlr_ta",
      "bdescription",
      "lat",
      "lng",
      "timestamp",
  };
  return names;
}

namespace {

std::size_t hash_combine(std::size_t h, std::size_t v) {
  return h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
}

}  // namespace

std::size_t TupleKeyHash::operator()(const TupleKey& k) const {
  std::size_t h = std::hash<std::string>{}(k.vehicle_id_vlr);
  h = hash_combine(h, std::hash<std::string>{}(k.route_id_rta));
  h = hash_combine(h, std::hash<std::string>{}(k.trip_id_br));
  h = hash_combine(h, std::hash<Timestamp>{}(k.timestamp));
  return h;
}

std::size_t TripScopeHash::operator()(const TripScope& s) const {
  std::size_t h = std::hash<std::string>{}(s.route_id_rta);
  h = hash_combine(h, std::hash<std::string>{}(s.trip_id_br));
  h = hash_combine(h, std::hash<std::string>{}(s.vehicle_id_vlr));
  return h;
}

std::string_view drop_code_name(DropCode code) {
  switch (code) {
    case DropCode::MissingAttributeValue: return "missing_attribute_value";
    case DropCode::DuplicateTuple: return "duplicate_tuple";
    case DropCode::WrongAttributeValue: return "wrong_attribute_value";
    case DropCode::MalformedRecord: return "malformed_record";
  }
  return "unknown";
}

std::int64_t percent_hundredths(std::uint64_t performed, std::uint64_t scheduled) {
  if (scheduled == 0) return 0;
  // floor((2*10000*p + s) / (2*s)) is round-half-up of 10000*p/s.
  const unsigned long long num = 20000ULL * performed + scheduled;
  return static_cast<std::int64_t>(num / (2ULL * scheduled));
}

std::string format_percent(std::int64_t hundredths) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%" PRId64 ".%02" PRId64, hundredths / 100,
                hundredths % 100);
  return buf;
}

// ---- timestamps ----------------------------------------------------------

namespace {

// Civil-from/to-days conversions (proleptic Gregorian, UTC).
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
}

unsigned days_in_month(std::int64_t y, unsigned m) {
  static const unsigned lengths[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m == 2) {
    const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    return leap ? 29 : 28;
  }
  return lengths[m - 1];
}

bool all_digits(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c < '0' || c > '9') return false;
  return true;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<std::uint64_t> parse_uint(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<unsigned> parse_2dig(std::string_view s, std::size_t at) {
  const char a = s[at], b = s[at + 1];
  if (a < '0' || a > '9' || b < '0' || b > '9') return std::nullopt;
  return static_cast<unsigned>((a - '0') * 10 + (b - '0'));
}

}  // namespace

std::optional<Timestamp> parse_timestamp(std::string_view text) {
  if (text.empty()) return std::nullopt;
  // Epoch seconds, optionally negative.
  if (all_digits(text) || (text[0] == '-' && all_digits(text.substr(1)))) {
    return parse_int(text);
  }
  // "YYYY-MM-DD HH:MM:SS"
  if (text.size() != 19 || text[4] != '-' || text[7] != '-' || text[10] != ' ' ||
      text[13] != ':' || text[16] != ':') {
    return std::nullopt;
  }
  if (!all_digits(text.substr(0, 4))) return std::nullopt;
  const auto year = parse_int(text.substr(0, 4));
  const auto mon = parse_2dig(text, 5);
  const auto day = parse_2dig(text, 8);
  const auto hh = parse_2dig(text, 11);
  const auto mm = parse_2dig(text, 14);
  const auto ss = parse_2dig(text, 17);
  if (!year || !mon || !day || !hh || !mm || !ss) return std::nullopt;
  if (*mon < 1 || *mon > 12 || *day < 1 || *day > days_in_month(*year, *mon))
    return std::nullopt;
  if (*hh > 23 || *mm > 59 || *ss > 59) return std::nullopt;
  const std::int64_t days = days_from_civil(*year, *mon, *day);
  return days * 86400 + static_cast<std::int64_t>(*hh) * 3600 +
         static_cast<std::int64_t>(*mm) * 60 + static_cast<std::int64_t>(*ss);
}

std::string format_datetime(Timestamp t) {
  std::int64_t days = t / 86400;
  std::int64_t rem = t % 86400;
  if (rem < 0) {
    rem += 86400;
    days -= 1;
  }
  std::int64_t y;
  unsigned m, d;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04" PRId64 "-%02u-%02u %02u:%02u:%02u", y, m, d,
                static_cast<unsigned>(rem / 3600), static_cast<unsigned>((rem / 60) % 60),
                static_cast<unsigned>(rem % 60));
  return buf;
}

// ---- decimals --------------------------------------------------------------

std::optional<double> parse_decimal(std::string_view text) {
  if (text.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return v;
}

std::string format_decimal(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// ---- CSV -------------------------------------------------------------------

std::optional<std::vector<std::string>> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  std::size_t i = 0;
  const std::size_t n = line.size();
  bool field_start = true;
  while (true) {
    if (field_start && i < n && line[i] == '"') {
      // Quoted field; "" inside is an escaped quote.
      ++i;
      bool closed = false;
      while (i < n) {
        if (line[i] == '"') {
          if (i + 1 < n && line[i + 1] == '"') {
            cur.push_back('"');
            i += 2;
          } else {
            ++i;
            closed = true;
            break;
          }
        } else {
          cur.push_back(line[i]);
          ++i;
        }
      }
      if (!closed) return std::nullopt;  // unbalanced quoting
      if (i < n && line[i] != ',') return std::nullopt;  // junk after closing quote
      field_start = false;
      continue;
    }
    if (i >= n) {
      fields.push_back(std::move(cur));
      break;
    }
    if (line[i] == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
      ++i;
      field_start = true;
      continue;
    }
    cur.push_back(line[i]);
    ++i;
    field_start = false;
  }
  return fields;
}

std::string csv_field(std::string_view value) {
  const bool needs_quotes =
      value.find_first_of(",\"\n\r") != std::string_view::npos;
  if (!needs_quotes) return std::string(value);
  std::string out;
  out.reserve(value.size() + 2);
  out.push_back('"');
  for (char c : value) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string join_csv_line(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    out += csv_field(fields[i]);
  }
  return out;
}

ParsedRecord parse_raw_record(std::string_view line) {
  auto fields = split_csv_line(line);
  if (!fields) {
    return MalformedRecord{std::string(line), 0, "unbalanced quoting"};
  }
  if (fields->size() != kFieldCount) {
    return MalformedRecord{std::string(line), 0,
                           "field count " + std::to_string(fields->size())};
  }
  RawTuple t;
  for (std::size_t i = 0; i < kFieldCount; ++i) t.fields[i] = std::move((*fields)[i]);
  return t;
}

std::string serialize_record(const RawTuple& t) {
  std::string out;
  for (std::size_t i = 0; i < kFieldCount; ++i) {
    if (i) out.push_back(',');
    out += csv_field(t.fields[i]);
  }
  return out;
}

std::string csv_header_line() {
  std::string out;
  const auto& names = field_names();
  for (std::size_t i = 0; i < kFieldCount; ++i) {
    if (i) out.push_back(',');
    out += names[i];
  }
  return out;
}

bool looks_like_header(std::string_view line) {
  return line.substr(0, 7) == "vlr_id," || line == "vlr_id";
}

std::variant<TupleKey, DropReason> tuple_key(const RawTuple& t) {
  // Schema order: route_id_rta(4) < trip_id_br(6) < vehicle_id_vlr(12) <
  // timestamp(17).
  if (t.route_id_rta().empty())
    return DropReason{DropCode::MissingAttributeValue, "route_id_rta"};
  if (t.trip_id_br().empty())
    return DropReason{DropCode::MissingAttributeValue, "trip_id_br"};
  if (t.vehicle_id_vlr().empty())
    return DropReason{DropCode::MissingAttributeValue, "vehicle_id_vlr"};
  if (t.timestamp().empty())
    return DropReason{DropCode::MissingAttributeValue, "timestamp"};
  const auto ts = parse_timestamp(t.timestamp());
  if (!ts) return DropReason{DropCode::WrongAttributeValue, "timestamp"};
  return TupleKey{t.vehicle_id_vlr(), t.route_id_rta(), t.trip_id_br(), *ts};
}

// ---- broker payload codecs --------------------------------------------------

namespace {

// Splits off the first line (without '\n'); returns rest.
bool take_line(std::string_view& rest, std::string_view& line) {
  if (rest.empty()) return false;
  const auto pos = rest.find('\n');
  if (pos == std::string_view::npos) {
    line = rest;
    rest = {};
  } else {
    line = rest.substr(0, pos);
    rest = rest.substr(pos + 1);
  }
  return true;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

std::string encode_package(const StreamPackage& pkg) {
  std::string out = "P " + pkg.edge_id + ' ' + std::to_string(pkg.window_start) +
                    ' ' + std::to_string(pkg.window_end) + ' ' +
                    std::to_string(pkg.seq) + ' ' +
                    std::to_string(pkg.records.size()) + '\n';
  for (const auto& r : pkg.records) {
    out += r;
    out.push_back('\n');
  }
  return out;
}

std::optional<StreamPackage> decode_package(std::string_view payload) {
  std::string_view rest = payload;
  std::string_view header;
  if (!take_line(rest, header)) return std::nullopt;
  const auto parts = split_ws(header);
  if (parts.size() != 6 || parts[0] != "P") return std::nullopt;
  StreamPackage pkg;
  pkg.edge_id = std::string(parts[1]);
  const auto ws = parse_int(parts[2]);
  const auto we = parse_int(parts[3]);
  const auto seq = parse_uint(parts[4]);
  const auto count = parse_uint(parts[5]);
  if (!ws || !we || !seq || !count) return std::nullopt;
  pkg.window_start = *ws;
  pkg.window_end = *we;
  pkg.seq = *seq;
  pkg.records.reserve(*count);
  for (std::uint64_t i = 0; i < *count; ++i) {
    std::string_view line;
    if (!take_line(rest, line)) return std::nullopt;
    pkg.records.emplace_back(line);
  }
  if (!rest.empty()) return std::nullopt;
  return pkg;
}

std::string encode_edge_eos(const std::string& edge_id, std::uint64_t packages,
                            std::uint64_t records) {
  return "EOS " + edge_id + ' ' + std::to_string(packages) + ' ' +
         std::to_string(records);
}

std::optional<EdgeEos> decode_edge_eos(std::string_view payload) {
  const auto parts = split_ws(payload);
  if (parts.size() != 4 || parts[0] != "EOS") return std::nullopt;
  const auto packages = parse_uint(parts[2]);
  const auto records = parse_uint(parts[3]);
  if (!packages || !records) return std::nullopt;
  return EdgeEos{std::string(parts[1]), *packages, *records};
}

std::string canonical_to_line(const CanonicalTuple& t) {
  return join_csv_line({
      std::to_string(t.fog_id),
      t.key.vehicle_id_vlr,
      t.key.route_id_rta,
      t.key.trip_id_br,
      std::to_string(t.key.timestamp),
      t.route_name,
      std::to_string(t.trip_start),
      std::to_string(t.trip_finish),
      format_decimal(t.lat),
      format_decimal(t.lng),
      t.late ? "1" : "0",
  });
}

std::optional<CanonicalTuple> canonical_from_line(std::string_view line) {
  auto fields = split_csv_line(line);
  if (!fields || fields->size() != 11) return std::nullopt;
  CanonicalTuple t;
  const auto fog_id = parse_uint((*fields)[0]);
  const auto ts = parse_int((*fields)[4]);
  const auto start = parse_int((*fields)[6]);
  const auto finish = parse_int((*fields)[7]);
  const auto lat = parse_decimal((*fields)[8]);
  const auto lng = parse_decimal((*fields)[9]);
  const auto& late = (*fields)[10];
  if (!fog_id || !ts || !start || !finish || !lat || !lng) return std::nullopt;
  if (late != "0" && late != "1") return std::nullopt;
  t.fog_id = *fog_id;
  t.key.vehicle_id_vlr = std::move((*fields)[1]);
  t.key.route_id_rta = std::move((*fields)[2]);
  t.key.trip_id_br = std::move((*fields)[3]);
  t.key.timestamp = *ts;
  t.route_name = std::move((*fields)[5]);
  t.trip_start = *start;
  t.trip_finish = *finish;
  t.lat = *lat;
  t.lng = *lng;
  t.late = late == "1";
  return t;
}

}  // namespace fogcycle
