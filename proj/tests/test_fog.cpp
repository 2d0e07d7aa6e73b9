#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "fogcycle/cloud.hpp"
#include "fogcycle/feedgen.hpp"
#include "fogcycle/fog.hpp"

using namespace fogcycle;
using namespace fogcycle::fog;

namespace {

RawTuple make_tuple(const std::string& route, const std::string& trip,
                    const std::string& vehicle, Timestamp ts, Timestamp start = 0,
                    Timestamp finish = 0) {
  if (finish == 0) {
    start = ts - 100;
    finish = ts + 100;
  }
  RawTuple t;
  t[kVlrId] = "vlr";
  t[kRouteIdVlr] = "rv-" + route;
  t[kRouteName] = "Route " + route;
  t[kRouteIdRta] = route;
  t[kRouteNickname] = "R" + route;
  t[kTripIdBr] = trip;
  t[kServiceTimeId] = "st";
  t[kTripIdTta] = "tta";
  t[kTripStart] = std::to_string(start);
  t[kTripFinish] = std::to_string(finish);
  t[kVehicleIdYab] = "yab";
  t[kVehicleIdVlr] = vehicle;
  t[kVehicleIdVlrTa] = "Bus " + vehicle;
  t[kBdescription] = "desc";
  t[kLat] = "46.100000";
  t[kLng] = "-64.800000";
  t[kTimestamp] = std::to_string(ts);
  return t;
}

std::vector<NumberedTuple> numbered(std::vector<RawTuple> tuples) {
  IdCounter counter;
  return assign_ids(std::move(tuples), counter);
}

CleanResult clean_fresh(const std::vector<NumberedTuple>& tuples,
                        std::uint32_t cadence = 5, Timestamp slack = 120) {
  DedupIndex dedup;
  TripIndex trips;
  return clean(tuples, CleanConfig{cadence, slack, 0}, dedup, trips);
}

StreamPackage package_of(const std::vector<RawTuple>& tuples, Timestamp ws,
                         Timestamp we, std::uint64_t seq,
                         const std::string& edge = "edge1") {
  StreamPackage pkg;
  pkg.edge_id = edge;
  pkg.window_start = ws;
  pkg.window_end = we;
  pkg.seq = seq;
  for (const auto& t : tuples) pkg.records.push_back(serialize_record(t));
  return pkg;
}

// Collects what a fog node publishes.
struct Harness {
  broker::Broker bus;
  broker::InProcessClient fog_client{bus, "fog1"};
  broker::InProcessClient watch{bus, "watch"};

  Harness() {
    watch.subscribe("cloud/upload");
    watch.subscribe("alarms");
  }

  std::vector<cloud::UploadBatch> uploads() {
    std::vector<cloud::UploadBatch> out;
    while (const auto d = watch.poll(std::chrono::milliseconds(0))) {
      if (d->topic != "cloud/upload" || d->payload.rfind("F ", 0) == 0) continue;
      auto batch = cloud::decode_upload(d->payload);
      REQUIRE(batch.has_value());
      out.push_back(std::move(*batch));
    }
    return out;
  }
};

}  // namespace

// ---- acquisition ----

TEST_CASE("acquire parses well-formed packages wholesale") {
  std::vector<RawTuple> tuples;
  for (int i = 0; i < 50; ++i) tuples.push_back(make_tuple("50", "t1", "bus", 1000 + i * 5));
  const auto result = acquire(package_of(tuples, 900, 1200, 1));
  CHECK(result.tuples.size() == 50);
  CHECK(result.malformed.empty());
}

TEST_CASE("acquire quarantines the short line and keeps the other 49") {
  std::vector<RawTuple> tuples;
  for (int i = 0; i < 49; ++i) tuples.push_back(make_tuple("50", "t1", "bus", 1000 + i * 5));
  auto pkg = package_of(tuples, 900, 1500, 1);
  pkg.records.insert(pkg.records.begin() + 10, "only,three,fields");
  const auto result = acquire(pkg);
  CHECK(result.tuples.size() == 49);
  REQUIRE(result.malformed.size() == 1);
  CHECK(result.malformed[0].line_no == 11);
  CHECK(result.malformed[0].line == "only,three,fields");
}

TEST_CASE("acquire of an empty package is empty") {
  const auto result = acquire(StreamPackage{});
  CHECK(result.tuples.empty());
  CHECK(result.malformed.empty());
}

// ---- id assignment ----

TEST_CASE("ids start at 1 and advance with arrival order") {
  IdCounter counter;
  const auto first = assign_ids({make_tuple("50", "t", "b", 10),
                                 make_tuple("50", "t", "b", 15),
                                 make_tuple("50", "t", "b", 20)},
                                counter);
  REQUIRE(first.size() == 3);
  CHECK(first[0].first == 1);
  CHECK(first[1].first == 2);
  CHECK(first[2].first == 3);

  const auto none = assign_ids({}, counter);
  CHECK(none.empty());
  CHECK(counter.last() == 3);  // untouched by the empty batch

  std::vector<RawTuple> ten, five;
  for (int i = 0; i < 10; ++i) ten.push_back(make_tuple("50", "t", "b", 100 + i));
  for (int i = 0; i < 5; ++i) five.push_back(make_tuple("50", "t", "b", 200 + i));
  IdCounter fresh;
  assign_ids(std::move(ten), fresh);
  const auto second = assign_ids(std::move(five), fresh);
  CHECK(second.front().first == 11);
  CHECK(second.back().first == 15);
}

// ---- cleaning ----

TEST_CASE("a clean feed passes untouched: no drops, no alarms") {
  feedgen::Schedule s;
  s.cadence_seconds = 5;
  feedgen::RouteSchedule route;
  route.route_id_rta = "50";
  route.trips.push_back({"t1", 1000, 1600, "bus-a"});
  route.trips.push_back({"t2", 1200, 1900, "bus-b"});
  s.routes.push_back(route);
  const auto feed = feedgen::generate_clean_feed(s);

  const auto result = clean_fresh(numbered(feed.tuples));
  CHECK(result.survivors.size() == feed.tuples.size());
  CHECK(result.drops.empty());
  CHECK(result.alarms.empty());
}

TEST_CASE("one duplicate pair: one drop, one alarm with count 1, first survives") {
  auto a = make_tuple("50", "t1", "bus", 1000);
  auto b = a;
  b[kVlrId] = "vlr-different-report-id";
  const auto result = clean_fresh(numbered({a, b, make_tuple("50", "t1", "bus", 1005)}));
  CHECK(result.survivors.size() == 2);
  REQUIRE(result.drops.size() == 1);
  CHECK(result.drops[0].second.code == DropCode::DuplicateTuple);
  REQUIRE(result.alarms.size() == 1);
  CHECK(result.alarms[0].kind == AlarmKind::DuplicateTuples);
  CHECK(result.alarms[0].duplicate_count == 1);
  CHECK(result.alarms[0].key_timestamp == 1000);
  CHECK(result.survivors[0].fog_id == 1);  // the first occurrence
}

TEST_CASE("duplicates across the two-window horizon are caught, older ones are not") {
  DedupIndex dedup;
  TripIndex trips;
  CleanConfig cfg{5, 120, 0};

  dedup.rotate(0, 300);
  auto r1 = clean(numbered({make_tuple("50", "t1", "bus", 10)}), cfg, dedup, trips);
  CHECK(r1.drops.empty());

  dedup.rotate(300, 300);  // duplicate arrives one window later: still caught
  auto r2 = clean(numbered({make_tuple("50", "t1", "bus", 10)}), cfg, dedup, trips);
  REQUIRE(r2.drops.size() == 1);
  CHECK(r2.drops[0].second.code == DropCode::DuplicateTuple);

  dedup.rotate(600, 300);
  dedup.rotate(900, 300);  // two rotations: the key has left the horizon
  auto r3 = clean(numbered({make_tuple("50", "t1", "bus", 10)}), cfg, dedup, trips);
  CHECK(r3.drops.empty());  // the cloud's keyed dedup owns this case now
}

TEST_CASE("gap of 20 s at cadence 5 estimates 3 missing tuples") {
  const auto result = clean_fresh(
      numbered({make_tuple("50", "t1", "bus", 100), make_tuple("50", "t1", "bus", 120)}));
  CHECK(result.drops.empty());
  REQUIRE(result.alarms.size() == 1);
  const auto& a = result.alarms[0];
  CHECK(a.kind == AlarmKind::MissingTuples);
  CHECK(a.gap_start == 100);
  CHECK(a.gap_end == 120);
  CHECK(a.estimated_missing == 3);  // floor(20/5) - 1
}

TEST_CASE("a single missing tick (gap exactly 2x cadence) raises estimate 1") {
  const auto result = clean_fresh(
      numbered({make_tuple("50", "t1", "bus", 100), make_tuple("50", "t1", "bus", 110)}));
  REQUIRE(result.alarms.size() == 1);
  CHECK(result.alarms[0].estimated_missing == 1);
}

TEST_CASE("the normal cadence step never alarms") {
  const auto result = clean_fresh(
      numbered({make_tuple("50", "t1", "bus", 100), make_tuple("50", "t1", "bus", 105)}));
  CHECK(result.alarms.empty());
}

TEST_CASE("out-of-range values drop with the offending field named") {
  {
    auto t = make_tuple("50", "t1", "bus", 1000);
    t[kLat] = "91.000000";
    const auto result = clean_fresh(numbered({t}));
    REQUIRE(result.drops.size() == 1);
    CHECK(result.drops[0].second == DropReason{DropCode::WrongAttributeValue, "lat"});
  }
  {
    auto t = make_tuple("50", "t1", "bus", 1000);
    t[kLat] = "90.000000";  // boundary stays inside
    CHECK(clean_fresh(numbered({t})).drops.empty());
  }
  {
    auto t = make_tuple("50", "t1", "bus", 1000);
    t[kLng] = "-180.500000";
    const auto result = clean_fresh(numbered({t}));
    REQUIRE(result.drops.size() == 1);
    CHECK(result.drops[0].second == DropReason{DropCode::WrongAttributeValue, "lng"});
  }
  {
    auto t = make_tuple("50", "t1", "bus", 1000, 1500, 2000);  // ts before trip - slack
    const auto result = clean_fresh(numbered({t}));
    REQUIRE(result.drops.size() == 1);
    CHECK(result.drops[0].second == DropReason{DropCode::WrongAttributeValue, "timestamp"});
  }
  {
    // Exactly at the slack boundary survives; one past it drops.
    auto ok = make_tuple("50", "t1", "bus", 2120, 1500, 2000);
    CHECK(clean_fresh(numbered({ok})).drops.empty());
    auto gone = make_tuple("50", "t1", "bus", 2121, 1500, 2000);
    CHECK(clean_fresh(numbered({gone})).drops.size() == 1);
  }
  {
    auto t = make_tuple("50", "t1", "bus", 1000);
    t[kLat] = "not-a-number";
    const auto result = clean_fresh(numbered({t}));
    REQUIRE(result.drops.size() == 1);
    CHECK(result.drops[0].second == DropReason{DropCode::WrongAttributeValue, "lat"});
  }
}

TEST_CASE("missing attributes are reported first, in schema order") {
  auto t = make_tuple("50", "t1", "bus", 1000);
  t[kLat] = "";
  const auto one = clean_fresh(numbered({t}));
  REQUIRE(one.drops.size() == 1);
  CHECK(one.drops[0].second == DropReason{DropCode::MissingAttributeValue, "lat"});

  auto u = make_tuple("50", "t1", "bus", 1000);
  u[kRouteIdRta] = "";
  u[kLat] = "";
  const auto two = clean_fresh(numbered({u}));
  REQUIRE(two.drops.size() == 1);
  CHECK(two.drops[0].second ==
        DropReason{DropCode::MissingAttributeValue, "route_id_rta"});
}

TEST_CASE("a tuple rejected for a bad attribute still vouches for its tick") {
  // 1005's lat is blank, so it drops; but its tick was observed, so the trip
  // timeline has no hole and no MissingTuples alarm fires.
  auto blank = make_tuple("50", "t1", "bus", 1005);
  blank[kLat] = "";
  const auto result = clean_fresh(numbered({make_tuple("50", "t1", "bus", 1000), blank,
                                            make_tuple("50", "t1", "bus", 1010)}));
  CHECK(result.survivors.size() == 2);
  REQUIRE(result.drops.size() == 1);
  CHECK(result.alarms.empty());

  // Whereas a tick that truly never arrived does alarm.
  const auto hole = clean_fresh(numbered(
      {make_tuple("50", "t1", "bus", 1000), make_tuple("50", "t1", "bus", 1010)}));
  REQUIRE(hole.alarms.size() == 1);
  CHECK(hole.alarms[0].estimated_missing == 1);
}

TEST_CASE("re-cleaning survivors after the horizon drops nothing and alarms nothing") {
  auto blank = make_tuple("50", "t1", "bus", 1010);
  blank[kLat] = "";
  DedupIndex dedup;
  TripIndex trips;
  CleanConfig cfg{5, 120, 0};
  dedup.rotate(900, 300);
  const auto first = clean(numbered({make_tuple("50", "t1", "bus", 1000), blank,
                                     make_tuple("50", "t1", "bus", 1020),
                                     make_tuple("50", "t1", "bus", 1020)}),
                           cfg, dedup, trips);
  CHECK(first.survivors.size() == 2);
  CHECK(first.drops.size() == 2);

  // Re-run the survivors through the node once the dedup horizon has turned
  // over; the trip index still remembers how far the stream got.
  std::vector<RawTuple> again;
  for (const auto& c : first.survivors)
    again.push_back(make_tuple(c.key.route_id_rta, c.key.trip_id_br,
                               c.key.vehicle_id_vlr, c.key.timestamp, c.trip_start,
                               c.trip_finish));
  dedup.rotate(1500, 300);
  dedup.rotate(1800, 300);
  const auto second = clean(numbered(again), cfg, dedup, trips);
  CHECK(second.survivors.size() == first.survivors.size());
  CHECK(second.drops.empty());
  CHECK(second.alarms.empty());
}

TEST_CASE("calendar-format timestamps clean exactly like epoch seconds") {
  auto calendar = make_tuple("50", "t1", "bus", 0);
  calendar[kTripStart] = "2017-04-15 06:00:00";
  calendar[kTripFinish] = "2017-04-15 06:30:00";
  calendar[kTimestamp] = "2017-04-15 06:05:00";
  auto epoch = calendar;
  epoch[kTripStart] = "1492236000";
  epoch[kTripFinish] = "1492237800";
  epoch[kTimestamp] = "1492236300";

  const auto a = clean_fresh(numbered({calendar}));
  const auto b = clean_fresh(numbered({epoch}));
  REQUIRE(a.survivors.size() == 1);
  REQUIRE(b.survivors.size() == 1);
  CHECK(a.survivors[0].key == b.survivors[0].key);  // same key either way
  CHECK(a.survivors[0].key.timestamp == 1492236300);
  CHECK(a.survivors[0].trip_start == 1492236000);

  // The two notations collide in the dedup index too.
  DedupIndex dedup;
  TripIndex trips;
  CleanConfig cfg{5, 120, 0};
  const auto both = clean(numbered({calendar, epoch}), cfg, dedup, trips);
  CHECK(both.survivors.size() == 1);
  REQUIRE(both.drops.size() == 1);
  CHECK(both.drops[0].second.code == DropCode::DuplicateTuple);
}

TEST_CASE("survivors of a batch never share a key") {
  std::vector<RawTuple> tuples;
  for (int i = 0; i < 40; ++i) tuples.push_back(make_tuple("50", "t1", "bus", 1000 + (i % 20) * 5));
  const auto result = clean_fresh(numbered(tuples));
  std::set<TupleKey> keys;
  for (const auto& s : result.survivors) CHECK(keys.insert(s.key).second);
  CHECK(result.survivors.size() == 20);
  CHECK(result.drops.size() == 20);
}

// ---- sorting ----

TEST_CASE("sort_window orders by route, trip, timestamp and is stable") {
  const auto already = clean_fresh(numbered({make_tuple("50", "t1", "bus", 1000),
                                             make_tuple("50", "t1", "bus", 1005)}));
  CHECK(sort_window(already.survivors) == already.survivors);
  CHECK(is_sorted_window(already.survivors));

  std::vector<CanonicalTuple> reversed;
  for (int i = 99; i >= 0; --i) {
    CanonicalTuple c;
    c.fog_id = static_cast<std::uint64_t>(100 - i);
    c.key = {"bus", "50", "t1", 1000 + i * 5};
    reversed.push_back(c);
  }
  CHECK_FALSE(is_sorted_window(reversed));
  const auto sorted = sort_window(reversed);
  REQUIRE(is_sorted_window(sorted));
  for (std::size_t i = 1; i < sorted.size(); ++i)
    CHECK(sorted[i - 1].key.timestamp < sorted[i].key.timestamp);

  // Ties on the full sort key keep fog_id order (different vehicles).
  CanonicalTuple x, y;
  x.fog_id = 1;
  x.key = {"bus-a", "50", "t1", 1000};
  y.fog_id = 2;
  y.key = {"bus-b", "50", "t1", 1000};
  const auto tied = sort_window({y, x});  // arrival order y(2), x(1)? no: {y, x}
  REQUIRE(tied.size() == 2);
  CHECK(tied[0].fog_id == 2);  // stable: input order preserved on ties
  CHECK(tied[1].fog_id == 1);
}

TEST_CASE("scrambled feeds sort to the same table as the pristine feed") {
  feedgen::Schedule s;
  s.cadence_seconds = 5;
  feedgen::RouteSchedule route;
  route.route_id_rta = "50";
  route.trips.push_back({"t1", 1000, 3000, "bus-a"});
  route.trips.push_back({"t2", 1400, 3400, "bus-b"});
  s.routes.push_back(route);
  const auto feed = feedgen::generate_clean_feed(s);
  feedgen::CorruptionPlan plan;
  plan.shuffle_window = 50;
  plan.rng_seed = 21;
  const auto scrambled = feedgen::corrupt_feed(feed, plan);

  const auto clean_a = clean_fresh(numbered(feed.tuples));
  const auto clean_b = clean_fresh(numbered(scrambled.tuples));
  const auto sorted_a = sort_window(clean_a.survivors);
  const auto sorted_b = sort_window(clean_b.survivors);
  REQUIRE(sorted_a.size() == sorted_b.size());
  for (std::size_t i = 0; i < sorted_a.size(); ++i)
    CHECK(sorted_a[i].key == sorted_b[i].key);  // fog ids differ, keys align
  CHECK(is_sorted_window(sorted_b));
}

// ---- stream database ----

TEST_CASE("store then leverage returns the sorted table exactly once") {
  StreamDatabase db;
  std::vector<CanonicalTuple> tuples;
  for (int i = 99; i >= 0; --i) {
    CanonicalTuple c;
    c.fog_id = static_cast<std::uint64_t>(i + 1);
    c.key = {"bus", "50", "t1", 1000 + i * 5};
    tuples.push_back(c);
  }
  db.store_table(900, 1200, tuples);
  CHECK(db.state(900) == TableState::Retained);
  CHECK(db.tuples_in(900) == 100);

  const auto leveraged = db.leverage(900);
  REQUIRE(std::holds_alternative<std::vector<CanonicalTuple>>(leveraged));
  const auto& sorted = std::get<std::vector<CanonicalTuple>>(leveraged);
  CHECK(sorted.size() == 100);
  CHECK(is_sorted_window(sorted));

  CHECK_FALSE(db.mark_uploaded(900, 2000).has_value());
  CHECK(db.state(900) == TableState::Uploaded);
  const auto again = db.leverage(900);
  REQUIRE(std::holds_alternative<DbError>(again));
  CHECK(std::get<DbError>(again) == DbError::AlreadyUploaded);
}

TEST_CASE("evicting a retained table is refused and leaves it intact") {
  StreamDatabase db;
  db.store_tuple(0, 300, CanonicalTuple{});
  const auto err = db.evict(0);
  REQUIRE(err.has_value());
  CHECK(*err == DbError::EvictBeforeUpload);
  CHECK(db.state(0) == TableState::Retained);
  CHECK(db.tuples_in(0) == 1);
  CHECK(db.evict(999).value() == DbError::UnknownWindow);
}

TEST_CASE("eviction runs only after upload plus retention") {
  StreamDatabase db;
  db.set_retention_ttl(1000);
  db.store_tuple(0, 300, CanonicalTuple{});
  db.store_tuple(300, 600, CanonicalTuple{});
  db.leverage(0);
  db.mark_uploaded(0, 500);

  CHECK(db.evict_expired(1400) == 0);   // 500 + 1000 > 1400
  CHECK(db.evict_expired(1500) == 1);   // exactly due
  CHECK(db.state(0) == TableState::Evicted);
  CHECK(db.state(300) == TableState::Retained);  // never uploaded, untouched
  CHECK(db.tuples_in(0) == 0);
  CHECK(db.evict_expired(99999) == 0);  // nothing else is uploaded
}

// ---- the node: late tuples, monitor, admin ----

TEST_CASE("late tuples ride the next upload flagged late, never dropped") {
  Harness h;
  FogConfig cfg;
  cfg.fog_id = "fog1";
  cfg.edge_ids = {"edge1"};
  cfg.package_period_seconds = 300;
  FogNode node(cfg);

  // Three windows move the watermark far enough to upload window 0.
  node.handle_package(package_of({make_tuple("50", "t1", "bus", 10, 0, 2000),
                                  make_tuple("50", "t1", "bus", 15, 0, 2000)},
                                 0, 300, 1),
                      h.fog_client);
  node.handle_package(package_of({make_tuple("50", "t1", "bus", 310, 0, 2000)}, 300, 600, 2),
                      h.fog_client);
  node.handle_package(package_of({make_tuple("50", "t1", "bus", 610, 0, 2000)}, 600, 900, 3),
                      h.fog_client);
  auto uploads = h.uploads();
  REQUIRE(uploads.size() == 2);  // windows 0 and 300 passed the watermark
  CHECK(uploads[0].header.window_start == 0);
  CHECK(uploads[0].tuples.size() == 2);
  CHECK_FALSE(uploads[0].tuples[0].late);

  // A tuple whose own window is already uploaded arrives now.
  node.handle_package(package_of({make_tuple("50", "t1", "bus", 20, 0, 2000),   // late
                                  make_tuple("50", "t1", "bus", 910, 0, 2000)},  // fresh
                                 900, 1200, 4),
                      h.fog_client);
  node.handle_edge_eos(EdgeEos{"edge1", 4, 6}, h.fog_client);
  uploads = h.uploads();

  std::size_t late_seen = 0, tail_total = 0;
  for (const auto& b : uploads) {
    for (const auto& t : b.tuples) {
      ++tail_total;
      if (t.late) {
        ++late_seen;
        CHECK(t.key.timestamp == 20);
      }
    }
  }
  CHECK(late_seen == 1);
  CHECK(tail_total == 3);  // window 600's tuple plus the final window's pair
  CHECK(node.survivors_out() == 6);
  CHECK(node.finished());
}

TEST_CASE("two late tuples of one trip come back ordered by timestamp") {
  Harness h;
  FogConfig cfg;
  cfg.edge_ids = {"edge1"};
  cfg.package_period_seconds = 300;
  FogNode node(cfg);

  node.handle_package(package_of({make_tuple("50", "t1", "bus", 10, 0, 3000)}, 0, 300, 1),
                      h.fog_client);
  node.handle_package(package_of({make_tuple("50", "t1", "bus", 310, 0, 3000)}, 300, 600, 2),
                      h.fog_client);
  node.handle_package(package_of({make_tuple("50", "t1", "bus", 610, 0, 3000)}, 600, 900, 3),
                      h.fog_client);
  REQUIRE(h.uploads().size() == 2);  // windows 0 and 300 went out

  node.handle_package(package_of({make_tuple("50", "t1", "bus", 40, 0, 3000),
                                  make_tuple("50", "t1", "bus", 25, 0, 3000),
                                  make_tuple("50", "t1", "bus", 910, 0, 3000)},
                                 900, 1200, 4),
                      h.fog_client);
  node.handle_edge_eos(EdgeEos{"edge1", 4, 6}, h.fog_client);

  std::vector<Timestamp> late_ts;
  for (const auto& b : h.uploads()) {
    for (const auto& t : b.tuples)
      if (t.late) late_ts.push_back(t.key.timestamp);
    CHECK(is_sorted_window(b.tuples));
  }
  REQUIRE(late_ts.size() == 2);
  CHECK(late_ts[0] == 25);  // sorted within their upload despite arrival order
  CHECK(late_ts[1] == 40);
}

TEST_CASE("monitor counters satisfy conservation after a dirty window") {
  Harness h;
  FogConfig cfg;
  cfg.edge_ids = {"edge1"};
  FogNode node(cfg);

  std::vector<RawTuple> tuples;
  for (int i = 0; i < 90; ++i) tuples.push_back(make_tuple("50", "t1", "bus", 1000 + i * 5, 900, 2000));
  for (int i = 0; i < 6; ++i) {
    auto t = make_tuple("50", "t1", "bus", 1500 + i * 5, 900, 2000);
    t[kLat] = "95.0";
    tuples.push_back(t);
  }
  for (int i = 0; i < 4; ++i) tuples.push_back(make_tuple("50", "t1", "bus", 1000 + i * 5, 900, 2000));
  auto pkg = package_of(tuples, 900, 1200, 1);
  pkg.records.push_back("malformed,row");
  node.handle_package(pkg, h.fog_client);
  // Storage and leverage balance once their window completes.
  node.admin(AdminCommand::Flush, h.fog_client);

  const auto snapshot = node.monitor_snapshot();
  REQUIRE(snapshot.size() == 6);
  for (const auto& status : snapshot) CHECK(status.conserved());

  const auto* processing = &snapshot[1];
  CHECK(processing->task == Task::Processing);
  CHECK(processing->tuples_in == 100);
  CHECK(processing->tuples_out == 90);
  CHECK(processing->dropped_total() == 10);

  CHECK(node.records_received() == 101);
  CHECK(node.malformed_quarantined() == 1);
  CHECK(node.dropped(DropCode::WrongAttributeValue) == 6);
  CHECK(node.dropped(DropCode::DuplicateTuple) == 4);
}

TEST_CASE("a snapshot of an idle node is all zeros") {
  FogNode node(FogConfig{});
  for (const auto& status : node.monitor_snapshot()) {
    CHECK(status.tuples_in == 0);
    CHECK(status.tuples_out == 0);
    CHECK(status.dropped_total() == 0);
    CHECK(status.alarms_emitted == 0);
    CHECK(status.conserved());
  }
}

TEST_CASE("pause parks the subscription and resume drains without loss") {
  Harness h;
  FogConfig cfg;
  cfg.edge_ids = {"edge1"};
  cfg.package_period_seconds = 300;
  FogNode node(cfg);
  node.attach(h.fog_client);

  h.bus.publish("edge1", "packages/edge1",
                encode_package(package_of({make_tuple("50", "t1", "bus", 10, 0, 600)}, 0, 300, 1)));

  node.admin(AdminCommand::Pause, h.fog_client);
  CHECK(node.paused());
  CHECK_FALSE(node.pump(h.fog_client, std::chrono::milliseconds(0)));
  CHECK(h.bus.pending("fog1") == 1);  // buffered at the broker, not lost

  node.admin(AdminCommand::Resume, h.fog_client);
  CHECK(node.pump(h.fog_client, std::chrono::milliseconds(0)));
  CHECK(node.records_received() == 1);

  h.bus.publish("edge1", "control/edge1", encode_edge_eos("edge1", 1, 1));
  while (node.pump(h.fog_client, std::chrono::milliseconds(0))) {
  }
  CHECK(node.finished());
  std::size_t uploaded = 0;
  for (const auto& b : h.uploads()) uploaded += b.tuples.size();
  CHECK(uploaded == 1);  // conservation across pause/resume
}

TEST_CASE("flush uploads the open table on demand") {
  Harness h;
  FogConfig cfg;
  cfg.edge_ids = {"edge1"};
  FogNode node(cfg);
  node.handle_package(package_of({make_tuple("50", "t1", "bus", 10, 0, 600)}, 0, 300, 1),
                      h.fog_client);
  CHECK(h.uploads().empty());  // watermark has not passed the open window
  node.admin(AdminCommand::Flush, h.fog_client);
  const auto uploads = h.uploads();
  REQUIRE(uploads.size() == 1);
  CHECK(uploads[0].tuples.size() == 1);
}

TEST_CASE("set-retention feeds straight into the database") {
  Harness h;
  FogNode node(FogConfig{});
  node.admin(AdminCommand::SetRetention, h.fog_client, 42);
  CHECK(node.database().retention_ttl() == 42);
}

TEST_CASE("malformed records land in the quarantine file") {
  const auto dir = std::filesystem::temp_directory_path() / "fogcycle_fog_quarantine";
  std::filesystem::remove_all(dir);
  Harness h;
  FogConfig cfg;
  cfg.fog_id = "fogq";
  cfg.edge_ids = {"edge1"};
  cfg.quarantine_dir = dir;
  FogNode node(cfg);
  auto pkg = package_of({make_tuple("50", "t1", "bus", 10, 0, 600)}, 0, 300, 1);
  pkg.records.push_back("busted,line");
  node.handle_package(pkg, h.fog_client);

  std::ifstream f(dir / "fogq_0.csv");
  REQUIRE(f.good());
  std::string line;
  std::getline(f, line);
  CHECK(line == "busted,line");
}
