#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "replan/errors.hpp"
#include "replan/scenario.hpp"

using namespace replan;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("replan-test-" + std::to_string(::getpid()) + "-" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool any_future_collision(const ScenarioLog& s) {
  for (int t = 0; t <= s.future_len; ++t) {
    for (std::size_t i = 0; i < s.tracks.size(); ++i) {
      for (std::size_t j = i + 1; j < s.tracks.size(); ++j) {
        const auto a = s.tracks[i].box_at(s.state_index(t));
        const auto b = s.tracks[j].box_at(s.state_index(t));
        if (obb_overlap(a, b)) return true;
      }
    }
  }
  return false;
}

}  // namespace

TEST_SUITE("scenario") {
  TEST_CASE("generator is deterministic and index-independent") {
    const GeneratorConfig cfg;
    const auto a = generate_scenario(Profile::kIntersection, cfg, 9001, 3);
    const auto b = generate_scenario(Profile::kIntersection, cfg, 9001, 3);
    CHECK(a.id == b.id);
    REQUIRE(a.tracks.size() == b.tracks.size());
    for (std::size_t k = 0; k < a.tracks.size(); ++k) {
      REQUIRE(a.tracks[k].states.size() == b.tracks[k].states.size());
      for (std::size_t t = 0; t < a.tracks[k].states.size(); ++t) {
        CHECK(a.tracks[k].states[t].pose.x == b.tracks[k].states[t].pose.x);
        CHECK(a.tracks[k].states[t].pose.y == b.tracks[k].states[t].pose.y);
        CHECK(a.tracks[k].states[t].pose.yaw == b.tracks[k].states[t].pose.yaw);
        CHECK(a.tracks[k].states[t].speed == b.tracks[k].states[t].speed);
      }
    }
    // Scenario #3 is the same whether generated alone or within a batch.
    const auto batch = generate_corpus(Profile::kIntersection, cfg, 9001, 5);
    CHECK(batch[3].id == a.id);
    CHECK(batch[3].tracks[0].states[0].pose.x == a.tracks[0].states[0].pose.x);
    // Different seeds diverge.
    const auto c = generate_scenario(Profile::kIntersection, cfg, 9002, 3);
    CHECK(c.tracks[0].states[0].pose.x != a.tracks[0].states[0].pose.x);
  }

  TEST_CASE("every profile yields valid, collision-free scenes") {
    const GeneratorConfig cfg;
    for (const Profile p : {Profile::kStraight, Profile::kCurve, Profile::kMerge,
                            Profile::kIntersection, Profile::kDenseIntersection}) {
      CAPTURE(to_string(p));
      const auto corpus = generate_corpus(p, cfg, 42, 4);
      REQUIRE(corpus.size() == 4);
      std::set<std::string> ids;
      for (const auto& s : corpus) {
        CHECK_NOTHROW(validate_scenario(s));
        CHECK(s.dt == cfg.dt);
        CHECK(s.history_len == cfg.history_len);
        CHECK(s.future_len == cfg.future_len);
        CHECK(s.lanes.size() >= 2);
        CHECK(s.tracks.size() >= 2);
        CHECK_FALSE(any_future_collision(s));
        ids.insert(s.id);
        // Target's ground-truth future stays on-road.
        for (const Vec2& p2 : s.target_future())
          CHECK_FALSE(is_offroad(p2, s.lanes, s.lane_half_width));
        // Speeds within the sampling envelope (ramp can add up to ~1 m/s).
        for (const auto& tr : s.tracks)
          for (const auto& st : tr.states) {
            CHECK(st.speed >= 0.0);
            CHECK(st.speed <= cfg.speed_hi + 1.5);
          }
      }
      CHECK(ids.size() == 4);  // distinct ids embed the index
    }
  }

  TEST_CASE("dense profile carries more neighbors than the sparse one") {
    const GeneratorConfig cfg;
    double dense_sum = 0, sparse_sum = 0;
    const int n = 6;
    for (int i = 0; i < n; ++i) {
      dense_sum +=
          static_cast<double>(generate_scenario(Profile::kDenseIntersection, cfg, 7, i).tracks.size()) - 1;
      sparse_sum +=
          static_cast<double>(generate_scenario(Profile::kIntersection, cfg, 7, i).tracks.size()) - 1;
    }
    CHECK(dense_sum / n >= 6.0);
    CHECK(dense_sum / n > sparse_sum / n);
  }

  TEST_CASE("validate_scenario flags structural defects") {
    const GeneratorConfig cfg;
    auto s = generate_scenario(Profile::kStraight, cfg, 5, 0);
    CHECK_NOTHROW(validate_scenario(s));

    SUBCASE("wrong state count") {
      s.tracks[0].states.pop_back();
      CHECK_THROWS_AS(validate_scenario(s), DataError);
    }
    SUBCASE("non-finite coordinate") {
      s.tracks[0].states[2].pose.x = std::nan("");
      CHECK_THROWS_AS(validate_scenario(s), DataError);
    }
    SUBCASE("yaw outside the principal branch") {
      s.tracks[0].states[2].pose.yaw = 4.0;
      CHECK_THROWS_AS(validate_scenario(s), DataError);
    }
    SUBCASE("negative speed") {
      s.tracks[0].states[2].speed = -0.1;
      CHECK_THROWS_AS(validate_scenario(s), DataError);
    }
    SUBCASE("target index out of range") {
      s.target_index = static_cast<int>(s.tracks.size());
      CHECK_THROWS_AS(validate_scenario(s), DataError);
    }
    SUBCASE("non-positive dt") {
      s.dt = 0.0;
      CHECK_THROWS_AS(validate_scenario(s), DataError);
    }
    SUBCASE("empty lane") {
      s.lanes.push_back({});
      CHECK_THROWS_AS(validate_scenario(s), DataError);
    }
  }

  TEST_CASE("rigid_transform moves poses and lanes consistently") {
    const GeneratorConfig cfg;
    const auto s = generate_scenario(Profile::kCurve, cfg, 11, 0);
    const double tx = 3.0, ty = -2.0, th = 0.6;
    const auto r = rigid_transform(s, tx, ty, th);
    CHECK_NOTHROW(validate_scenario(r));
    const double c = std::cos(th), sn = std::sin(th);
    const auto& p0 = s.tracks[1].states[3].pose;
    const auto& q0 = r.tracks[1].states[3].pose;
    CHECK(q0.x == doctest::Approx(c * p0.x - sn * p0.y + tx).epsilon(1e-12));
    CHECK(q0.y == doctest::Approx(sn * p0.x + c * p0.y + ty).epsilon(1e-12));
    CHECK(normalize_angle(q0.yaw - p0.yaw - th) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(r.tracks[1].states[3].speed == s.tracks[1].states[3].speed);
    const auto& lp = s.lanes[0][4];
    const auto& lq = r.lanes[0][4];
    CHECK(lq.x == doctest::Approx(c * lp.x - sn * lp.y + tx).epsilon(1e-12));
    CHECK(lq.y == doctest::Approx(sn * lp.x + c * lp.y + ty).epsilon(1e-12));
  }

  TEST_CASE("corpus IO round-trips byte-identically") {
    TempDir tmp;
    const GeneratorConfig cfg;
    const auto corpus = generate_corpus(Profile::kMerge, cfg, 21, 3);
    const fs::path f1 = tmp.path / "a.jsonl";
    const fs::path f2 = tmp.path / "b.jsonl";
    save_corpus(f1, corpus);
    const auto loaded = load_corpus(f1);
    REQUIRE(loaded.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      CHECK(loaded[i].id == corpus[i].id);
      CHECK(loaded[i].dt == corpus[i].dt);
      CHECK(loaded[i].target_index == corpus[i].target_index);
      REQUIRE(loaded[i].tracks.size() == corpus[i].tracks.size());
      for (std::size_t k = 0; k < corpus[i].tracks.size(); ++k) {
        CHECK(loaded[i].tracks[k].id == corpus[i].tracks[k].id);
        CHECK(loaded[i].tracks[k].length == corpus[i].tracks[k].length);
        for (std::size_t t = 0; t < corpus[i].tracks[k].states.size(); ++t) {
          CHECK(loaded[i].tracks[k].states[t].pose.x == corpus[i].tracks[k].states[t].pose.x);
          CHECK(loaded[i].tracks[k].states[t].pose.yaw == corpus[i].tracks[k].states[t].pose.yaw);
          CHECK(loaded[i].tracks[k].states[t].speed == corpus[i].tracks[k].states[t].speed);
        }
      }
      REQUIRE(loaded[i].lanes.size() == corpus[i].lanes.size());
      CHECK(loaded[i].lanes[0][0].x == corpus[i].lanes[0][0].x);
    }
    save_corpus(f2, loaded);  // second hop must be byte-identical
    CHECK(slurp(f1) == slurp(f2));
  }

  TEST_CASE("empty corpus round-trips as an empty file") {
    TempDir tmp;
    const fs::path f = tmp.path / "empty.jsonl";
    save_corpus(f, {});
    CHECK(fs::file_size(f) == 0);
    CHECK(load_corpus(f).empty());
  }

  TEST_CASE("loader reports precise failures") {
    TempDir tmp;
    const fs::path f = tmp.path / "bad.jsonl";

    SUBCASE("missing file") {
      CHECK_THROWS_AS((void)load_corpus(tmp.path / "nope.jsonl"), DataError);
    }
    SUBCASE("unsupported format version") {
      std::ofstream(f) << "{\"record\":\"header\",\"format_version\":99,\"dt\":0.5,"
                          "\"history_len\":4,\"future_len\":12,\"lane_half_width\":2.0}\n";
      try {
        (void)load_corpus(f);
        FAIL("expected DataError");
      } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("format_version") != std::string::npos);
      }
    }
    SUBCASE("header missing dt names the field") {
      std::ofstream(f) << "{\"record\":\"header\",\"format_version\":1,"
                          "\"history_len\":4,\"future_len\":12,\"lane_half_width\":2.0}\n";
      try {
        (void)load_corpus(f);
        FAIL("expected DataError");
      } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("dt") != std::string::npos);
      }
    }
    SUBCASE("malformed scenario line carries the line number") {
      std::ofstream(f) << "{\"record\":\"header\",\"format_version\":1,\"dt\":0.5,"
                          "\"history_len\":1,\"future_len\":1,\"lane_half_width\":2.0}\n"
                       << "{this is not json}\n";
      try {
        (void)load_corpus(f);
        FAIL("expected DataError");
      } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
      }
    }
    SUBCASE("first line must be the header") {
      std::ofstream(f) << "{\"record\":\"scenario\",\"id\":\"x\"}\n";
      CHECK_THROWS_AS((void)load_corpus(f), DataError);
    }
  }

  TEST_CASE("save rejects scenarios with mismatched timebases") {
    TempDir tmp;
    const GeneratorConfig cfg;
    auto corpus = generate_corpus(Profile::kStraight, cfg, 3, 2);
    corpus[1].dt = 0.25;
    CHECK_THROWS_AS(save_corpus(tmp.path / "x.jsonl", corpus), DataError);
  }

  TEST_CASE("profile names round-trip") {
    for (const Profile p : {Profile::kStraight, Profile::kCurve, Profile::kMerge,
                            Profile::kIntersection, Profile::kDenseIntersection})
      CHECK(profile_from_string(to_string(p)) == p);
    CHECK_THROWS_AS((void)profile_from_string("bogus"), DataError);
  }

  TEST_CASE("target_future returns future_len world points in order") {
    const GeneratorConfig cfg;
    const auto s = generate_scenario(Profile::kStraight, cfg, 8, 1);
    const auto fut = s.target_future();
    REQUIRE(static_cast<int>(fut.size()) == s.future_len);
    for (int t = 1; t <= s.future_len; ++t) {
      CHECK(fut[static_cast<std::size_t>(t - 1)].x == s.state(s.target_index, t).pose.x);
      CHECK(fut[static_cast<std::size_t>(t - 1)].y == s.state(s.target_index, t).pose.y);
    }
  }
}
